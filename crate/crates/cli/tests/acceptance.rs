//! Acceptance suite. Prints one PASS/FAIL line per criterion to stderr and
//! fails if any criterion fails. The desk training run dominates the runtime.

use std::io::Write;
use std::time::{Duration, Instant};

use iuzawa_cli::commands::ActiveStats;
use iuzawa_cli::verify::{
    adjoint_identities, algorithm_tracking, gradient_check, prox_oracle, qs_structure, solver_agreement, timed,
    uzawa_contraction, Check,
};
use iuzawa_core::grf::{gen_dataset, write_dataset_to, ExperimentKind};
use iuzawa_net::checkpoint::write_checkpoint_to;
use iuzawa_net::train::{evaluate, mean_sd, split_heldout, train, TrainConfig};
use iuzawa_net::{NetConfig, NetParams, Tying};

const SEED: u64 = 20;

const DESK_SAMPLES: usize = 512;
const DESK_M: usize = 32;
const DESK_LAYERS: usize = 4;
const DESK_EPOCHS: usize = 60;
const DESK_BATCH: usize = 8;
const DESK_LR: f64 = 1e-3;
const DESK_DECAY_EVERY: usize = 12;
const DESK_DATA_SEED: u64 = 7;
const DESK_REDUCTION: f64 = 10.0;

const SUPER_M: usize = 64;
const SUPER_FACTOR: f64 = 3.0;

const ACTIVE_INSTANCES: usize = 200;
const ACTIVE_FRACTION: (f64, f64) = (0.5, 0.95);
const ACTIVE_RATIO: (f64, f64) = (0.05, 0.5);

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn report(check: Check, index: usize, lines: &mut Vec<(bool, String)>) {
    let line = format!("criterion {index:>2} {}", check.line());
    let _ = writeln!(std::io::stderr(), "{line}");
    lines.push((check.passed, line));
}

fn desk_training(lines: &mut Vec<(bool, String)>) -> Option<NetParams> {
    let mut trained = None;
    let check = timed("desk-scale training", secs(30 * 60), || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, DESK_SAMPLES, DESK_M, DESK_DATA_SEED).map_err(|e| e.to_string())?;
        let (train_set, heldout) = split_heldout(&ds);
        let mut c = NetConfig::new(ExperimentKind::EllipticIso, DESK_M);
        c.layers = DESK_LAYERS;
        c.tying = Tying::Shared;
        let mut net = NetParams::init(&c).map_err(|e| e.to_string())?;
        let before = mean_sd(&evaluate(&net, &heldout, None).map_err(|e| e.to_string())?.eps_rel).0;
        let cfg = TrainConfig {
            epochs: DESK_EPOCHS,
            batch_size: DESK_BATCH,
            base_lr: DESK_LR,
            every: DESK_DECAY_EVERY,
            augment: true,
            ..TrainConfig::default()
        };
        let rep = train(&cfg, &mut net, &train_set, Some(&heldout)).map_err(|e| e.to_string())?;
        let after = mean_sd(&evaluate(&net, &heldout, None).map_err(|e| e.to_string())?.eps_rel).0;
        let reduction = before / after;
        let finite = rep.all_finite();
        let detail = format!(
            "held-out mean eps_rel {before:.3e} -> {after:.3e} ({reduction:.1}x, need {DESK_REDUCTION}x), \
             loss curve finite: {finite}, {} train / {} held out",
            train_set.records.len(),
            heldout.records.len()
        );
        trained = Some((net, heldout, after));
        Ok((reduction >= DESK_REDUCTION && finite, detail))
    });
    report(check, 8, lines);

    let check = timed("zero-shot super-resolution", None, || {
        let (net, heldout, at_m) = trained.as_ref().ok_or("no trained model")?;
        let at_super = mean_sd(&evaluate(net, heldout, Some(SUPER_M)).map_err(|e| e.to_string())?.eps_rel).0;
        let factor = (at_super / at_m).max(at_m / at_super);
        Ok((
            factor <= SUPER_FACTOR,
            format!("mean eps_rel {at_m:.3e} at m={DESK_M}, {at_super:.3e} at m={SUPER_M} (factor {factor:.2}, limit {SUPER_FACTOR})"),
        ))
    });
    report(check, 9, lines);
    trained.map(|(net, _, _)| net)
}

fn active_statistics() -> Check {
    timed("active-set statistics", secs(5 * 60), || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, ACTIVE_INSTANCES, DESK_M, SEED).map_err(|e| e.to_string())?;
        let st = ActiveStats::of(&ds);
        let frac = st.active_fraction();
        let within = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        Ok((
            within(frac, ACTIVE_FRACTION) && within(st.mean_ratio, ACTIVE_RATIO),
            format!(
                "active fraction {frac:.3} (band {ACTIVE_FRACTION:?}), mean |A|/|Omega| {:.3} (band {ACTIVE_RATIO:?}) over {} instances",
                st.mean_ratio, st.records
            ),
        ))
    })
}

/// Dataset and checkpoint bytes of a small seeded pipeline.
fn pipeline_bytes() -> Result<(Vec<u8>, Vec<u8>), String> {
    let ds = gen_dataset(ExperimentKind::EllipticIso, 16, 12, SEED).map_err(|e| e.to_string())?;
    let mut data = Vec::new();
    write_dataset_to(&ds, &mut data).map_err(|e| e.to_string())?;
    let mut c = NetConfig::new(ExperimentKind::EllipticIso, 12);
    c.layers = 2;
    c.k_max = 3;
    c.m_p = 4;
    c.qa_width = 16;
    c.fourier_layers = 2;
    let mut net = NetParams::init(&c).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        seed: SEED,
        augment: true,
        ..TrainConfig::default()
    };
    train(&cfg, &mut net, &ds, None).map_err(|e| e.to_string())?;
    let mut ckpt = Vec::new();
    write_checkpoint_to(&net, &mut ckpt).map_err(|e| e.to_string())?;
    Ok((data, ckpt))
}

fn determinism() -> Check {
    timed("determinism", None, || {
        let mut runs = Vec::new();
        for threads in [1, 4, 1, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| e.to_string())?;
            runs.push(pool.install(pipeline_bytes)?);
        }
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        Ok((
            same,
            format!(
                "dataset ({} bytes) and checkpoint ({} bytes) identical over runs at 1, 4, 1, 4 threads: {same}",
                runs[0].0.len(),
                runs[0].1.len()
            ),
        ))
    })
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut lines = Vec::new();
    report(solver_agreement(10, 33, SEED, secs(60)), 1, &mut lines);
    report(uzawa_contraction(10, 33, SEED, secs(30)), 2, &mut lines);
    report(prox_oracle(1000, 100, SEED, secs(10)), 3, &mut lines);
    report(qs_structure(50, 20, SEED, secs(10)), 4, &mut lines);
    report(adjoint_identities(SEED, secs(10)), 5, &mut lines);
    report(algorithm_tracking(5, 17, 6, SEED, secs(10)), 6, &mut lines);
    report(gradient_check(25, SEED, secs(60)), 7, &mut lines);
    desk_training(&mut lines);
    report(active_statistics(), 10, &mut lines);
    report(determinism(), 11, &mut lines);
    let passed = lines.iter().filter(|(p, _)| *p).count();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {passed} of {} criteria passed in {:.0} s",
        lines.len(),
        start.elapsed().as_secs_f64()
    );
    let failed: Vec<&str> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
