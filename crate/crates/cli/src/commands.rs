//! Subcommand implementations. Each prints a short human-readable summary
//! and writes its CSV outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use iuzawa_core::classic::{
pd_solve, ssn_solve, uzawa_solve, Preconditioner, ProblemInstance, SolveReport, StopRule};
use iuzawa_core::grf::{gen_dataset_on, read_dataset, write_dataset, Dataset, ExperimentKind};
use iuzawa_core::{relative_error, Domain, GridField};
use iuzawa_net::checkpoint::{read_checkpoint, write_checkpoint};
use iuzawa_net::train::{evaluate, mean_sd, split_heldout, train as train_net, write_metrics_csv, EvalReport};
use iuzawa_net::unroll::{predict, NetInputs};
use iuzawa_net::{NetParams, Tying};

use crate::config::{KeyValues, TrainSettings, TRAIN_KEYS};
use crate::verify::{pd_steps, quick_suite, REL_EPS, UZAWA_TAU};
use crate::CliError;

/// Active-set statistics of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveStats {
    pub records: usize,
    pub active: usize,
    pub mean_ratio: f64,
    pub sd_ratio: f64,
}

impl ActiveStats {
    pub fn of(ds: &Dataset) -> Self {
        let ratios: Vec<f64> = ds.records.iter().filter_map(|r| r.active_ratio()).collect();
        let (mean_ratio, sd_ratio) = mean_sd(&ratios);
        Self {
            records: ds.records.len(),
            active: ratios.len(),
            mean_ratio,
            sd_ratio,
        }
    }

    pub fn active_fraction(&self) -> f64 {
        self.active as f64 / self.records.max(1) as f64
    }
}

pub fn datagen(problem: &str, m: usize, mt: Option<usize>, n: usize, seed: u64, out: &Path) -> Result<ActiveStats, CliError> {
    let kind = ExperimentKind::parse(problem)?;
    let domain = match (kind, mt) {
        (ExperimentKind::Parabolic, Some(mt)) => Domain::space_time(m, mt)?,
        (_, Some(_)) => return Err(CliError::Usage("--mt applies to the parabolic problem only".into())),
        (_, None) => kind.domain(m)?,
    };
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let start = Instant::now();
    let ds = gen_dataset_on(kind, domain, n, seed)?;
    write_dataset(&ds, out)?;
    let stats = ActiveStats::of(&ds);
    println!("problem          {}", kind.name());
    println!("grid             {:?}", ds.domain.shape());
    println!("records          {}", stats.records);
    println!(
        "active instances {}/{} ({:.3})",
        stats.active,
        stats.records,
        stats.active_fraction()
    );
    println!("mean |A|/|Omega|  {:.4} (sd {:.4}) over active instances", stats.mean_ratio, stats.sd_ratio);
    println!("time             {:.2} s", start.elapsed().as_secs_f64());
    Ok(stats)
}

fn load_problem(ds: &Dataset, index: usize) -> Result<ProblemInstance, CliError> {
    let rec = ds
        .records
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("index {index} out of range for {} records", ds.records.len())))?;
    Ok(rec.problem(ds.kind, ds.kind.operator(&ds.domain)?)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Ssn,
    Uzawa,
    Pd,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "ssn" => Ok(Method::Ssn),
            "uzawa" => Ok(Method::Uzawa),
            "pd" => Ok(Method::Pd),
            _ => Err(CliError::Usage(format!("unknown method `{s}` (ssn, uzawa, pd)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssn => "ssn",
            Method::Uzawa => "uzawa",
            Method::Pd => "pd",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    pub max_iter: Option<usize>,
    pub step_primal: Option<f64>,
    pub step_dual: Option<f64>,
}

/// Runs one classical solver. With `reference`, the iterative methods stop
/// once the relative error to it reaches `rtol`; otherwise on the KKT residual.
pub fn run_method(
    method: Method,
    prob: &ProblemInstance,
    rtol: f64,
    reference: Option<&GridField>,
    opts: &SolveOptions,
) -> Result<(GridField, SolveReport), CliError> {
    let stop = |max| {
        let s = StopRule::kkt(rtol, opts.max_iter.unwrap_or(max));
        match reference {
            Some(r) => s.with_reference(r.clone()),
            None => s,
        }
    };
    let (state, rep) = match method {
        Method::Ssn => ssn_solve(prob, rtol, opts.max_iter.unwrap_or(100))?,
        Method::Uzawa => {
            let qs = Preconditioner::admissible_sigma(&prob.op, prob.alpha)?;
            uzawa_solve(prob, qs, UZAWA_TAU, &stop(50_000))?
        }
        Method::Pd => {
            let (tp, td) = pd_steps(&prob.op)?;
            let (tp, td) = (opts.step_primal.unwrap_or(tp), opts.step_dual.unwrap_or(td));
            pd_solve(prob, tp, td, &stop(500_000))?
        }
    };
    Ok((state.u, rep))
}

pub fn solve(data: &Path, method: &str, index: usize, rtol: f64, reference: bool, opts: &SolveOptions) -> Result<(), CliError> {
    let method = Method::parse(method)?;
    if !(rtol > 0.0) {
        return Err(CliError::Usage("--rtol must be positive".into()));
    }
    let ds = read_dataset(data)?;
    let prob = load_problem(&ds, index)?;
    let u_star = &ds.records[index].u_star;
    let (u, rep) = run_method(method, &prob, rtol, reference.then_some(u_star), opts)?;
    let eps_rel = relative_error(&u, u_star, REL_EPS)?;
    println!("method      {}", method.name());
    println!("record      {index} of {}", ds.records.len());
    println!("iterations  {}", rep.iterations);
    println!("converged   {}", rep.converged);
    println!("residual    {:.3e}", rep.final_residual());
    println!("eps_rel     {eps_rel:.3e}");
    println!("wall time   {:.4} s", rep.wall_time.as_secs_f64());
    if !rep.converged {
        return Err(CliError::NonConvergence(format!(
            "{} stopped after {} iterations at residual {:.3e}",
            method.name(),
            rep.iterations,
            rep.final_residual()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn method_label(net: &NetParams) -> &'static str {
    match net.config.tying {
        Tying::Shared => "iuzawa-net-s",
        Tying::Free => "iuzawa-net-f",
    }
}

pub fn train(config: Option<&Path>, flags: &[String]) -> Result<EvalReport, CliError> {
    let text = match config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut kv = KeyValues::parse(&text, TRAIN_KEYS)?;
    kv.apply_flags(flags, TRAIN_KEYS)?;
    let settings = TrainSettings::from_kv(kv)?;
    let full = read_dataset(&settings.data_train)?;
    let (train_set, test_set) = match &settings.data_test {
        Some(p) => (full, read_dataset(p)?),
        None => split_heldout(&full),
    };
    let m = train_set.domain.shape()[train_set.domain.ndims() - 1];
    let cfg = settings.net_config(train_set.kind, m)?;
    let mut net = NetParams::init(&cfg)?;
    println!(
        "training {} ({} layers, {} parameters) on {} records, {} held out",
        method_label(&net),
        cfg.layers,
        net.num_scalars(),
        train_set.records.len(),
        test_set.records.len()
    );
    let start = Instant::now();
    let rep = train_net(&settings.train, &mut net, &train_set, Some(&test_set))?;
    write_checkpoint(&net, &settings.checkpoint)?;
    if let Some(path) = &settings.loss_curve {
        let mut w = create(path)?;
        writeln!(w, "epoch,train_loss,heldout_loss")?;
        writeln!(w, "0,{:e},", rep.initial_loss)?;
        for (e, l) in rep.epoch_loss.iter().enumerate() {
            let h = rep.heldout_loss.get(e).map(|h| format!("{h:e}")).unwrap_or_default();
            writeln!(w, "{},{l:e},{h}", e + 1)?;
        }
        w.flush()?;
    }
    println!("training time {:.1} s", start.elapsed().as_secs_f64());
    let eval = evaluate(&net, &test_set, None)?;
    let row = eval.row(method_label(&net));
    println!("held-out eps_rel {:.4e} (sd {:.4e})", row.eps_rel_mean, row.eps_rel_sd);
    if let Some(path) = &settings.report {
        let mut w = create(path)?;
        write_metrics_csv(&mut w, &[row])?;
        w.flush()?;
    }
    Ok(eval)
}

pub fn eval(ckpt: &Path, data: &Path, resample: Option<usize>, report: Option<&Path>) -> Result<EvalReport, CliError> {
    let net = read_checkpoint(ckpt)?;
    let ds = read_dataset(data)?;
    let rep = evaluate(&net, &ds, resample)?;
    let row = rep.row(method_label(&net));
    let mut out = Vec::new();
    write_metrics_csv(&mut out, &[row])?;
    print!("{}", String::from_utf8_lossy(&out));
    if let Some(path) = report {
        let mut w = create(path)?;
        w.write_all(&out)?;
        w.flush()?;
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub m: usize,
    pub mean_time_s: f64,
    pub mean_iters: f64,
    pub failures: usize,
}

pub fn bench(data: &Path, methods: &str, rtol: f64, ckpt: Option<&Path>, report: Option<&Path>) -> Result<Vec<BenchRow>, CliError> {
    let ds = read_dataset(data)?;
    let op = ds.kind.operator(&ds.domain)?;
    let m = ds.domain.shape()[ds.domain.ndims() - 1];
    let mut rows = Vec::new();
    for name in methods.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut time = Duration::ZERO;
        let mut iters = 0usize;
        let mut failures = 0;
        if name == "net" {
            let path = ckpt.ok_or_else(|| CliError::Usage("method `net` needs --ckpt".into()))?;
            let net = read_checkpoint(path)?;
            for r in &ds.records {
                let start = Instant::now();
                let u = predict(&net, NetInputs { y_d: &r.y_d, f: &r.f, u_a: &r.u_a, u_b: &r.u_b })?;
                time += start.elapsed();
                iters += net.config.layers;
                if relative_error(&u, &r.u_star, REL_EPS)? > rtol {
                    failures += 1;
                }
            }
        } else {
            let method = Method::parse(name)?;
            for r in &ds.records {
                let prob = r.problem(ds.kind, op.clone())?;
                let (_, rep) = run_method(method, &prob, rtol, Some(&r.u_star), &SolveOptions::default())?;
                time += rep.wall_time;
                iters += rep.iterations;
                failures += usize::from(!rep.converged);
            }
        }
        let n = ds.records.len().max(1) as f64;
        rows.push(BenchRow {
            method: name.to_string(),
            m,
            mean_time_s: time.as_secs_f64() / n,
            mean_iters: iters as f64 / n,
            failures,
        });
    }
    let mut out = String::from("method,m,mean_time_s,mean_iters\n");
    for r in &rows {
        out.push_str(&format!("{},{},{:e},{}\n", r.method, r.m, r.mean_time_s, r.mean_iters));
    }
    print!("{out}");
    if let Some(path) = report {
        let mut w = create(path)?;
        w.write_all(out.as_bytes())?;
        w.flush()?;
    }
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.failures > 0)
        .map(|r| format!("{} ({} records)", r.method, r.failures))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::NonConvergence(format!("rtol {rtol:e} not reached by {}", failed.join(", "))));
    }
    Ok(rows)
}

pub fn verify() -> Result<(), CliError> {
    let checks = quick_suite();
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    println!("{} of {} sections passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
