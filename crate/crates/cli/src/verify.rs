//! Property suites shared by `iuzawa verify` and the acceptance tests.
//! Every check is seeded and carries its tolerances as constants.

use std::time::{Duration, Instant};

use iuzawa_autodiff::Tape;
use iuzawa_core::classic::{
    pd_solve, ssn_solve, tracking_check, uzawa_solve, Preconditioner, ProblemInstance, StopRule,
};
use iuzawa_core::grf::{gen_dataset, Dataset, ExperimentKind, ALPHA};
use iuzawa_core::prox::{firm_nonexpansiveness_check, resolve_point, Multiplier, Regularizer};
use iuzawa_core::{inner_product, relative_error, Domain, GridField, PdeKind, PdeOperator};
use iuzawa_net::gradcheck::probe_gradient;
use iuzawa_net::modules::{qs_forward, Geometry};
use iuzawa_net::train::LossKind;
use iuzawa_net::unroll::exact_trajectory;
use iuzawa_net::{NetConfig, NetParams, Tying};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const UZAWA_TAU: f64 = 1e-4;
pub const REL_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `f`, failing the check on error or when it takes longer than `limit`.
pub fn timed(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<(bool, String), String>) -> Check {
    let start = Instant::now();
    let (mut passed, mut detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; exceeded {} s", limit.as_secs()));
        }
    }
    Check {
        name: name.to_string(),
        passed,
        detail,
        elapsed,
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_field(d: &Domain, rng: &mut ChaCha8Rng) -> GridField {
    GridField::from_fn(d, |_| rng.gen_range(-1.0..1.0))
}

fn problems(ds: &Dataset) -> Result<Vec<ProblemInstance>, String> {
    let op = ds.kind.operator(&ds.domain).map_err(s)?;
    ds.records.iter().map(|r| r.problem(ds.kind, op.clone()).map_err(s)).collect()
}

/// Primal and dual steps with `τ_p·τ_d·‖S‖² = 0.9`.
pub fn pd_steps(op: &PdeOperator) -> iuzawa_core::Result<(f64, f64)> {
    let norm = op.operator_norm_estimate(50)?;
    Ok((0.9 / (norm * norm), 1.0))
}

pub const AGREEMENT_TOL: f64 = 1e-5;
pub const SOLVER_TOL: f64 = 1e-8;

/// SSN, inexact Uzawa with a scalar preconditioner and primal-dual, each run
/// to KKT residual `SOLVER_TOL`, agree pairwise.
pub fn solver_agreement(n: usize, m: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("cross-solver agreement", limit, || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, n, m, seed).map_err(s)?;
        let mut worst: f64 = 0.0;
        let mut all_converged = true;
        for prob in problems(&ds)? {
            let (ssn, r1) = ssn_solve(&prob, SOLVER_TOL, 100).map_err(s)?;
            let qs = Preconditioner::admissible_sigma(&prob.op, prob.alpha).map_err(s)?;
            let (uz, r2) = uzawa_solve(&prob, qs, UZAWA_TAU, &StopRule::kkt(SOLVER_TOL, 20_000)).map_err(s)?;
            let (tp, td) = pd_steps(&prob.op).map_err(s)?;
            let (pd, r3) = pd_solve(&prob, tp, td, &StopRule::kkt(SOLVER_TOL, 200_000)).map_err(s)?;
            all_converged &= r1.converged && r2.converged && r3.converged;
            for (a, b) in [(&ssn.u, &uz.u), (&ssn.u, &pd.u), (&uz.u, &pd.u)] {
                worst = worst.max(relative_error(a, b, REL_EPS).map_err(s)?);
            }
        }
        Ok((
            all_converged && worst <= AGREEMENT_TOL,
            format!("{n} instances at m={m}, worst pairwise relative L2 gap {worst:.2e} (tol {AGREEMENT_TOL:.0e}), all converged: {all_converged}"),
        ))
    })
}

pub const CONTRACTION_MEDIAN: f64 = 0.95;

/// Error ratios of inexact Uzawa in the `Q`-seminorm against the reference
/// solutions: every ratio from the second step on is below 1 and the median
/// below `CONTRACTION_MEDIAN`.
pub fn uzawa_contraction(n: usize, m: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("linear contraction", limit, || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, n, m, seed).map_err(s)?;
        let mut ratios = Vec::new();
        let mut max_ratio: f64 = 0.0;
        for (prob, rec) in problems(&ds)?.iter().zip(&ds.records) {
            let qs = Preconditioner::admissible_sigma(&prob.op, prob.alpha).map_err(s)?;
            let stop = StopRule::kkt(SOLVER_TOL, 20_000).with_reference(rec.u_star.clone());
            let (_, rep) = uzawa_solve(prob, qs, UZAWA_TAU, &stop).map_err(s)?;
            for &r in rep.contraction_estimates.iter().skip(1) {
                max_ratio = max_ratio.max(r);
                ratios.push(r);
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN);
        Ok((
            max_ratio < 1.0 && median < CONTRACTION_MEDIAN,
            format!("max ratio {max_ratio:.4}, median {median:.4} over {} steps", ratios.len()),
        ))
    })
}

pub const PROX_GRID: f64 = 1e-3;
pub const PROX_TOL: f64 = 2e-3;

/// Minimiser of `½·lt·r² − v·r + β|r|` over a uniform grid on `[lo, hi]`.
pub fn grid_argmin(v: f64, lt: f64, beta: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=n {
        let r = lo + (hi - lo) * i as f64 / n as f64;
        let e = 0.5 * lt * r * r - v * r + beta * r.abs();
        if e < best.1 {
            best = (r, e);
        }
    }
    best.0
}

/// Closed-form resolvent against brute-force minimisation, and firm
/// nonexpansiveness of the field resolvent.
pub fn prox_oracle(tuples: usize, pairs: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("prox oracle and firm nonexpansiveness", limit, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for i in 0..tuples {
            let lo = rng.gen_range(-5.0..0.0);
            let hi = rng.gen_range(0.0..5.0);
            let beta = if i % 2 == 0 { 0.0 } else { rng.gen_range(0.0..1.0) };
            let lt = rng.gen_range(0.01..2.0);
            let v = rng.gen_range(-8.0..8.0);
            let closed = resolve_point(v, lt, beta, lo, hi);
            worst = worst.max((closed - grid_argmin(v, lt, beta, lo, hi, PROX_GRID)).abs());
        }
        let d = Domain::square(16).map_err(s)?;
        let mut violations = 0;
        for (k, reg) in [
            Regularizer::Box {
                lower: random_field(&d, &mut rng).map(|x| x - 1.0),
                upper: random_field(&d, &mut rng).map(|x| x + 1.0),
            },
            Regularizer::L1Box {
                beta: 0.01,
                lower: GridField::constant(&d, -6.0),
                upper: GridField::constant(&d, 6.0),
            },
        ]
        .iter()
        .enumerate()
        {
            let rep = firm_nonexpansiveness_check(reg, &Multiplier::scalar(ALPHA, UZAWA_TAU), &d, pairs, seed + k as u64)
                .map_err(s)?;
            violations += rep.violations;
        }
        Ok((
            worst <= PROX_TOL && violations == 0,
            format!("worst gap to grid search {worst:.2e} over {tuples} tuples (tol {PROX_TOL:.0e}); {violations} firm nonexpansiveness violations over {} pairs", 2 * pairs),
        ))
    })
}

pub const QS_TOL: f64 = 1e-10;

fn qs_config() -> NetConfig {
    let mut c = NetConfig::new(ExperimentKind::EllipticIso, 16);
    c.layers = 1;
    c.k_max = 4;
    c
}

fn apply_qs(net: &NetParams, geo: &Geometry, x: &GridField) -> Result<GridField, String> {
    let mut tape = Tape::new();
    let v = geo.field(&mut tape, x).map_err(s)?;
    let y = qs_forward(net, &net.layers[0].qs, geo, &mut tape, v).map_err(s)?;
    geo.to_field(&tape, y).map_err(s)
}

/// Self-adjointness and `γ`-coercivity of the learned preconditioner for
/// random weights.
pub fn qs_structure(draws: usize, pairs: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("Q_S structure", limit, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = qs_config();
        let d = Domain::square(c.train_m).map_err(s)?;
        let geo = Geometry::new(&c, &d).map_err(s)?;
        let (mut worst_sym, mut worst_coer) = (0.0f64, f64::INFINITY);
        for _ in 0..draws {
            let mut net = NetParams::init(&NetConfig { seed: rng.gen(), ..c.clone() }).map_err(s)?;
            let q = net.layers[0].qs.clone();
            for id in [q.p, q.v, q.phi_re, q.phi_im] {
                let scale = rng.gen_range(0.1..2.0);
                net.store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = scale * rng.gen_range(-1.0..1.0));
            }
            for _ in 0..pairs {
                let (v, w) = (random_field(&d, &mut rng), random_field(&d, &mut rng));
                let (qv, qw) = (apply_qs(&net, &geo, &v)?, apply_qs(&net, &geo, &w)?);
                let a = inner_product(&qv, &w).map_err(s)?;
                let b = inner_product(&v, &qw).map_err(s)?;
                worst_sym = worst_sym.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
                let rayleigh = inner_product(&qv, &v).map_err(s)? / inner_product(&v, &v).map_err(s)?;
                worst_coer = worst_coer.min(rayleigh);
            }
        }
        Ok((
            worst_sym <= QS_TOL && worst_coer >= c.gamma - QS_TOL,
            format!("worst symmetry gap {worst_sym:.2e}, smallest Rayleigh quotient {worst_coer:.3e} (γ = {:.0e}) over {draws}×{pairs} pairs", c.gamma),
        ))
    })
}

pub const ADJOINT_TOL: f64 = 1e-10;

/// `⟨Sg, w⟩ = ⟨g, S*w⟩` for all PDE kinds, and the heat adjoint against the
/// weighted dense transpose at `m = m_T = 8`.
pub fn adjoint_identities(seed: u64, limit: Option<Duration>) -> Check {
    timed("adjoint identities", limit, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sq = Domain::square(16).map_err(s)?;
        let st = Domain::space_time(8, 8).map_err(s)?;
        let ops = [
            PdeOperator::new(PdeKind::EllipticDirichlet, &sq),
            PdeOperator::new(PdeKind::EllipticAnisoNeumann { a1: 1.0, a2: 100.0, c: 1.0 }, &sq),
            PdeOperator::new(PdeKind::HeatDirichlet, &st),
        ];
        let mut worst: f64 = 0.0;
        for op in ops {
            let op = op.map_err(s)?;
            let d = op.domain().clone();
            for _ in 0..10 {
                let (g, w) = (random_field(&d, &mut rng), random_field(&d, &mut rng));
                let a = inner_product(&op.apply_s(&g).map_err(s)?, &w).map_err(s)?;
                let b = inner_product(&g, &op.apply_s_adjoint(&w).map_err(s)?).map_err(s)?;
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
            }
        }
        let heat = PdeOperator::new(PdeKind::HeatDirichlet, &st).map_err(s)?;
        let n = st.len();
        let wts = st.weights();
        let cols = (0..n)
            .map(|j| {
                let mut e = GridField::zeros(&st);
                e.values_mut()[j] = 1.0;
                heat.apply_s(&e).map(GridField::into_values)
            })
            .collect::<iuzawa_core::Result<Vec<_>>>()
            .map_err(s)?;
        let v = random_field(&st, &mut rng);
        let adj = heat.apply_s_adjoint(&v).map_err(s)?;
        let scale = adj.max_abs().max(1e-300);
        let mut dense_gap: f64 = 0.0;
        for j in 0..n {
            let dense: f64 = (0..n).map(|i| cols[j][i] * wts[i] * v.values()[i]).sum::<f64>() / wts[j];
            dense_gap = dense_gap.max((dense - adj.values()[j]).abs() / scale);
        }
        Ok((
            worst <= ADJOINT_TOL && dense_gap <= ADJOINT_TOL,
            format!("worst relative gap {worst:.2e} over 3 kinds; heat vs dense transpose {dense_gap:.2e} (tol {ADJOINT_TOL:.0e})"),
        ))
    })
}

pub const TRACKING_TOL: f64 = 1e-8;

/// The network with exact operators reproduces inexact Uzawa step by step.
pub fn algorithm_tracking(n: usize, m: usize, layers: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("algorithm tracking", limit, || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, n, m, seed).map_err(s)?;
        let mut delta: f64 = 0.0;
        for prob in problems(&ds)? {
            let qs = Preconditioner::admissible_sigma(&prob.op, prob.alpha).map_err(s)?;
            let Preconditioner::ScalarSigma(sigma) = qs else { unreachable!() };
            let states = exact_trajectory(&prob, layers, UZAWA_TAU, sigma).map_err(s)?;
            delta = delta.max(tracking_check(&prob, &states, qs, UZAWA_TAU).map_err(s)?);
        }
        Ok((
            delta <= TRACKING_TOL,
            format!("δ = {delta:.2e} over {layers} layers on {n} instances at m={m} (tol {TRACKING_TOL:.0e})"),
        ))
    })
}

pub const FD_RTOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

/// Network small enough for an `m = 8` grid.
pub fn m8_config(layers: usize) -> NetConfig {
    let mut c = NetConfig::new(ExperimentKind::EllipticIso, 8);
    c.layers = layers;
    c.tying = Tying::Shared;
    c.k_max = 2;
    c.pad_to = 10;
    c.m_p = 4;
    c.qa_width = 16;
    c.fourier_layers = 2;
    c
}

/// Backpropagated loss gradient of a full `L = 2`, `m = 8` network against
/// central differences on random parameters.
pub fn gradient_check(count: usize, seed: u64, limit: Option<Duration>) -> Check {
    timed("end-to-end gradient", limit, || {
        let ds = gen_dataset(ExperimentKind::EllipticIso, 1, 8, seed).map_err(s)?;
        let mut net = NetParams::init(&NetConfig { seed, ..m8_config(2) }).map_err(s)?;
        let probes = probe_gradient(&mut net, &ds.records[0], LossKind::L1Ratio, count, FD_STEP, seed).map_err(s)?;
        let worst = probes.iter().map(|p| p.error(FD_RTOL)).fold(0.0, f64::max);
        Ok((
            worst <= FD_RTOL,
            format!("worst relative error {worst:.2e} over {count} parameters (tol {FD_RTOL:.0e}, step {FD_STEP:.0e})"),
        ))
    })
}

/// The suite run by `iuzawa verify`, sized for a quick run.
pub fn quick_suite() -> Vec<Check> {
    vec![
        adjoint_identities(1, None),
        qs_structure(10, 5, 2, None),
        prox_oracle(1000, 50, 3, None),
        gradient_check(25, 4, None),
        algorithm_tracking(3, 17, 6, 5, None),
        solver_agreement(3, 17, 6, None),
        uzawa_contraction(3, 17, 6, None),
    ]
}
