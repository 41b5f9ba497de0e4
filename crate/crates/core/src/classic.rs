//! Classical solvers for the saddle-point form of the control problem
//!
//! ```text
//! min_u max_p  ½⟨u, αu⟩ + θ(u) + ⟨p, Su⟩ − ½‖p‖² − ⟨p, y_d − Sf⟩
//! ```
//!
//! whose optimality system is `0 ∈ αu + ∂θ(u) + S*p`, `p = S(u + f) − y_d`.
//! The semismooth Newton (primal-dual active set) solver produces reference
//! controls; the inexact Uzawa and primal-dual iterations are the
//! first-order baselines.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::field::{inner_product, norm_l2, relative_error, weighted_dot, Domain, GridField};
use crate::pde::PdeOperator;
use crate::prox::{resolvent, Multiplier, Regularizer};

/// Floor used whenever a relative error is formed against a reference.
pub const REL_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub op: Arc<PdeOperator>,
    pub alpha: f64,
    pub reg: Regularizer,
    pub y_d: GridField,
    pub f: GridField,
}

impl ProblemInstance {
    pub fn new(op: Arc<PdeOperator>, alpha: f64, reg: Regularizer, y_d: GridField, f: GridField) -> Result<Self> {
        let d = op.domain();
        d.check_same(y_d.domain())?;
        d.check_same(f.domain())?;
        reg.validate(d)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("α must be positive, got {alpha}")));
        }
        Ok(Self { op, alpha, reg, y_d, f })
    }

    pub fn domain(&self) -> &Domain {
        self.op.domain()
    }

    /// `Sf − y_d`, the only data combination the solution depends on.
    pub fn shifted_target(&self) -> Result<GridField> {
        self.op.apply_s(&self.f)?.sub(&self.y_d)
    }

    /// `p = S(u + f) − y_d`.
    pub fn dual_of(&self, u: &GridField) -> Result<GridField> {
        self.op.apply_s(&u.add(&self.f)?)?.sub(&self.y_d)
    }

    /// `(αI + ∂θ)⁻¹(−S*p)`, the control that is optimal for a fixed dual.
    fn control_of_adjoint(&self, s_adj_p: &GridField) -> Result<GridField> {
        resolvent(&self.reg, &Multiplier::scalar(self.alpha, 0.0), &s_adj_p.scale(-1.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleState {
    pub u: GridField,
    pub p: GridField,
}

impl SaddleState {
    pub fn zeros(domain: &Domain) -> Self {
        Self {
            u: GridField::zeros(domain),
            p: GridField::zeros(domain),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// KKT residual after each iteration.
    pub residual_history: Vec<f64>,
    /// Relative error of `u` against the supplied reference, per iteration.
    pub rel_error_history: Vec<f64>,
    /// `‖w^{k+1} − w*‖_Q / ‖w^k − w*‖_Q` for Uzawa when a reference is given.
    pub contraction_estimates: Vec<f64>,
    pub wall_time: Duration,
}

impl SolveReport {
    fn new() -> Self {
        Self {
            iterations: 0,
            converged: false,
            residual_history: Vec::new(),
            rel_error_history: Vec::new(),
            contraction_estimates: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Stopping rule shared by the iterative solvers: stop once the KKT
/// residual, or the relative error against `reference` when one is given,
/// drops to `tol`.
#[derive(Clone, Debug)]
pub struct StopRule {
    pub tol: f64,
    pub max_iter: usize,
    pub reference: Option<GridField>,
}

impl StopRule {
    pub fn kkt(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: GridField) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Natural residual of the optimality system:
/// `‖u − (αI+∂θ)⁻¹(−S*p)‖ + ‖S(u+f) − p − y_d‖`.
pub fn kkt_residual(prob: &ProblemInstance, s: &SaddleState) -> Result<f64> {
    let s_adj_p = prob.op.apply_s_adjoint(&s.p)?;
    let su = prob.op.apply_s(&s.u)?;
    residual_parts(prob, s, &s_adj_p, &su, &prob.shifted_target()?)
}

fn residual_parts(
    prob: &ProblemInstance,
    s: &SaddleState,
    s_adj_p: &GridField,
    su: &GridField,
    shifted: &GridField,
) -> Result<f64> {
    let primal = norm_l2(&s.u.sub(&prob.control_of_adjoint(s_adj_p)?)?);
    let w = prob.domain().weights();
    let dual: f64 = w
        .iter()
        .zip(su.values())
        .zip(s.p.values())
        .zip(shifted.values())
        .map(|(((w, a), b), c)| {
            let r = a - b + c;
            w * r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(primal + dual)
}

/// `Q_S` for the inexact Uzawa iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preconditioner {
    /// `Q_S = σI`; admissible when `σ ≥ 1 + ‖S‖²/α`.
    ScalarSigma(f64),
    /// `Q_S = I + SS*/α`, inverted spectrally (elliptic operators only).
    ExactSchur,
}

impl Preconditioner {
    /// Smallest admissible scalar `σ = 1 + ‖S‖²/α` from a power-iteration bound,
    /// padded by 1% to cover the estimate's error.
    pub fn admissible_sigma(op: &PdeOperator, alpha: f64) -> Result<Self> {
        let s = op.operator_norm_estimate(50)? * 1.01;
        Ok(Preconditioner::ScalarSigma(1.0 + s * s / alpha))
    }

    pub fn apply_inverse(&self, prob: &ProblemInstance, r: &GridField) -> Result<GridField> {
        match *self {
            Preconditioner::ScalarSigma(sigma) => Ok(r.scale(1.0 / sigma)),
            Preconditioner::ExactSchur => prob.op.apply_schur_inverse(r, prob.alpha),
        }
    }

    /// `⟨Q_S e, e⟩`.
    pub fn energy(&self, prob: &ProblemInstance, e: &GridField) -> Result<f64> {
        let n2 = inner_product(e, e)?;
        match *self {
            Preconditioner::ScalarSigma(sigma) => Ok(sigma * n2),
            Preconditioner::ExactSchur => {
                let se = prob.op.apply_s_adjoint(e)?;
                Ok(n2 + inner_product(&se, &se)? / prob.alpha)
            }
        }
    }
}

/// Seminorm `‖w‖²_Q = τ‖u‖² + ⟨Q_S p, p⟩`.
fn q_seminorm(prob: &ProblemInstance, qs: &Preconditioner, tau: f64, du: &GridField, dp: &GridField) -> Result<f64> {
    Ok((tau * inner_product(du, du)? + qs.energy(prob, dp)?).sqrt())
}

/// One exact inexact-Uzawa step from `(u, p)` given `S*p`.
fn uzawa_step(
    prob: &ProblemInstance,
    qs: &Preconditioner,
    tau: f64,
    s: &SaddleState,
    s_adj_p: &GridField,
    shifted: &GridField,
) -> Result<(SaddleState, GridField)> {
    let mut arg = s.u.scale(tau);
    arg.axpy(-1.0, s_adj_p)?;
    let u = resolvent(&prob.reg, &Multiplier::scalar(prob.alpha, tau), &arg)?;
    let su = prob.op.apply_s(&u)?;
    let r = su.sub(&s.p)?.add(shifted)?;
    let mut p = s.p.clone();
    p.axpy(1.0, &qs.apply_inverse(prob, &r)?)?;
    Ok((SaddleState { u, p }, su))
}

fn record_progress(
    report: &mut SolveReport,
    stop: &StopRule,
    residual: f64,
    u: &GridField,
) -> Result<bool> {
    report.residual_history.push(residual);
    let mut done = residual <= stop.tol;
    if let Some(reference) = &stop.reference {
        let e = relative_error(u, reference, REL_EPS)?;
        report.rel_error_history.push(e);
        done |= e <= stop.tol;
    }
    Ok(done)
}

/// Inexact Uzawa iteration with `Q_A = αI + τI`, started from `(0, 0)`.
pub fn uzawa_solve(
    prob: &ProblemInstance,
    qs: Preconditioner,
    tau: f64,
    stop: &StopRule,
) -> Result<(SaddleState, SolveReport)> {
    if tau < 0.0 {
        return Err(Error::InvalidArgument(format!("τ must be nonnegative, got {tau}")));
    }
    let start = Instant::now();
    let d = prob.domain();
    let shifted = prob.shifted_target()?;
    let reference_state = match &stop.reference {
        Some(u_star) => Some(SaddleState {
            u: u_star.clone(),
            p: prob.dual_of(u_star)?,
        }),
        None => None,
    };
    let mut state = SaddleState::zeros(d);
    let mut s_adj_p = GridField::zeros(d);
    let mut report = SolveReport::new();
    let mut best: Option<(f64, SaddleState)> = None;
    let mut prev_q = match &reference_state {
        Some(w) => Some(q_seminorm(prob, &qs, tau, &w.u.scale(-1.0), &w.p.scale(-1.0))?),
        None => None,
    };
    for _ in 0..stop.max_iter {
        let (next, su) = uzawa_step(prob, &qs, tau, &state, &s_adj_p, &shifted)?;
        state = next;
        s_adj_p = prob.op.apply_s_adjoint(&state.p)?;
        report.iterations += 1;
        let residual = residual_parts(prob, &state, &s_adj_p, &su, &shifted)?;
        if let (Some(w), Some(prev)) = (&reference_state, prev_q) {
            let q = q_seminorm(prob, &qs, tau, &state.u.sub(&w.u)?, &state.p.sub(&w.p)?)?;
            if prev > 0.0 {
                report.contraction_estimates.push(q / prev);
            }
            prev_q = Some(q);
        }
        let done = record_progress(&mut report, stop, residual, &state.u)?;
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            best = Some((residual, state.clone()));
        }
        if done {
            report.converged = true;
            break;
        }
    }
    report.wall_time = start.elapsed();
    if !report.converged {
        warn!("uzawa: no convergence after {} iterations", report.iterations);
        if let Some((_, s)) = best {
            state = s;
        }
    }
    Ok((state, report))
}

/// Largest `step_primal · step_dual · ‖S‖²` that guarantees convergence.
pub const PD_STEP_BOUND: f64 = 1.0;

/// Returns `step_primal · step_dual · ‖S‖²`.
pub fn pd_step_product(prob: &ProblemInstance, step_primal: f64, step_dual: f64) -> Result<f64> {
    let s = prob.op.operator_norm_estimate(50)?;
    Ok(step_primal * step_dual * s * s)
}

/// First-order primal-dual iteration with extrapolation parameter 1.
pub fn pd_solve(
    prob: &ProblemInstance,
    step_primal: f64,
    step_dual: f64,
    stop: &StopRule,
) -> Result<(SaddleState, SolveReport)> {
    if !(step_primal > 0.0 && step_dual > 0.0) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    let product = pd_step_product(prob, step_primal, step_dual)?;
    if product > PD_STEP_BOUND {
        warn!("primal-dual: step product {product:.3} exceeds {PD_STEP_BOUND}; convergence is not guaranteed");
    }
    let start = Instant::now();
    let d = prob.domain();
    let shifted = prob.shifted_target()?;
    let primal_mult = Multiplier::scalar(prob.alpha, 1.0 / step_primal);
    let mut state = SaddleState::zeros(d);
    let mut s_adj_p = GridField::zeros(d);
    let mut su = GridField::zeros(d);
    let mut report = SolveReport::new();
    let mut best: Option<(f64, SaddleState)> = None;
    for _ in 0..stop.max_iter {
        // u⁺ = argmin ½α‖u‖² + θ(u) + ‖u − (u − τS*p)‖²/(2τ)
        let mut arg = state.u.scale(1.0 / step_primal);
        arg.axpy(-1.0, &s_adj_p)?;
        let u_new = resolvent(&prob.reg, &primal_mult, &arg)?;
        let su_new = prob.op.apply_s(&u_new)?;
        // p⁺ = (q − σ(y_d − Sf)) / (1 + σ) with q = p + σ S(2u⁺ − u)
        let mut p_new = state.p.clone();
        p_new.axpy(2.0 * step_dual, &su_new)?;
        p_new.axpy(-step_dual, &su)?;
        p_new.axpy(step_dual, &shifted)?;
        let p_new = p_new.scale(1.0 / (1.0 + step_dual));
        state = SaddleState { u: u_new, p: p_new };
        su = su_new;
        s_adj_p = prob.op.apply_s_adjoint(&state.p)?;
        report.iterations += 1;
        let residual = residual_parts(prob, &state, &s_adj_p, &su, &shifted)?;
        let done = record_progress(&mut report, stop, residual, &state.u)?;
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            best = Some((residual, state.clone()));
        }
        if done {
            report.converged = true;
            break;
        }
    }
    report.wall_time = start.elapsed();
    if !report.converged {
        warn!("primal-dual: no convergence after {} iterations", report.iterations);
        if let Some((_, s)) = best {
            state = s;
        }
    }
    Ok((state, report))
}

/// Classification of one grid point for the active-set method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum PointState {
    Lower,
    Upper,
    /// `|S*p| ≤ β`: the sparsity term pins the control at zero.
    Zero,
    /// Free, with the sign of the sparsity shift.
    Free(i8),
}

fn classify(prob: &ProblemInstance, neg_s_adj_p: &GridField) -> Vec<PointState> {
    let beta = prob.reg.beta();
    let alpha = prob.alpha;
    let bounds = prob.reg.bounds();
    neg_s_adj_p
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (shift, sign) = if beta > 0.0 {
                if v.abs() <= beta {
                    // Zero is still subject to the box.
                    return match bounds {
                        Some((lo, _)) if lo.values()[i] >= 0.0 => PointState::Lower,
                        Some((_, hi)) if hi.values()[i] <= 0.0 => PointState::Upper,
                        _ => PointState::Zero,
                    };
                }
                (v.signum() * beta, v.signum() as i8)
            } else {
                (0.0, 0)
            };
            let cand = (v - shift) / alpha;
            match bounds {
                Some((_, hi)) if cand >= hi.values()[i] => PointState::Upper,
                Some((lo, _)) if cand <= lo.values()[i] => PointState::Lower,
                _ => PointState::Free(sign),
            }
        })
        .collect()
}

/// Conjugate gradients for `αx + P_I S*S x = b` on the free points, in the
/// trapezoid-weighted inner product.
fn cg_free(prob: &ProblemInstance, free: &[bool], b: &GridField, x0: &GridField, rtol: f64) -> Result<(GridField, usize)> {
    let w = prob.domain().weights();
    let apply = |x: &GridField| -> Result<GridField> {
        let sx = prob.op.apply_s(x)?;
        let mut y = prob.op.apply_s_adjoint(&sx)?;
        for ((yi, &xi), &fi) in y.values_mut().iter_mut().zip(x.values()).zip(free) {
            *yi = if fi { *yi + prob.alpha * xi } else { 0.0 };
        }
        Ok(y)
    };
    let mut x = x0.clone();
    let mut r = b.sub(&apply(&x)?)?;
    let mut dir = r.clone();
    let mut rr = weighted_dot(w, r.values(), r.values());
    let target = rtol * weighted_dot(w, b.values(), b.values()).sqrt();
    let max_iter = 10 * free.iter().filter(|&&f| f).count().max(1);
    let mut iters = 0;
    while rr.sqrt() > target && iters < max_iter {
        let ad = apply(&dir)?;
        let step = rr / weighted_dot(w, dir.values(), ad.values());
        x.axpy(step, &dir)?;
        r.axpy(-step, &ad)?;
        let rr_new = weighted_dot(w, r.values(), r.values());
        let beta = rr_new / rr;
        rr = rr_new;
        let mut nd = r.clone();
        nd.axpy(beta, &dir)?;
        dir = nd;
        iters += 1;
    }
    Ok((x, iters))
}

/// Semismooth Newton method in primal-dual active-set form.
pub fn ssn_solve(prob: &ProblemInstance, tol: f64, max_iter: usize) -> Result<(SaddleState, SolveReport)> {
    let start = Instant::now();
    let d = prob.domain().clone();
    let shifted = prob.shifted_target()?;
    // S*(y_d − Sf)
    let rhs_data = prob.op.apply_s_adjoint(&shifted)?.scale(-1.0);
    let mut report = SolveReport::new();
    let mut u = prob.control_of_adjoint(&GridField::zeros(&d))?;
    let mut prev_u = u.clone();
    let mut seen: HashSet<Vec<PointState>> = HashSet::new();
    let mut last_sets: Option<Vec<PointState>> = None;
    let mut state = SaddleState::zeros(&d);
    for outer in 0..max_iter {
        let p = prob.dual_of(&u)?;
        let s_adj_p = prob.op.apply_s_adjoint(&p)?;
        let su = prob.op.apply_s(&u)?;
        state = SaddleState { u: u.clone(), p };
        let residual = residual_parts(prob, &state, &s_adj_p, &su, &shifted)?;
        report.residual_history.push(residual);
        report.iterations = outer;
        if residual <= tol {
            report.converged = true;
            break;
        }
        let mut sets = classify(prob, &s_adj_p.scale(-1.0));
        if last_sets.as_ref() != Some(&sets) && !seen.insert(sets.clone()) {
            // A previously visited partition: damp the iterate and reclassify.
            debug!("ssn: active-set cycle at outer iteration {outer}, damping");
            let mid = u.add(&prev_u)?.scale(0.5);
            let p_mid = prob.dual_of(&mid)?;
            sets = classify(prob, &prob.op.apply_s_adjoint(&p_mid)?.scale(-1.0));
        }
        // Fixed part of u and the right-hand side on the free set.
        let mut fixed = GridField::zeros(&d);
        let mut free = vec![false; d.len()];
        let mut shift = GridField::zeros(&d);
        let bounds = prob.reg.bounds();
        for (i, s) in sets.iter().enumerate() {
            match *s {
                PointState::Lower => fixed.values_mut()[i] = bounds.map_or(0.0, |(lo, _)| lo.values()[i]),
                PointState::Upper => fixed.values_mut()[i] = bounds.map_or(0.0, |(_, hi)| hi.values()[i]),
                PointState::Zero => {}
                PointState::Free(sign) => {
                    free[i] = true;
                    shift.values_mut()[i] = f64::from(sign) * prob.reg.beta();
                }
            }
        }
        let sfixed = prob.op.apply_s_adjoint(&prob.op.apply_s(&fixed)?)?;
        let mut b = rhs_data.sub(&sfixed)?.sub(&shift)?;
        for (bi, &fi) in b.values_mut().iter_mut().zip(&free) {
            if !fi {
                *bi = 0.0;
            }
        }
        let mut x0 = u.clone();
        for (xi, &fi) in x0.values_mut().iter_mut().zip(&free) {
            if !fi {
                *xi = 0.0;
            }
        }
        let (x, cg_iters) = cg_free(prob, &free, &b, &x0, 1e-14)?;
        debug!("ssn: outer {outer}, {} free points, {cg_iters} CG iterations", free.iter().filter(|&&f| f).count());
        prev_u = u;
        u = fixed;
        for (i, &fi) in free.iter().enumerate() {
            if fi {
                u.values_mut()[i] = x.values()[i];
            }
        }
        last_sets = Some(sets);
    }
    if !report.converged {
        // Evaluate the final iterate produced by the last Newton step.
        let p = prob.dual_of(&u)?;
        state = SaddleState { u, p };
        let residual = kkt_residual(prob, &state)?;
        report.residual_history.push(residual);
        report.iterations = max_iter;
        report.converged = residual <= tol;
        if !report.converged {
            warn!("ssn: residual {residual:.3e} above tolerance after {max_iter} iterations");
        }
    }
    report.wall_time = start.elapsed();
    Ok((state, report))
}

/// `½‖S(u+f) − y_d‖² + ½α‖u‖² + θ(u)`, or `+∞` if `u` violates the bounds.
pub fn objective(prob: &ProblemInstance, u: &GridField) -> Result<f64> {
    let Some(theta) = prob.reg.value(u) else {
        return Ok(f64::INFINITY);
    };
    let misfit = prob.dual_of(u)?;
    Ok(0.5 * inner_product(&misfit, &misfit)? + 0.5 * prob.alpha * inner_product(u, u)? + theta)
}

/// Smallest `δ` for which the trajectory is algorithm tracking: the largest
/// deviation of any `(u^{k+1}, p^{k+1})` from the exact step taken from `(u^k, p^k)`.
pub fn tracking_check(prob: &ProblemInstance, states: &[SaddleState], qs: Preconditioner, tau: f64) -> Result<f64> {
    let shifted = prob.shifted_target()?;
    let mut delta: f64 = 0.0;
    for pair in states.windows(2) {
        let s_adj_p = prob.op.apply_s_adjoint(&pair[0].p)?;
        let (exact, _) = uzawa_step(prob, &qs, tau, &pair[0], &s_adj_p, &shifted)?;
        delta = delta
            .max(norm_l2(&pair[1].u.sub(&exact.u)?))
            .max(norm_l2(&pair[1].p.sub(&exact.p)?));
    }
    Ok(delta)
}
