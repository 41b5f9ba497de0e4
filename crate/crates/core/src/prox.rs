//! Pointwise resolvents `(N + τI + ∂θ)⁻¹` for multiplication operators `N`
//! and the regularizers used in the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{inner_product, norm_l2, Domain, GridField};

/// Nonsmooth part `θ` of the objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    /// `θ = 0`.
    None,
    /// Indicator of `{u_a ≤ u ≤ u_b}`.
    Box { lower: GridField, upper: GridField },
    /// `β‖u‖_{L¹}` plus the box indicator.
    L1Box {
        beta: f64,
        lower: GridField,
        upper: GridField,
    },
}

impl Regularizer {
    pub fn bounds(&self) -> Option<(&GridField, &GridField)> {
        match self {
            Regularizer::None => None,
            Regularizer::Box { lower, upper } | Regularizer::L1Box { lower, upper, .. } => Some((lower, upper)),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Regularizer::L1Box { beta, .. } => *beta,
            _ => 0.0,
        }
    }

    /// Checks `u_a ≤ u_b`, `β ≥ 0` and that the bounds live on `domain`.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if let Some((lo, hi)) = self.bounds() {
            domain.check_same(lo.domain())?;
            domain.check_same(hi.domain())?;
            if let Some(i) = lo.values().iter().zip(hi.values()).position(|(a, b)| a > b) {
                return Err(Error::InvalidArgument(format!(
                    "lower bound exceeds upper bound at point {i}"
                )));
            }
        }
        if !(self.beta() >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative sparsity weight {}", self.beta())));
        }
        Ok(())
    }

    /// Pointwise `θ` density integrated with the trapezoid weights; `None`
    /// when `u` violates the bounds.
    pub fn value(&self, u: &GridField) -> Option<f64> {
        if let Some((lo, hi)) = self.bounds() {
            let feasible = u
                .values()
                .iter()
                .zip(lo.values().iter().zip(hi.values()))
                .all(|(v, (a, b))| a <= v && v <= b);
            if !feasible {
                return None;
            }
        }
        Some(self.beta() * crate::field::norm_l1(u))
    }
}

/// The multiplier `λ(x)` of `N` and the shift `τ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Lambda {
    Scalar(f64),
    Field(GridField),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multiplier {
    pub lambda: Lambda,
    pub tau: f64,
}

impl Multiplier {
    pub fn scalar(lambda: f64, tau: f64) -> Self {
        Self {
            lambda: Lambda::Scalar(lambda),
            tau,
        }
    }

    /// Essential infimum of `λ`.
    pub fn c0(&self) -> f64 {
        match &self.lambda {
            Lambda::Scalar(l) => *l,
            Lambda::Field(f) => f.values().iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn at(&self, i: usize) -> f64 {
        match &self.lambda {
            Lambda::Scalar(l) => *l,
            Lambda::Field(f) => f.values()[i],
        }
    }
}

/// Closed-form minimiser of `½·lt·r² − v·r + β|r| + I_[lo,hi](r)`.
#[inline]
pub fn resolve_point(v: f64, lt: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    let r = v.signum() * (v.abs() - beta).max(0.0) / lt;
    r.max(lo).min(hi)
}

/// `u = (N + τI + ∂θ)⁻¹ v`, evaluated pointwise.
pub fn resolvent(reg: &Regularizer, mult: &Multiplier, v: &GridField) -> Result<GridField> {
    let domain = v.domain();
    reg.validate(domain)?;
    if let Lambda::Field(l) = &mult.lambda {
        domain.check_same(l.domain())?;
    }
    if !(mult.c0() + mult.tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "λ + τ must be positive, got inf λ = {} and τ = {}",
            mult.c0(),
            mult.tau
        )));
    }
    let mut out = v.clone();
    let vals = out.values_mut();
    match reg {
        Regularizer::None => {
            for (i, x) in vals.iter_mut().enumerate() {
                *x /= mult.at(i) + mult.tau;
            }
        }
        Regularizer::Box { lower, upper } | Regularizer::L1Box { lower, upper, .. } => {
            let beta = reg.beta();
            for (i, x) in vals.iter_mut().enumerate() {
                *x = resolve_point(*x, mult.at(i) + mult.tau, beta, lower.values()[i], upper.values()[i]);
            }
        }
    }
    Ok(out)
}

/// Worst observed margins of the firm nonexpansiveness inequalities
/// `⟨v₁−v₂, u₁−u₂⟩ ≥ (c₀+τ)‖u₁−u₂‖²` and `‖u₁−u₂‖ ≤ ‖v₁−v₂‖/(c₀+τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirmReport {
    pub trials: usize,
    pub violations: usize,
    /// `min (⟨Δv, Δu⟩ − (c₀+τ)‖Δu‖²)`; negative beyond tolerance is a violation.
    pub worst_monotonicity_margin: f64,
    /// `min (‖Δv‖/(c₀+τ) − ‖Δu‖)`.
    pub worst_lipschitz_margin: f64,
}

pub const FIRM_TOLERANCE: f64 = 1e-10;

pub fn firm_nonexpansiveness_check(
    reg: &Regularizer,
    mult: &Multiplier,
    domain: &Domain,
    trials: usize,
    seed: u64,
) -> Result<FirmReport> {
    let trials = trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = mult.c0() + mult.tau;
    let mut report = FirmReport {
        trials,
        violations: 0,
        worst_monotonicity_margin: f64::INFINITY,
        worst_lipschitz_margin: f64::INFINITY,
    };
    for _ in 0..trials {
        let scale = 10f64.powf(rng.gen_range(-1.0..2.0));
        let v1 = GridField::from_fn(domain, |_| scale * rng.gen_range(-1.0..1.0));
        let v2 = GridField::from_fn(domain, |_| scale * rng.gen_range(-1.0..1.0));
        let du = resolvent(reg, mult, &v1)?.sub(&resolvent(reg, mult, &v2)?)?;
        let dv = v1.sub(&v2)?;
        let nu = norm_l2(&du);
        let mono = inner_product(&dv, &du)? - c * nu * nu;
        let lip = norm_l2(&dv) / c - nu;
        if mono < -FIRM_TOLERANCE || lip < -FIRM_TOLERANCE {
            report.violations += 1;
        }
        report.worst_monotonicity_margin = report.worst_monotonicity_margin.min(mono);
        report.worst_lipschitz_margin = report.worst_lipschitz_margin.min(lip);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force minimiser over a uniform grid of candidate values.
    fn grid_argmin(v: f64, lt: f64, beta: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .map(|r| (r, 0.5 * lt * r * r - v * r + beta * r.abs()))
            .fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
            .0
    }

    fn point_domain() -> Domain {
        Domain::square(4).unwrap()
    }

    fn box_reg(d: &Domain, lo: f64, hi: f64) -> Regularizer {
        Regularizer::Box {
            lower: GridField::constant(d, lo),
            upper: GridField::constant(d, hi),
        }
    }

    #[test]
    fn clipping_example() {
        let d = point_domain();
        let u = resolvent(&box_reg(&d, -1.0, 2.0), &Multiplier::scalar(1.0, 0.0), &GridField::constant(&d, 5.0)).unwrap();
        assert!(u.values().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn dead_zone_example() {
        let d = point_domain();
        let reg = Regularizer::L1Box {
            beta: 0.5,
            lower: GridField::constant(&d, -1.0),
            upper: GridField::constant(&d, 1.0),
        };
        let u = resolvent(&reg, &Multiplier::scalar(1.0, 0.0), &GridField::constant(&d, 0.3)).unwrap();
        assert!(u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn soft_threshold_then_clip_matches_grid_search() {
        // ½·2r² − 3.5r + 0.5|r| over [−1, 1] with step 1e−3.
        let oracle = grid_argmin(3.5, 2.0, 0.5, -1.0, 1.0, 1e-3);
        assert!((oracle - 1.0).abs() < 1e-12);
        assert_eq!(resolve_point(3.5, 2.0, 0.5, -1.0, 1.0), oracle);
    }

    #[test]
    fn matches_brute_force_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let lo = rng.gen_range(-3.0..0.5);
            let hi = lo + rng.gen_range(0.0..3.0);
            let lt = rng.gen_range(0.2..3.0);
            let beta = if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { 0.0 };
            let v = rng.gen_range(-6.0..6.0);
            let oracle = grid_argmin(v, lt, beta, lo - 1.0, hi + 1.0, 1e-3).max(lo).min(hi);
            let got = resolve_point(v, lt, beta, lo, hi);
            assert!((got - oracle).abs() <= 2e-3, "v={v} lt={lt} beta={beta} [{lo},{hi}]: {got} vs {oracle}");
        }
    }

    #[test]
    fn feasible_and_monotone() {
        let d = Domain::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lower = GridField::from_fn(&d, |_| rng.gen_range(-2.0..0.0));
        let upper = GridField::from_fn(&d, |_| rng.gen_range(0.0..2.0));
        let reg = Regularizer::L1Box { beta: 0.3, lower: lower.clone(), upper: upper.clone() };
        let mult = Multiplier::scalar(0.5, 0.1);
        let v1 = GridField::from_fn(&d, |_| rng.gen_range(-5.0..5.0));
        let v2 = v1.map(|x| x + 0.7);
        let u1 = resolvent(&reg, &mult, &v1).unwrap();
        let u2 = resolvent(&reg, &mult, &v2).unwrap();
        for i in 0..d.len() {
            assert!(lower.values()[i] <= u1.values()[i] && u1.values()[i] <= upper.values()[i]);
            assert!(u1.values()[i] <= u2.values()[i]);
        }
    }

    #[test]
    fn zero_beta_is_bitwise_box() {
        let d = Domain::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lower = GridField::from_fn(&d, |_| rng.gen_range(-2.0..0.0));
        let upper = GridField::from_fn(&d, |_| rng.gen_range(0.0..2.0));
        let v = GridField::from_fn(&d, |_| rng.gen_range(-5.0..5.0));
        let mult = Multiplier::scalar(0.01, 1e-4);
        let a = resolvent(&Regularizer::Box { lower: lower.clone(), upper: upper.clone() }, &mult, &v).unwrap();
        let b = resolvent(&Regularizer::L1Box { beta: 0.0, lower, upper }, &mult, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs() {
        let d = point_domain();
        let v = GridField::zeros(&d);
        assert!(resolvent(&box_reg(&d, 1.0, 0.0), &Multiplier::scalar(1.0, 0.0), &v).is_err());
        assert!(resolvent(&Regularizer::None, &Multiplier::scalar(0.0, 0.0), &v).is_err());
        assert!(resolvent(&Regularizer::None, &Multiplier::scalar(-1.0, 0.5), &v).is_err());
    }

    #[test]
    fn firm_check_linear_case_is_tight() {
        let d = Domain::square(16).unwrap();
        let mult = Multiplier::scalar(0.7, 0.3);
        let r = firm_nonexpansiveness_check(&Regularizer::None, &mult, &d, 20, 5).unwrap();
        assert_eq!(r.violations, 0);
        // Equality: the margin is rounding noise relative to ‖Δv‖².
        assert!(r.worst_monotonicity_margin.abs() < 1e-9);
    }

    #[test]
    fn firm_check_box_has_no_violations() {
        let d = Domain::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lower = GridField::from_fn(&d, |_| rng.gen_range(-3.0..0.0));
        let upper = GridField::from_fn(&d, |_| rng.gen_range(0.0..3.0));
        let reg = Regularizer::Box { lower, upper };
        let r = firm_nonexpansiveness_check(&reg, &Multiplier::scalar(0.01, 1e-4), &d, 100, 7).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.worst_monotonicity_margin >= -FIRM_TOLERANCE);
    }

    #[test]
    fn identical_inputs_give_zero_margins() {
        let d = point_domain();
        let v = GridField::constant(&d, 1.5);
        let reg = box_reg(&d, -1.0, 1.0);
        let mult = Multiplier::scalar(1.0, 0.0);
        let du = resolvent(&reg, &mult, &v).unwrap().sub(&resolvent(&reg, &mult, &v).unwrap()).unwrap();
        assert_eq!(norm_l2(&du), 0.0);
    }
}
