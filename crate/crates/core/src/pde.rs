//! Discrete solution operators `S` and `S*` for the three model PDEs.
//!
//! All solves are exact for the finite-difference systems: the elliptic
//! operators are diagonal in the sine (Dirichlet) or cosine (Neumann)
//! eigenbasis of the 5-point Laplacian, and the heat equation is an
//! implicit-Euler march that decouples per spatial sine mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{inner_product, norm_l2, Domain, GridField};
use crate::spectral::{cosine_along, embed_interior, interior, sine_along};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PdeKind {
    /// `−Δy = g` in Ω, `y = 0` on ∂Ω.
    EllipticDirichlet,
    /// `−∇·(diag(a1, a2)∇y) + c·y = g`, homogeneous Neumann data.
    EllipticAnisoNeumann { a1: f64, a2: f64, c: f64 },
    /// `∂y/∂t − Δy = g` on Ω×(0,1], `y = 0` on the lateral boundary, `y(0) = 0`.
    HeatDirichlet,
}

impl PdeKind {
    pub fn is_elliptic(&self) -> bool {
        !matches!(self, PdeKind::HeatDirichlet)
    }
}

/// 1-D eigenvalues `(4/h²) sin²(jπ/(2(m−1)))` of the second difference.
fn second_difference_eigs(m: usize, h: f64, range: std::ops::Range<usize>) -> Vec<f64> {
    let big = (m - 1) as f64;
    range
        .map(|j| {
            let s = (std::f64::consts::PI * j as f64 / (2.0 * big)).sin();
            4.0 / (h * h) * s * s
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PdeOperator {
    kind: PdeKind,
    domain: Domain,
    /// Spatial eigenvalues of the elliptic part, in transform order.
    eigs: Vec<f64>,
}

impl PdeOperator {
    pub fn new(kind: PdeKind, domain: &Domain) -> Result<Self> {
        let spatial = domain.spatial_shape();
        if spatial.len() != 2 {
            return Err(Error::InvalidDomain("expected two spatial axes".into()));
        }
        let (hx, hy) = {
            let off = usize::from(domain.has_time_axis());
            (domain.spacing(off), domain.spacing(off + 1))
        };
        let (mx, my) = (spatial[0], spatial[1]);
        let eigs = match kind {
            PdeKind::EllipticDirichlet | PdeKind::HeatDirichlet => {
                if matches!(kind, PdeKind::HeatDirichlet) != domain.has_time_axis() {
                    return Err(Error::InvalidDomain(format!(
                        "{kind:?} on a domain with time axis = {}",
                        domain.has_time_axis()
                    )));
                }
                let ex = second_difference_eigs(mx, hx, 1..mx - 1);
                let ey = second_difference_eigs(my, hy, 1..my - 1);
                ex.iter().flat_map(|a| ey.iter().map(move |b| a + b)).collect()
            }
            PdeKind::EllipticAnisoNeumann { a1, a2, c } => {
                if domain.has_time_axis() {
                    return Err(Error::InvalidDomain("elliptic operator on space-time domain".into()));
                }
                if !(a1 > 0.0 && a2 > 0.0 && c > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "anisotropic coefficients must be positive, got a=({a1},{a2}), c={c}"
                    )));
                }
                let ex = second_difference_eigs(mx, hx, 0..mx);
                let ey = second_difference_eigs(my, hy, 0..my);
                ex.iter()
                    .flat_map(|a| ey.iter().map(move |b| a1 * a + a2 * b + c))
                    .collect()
            }
        };
        Ok(Self {
            kind,
            domain: domain.clone(),
            eigs,
        })
    }

    pub fn kind(&self) -> PdeKind {
        self.kind
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Spatial eigenvalues in transform order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    fn time_step(&self) -> f64 {
        self.domain.spacing(0)
    }

    /// Multiplies the spatial spectrum of `g` by `mult(λ)`. Elliptic only.
    /// With `keep_rim`, Dirichlet boundary values pass through unchanged;
    /// otherwise they are zeroed.
    fn elliptic_multiplier(&self, g: &GridField, mult: impl Fn(f64) -> f64, keep_rim: bool) -> GridField {
        let shape = self.domain.shape();
        let values = match self.kind {
            PdeKind::EllipticDirichlet => {
                let axes = [0, 1];
                let (block, inner) = interior(g.values(), shape, &axes);
                let mut c = sine_along(&block, &inner, &axes, false);
                for (ci, &l) in c.iter_mut().zip(&self.eigs) {
                    *ci *= mult(l);
                }
                let y = sine_along(&c, &inner, &axes, true);
                let mut out = embed_interior(&y, shape, &axes);
                if keep_rim {
                    for (i, v) in out.iter_mut().enumerate() {
                        if self.domain.on_spatial_boundary(i) {
                            *v = g.values()[i];
                        }
                    }
                }
                out
            }
            PdeKind::EllipticAnisoNeumann { .. } => {
                let axes = [0, 1];
                let mut c = cosine_along(g.values(), shape, &axes, false);
                for (ci, &l) in c.iter_mut().zip(&self.eigs) {
                    *ci *= mult(l);
                }
                cosine_along(&c, shape, &axes, true)
            }
            PdeKind::HeatDirichlet => unreachable!("heat operator is not a spatial multiplier"),
        };
        GridField::from_raw(self.domain.clone(), values)
    }

    fn heat_march(&self, g: &GridField, adjoint: bool) -> GridField {
        let shape = self.domain.shape();
        let axes = [1, 2];
        let (block, inner) = interior(g.values(), shape, &axes);
        let mut c = sine_along(&block, &inner, &axes, false);
        let mt = shape[0];
        let modes = self.eigs.len();
        let dt = self.time_step();
        // Trapezoid weights in time (the common Δt cancels in W⁻¹SᵀW).
        let tw = |n: usize| if n == 0 || n == mt - 1 { 0.5 } else { 1.0 };
        for (k, &lam) in self.eigs.iter().enumerate() {
            let a = 1.0 / (1.0 + dt * lam);
            if !adjoint {
                let mut y = 0.0;
                c[k] = 0.0;
                for n in 1..mt {
                    y = a * (y + dt * c[n * modes + k]);
                    c[n * modes + k] = y;
                }
            } else {
                let mut q = 0.0;
                for n in (1..mt).rev() {
                    q = a * (tw(n) * c[n * modes + k] + q);
                    c[n * modes + k] = dt * q / tw(n);
                }
                c[k] = 0.0;
            }
        }
        let y = sine_along(&c, &inner, &axes, true);
        GridField::from_raw(self.domain.clone(), embed_interior(&y, shape, &axes))
    }

    fn check(&self, g: &GridField) -> Result<()> {
        self.domain.check_same(g.domain())
    }

    /// `y = S g`.
    pub fn apply_s(&self, g: &GridField) -> Result<GridField> {
        self.check(g)?;
        Ok(match self.kind {
            PdeKind::HeatDirichlet => self.heat_march(g, false),
            _ => self.elliptic_multiplier(g, |l| 1.0 / l, false),
        })
    }

    /// `S* w` for the trapezoid inner product.
    pub fn apply_s_adjoint(&self, w: &GridField) -> Result<GridField> {
        self.check(w)?;
        Ok(match self.kind {
            PdeKind::HeatDirichlet => self.heat_march(w, true),
            _ => self.elliptic_multiplier(w, |l| 1.0 / l, false),
        })
    }

    /// `(I + S S*/α)⁻¹ w`, the exact Schur-complement preconditioner.
    pub fn apply_schur_inverse(&self, w: &GridField, alpha: f64) -> Result<GridField> {
        self.check(w)?;
        if !self.kind.is_elliptic() {
            return Err(Error::InvalidArgument(
                "exact Schur preconditioner is only available for elliptic operators".into(),
            ));
        }
        Ok(self.elliptic_multiplier(w, |l| 1.0 / (1.0 + 1.0 / (alpha * l * l)), true))
    }

    /// Power-iteration estimate of `‖S‖`, nondecreasing in `iters`.
    pub fn operator_norm_estimate(&self, iters: usize) -> Result<f64> {
        if iters < 10 {
            return Err(Error::InvalidArgument(format!("need at least 10 iterations, got {iters}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x = GridField::from_fn(&self.domain, |_| rng.gen_range(-1.0..1.0));
        let mut best: f64 = 0.0;
        for _ in 0..iters {
            let nx = norm_l2(&x);
            x = x.scale(1.0 / nx);
            let sx = self.apply_s(&x)?;
            let ax = self.apply_s_adjoint(&sx)?;
            // ‖S x‖² = ⟨S*S x, x⟩ for unit x.
            best = best.max(inner_product(&ax, &x)?.max(0.0).sqrt());
            x = ax;
        }
        Ok(best)
    }
}
