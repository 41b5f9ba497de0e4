//! The layer recursion
//! `u^{k+1} = Q_A^k(τu^k − A^k p^k)`,
//! `p^{k+1} = p^k + Q_S^k(S^k(u^{k+1} + f) − p^k − y_d)` from `(0, 0)`,
//! written once over a [`LayerOps`] backend so the learned network and its
//! exact-operator counterpart share the wiring.

use iuzawa_autodiff::{Tape, Var};
use iuzawa_core::classic::{ProblemInstance, SaddleState};
use iuzawa_core::prox::{resolvent, Multiplier};
use iuzawa_core::GridField;

use crate::error::Result;
use crate::modules::{data_channels, fno_forward, qa_forward, qs_forward, Geometry};
use crate::params::NetParams;

pub trait LayerOps {
    type Field: Clone;
    fn zeros(&mut self) -> Self::Field;
    fn s(&mut self, k: usize, x: &Self::Field) -> Result<Self::Field>;
    fn a(&mut self, k: usize, x: &Self::Field) -> Result<Self::Field>;
    fn qa(&mut self, k: usize, x: &Self::Field) -> Result<Self::Field>;
    fn qs(&mut self, k: usize, x: &Self::Field) -> Result<Self::Field>;
    /// `a·x + b·y`.
    fn combine(&mut self, a: f64, x: &Self::Field, b: f64, y: &Self::Field) -> Result<Self::Field>;
}

pub type Trajectory<F> = Vec<(F, F)>;

/// Runs `layers` layers; the trajectory, when captured, starts with `(0, 0)`.
pub fn unroll<O: LayerOps>(
    ops: &mut O,
    layers: usize,
    tau: f64,
    y_d: &O::Field,
    f: &O::Field,
    capture: bool,
) -> Result<(O::Field, Option<Trajectory<O::Field>>)> {
    let mut u = ops.zeros();
    let mut p = ops.zeros();
    let mut states = capture.then(|| vec![(u.clone(), p.clone())]);
    for k in 0..layers {
        let ap = ops.a(k, &p)?;
        let arg = ops.combine(tau, &u, -1.0, &ap)?;
        u = ops.qa(k, &arg)?;
        let uf = ops.combine(1.0, &u, 1.0, f)?;
        let s = ops.s(k, &uf)?;
        let r = ops.combine(1.0, &s, -1.0, &p)?;
        let r = ops.combine(1.0, &r, -1.0, y_d)?;
        let q = ops.qs(k, &r)?;
        p = ops.combine(1.0, &p, 1.0, &q)?;
        if let Some(st) = &mut states {
            st.push((u.clone(), p.clone()));
        }
    }
    Ok((u, states))
}

/// Learned modules recorded on a tape.
pub struct TapeOps<'a> {
    pub net: &'a NetParams,
    pub geo: &'a Geometry,
    pub tape: &'a mut Tape,
    pub xi: Var,
}

impl LayerOps for TapeOps<'_> {
    type Field = Var;

    fn zeros(&mut self) -> Var {
        self.tape.input(iuzawa_autodiff::Tensor::zeros(vec![1, self.geo.domain.len()]))
    }

    fn s(&mut self, k: usize, x: &Var) -> Result<Var> {
        fno_forward(self.net, &self.net.layers[k].s, self.geo, self.tape, *x)
    }

    fn a(&mut self, k: usize, x: &Var) -> Result<Var> {
        fno_forward(self.net, &self.net.layers[k].a, self.geo, self.tape, *x)
    }

    fn qa(&mut self, k: usize, x: &Var) -> Result<Var> {
        qa_forward(self.net, &self.net.layers[k].qa, self.tape, *x, self.xi)
    }

    fn qs(&mut self, k: usize, x: &Var) -> Result<Var> {
        qs_forward(self.net, &self.net.layers[k].qs, self.geo, self.tape, *x)
    }

    fn combine(&mut self, a: f64, x: &Var, b: f64, y: &Var) -> Result<Var> {
        let x = if a == 1.0 { *x } else { self.tape.scale(*x, a) };
        Ok(if b == 1.0 {
            self.tape.add(x, *y)?
        } else if b == -1.0 {
            self.tape.sub(x, *y)?
        } else {
            let y = self.tape.scale(*y, b);
            self.tape.add(x, y)?
        })
    }
}

/// The exact operators: `A = S*`, `S`, `Q_A = (αI + τI + ∂θ)⁻¹` and `Q_S = σ⁻¹I`.
pub struct ExactOps<'a> {
    pub prob: &'a ProblemInstance,
    pub tau: f64,
    pub sigma: f64,
}

impl LayerOps for ExactOps<'_> {
    type Field = GridField;

    fn zeros(&mut self) -> GridField {
        GridField::zeros(self.prob.domain())
    }

    fn s(&mut self, _: usize, x: &GridField) -> Result<GridField> {
        Ok(self.prob.op.apply_s(x)?)
    }

    fn a(&mut self, _: usize, x: &GridField) -> Result<GridField> {
        Ok(self.prob.op.apply_s_adjoint(x)?)
    }

    fn qa(&mut self, _: usize, x: &GridField) -> Result<GridField> {
        Ok(resolvent(&self.prob.reg, &Multiplier::scalar(self.prob.alpha, self.tau), x)?)
    }

    fn qs(&mut self, _: usize, x: &GridField) -> Result<GridField> {
        Ok(x.scale(1.0 / self.sigma))
    }

    fn combine(&mut self, a: f64, x: &GridField, b: f64, y: &GridField) -> Result<GridField> {
        let mut out = x.scale(a);
        out.axpy(b, y)?;
        Ok(out)
    }
}

/// Problem data fed to the network.
#[derive(Clone, Copy)]
pub struct NetInputs<'a> {
    pub y_d: &'a GridField,
    pub f: &'a GridField,
    pub u_a: &'a GridField,
    pub u_b: &'a GridField,
}

pub struct Forward {
    pub u: Var,
    pub states: Option<Trajectory<Var>>,
}

/// Records the full network on `tape`.
pub fn iuzawa_forward(net: &NetParams, geo: &Geometry, tape: &mut Tape, inputs: NetInputs, capture_states: bool) -> Result<Forward> {
    let y_d = geo.field(tape, inputs.y_d)?;
    let f = geo.field(tape, inputs.f)?;
    geo.domain.check_same(inputs.u_a.domain())?;
    geo.domain.check_same(inputs.u_b.domain())?;
    let xi = data_channels(net, tape, inputs.u_a, inputs.u_b)?;
    let mut ops = TapeOps { net, geo, tape, xi };
    let (u, states) = unroll(&mut ops, net.config.layers, net.config.tau, &y_d, &f, capture_states)?;
    Ok(Forward { u, states })
}

/// Network prediction of the optimal control, without keeping the tape.
pub fn predict(net: &NetParams, inputs: NetInputs) -> Result<GridField> {
    let geo = Geometry::new(&net.config, inputs.y_d.domain())?;
    let mut tape = Tape::new();
    let out = iuzawa_forward(net, &geo, &mut tape, inputs, false)?;
    geo.to_field(&tape, out.u)
}

/// Trajectory of the exact-operator network, as saddle states for tracking checks.
pub fn exact_trajectory(prob: &ProblemInstance, layers: usize, tau: f64, sigma: f64) -> Result<Vec<SaddleState>> {
    let mut ops = ExactOps { prob, tau, sigma };
    let (_, states) = unroll(&mut ops, layers, tau, &prob.y_d, &prob.f, true)?;
    Ok(states
        .unwrap_or_default()
        .into_iter()
        .map(|(u, p)| SaddleState { u, p })
        .collect())
}
