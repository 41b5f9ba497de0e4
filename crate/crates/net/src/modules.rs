//! The learned operator modules, recorded on a [`Tape`]. Fields travel as
//! `[channels × points]` tensors in the domain's row-major order.

use std::sync::Arc;

use iuzawa_autodiff::{Tape, Tensor, Var};
use iuzawa_core::spectral::HalfDft;
use iuzawa_core::{Domain, GridField};

use crate::config::NetConfig;
use crate::error::{Error, Result};
use crate::params::{FnoParams, NetParams, QaParams, QsParams};

/// Grid data shared by every module evaluated on one domain.
#[derive(Clone)]
pub struct Geometry {
    pub domain: Domain,
    pub padded: Vec<usize>,
    pub dft: Arc<HalfDft>,
    /// Square roots of the quadrature weights relative to the cell volume, and their inverses.
    sqrt_w: Tensor,
    inv_sqrt_w: Tensor,
}

impl Geometry {
    pub fn new(config: &NetConfig, domain: &Domain) -> Result<Self> {
        if domain.ndims() != config.kind.domain(config.train_m)?.ndims() {
            return Err(Error::Config(format!(
                "{}-dimensional domain for a {} network",
                domain.ndims(),
                config.kind.name()
            )));
        }
        let padded = domain
            .shape()
            .iter()
            .map(|&m| config.padded_len(m))
            .collect::<Result<Vec<_>>>()?;
        let dft = HalfDft::new(&padded, config.k_max)?;
        let cell = domain.cell_volume();
        let sw: Vec<f64> = domain.weights().iter().map(|w| (w / cell).sqrt()).collect();
        let n = sw.len();
        Ok(Self {
            domain: domain.clone(),
            padded,
            dft,
            inv_sqrt_w: Tensor::new(vec![1, n], sw.iter().map(|s| 1.0 / s).collect()),
            sqrt_w: Tensor::new(vec![1, n], sw),
        })
    }

    pub fn field(&self, tape: &mut Tape, f: &GridField) -> Result<Var> {
        self.domain.check_same(f.domain())?;
        Ok(tape.input(Tensor::new(vec![1, f.domain().len()], f.values().to_vec())))
    }

    pub fn to_field(&self, tape: &Tape, v: Var) -> Result<GridField> {
        Ok(GridField::new(self.domain.clone(), tape.value(v).data().to_vec())?)
    }

    fn pad(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(tape.pad(x, self.domain.shape(), &self.padded)?)
    }

    fn crop(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(tape.crop(x, &self.padded, self.domain.shape())?)
    }
}

fn affine(tape: &mut Tape, net: &NetParams, w: iuzawa_autodiff::ParamId, b: iuzawa_autodiff::ParamId, x: Var) -> Result<Var> {
    let (w, b) = (tape.param(&net.store, w), tape.param(&net.store, b));
    let y = tape.channel_matmul(w, x)?;
    Ok(tape.bias_broadcast(y, b)?)
}

/// `Q ∘ K_FNO ∘ P` applied to the zero-extended field, restricted back to the domain.
pub fn fno_forward(net: &NetParams, p: &FnoParams, geo: &Geometry, tape: &mut Tape, x: Var) -> Result<Var> {
    let x = geo.pad(tape, x)?;
    let mut v = affine(tape, net, p.lift_w, p.lift_b, x)?;
    for layer in &p.layers {
        let (re, im) = (tape.param(&net.store, layer.r_re), tape.param(&net.store, layer.r_im));
        let k = tape.spectral_linear(v, re, im, &geo.dft)?;
        let w = affine(tape, net, layer.w, layer.b, v)?;
        let sum = tape.add(k, w)?;
        v = tape.gelu(sum);
    }
    let y = affine(tape, net, p.proj_w, p.proj_b, v)?;
    geo.crop(tape, y)
}

/// `γx + (VP)ᵀ(VP)x + D^{-1/2} E*(Pᵀ Φ*Φ P)E D^{1/2} x` with `E` the zero
/// extension and `D` the quadrature weights, so the operator is self-adjoint
/// and `γ`-coercive in the discrete `L²` inner product for any weights.
pub fn qs_forward(net: &NetParams, q: &QsParams, geo: &Geometry, tape: &mut Tape, x: Var) -> Result<Var> {
    let p = tape.param(&net.store, q.p);
    let v = tape.param(&net.store, q.v);
    let pt = tape.transpose(p)?;
    let vp = tape.channel_matmul(v, p)?;
    let vpt = tape.transpose(vp)?;
    let c = tape.channel_matmul(vpt, vp)?;
    let local = tape.channel_matmul(c, x)?;

    let sw = tape.input(geo.sqrt_w.clone());
    let xs = tape.hadamard(x, sw)?;
    let xs = geo.pad(tape, xs)?;
    let lifted = tape.channel_matmul(p, xs)?;
    let (re, im) = (tape.param(&net.store, q.phi_re), tape.param(&net.store, q.phi_im));
    let g = tape.spectral_gram(lifted, re, im, &geo.dft)?;
    let back = tape.channel_matmul(pt, g)?;
    let back = geo.crop(tape, back)?;
    let isw = tape.input(geo.inv_sqrt_w.clone());
    let spectral = tape.hadamard(back, isw)?;

    let gx = tape.scale(x, net.config.gamma);
    let sum = tape.add(gx, local)?;
    Ok(tape.add(sum, spectral)?)
}

/// The skip-connected ReLU network applied at every node to `(r, ξ)`, with
/// `xi` the stacked problem-data channels.
pub fn qa_forward(net: &NetParams, q: &QaParams, tape: &mut Tape, r: Var, xi: Var) -> Result<Var> {
    let want = net.config.bound_channels();
    if tape.value(xi).rows() != want || q.w.len() != q.b.len() + 1 {
        return Err(Error::Config(format!(
            "Q_A expects {want} data channels, got {}",
            tape.value(xi).rows()
        )));
    }
    let skip = tape.concat_channels(&[r, xi])?;
    let w0 = tape.param(&net.store, q.w[0]);
    let mut v = tape.channel_matmul(w0, skip)?;
    let depth = q.b.len();
    for l in 1..=depth {
        let input = tape.concat_channels(&[v, skip])?;
        let y = affine(tape, net, q.w[l], q.b[l - 1], input)?;
        v = if l == depth { y } else { tape.relu(y) };
    }
    Ok(v)
}

/// Stacks the problem-data channels `ξ` seen by `Q_A`: the bounds, plus a
/// constant `β` channel for the L¹ experiment.
pub fn data_channels(net: &NetParams, tape: &mut Tape, u_a: &GridField, u_b: &GridField) -> Result<Var> {
    let n = u_a.domain().len();
    let mut data = Vec::with_capacity(3 * n);
    data.extend_from_slice(u_a.values());
    data.extend_from_slice(u_b.values());
    if net.config.bound_channels() == 3 {
        data.extend(std::iter::repeat(iuzawa_core::grf::PARABOLIC_BETA).take(n));
    }
    Ok(tape.input(Tensor::new(vec![data.len() / n, n], data)))
}
