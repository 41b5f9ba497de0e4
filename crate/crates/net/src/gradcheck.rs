//! Central finite-difference check of the training gradient.

use iuzawa_core::grf::DatasetRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::modules::Geometry;
use crate::params::NetParams;
use crate::train::{sample_gradient, LossKind, EPS_FLOOR};

/// Round-off floor of a central difference with step 1e-5 on an O(1) loss.
pub const FD_NOISE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub finite_difference: f64,
    pub backprop: f64,
}

impl Probe {
    /// Relative gap, with gaps below [`FD_NOISE`] mapped under `rtol`.
    pub fn error(&self, rtol: f64) -> f64 {
        let (fd, ad) = (self.finite_difference, self.backprop);
        (fd - ad).abs() / fd.abs().max(ad.abs()).max(FD_NOISE / rtol)
    }
}

/// Compares backpropagated and central-difference derivatives of the loss
/// on `rec` for `count` scalar parameters drawn with `seed`.
pub fn probe_gradient(
    net: &mut NetParams,
    rec: &DatasetRecord,
    loss: LossKind,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<Probe>> {
    let geo = Geometry::new(&net.config, rec.y_d.domain())?;
    let (_, grads) = sample_gradient(net, &geo, rec, loss, EPS_FLOOR)?;
    let ids: Vec<_> = net.store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = ids[rng.gen_range(0..ids.len())];
        let j = rng.gen_range(0..net.store.get(id).len());
        let x0 = net.store.get(id).data()[j];
        let mut eval = |x: f64| -> Result<f64> {
            net.store.get_mut(id).data_mut()[j] = x;
            Ok(sample_gradient(net, &geo, rec, loss, EPS_FLOOR)?.0)
        };
        let fd = (eval(x0 + step)? - eval(x0 - step)?) / (2.0 * step);
        net.store.get_mut(id).data_mut()[j] = x0;
        out.push(Probe {
            name: net.store.name(id).to_string(),
            index: j,
            finite_difference: fd,
            backprop: grads.get(id).data()[j],
        });
    }
    Ok(out)
}
