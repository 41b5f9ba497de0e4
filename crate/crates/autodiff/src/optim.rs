//! Named parameter storage, gradient buffers, AdamW and the step-decay
//! learning-rate schedule.

use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.first.push(Tensor::zeros(value.shape().to_vec()));
        self.second.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(Arc::new(value));
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Arc<Tensor> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// True if every value matches bitwise (moments are not compared).
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One gradient tensor per parameter of a store.
#[derive(Clone, Debug)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Self(store.values.iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Bias-corrected Adam moments with decoupled weight decay:
/// `p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, opt: &AdamW) {
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for i in 0..store.values.len() {
        let g = grads.0[i].data();
        let m = store.first[i].data_mut();
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = opt.beta1 * *mv + (1.0 - opt.beta1) * gv;
        }
        let v = store.second[i].data_mut();
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = opt.beta2 * *vv + (1.0 - opt.beta2) * gv * gv;
        }
        let p = Arc::make_mut(&mut store.values[i]).data_mut();
        let (m, v) = (store.first[i].data(), store.second[i].data());
        for ((pv, mv), vv) in p.iter_mut().zip(m).zip(v) {
            let update = (mv / c1) / ((vv / c2).sqrt() + opt.eps);
            *pv -= opt.lr * opt.weight_decay * *pv + opt.lr * update;
        }
    }
}

/// `base_lr · decay^⌊epoch/every⌋`.
pub fn lr_schedule(epoch: usize, base_lr: f64, decay: f64, every: usize) -> f64 {
    base_lr * decay.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v));
        (s, id)
    }

    fn grad(s: &ParamStore, id: ParamId, g: f64) -> Gradients {
        let mut gr = Gradients::zeros(s);
        gr.get_mut(id).data_mut()[0] = g;
        gr
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let (mut s, id) = one(0.7);
        let g = grad(&s, id, 0.0);
        adamw_step(&mut s, &g, &AdamW::new(0.1, 0.0));
        assert_eq!(s.get(id).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one(1.0);
        let g = grad(&s, id, 1.0);
        adamw_step(&mut s, &g, &AdamW::new(0.1, 0.0));
        // m̂ = v̂ = 1 after bias correction.
        assert!((s.get(id).item() - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert!((1.0 - s.get(id).item() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let (mut s, id) = one(2.0);
        let g = grad(&s, id, 0.0);
        let opt = AdamW::new(0.1, 0.5);
        for k in 1..=3 {
            adamw_step(&mut s, &g, &opt);
            assert!((s.get(id).item() - 2.0 * 0.95f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 0.001, 0.6, 30), 0.001);
        assert!((lr_schedule(29, 0.001, 0.6, 30) - 0.001).abs() < 1e-18);
        assert!((lr_schedule(30, 0.001, 0.6, 30) - 0.0006).abs() < 1e-15);
        assert!((lr_schedule(90, 0.001, 0.6, 30) - 0.000216).abs() < 1e-15);
    }
}
