//! Define-by-run tape. Every operation appends a node holding its value
//! and what its adjoint rule needs; [`Tape::backward`] walks the nodes in
//! reverse once.

use std::collections::HashMap;
use std::sync::Arc;

use iuzawa_core::spectral::{crop_values, pad_values, HalfDft};
use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::optim::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    ChannelMatmul { w: Var, x: Var },
    BiasBroadcast { x: Var, b: Var },
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    MaxScalar(Var, f64),
    Spectral {
        x: Var,
        wre: Var,
        wim: Var,
        dft: Arc<HalfDft>,
        xhat: Vec<Complex64>,
    },
    SpectralGram {
        x: Var,
        pre: Var,
        pim: Var,
        dft: Arc<HalfDft>,
        xhat: Vec<Complex64>,
        zhat: Vec<Complex64>,
    },
    Pad { x: Var, from: Vec<usize>, to: Vec<usize> },
    Crop { x: Var, from: Vec<usize>, to: Vec<usize> },
    Concat(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Divide(Var, Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// `C = op(A)·op(B)` for row-major matrices, `op` optionally transposing.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides above address them in bounds.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0, c.as_mut_ptr(), n as isize, 1);
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn transposed(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

fn complex_weights(re: &Tensor, im: &Tensor) -> Vec<Complex64> {
    re.data().iter().zip(im.data()).map(|(&a, &b)| Complex64::new(a, b)).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(t),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        Ok(self.push(t, node, &[a, b]))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect());
        self.push(t, node, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn max_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v.max(c), Op::MaxScalar(x, c))
    }

    /// `W [out × in] · x [in × n]`.
    pub fn channel_matmul(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape().len() != 2 || tw.shape()[1] != tx.rows() {
            return Err(shape_err("channel_matmul", format!("{:?} · {:?}", tw.shape(), tx.shape())));
        }
        let (o, i, n) = (tw.rows(), tw.shape()[1], tx.cols());
        let mut out = vec![0.0; o * n];
        gemm(o, i, n, tw.data(), false, tx.data(), false, &mut out);
        let t = Tensor::new(vec![o, n], out);
        Ok(self.push(t, Op::ChannelMatmul { w, x }, &[w, x]))
    }

    /// `x [c × n] + b [c]` broadcast over points.
    pub fn bias_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.len() != tx.rows() {
            return Err(shape_err("bias_broadcast", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for (c, row) in data.chunks_mut(n).enumerate() {
            let bc = tb.data()[c];
            row.iter_mut().for_each(|v| *v += bc);
        }
        let t = Tensor::new(tx.shape().to_vec(), data);
        Ok(self.push(t, Op::BiasBroadcast { x, b }, &[x, b]))
    }

    /// Per-mode complex channel mixing in the truncated Fourier domain:
    /// `y_o = synth(Σ_i R_{oi}(k) · forward(x_i)(k))`, with `R` stored as
    /// real and imaginary tensors of shape `[modes, out, in]`.
    pub fn spectral_linear(&mut self, x: Var, wre: Var, wim: Var, dft: &Arc<HalfDft>) -> Result<Var> {
        let (tx, tre, tim) = (self.value(x), self.value(wre), self.value(wim));
        let modes = dft.num_modes();
        let cin = tx.rows();
        if tx.cols() != dft.grid_len() || tre.shape() != tim.shape() || tre.shape().len() != 3 || tre.shape()[0] != modes || tre.shape()[2] != cin {
            return Err(shape_err(
                "spectral_linear",
                format!("x {:?}, weights {:?}/{:?}, {modes} modes on {:?}", tx.shape(), tre.shape(), tim.shape(), dft.grid_shape()),
            ));
        }
        let cout = tre.shape()[1];
        let w = complex_weights(tre, tim);
        let xhat: Vec<Complex64> = dft.forward_batch(tx.data(), tx.rows());
        let mut yhat = vec![Complex64::default(); cout * modes];
        for k in 0..modes {
            for o in 0..cout {
                let wk = &w[(k * cout + o) * cin..(k * cout + o + 1) * cin];
                let mut acc = Complex64::default();
                for (i, &wv) in wk.iter().enumerate() {
                    acc += wv * xhat[i * modes + k];
                }
                yhat[o * modes + k] = acc;
            }
        }
        let data: Vec<f64> = dft.synth_batch(&yhat, cout);
        let t = Tensor::new(vec![cout, dft.grid_len()], data);
        let dft = dft.clone();
        Ok(self.push(t, Op::Spectral { x, wre, wim, dft, xhat }, &[x, wre, wim]))
    }

    /// `y = synth(Φ(k)ᴴ Φ(k) · forward(x)(k))` with `Φ` of shape `[modes, c, c]`.
    pub fn spectral_gram(&mut self, x: Var, pre: Var, pim: Var, dft: &Arc<HalfDft>) -> Result<Var> {
        let (tx, tre, tim) = (self.value(x), self.value(pre), self.value(pim));
        let modes = dft.num_modes();
        let c = tx.rows();
        if tx.cols() != dft.grid_len() || tre.shape() != [modes, c, c] || tim.shape() != tre.shape() {
            return Err(shape_err(
                "spectral_gram",
                format!("x {:?}, Φ {:?}/{:?}, {modes} modes", tx.shape(), tre.shape(), tim.shape()),
            ));
        }
        let phi = complex_weights(tre, tim);
        let xhat: Vec<Complex64> = dft.forward_batch(tx.data(), tx.rows());
        let mut zhat = vec![Complex64::default(); c * modes];
        let mut yhat = vec![Complex64::default(); c * modes];
        for k in 0..modes {
            let p = &phi[k * c * c..(k + 1) * c * c];
            for a in 0..c {
                let mut acc = Complex64::default();
                for b in 0..c {
                    acc += p[a * c + b] * xhat[b * modes + k];
                }
                zhat[a * modes + k] = acc;
            }
            for b in 0..c {
                let mut acc = Complex64::default();
                for a in 0..c {
                    acc += p[a * c + b].conj() * zhat[a * modes + k];
                }
                yhat[b * modes + k] = acc;
            }
        }
        let data: Vec<f64> = dft.synth_batch(&yhat, c);
        let t = Tensor::new(vec![c, dft.grid_len()], data);
        let dft = dft.clone();
        Ok(self.push(t, Op::SpectralGram { x, pre, pim, dft, xhat, zhat }, &[x, pre, pim]))
    }

    /// Zero-extends every channel from grid `from` to grid `to` (high side).
    pub fn pad(&mut self, x: Var, from: &[usize], to: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n: usize = from.iter().product();
        if tx.cols() != n || from.len() != to.len() || from.iter().zip(to).any(|(a, b)| a > b) {
            return Err(shape_err("pad", format!("{:?} from {from:?} to {to:?}", tx.shape())));
        }
        let data: Vec<f64> = tx.data().chunks(n).flat_map(|row| pad_values(row, from, to)).collect();
        let t = Tensor::new(vec![tx.rows(), to.iter().product()], data);
        Ok(self.push(t, Op::Pad { x, from: from.to_vec(), to: to.to_vec() }, &[x]))
    }

    /// Restricts every channel from grid `from` to its leading block `to`.
    pub fn crop(&mut self, x: Var, from: &[usize], to: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n: usize = from.iter().product();
        if tx.cols() != n || from.len() != to.len() || from.iter().zip(to).any(|(a, b)| a < b) {
            return Err(shape_err("crop", format!("{:?} from {from:?} to {to:?}", tx.shape())));
        }
        let data: Vec<f64> = tx.data().chunks(n).flat_map(|row| crop_values(row, from, to)).collect();
        let t = Tensor::new(vec![tx.rows(), to.iter().product()], data);
        Ok(self.push(t, Op::Crop { x, from: from.to_vec(), to: to.to_vec() }, &[x]))
    }

    /// Stacks channel blocks `[c_i × n]` into `[Σc_i × n]`.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let n = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let t = self.value(x);
            if t.cols() != n {
                return Err(shape_err("concat_channels", format!("{:?} with {n} points", t.shape())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows, n], data);
        Ok(self.push(t, Op::Concat(xs.to_vec()), xs))
    }

    /// Transpose of a matrix `[r × c]`.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(shape_err("transpose", format!("{:?}", t.shape())));
        }
        let out = transposed(t);
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Elementwise `a / b`; a one-element `b` is broadcast.
    pub fn divide(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<f64> = if tb.len() == 1 {
            let d = tb.data()[0];
            ta.data().iter().map(|x| x / d).collect()
        } else if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x / y).collect()
        } else {
            return Err(shape_err("divide", format!("{:?} / {:?}", ta.shape(), tb.shape())));
        };
        let t = Tensor::new(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::Divide(a, b), &[a, b]))
    }

    /// Reverse sweep from a scalar `loss`; parameters not reached get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0]));
        let mut out = Gradients::zeros(store);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let gd = g.data();
            let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data);
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.get_mut(*pid).add_assign(&g),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, like(*b, gd.iter().map(|v| -v).collect()));
                    send(*a, g);
                }
                Op::Scale(x, c) => send(*x, like(*x, gd.iter().map(|v| c * v).collect())),
                Op::Hadamard(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(*a, like(*a, gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect()));
                    send(*b, like(*b, gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect()));
                }
                Op::ChannelMatmul { w, x } => {
                    let (tw, tx) = (self.value(*w), self.value(*x));
                    let (o, i, n) = (tw.rows(), tw.shape()[1], tx.cols());
                    if self.nodes[w.0].needs_grad {
                        let mut gw = vec![0.0; o * i];
                        gemm(o, n, i, gd, false, tx.data(), true, &mut gw);
                        send(*w, like(*w, gw));
                    }
                    if self.nodes[x.0].needs_grad {
                        let mut gx = vec![0.0; i * n];
                        gemm(i, o, n, tw.data(), true, gd, false, &mut gx);
                        send(*x, like(*x, gx));
                    }
                }
                Op::BiasBroadcast { x, b } => {
                    let n = g.cols();
                    let gb: Vec<f64> = gd.chunks(n).map(|r| r.iter().sum()).collect();
                    send(*b, like(*b, gb));
                    send(*x, g);
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    send(*x, like(*x, gd.iter().zip(tx.data()).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect()));
                }
                Op::Gelu(x) => {
                    let tx = self.value(*x);
                    send(*x, like(*x, gd.iter().zip(tx.data()).map(|(g, &v)| g * gelu_grad(v)).collect()));
                }
                Op::Abs(x) => {
                    let tx = self.value(*x);
                    send(*x, like(*x, gd.iter().zip(tx.data()).map(|(g, &v)| g * sign0(v)).collect()));
                }
                Op::MaxScalar(x, c) => {
                    let tx = self.value(*x);
                    send(*x, like(*x, gd.iter().zip(tx.data()).map(|(g, &v)| if v > *c { *g } else { 0.0 }).collect()));
                }
                Op::Spectral { x, wre, wim, dft, xhat } => {
                    let (tre, tim) = (self.value(*wre), self.value(*wim));
                    let (modes, cout, cin) = (tre.shape()[0], tre.shape()[1], tre.shape()[2]);
                    let ghat: Vec<Complex64> = dft.synth_adjoint_batch(gd, gd.len() / dft.grid_len());
                    if self.nodes[wre.0].needs_grad || self.nodes[wim.0].needs_grad {
                        let mut gre = vec![0.0; modes * cout * cin];
                        let mut gim = vec![0.0; modes * cout * cin];
                        for k in 0..modes {
                            for o in 0..cout {
                                let go = ghat[o * modes + k];
                                for i in 0..cin {
                                    let z = go * xhat[i * modes + k].conj();
                                    let idx = (k * cout + o) * cin + i;
                                    gre[idx] = z.re;
                                    gim[idx] = z.im;
                                }
                            }
                        }
                        send(*wre, like(*wre, gre));
                        send(*wim, like(*wim, gim));
                    }
                    if self.nodes[x.0].needs_grad {
                        let w = complex_weights(tre, tim);
                        let mut gxhat = vec![Complex64::default(); cin * modes];
                        for k in 0..modes {
                            for o in 0..cout {
                                let go = ghat[o * modes + k];
                                let wk = &w[(k * cout + o) * cin..(k * cout + o + 1) * cin];
                                for (i, wv) in wk.iter().enumerate() {
                                    gxhat[i * modes + k] += wv.conj() * go;
                                }
                            }
                        }
                        let gx: Vec<f64> = dft.forward_adjoint_batch(&gxhat, cin);
                        send(*x, like(*x, gx));
                    }
                }
                Op::SpectralGram { x, pre, pim, dft, xhat, zhat } => {
                    let (tre, tim) = (self.value(*pre), self.value(*pim));
                    let (modes, c) = (tre.shape()[0], tre.shape()[1]);
                    let phi = complex_weights(tre, tim);
                    let ghat: Vec<Complex64> = dft.synth_adjoint_batch(gd, gd.len() / dft.grid_len());
                    let mut gre = vec![0.0; modes * c * c];
                    let mut gim = vec![0.0; modes * c * c];
                    let mut gxhat = vec![Complex64::default(); c * modes];
                    let mut t = vec![Complex64::default(); c];
                    for k in 0..modes {
                        let p = &phi[k * c * c..(k + 1) * c * c];
                        for a in 0..c {
                            t[a] = (0..c).map(|b| p[a * c + b] * ghat[b * modes + k]).sum();
                        }
                        for a in 0..c {
                            for b in 0..c {
                                let z = zhat[a * modes + k] * ghat[b * modes + k].conj() + t[a] * xhat[b * modes + k].conj();
                                gre[k * c * c + a * c + b] = z.re;
                                gim[k * c * c + a * c + b] = z.im;
                            }
                        }
                        for b in 0..c {
                            gxhat[b * modes + k] = (0..c).map(|a| p[a * c + b].conj() * t[a]).sum();
                        }
                    }
                    send(*pre, like(*pre, gre));
                    send(*pim, like(*pim, gim));
                    if self.nodes[x.0].needs_grad {
                        let gx: Vec<f64> = dft.forward_adjoint_batch(&gxhat, c);
                        send(*x, like(*x, gx));
                    }
                }
                Op::Pad { x, from, to } => {
                    let gx: Vec<f64> = gd.chunks(g.cols()).flat_map(|r| crop_values(r, to, from)).collect();
                    send(*x, like(*x, gx));
                }
                Op::Crop { x, from, to } => {
                    let gx: Vec<f64> = gd.chunks(g.cols()).flat_map(|r| pad_values(r, to, from)).collect();
                    send(*x, like(*x, gx));
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let len = self.value(x).len();
                        send(x, like(x, gd[offset..offset + len].to_vec()));
                        offset += len;
                    }
                }
                Op::Transpose(x) => send(*x, transposed(&g)),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    send(*x, like(*x, vec![gd[0]; n]));
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    send(*x, like(*x, vec![gd[0] / n as f64; n]));
                }
                Op::Divide(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if tb.len() == 1 {
                        let d = tb.data()[0];
                        let gb: f64 = gd.iter().zip(ta.data()).map(|(g, x)| -g * x / (d * d)).sum();
                        send(*b, like(*b, vec![gb]));
                        send(*a, like(*a, gd.iter().map(|g| g / d).collect()));
                    } else {
                        let gb = gd.iter().zip(ta.data()).zip(tb.data()).map(|((g, x), y)| -g * x / (y * y)).collect();
                        send(*b, like(*b, gb));
                        send(*a, like(*a, gd.iter().zip(tb.data()).map(|(g, y)| g / y).collect()));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Builds `Σ weight ⊙ f(params)` on a fresh tape.
    fn contract(store: &ParamStore, weight: &Tensor, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (Tape, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = store.ids().map(|id| tape.param(store, id)).collect();
        let y = f(&mut tape, &vars);
        let out = if tape.value(y).len() == 1 {
            y
        } else {
            let w = tape.input(weight.clone());
            let p = tape.hadamard(y, w).unwrap();
            tape.sum(p)
        };
        (tape, out)
    }

    /// Central differences over every parameter entry; returns ‖a − n‖/‖n‖.
    fn grad_check(shapes: &[Vec<usize>], out_shape: &[usize], seed: u64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, s) in shapes.iter().enumerate() {
            store.add(format!("p{i}"), rand_tensor(&mut rng, s));
        }
        let weight = rand_tensor(&mut rng, out_shape);
        let (tape, loss) = contract(&store, &weight, f);
        let grads = tape.backward(loss, &store).unwrap();
        let h = 1e-6;
        let (mut diff, mut norm) = (0.0, 0.0);
        for id in store.ids().collect::<Vec<_>>() {
            for j in 0..store.get(id).len() {
                let orig = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = orig + h;
                let (t, l) = contract(&store, &weight, f);
                let up = t.value(l).item();
                store.get_mut(id).data_mut()[j] = orig - h;
                let (t, l) = contract(&store, &weight, f);
                let down = t.value(l).item();
                store.get_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).data()[j];
                diff += (numeric - analytic).powi(2);
                norm += numeric.powi(2);
            }
        }
        (diff / norm).sqrt()
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn elementwise_primitives() {
        let s = vec![3, 5];
        let cases: Vec<(&str, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
            ("add", Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
            ("sub", Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
            ("hadamard", Box::new(|t, v| t.hadamard(v[0], v[1]).unwrap())),
            ("scale", Box::new(|t, v| t.scale(v[0], -2.5))),
            ("relu", Box::new(|t, v| t.relu(v[0]))),
            ("gelu", Box::new(|t, v| t.gelu(v[0]))),
            ("abs", Box::new(|t, v| t.abs(v[0]))),
            ("max_scalar", Box::new(|t, v| t.max_scalar(v[0], 0.1))),
            ("divide", Box::new(|t, v| {
                let d = t.max_scalar(v[1], 0.5);
                t.divide(v[0], d).unwrap()
            })),
        ];
        for (i, (name, f)) in cases.iter().enumerate() {
            let e = grad_check(&[s.clone(), s.clone()], &s, 10 + i as u64, f.as_ref());
            assert!(e <= TOL, "{name}: {e}");
        }
    }

    #[test]
    fn reductions_and_scalar_divide() {
        let s = vec![2, 4];
        let e = grad_check(&[s.clone()], &[1], 1, &|t, v| t.sum(v[0]));
        assert!(e <= TOL);
        let e = grad_check(&[s.clone()], &[1], 2, &|t, v| {
            let sq = t.hadamard(v[0], v[0]).unwrap();
            t.mean(sq)
        });
        assert!(e <= TOL);
        let e = grad_check(&[s.clone(), s.clone()], &[1], 3, &|t, v| {
            let a = t.abs(v[0]);
            let num = t.sum(a);
            let b = t.hadamard(v[1], v[1]).unwrap();
            let den = t.sum(b);
            let den = t.max_scalar(den, 1e-8);
            t.divide(num, den).unwrap()
        });
        assert!(e <= TOL);
    }

    #[test]
    fn matmul_bias_concat() {
        let e = grad_check(&[vec![4, 3], vec![3, 7]], &[4, 7], 4, &|t, v| t.channel_matmul(v[0], v[1]).unwrap());
        assert!(e <= TOL);
        let e = grad_check(&[vec![3, 7], vec![3]], &[3, 7], 5, &|t, v| t.bias_broadcast(v[0], v[1]).unwrap());
        assert!(e <= TOL);
        let e = grad_check(&[vec![2, 5], vec![1, 5]], &[3, 5], 6, &|t, v| t.concat_channels(&[v[0], v[1]]).unwrap());
        assert!(e <= TOL);
        let e = grad_check(&[vec![2, 5]], &[5, 2], 13, &|t, v| t.transpose(v[0]).unwrap());
        assert!(e <= TOL);
    }

    #[test]
    fn pad_and_crop() {
        let e = grad_check(&[vec![2, 12]], &[2, 30], 7, &|t, v| t.pad(v[0], &[3, 4], &[5, 6]).unwrap());
        assert!(e <= TOL);
        let e = grad_check(&[vec![2, 30]], &[2, 12], 8, &|t, v| t.crop(v[0], &[5, 6], &[3, 4]).unwrap());
        assert!(e <= TOL);
    }

    #[test]
    fn spectral_primitives() {
        let dft = HalfDft::new(&[6, 7], 2).unwrap();
        let modes = dft.num_modes();
        let e = grad_check(&[vec![3, 42], vec![modes, 2, 3], vec![modes, 2, 3]], &[2, 42], 9, &|t, v| {
            t.spectral_linear(v[0], v[1], v[2], &dft).unwrap()
        });
        assert!(e <= TOL, "spectral_linear {e}");
        let e = grad_check(&[vec![2, 42], vec![modes, 2, 2], vec![modes, 2, 2]], &[2, 42], 10, &|t, v| {
            t.spectral_gram(v[0], v[1], v[2], &dft).unwrap()
        });
        assert!(e <= TOL, "spectral_gram {e}");
        let dft3 = HalfDft::new(&[5, 4, 6], 1).unwrap();
        let m3 = dft3.num_modes();
        let e = grad_check(&[vec![2, 120], vec![m3, 2, 2], vec![m3, 2, 2]], &[2, 120], 11, &|t, v| {
            t.spectral_linear(v[0], v[1], v[2], &dft3).unwrap()
        });
        assert!(e <= TOL, "3-D spectral_linear {e}");
    }

    #[test]
    fn spec_examples() {
        let store = ParamStore::new();
        let mut t = Tape::new();
        let x = Tensor::new(vec![1, 2], vec![-3.0, 2.0]);
        let mut st = ParamStore::new();
        let id = st.add("x", x);
        let xv = t.param(&st, id);
        let r = t.relu(xv);
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
        let s = t.sum(r);
        let g = t.backward(s, &st).unwrap();
        assert_eq!(g.get(id).data(), &[0.0, 1.0]);

        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(gelu_grad(0.0), 0.5);
        assert_eq!(sign0(0.0), 0.0);

        // ‖x‖² has gradient 2x exactly.
        let mut st = ParamStore::new();
        let id = st.add("x", Tensor::new(vec![3], vec![0.5, -1.25, 3.0]));
        let mut t = Tape::new();
        let xv = t.param(&st, id);
        let sq = t.hadamard(xv, xv).unwrap();
        let l = t.sum(sq);
        let g = t.backward(l, &st).unwrap();
        assert_eq!(g.get(id).data(), &[1.0, -2.5, 6.0]);

        // Non-scalar loss is rejected.
        let mut t = Tape::new();
        let a = t.input(Tensor::zeros(vec![2]));
        assert!(matches!(t.backward(a, &store), Err(Error::NonScalarLoss(_))));
        let b = t.input(Tensor::zeros(vec![3]));
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn full_spectrum_identity_weights_are_identity() {
        let dft_full = HalfDft::new(&[5, 5], 2).unwrap();
        let modes = dft_full.num_modes();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[1, 25]);
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let re = t.input(Tensor::new(vec![modes, 1, 1], vec![1.0; modes]));
        let im = t.input(Tensor::zeros(vec![modes, 1, 1]));
        let y = t.spectral_linear(xv, re, im, &dft_full).unwrap();
        for (a, b) in t.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut st = ParamStore::new();
        let w = st.add("w", rand_tensor(&mut rng, &[3, 4]));
        let x = rand_tensor(&mut rng, &[4, 6]);
        let build = |which: u8| {
            let mut t = Tape::new();
            let wv = t.param(&st, w);
            let xv = t.input(x.clone());
            let y = t.channel_matmul(wv, xv).unwrap();
            let g = t.gelu(y);
            let l1 = t.sum(g);
            let a = t.abs(y);
            let l2 = t.mean(a);
            let l = match which {
                0 => l1,
                1 => l2,
                _ => t.add(l1, l2).unwrap(),
            };
            t.backward(l, &st).unwrap()
        };
        let (g1, g2, g12) = (build(0), build(1), build(2));
        for i in 0..12 {
            let s = g1.get(w).data()[i] + g2.get(w).data()[i];
            assert!((s - g12.get(w).data()[i]).abs() <= 1e-12);
        }
        let again = build(2);
        assert!(g12.get(w).data().iter().zip(again.get(w).data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn unreached_parameters_get_zero() {
        let mut st = ParamStore::new();
        let a = st.add("a", Tensor::scalar(2.0));
        let b = st.add("b", Tensor::scalar(5.0));
        let mut t = Tape::new();
        let av = t.param(&st, a);
        let l = t.scale(av, 3.0);
        let g = t.backward(l, &st).unwrap();
        assert_eq!(g.get(a).item(), 3.0);
        assert_eq!(g.get(b).item(), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn linear_form_gradient_is_its_coefficients(coef in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let mut st = ParamStore::new();
            let id = st.add("x", Tensor::new(vec![coef.len()], vec![0.3; coef.len()]));
            let mut t = Tape::new();
            let xv = t.param(&st, id);
            let c = t.input(Tensor::new(vec![coef.len()], coef.clone()));
            let p = t.hadamard(c, xv).unwrap();
            let l = t.sum(p);
            let g = t.backward(l, &st).unwrap();
            proptest::prop_assert_eq!(g.get(id).data(), coef.as_slice());
        }
    }
}
