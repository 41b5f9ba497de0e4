use iuzawa_autodiff::{ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{NetConfig, Tying};
use crate::error::{Error, Result};

/// Spectral weights and pointwise channel mix of one Fourier layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierLayer {
    pub r_re: ParamId,
    pub r_im: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameters of one FNO surrogate (`S^k` or `A^k`).
#[derive(Clone, Debug, PartialEq)]
pub struct FnoParams {
    pub lift_w: ParamId,
    pub lift_b: ParamId,
    pub layers: Vec<FourierLayer>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

/// Parameters of the spectral preconditioner `Q_S^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct QsParams {
    pub p: ParamId,
    pub v: ParamId,
    pub phi_re: ParamId,
    pub phi_im: ParamId,
}

/// Weights `W_0..W_L` and biases `b_1..b_L` of the pointwise network `Q_A^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct QaParams {
    pub w: Vec<ParamId>,
    pub b: Vec<ParamId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub s: FnoParams,
    pub a: FnoParams,
    pub qs: QsParams,
    pub qa: QaParams,
}

/// All learnable weights of one iUzawa-Net.
#[derive(Clone, Debug)]
pub struct NetParams {
    pub config: NetConfig,
    pub store: ParamStore,
    /// One entry per layer; with shared tying every entry holds the same ids.
    pub layers: Vec<LayerParams>,
}

/// Retained modes of the learned spectral maps on a grid of dimension `ndims`.
pub fn num_modes(ndims: usize, k_max: usize) -> usize {
    (2 * k_max + 1).pow(ndims as u32 - 1) * (k_max + 1)
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::new(shape, data)
    }

    /// `[out × in]` weight, uniform in `±1/√in`.
    fn linear(&mut self, out: usize, fan_in: usize) -> Tensor {
        self.uniform(vec![out, fan_in], 1.0 / (fan_in as f64).sqrt())
    }

    fn bias(&mut self, out: usize, fan_in: usize) -> Tensor {
        self.uniform(vec![out], 1.0 / (fan_in as f64).sqrt())
    }

    /// Complex weights `[modes, out, in]`, real and imaginary parts uniform in `[0, scale)`.
    fn spectral(&mut self, modes: usize, out: usize, inp: usize, scale: f64) -> (Tensor, Tensor) {
        let shape = vec![modes, out, inp];
        let n = modes * out * inp;
        let re = (0..n).map(|_| scale * self.rng.gen::<f64>()).collect();
        let im = (0..n).map(|_| scale * self.rng.gen::<f64>()).collect();
        (Tensor::new(shape.clone(), re), Tensor::new(shape, im))
    }
}

struct Builder<'a> {
    cfg: &'a NetConfig,
    store: ParamStore,
    init: Init,
    modes: usize,
}

impl Builder<'_> {
    fn fno(&mut self, prefix: &str) -> FnoParams {
        let mp = self.cfg.m_p;
        let scale = 1.0 / (mp as f64 * self.modes as f64);
        let lift_w = self.store.add(format!("{prefix}.lift.w"), self.init.linear(mp, 1));
        let lift_b = self.store.add(format!("{prefix}.lift.b"), self.init.bias(mp, 1));
        let layers = (0..self.cfg.fourier_layers)
            .map(|l| {
                let (re, im) = self.init.spectral(self.modes, mp, mp, scale);
                FourierLayer {
                    r_re: self.store.add(format!("{prefix}.fourier{l}.r_re"), re),
                    r_im: self.store.add(format!("{prefix}.fourier{l}.r_im"), im),
                    w: self.store.add(format!("{prefix}.fourier{l}.w"), self.init.linear(mp, mp)),
                    b: self.store.add(format!("{prefix}.fourier{l}.b"), self.init.bias(mp, mp)),
                }
            })
            .collect();
        let proj_w = self.store.add(format!("{prefix}.proj.w"), self.init.linear(1, mp));
        let proj_b = self.store.add(format!("{prefix}.proj.b"), self.init.bias(1, mp));
        FnoParams {
            lift_w,
            lift_b,
            layers,
            proj_w,
            proj_b,
        }
    }

    fn qs(&mut self, prefix: &str) -> QsParams {
        let mp = self.cfg.m_p;
        let p = self.store.add(format!("{prefix}.p"), self.init.linear(mp, 1));
        let v = self.store.add(format!("{prefix}.v"), Tensor::zeros(vec![mp, mp]));
        // The Gram term is quadratic in Φ, so the FNO scale would start Q_S near
        // 1e-5·I and stall training until Φ grows; 1/(2·m_p) gives an initial
        // gain of order 0.1 on the retained modes.
        let (re, im) = self.init.spectral(self.modes, mp, mp, 0.5 / mp as f64);
        QsParams {
            p,
            v,
            phi_re: self.store.add(format!("{prefix}.phi_re"), re),
            phi_im: self.store.add(format!("{prefix}.phi_im"), im),
        }
    }

    fn qa(&mut self, prefix: &str) -> QaParams {
        let skip = 1 + self.cfg.bound_channels();
        let width = self.cfg.qa_width;
        let depth = self.cfg.qa_depth;
        let mut w = vec![self.store.add(format!("{prefix}.w0"), self.init.linear(width, skip))];
        let mut b = Vec::with_capacity(depth);
        for l in 1..=depth {
            let out = if l == depth { 1 } else { width };
            w.push(self.store.add(format!("{prefix}.w{l}"), self.init.linear(out, width + skip)));
            b.push(self.store.add(format!("{prefix}.b{l}"), self.init.bias(out, width + skip)));
        }
        QaParams { w, b }
    }

    fn layer(&mut self, prefix: &str) -> LayerParams {
        LayerParams {
            s: self.fno(&format!("{prefix}.S")),
            a: self.fno(&format!("{prefix}.A")),
            qs: self.qs(&format!("{prefix}.QS")),
            qa: self.qa(&format!("{prefix}.QA")),
        }
    }
}

impl NetParams {
    /// Fresh parameters drawn from `config.seed`.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let ndims = config.kind.domain(config.train_m)?.ndims();
        let mut b = Builder {
            cfg: config,
            store: ParamStore::new(),
            init: Init {
                rng: ChaCha8Rng::seed_from_u64(config.seed),
            },
            modes: num_modes(ndims, config.k_max),
        };
        let layers = match config.tying {
            Tying::Shared => vec![b.layer("shared"); config.layers],
            Tying::Free => (0..config.layers).map(|k| b.layer(&format!("layer{k}"))).collect(),
        };
        Ok(Self {
            config: config.clone(),
            store: b.store,
            layers,
        })
    }

    /// Overwrites every parameter with the tensor of the same name.
    pub fn load_values(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != self.store.len() {
            return Err(Error::Format(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.store.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .store
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if self.store.get(id).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.get(id).shape()
                )));
            }
            *self.store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }
}
