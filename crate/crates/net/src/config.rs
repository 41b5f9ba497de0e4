use iuzawa_core::grf::ExperimentKind;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tying {
    /// Distinct parameters in every layer.
    Free,
    /// One parameter set reused by all layers.
    Shared,
}

/// Architecture of an iUzawa-Net.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub kind: ExperimentKind,
    pub layers: usize,
    pub tying: Tying,
    pub tau: f64,
    /// Lifting width of the Fourier modules.
    pub m_p: usize,
    pub k_max: usize,
    pub fourier_layers: usize,
    pub qa_width: usize,
    /// Number of weight matrices after `W_0` in the pointwise network.
    pub qa_depth: usize,
    pub gamma: f64,
    /// Resolution the network is trained at.
    pub train_m: usize,
    /// Padded grid length per axis at `train_m`.
    pub pad_to: usize,
    pub seed: u64,
}

impl NetConfig {
    /// Defaults for an experiment at training resolution `m`.
    pub fn new(kind: ExperimentKind, m: usize) -> Self {
        let parabolic = kind == ExperimentKind::Parabolic;
        // 72 points for m = 64 (36 for the parabolic case at m = 32),
        // scaled to other training resolutions.
        let ratio = if parabolic { 36.0 / 31.0 } else { 72.0 / 63.0 };
        Self {
            kind,
            layers: if parabolic { 5 } else { 10 },
            tying: Tying::Shared,
            tau: 1e-4,
            m_p: 8,
            k_max: 8,
            fourier_layers: if parabolic { 3 } else { 4 },
            qa_width: 64,
            qa_depth: 3,
            gamma: 1e-6,
            train_m: m,
            pad_to: (ratio * (m - 1) as f64).round() as usize,
            seed: 0,
        }
    }

    /// Number of problem-data channels fed to `Q_A` besides its argument.
    pub fn bound_channels(&self) -> usize {
        match self.kind {
            ExperimentKind::Parabolic => 3,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.m_p == 0 || self.qa_width == 0 || self.qa_depth < 1 {
            return bad("widths and depths must be positive".into());
        }
        if self.train_m < iuzawa_core::field::MIN_RESOLUTION || self.pad_to < self.train_m {
            return bad(format!("pad_to {} below training resolution {}", self.pad_to, self.train_m));
        }
        if 2 * self.k_max >= self.pad_to {
            return bad(format!("k_max {} needs pad_to > {}", self.k_max, 2 * self.k_max));
        }
        if !(self.gamma > 0.0) || !(self.tau >= 0.0) {
            return bad("gamma must be positive and tau nonnegative".into());
        }
        Ok(())
    }

    /// Padded length of an axis with `m` points. The padded period in
    /// physical units is kept fixed across resolutions.
    pub fn padded_len(&self, m: usize) -> Result<usize> {
        let n = (self.pad_to as f64 * (m - 1) as f64 / (self.train_m - 1) as f64).round() as usize;
        let n = n.max(m);
        if 2 * self.k_max >= n {
            return Err(Error::Config(format!(
                "resolution {m} pads to {n} points, too few for k_max {}",
                self.k_max
            )));
        }
        Ok(n)
    }
}
