//! Loss, training loop and evaluation metrics.

use std::io::Write;
use std::path::PathBuf;

use iuzawa_autodiff::{adamw_step, lr_schedule, AdamW, Gradients, Tape, Tensor, Var};
use iuzawa_core::field::{norm_l2, relative_error};
use iuzawa_core::grf::{resample_dataset, Dataset, DatasetRecord};
use iuzawa_core::GridField;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::Symmetry;
use crate::checkpoint::write_checkpoint;
use crate::error::{Error, Result};
use crate::modules::Geometry;
use crate::params::NetParams;
use crate::unroll::{iuzawa_forward, predict, NetInputs};

pub const EPS_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `Σ|pred − target| / max(Σ|target|, ε_L)`.
    L1Ratio,
    /// `Σ(pred − target)² / max(Σ target², ε_L)`.
    SquaredL2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay: f64,
    pub every: usize,
    pub weight_decay: f64,
    pub eps_floor: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Draw a random symmetry of the square for every sample visit.
    pub augment: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            base_lr: 1e-3,
            decay: 0.6,
            every: 30,
            weight_decay: 1e-2,
            eps_floor: EPS_FLOOR,
            loss: LossKind::L1Ratio,
            seed: 0,
            augment: false,
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.every == 0 {
            return Err(Error::Config("batch_size and every must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !(self.eps_floor > 0.0) {
            return Err(Error::Config("base_lr and eps_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample loss node; `target` is a constant.
pub fn loss_node(tape: &mut Tape, pred: Var, target: &GridField, kind: LossKind, eps_floor: f64) -> Result<Var> {
    let t = tape.input(Tensor::new(vec![1, target.values().len()], target.values().to_vec()));
    let diff = tape.sub(pred, t)?;
    let (num, den) = match kind {
        LossKind::L1Ratio => {
            let a = tape.abs(diff);
            (tape.sum(a), target.values().iter().map(|v| v.abs()).sum::<f64>())
        }
        LossKind::SquaredL2 => {
            let sq = tape.hadamard(diff, diff)?;
            (tape.sum(sq), target.values().iter().map(|v| v * v).sum::<f64>())
        }
    };
    let den = tape.input(Tensor::scalar(den.max(eps_floor)));
    Ok(tape.divide(num, den)?)
}

/// Loss value without a tape.
pub fn loss_value(pred: &GridField, target: &GridField, kind: LossKind, eps_floor: f64) -> Result<f64> {
    pred.domain().check_same(target.domain())?;
    let pairs = pred.values().iter().zip(target.values());
    let (num, den) = match kind {
        LossKind::L1Ratio => pairs.fold((0.0, 0.0), |(n, d), (p, t)| (n + (p - t).abs(), d + t.abs())),
        LossKind::SquaredL2 => pairs.fold((0.0, 0.0), |(n, d), (p, t)| (n + (p - t) * (p - t), d + t * t)),
    };
    Ok(num / den.max(eps_floor))
}

fn inputs(r: &DatasetRecord) -> NetInputs<'_> {
    NetInputs {
        y_d: &r.y_d,
        f: &r.f,
        u_a: &r.u_a,
        u_b: &r.u_b,
    }
}

/// Loss and parameter gradient for one record.
pub fn sample_gradient(net: &NetParams, geo: &Geometry, r: &DatasetRecord, kind: LossKind, eps_floor: f64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let out = iuzawa_forward(net, geo, &mut tape, inputs(r), false)?;
    let loss = loss_node(&mut tape, out.u, &r.u_star, kind, eps_floor)?;
    let grads = tape.backward(loss, &net.store)?;
    Ok((tape.value(loss).item(), grads))
}

/// Mean loss over a dataset.
pub fn mean_loss(net: &NetParams, ds: &Dataset, kind: LossKind, eps_floor: f64) -> Result<f64> {
    let losses = ds
        .records
        .par_iter()
        .map(|r| loss_value(&predict(net, inputs(r))?, &r.u_star, kind, eps_floor))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of the initial parameters.
    pub initial_loss: f64,
    /// Mean training loss of each epoch, accumulated over its batches.
    pub epoch_loss: Vec<f64>,
    /// Held-out loss after each epoch, when a held-out set is given.
    pub heldout_loss: Vec<f64>,
}

impl TrainReport {
    pub fn all_finite(&self) -> bool {
        std::iter::once(&self.initial_loss)
            .chain(&self.epoch_loss)
            .chain(&self.heldout_loss)
            .all(|l| l.is_finite())
    }
}

/// Splits off the last eighth of the records as a held-out set.
pub fn split_heldout(ds: &Dataset) -> (Dataset, Dataset) {
    let n_test = (ds.records.len() / 8).max(usize::from(ds.records.len() > 1));
    let cut = ds.records.len() - n_test;
    let part = |records: &[DatasetRecord]| Dataset {
        kind: ds.kind,
        domain: ds.domain.clone(),
        records: records.to_vec(),
    };
    (part(&ds.records[..cut]), part(&ds.records[cut..]))
}

fn check_dataset(net: &NetParams, ds: &Dataset) -> Result<()> {
    let c = &net.config;
    if ds.kind != c.kind || ds.domain != c.kind.domain(c.train_m)? {
        return Err(Error::Config(format!(
            "{} dataset on {:?} for a {} network trained at m={}",
            ds.kind.name(),
            ds.domain.shape(),
            c.kind.name(),
            c.train_m
        )));
    }
    if ds.records.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    Ok(())
}

/// Minimizes the mean loss with AdamW over shuffled mini-batches. Batch
/// gradients are summed in sample order, so the result does not depend on
/// the number of worker threads.
pub fn train(cfg: &TrainConfig, net: &mut NetParams, data: &Dataset, heldout: Option<&Dataset>) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(net, data)?;
    if let Some(h) = heldout {
        check_dataset(net, h)?;
    }
    let geo = Geometry::new(&net.config, &data.domain)?;
    let n = data.records.len();
    let mut report = TrainReport {
        initial_loss: mean_loss(net, data, cfg.loss, cfg.eps_floor)?,
        ..Default::default()
    };
    info!("initial loss {:.6e}", report.initial_loss);
    let group = Symmetry::group(data.kind);
    for epoch in 0..cfg.epochs {
        let opt = AdamW::new(lr_schedule(epoch, cfg.base_lr, cfg.decay, cfg.every), cfg.weight_decay);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let symmetries: Vec<Symmetry> = if cfg.augment {
            (0..n).map(|_| *group.choose(&mut rng).expect("nonempty group")).collect()
        } else {
            vec![Symmetry::IDENTITY; n]
        };
        let mut total = 0.0;
        for (batch, (idx, sym)) in order.chunks(cfg.batch_size).zip(symmetries.chunks(cfg.batch_size)).enumerate() {
            let net_ref = &*net;
            let results = idx
                .par_iter()
                .zip(sym)
                .map(|(&i, s)| {
                    let rec = &data.records[i];
                    if *s == Symmetry::IDENTITY {
                        sample_gradient(net_ref, &geo, rec, cfg.loss, cfg.eps_floor)
                    } else {
                        sample_gradient(net_ref, &geo, &s.apply_record(rec), cfg.loss, cfg.eps_floor)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros(&net.store);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_assign(g);
            }
            grads.scale(1.0 / idx.len() as f64);
            if !batch_loss.is_finite() || !grads.is_finite() {
                log::error!("non-finite loss in epoch {epoch}, batch {batch}");
                return Err(Error::NonFinite { epoch, batch });
            }
            total += batch_loss;
            adamw_step(&mut net.store, &grads, &opt);
        }
        report.epoch_loss.push(total / n as f64);
        let held = match heldout {
            Some(h) => {
                let l = mean_loss(net, h, cfg.loss, cfg.eps_floor)?;
                report.heldout_loss.push(l);
                format!(", held-out {l:.6e}")
            }
            None => String::new(),
        };
        info!("epoch {epoch}: lr {:.3e}, loss {:.6e}{held}", opt.lr, total / n as f64);
        if let Some(path) = &cfg.checkpoint_path {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                write_checkpoint(net, path)?;
            }
        }
    }
    Ok(report)
}

/// `(ε_rel, ε_abs)` of a prediction in the discrete `L²` norm.
pub fn errors(pred: &GridField, target: &GridField, eps_floor: f64) -> Result<(f64, f64)> {
    let rel = relative_error(pred, target, eps_floor)?;
    Ok((rel, rel * norm_l2(target).max(eps_floor)))
}

/// Mean and population standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub m: usize,
    pub eps_rel: Vec<f64>,
    pub eps_abs: Vec<f64>,
}

impl EvalReport {
    pub fn from_predictions(ds: &Dataset, preds: &[GridField]) -> Result<Self> {
        let mut eps_rel = Vec::with_capacity(preds.len());
        let mut eps_abs = Vec::with_capacity(preds.len());
        for (r, p) in ds.records.iter().zip(preds) {
            let (rel, abs) = errors(p, &r.u_star, EPS_FLOOR)?;
            eps_rel.push(rel);
            eps_abs.push(abs);
        }
        Ok(Self {
            m: ds.domain.shape()[ds.domain.ndims() - 1],
            eps_rel,
            eps_abs,
        })
    }

    pub fn row(&self, method: &str) -> MetricsRow {
        let (rel_mean, rel_sd) = mean_sd(&self.eps_rel);
        let (abs_mean, abs_sd) = mean_sd(&self.eps_abs);
        MetricsRow {
            method: method.to_string(),
            m: self.m,
            eps_rel_mean: rel_mean,
            eps_rel_sd: rel_sd,
            eps_abs_mean: abs_mean,
            eps_abs_sd: abs_sd,
            n_records: self.eps_rel.len(),
        }
    }
}

/// Errors of the network on every record. With `resample_to`, the problem
/// data are interpolated onto that resolution and the references re-solved
/// there before the network runs.
pub fn evaluate(net: &NetParams, ds: &Dataset, resample_to: Option<usize>) -> Result<EvalReport> {
    let resampled;
    let ds = match resample_to {
        Some(m) if ds.domain != ds.kind.domain(m)? => {
            resampled = resample_dataset(ds, m)?;
            &resampled
        }
        _ => ds,
    };
    if ds.kind != net.config.kind {
        return Err(Error::Config(format!("{} data for a {} network", ds.kind.name(), net.config.kind.name())));
    }
    let preds = ds
        .records
        .par_iter()
        .map(|r| predict(net, inputs(r)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(ds, &preds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub m: usize,
    pub eps_rel_mean: f64,
    pub eps_rel_sd: f64,
    pub eps_abs_mean: f64,
    pub eps_abs_sd: f64,
    pub n_records: usize,
}

pub const METRICS_HEADER: &str = "method,m,eps_rel_mean,eps_rel_sd,eps_abs_mean,eps_abs_sd,n_records";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{}",
            self.method, self.m, self.eps_rel_mean, self.eps_rel_sd, self.eps_abs_mean, self.eps_abs_sd, self.n_records
        )
    }
}

pub fn write_metrics_csv(w: &mut impl Write, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}
