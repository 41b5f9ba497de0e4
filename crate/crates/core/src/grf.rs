//! Gaussian random field sampling, bound generation and the on-disk
//! dataset format.
//!
//! Fields are Karhunen–Loève expansions in eigenfunctions of the discrete
//! Laplacian: `X = scale · Σ_k ξ_k (λ_k + shift)^(−exponent) φ_k` with
//! `ξ_k` iid standard normal and `φ_k` products of `sin(jπx)` (Dirichlet)
//! or `cos(jπx)` (Neumann) over every axis, time included.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::classic::{kkt_residual, ssn_solve, ProblemInstance, SaddleState};
use crate::error::{Error, Result};
use crate::field::{resample, Domain, GridField};
use crate::pde::{PdeKind, PdeOperator};
use crate::prox::Regularizer;
use crate::spectral::along_axis;

/// Explicitly seeded ChaCha8 stream; `split` derives independent
/// substreams (one per dataset instance) from the same key.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn split(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self { seed: self.seed, rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrfBc {
    Dirichlet,
    Neumann,
    /// `(X_D + X_N)/√2` with independent components.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfLaw {
    pub bc: GrfBc,
    pub exponent: f64,
    pub shift: f64,
    pub scale: f64,
}

impl GrfLaw {
    pub fn new(bc: GrfBc, exponent: f64) -> Self {
        Self {
            bc,
            exponent,
            shift: 9.0,
            scale: 1.0,
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Mode standard deviation `scale · (λ + shift)^(−exponent)`.
    pub fn spectral_scale(&self, lambda: f64) -> f64 {
        self.scale * (lambda + self.shift).powf(-self.exponent)
    }
}

/// 1-D discrete Laplacian eigenvalues for the modes of one axis.
fn axis_eigs(domain: &Domain, axis: usize, bc: GrfBc) -> Vec<f64> {
    let m = domain.shape()[axis];
    let h = domain.spacing(axis);
    let big = (m - 1) as f64;
    let modes: Vec<usize> = match bc {
        GrfBc::Dirichlet => (1..m - 1).collect(),
        _ => (0..m).collect(),
    };
    modes
        .into_iter()
        .map(|j| {
            let s = (PI * j as f64 / (2.0 * big)).sin();
            4.0 / (h * h) * s * s
        })
        .collect()
}

/// `m × K` synthesis matrix `φ_j(x_i)` for one axis; Dirichlet rows on the
/// boundary are exactly zero.
fn axis_basis(m: usize, bc: GrfBc) -> Vec<f64> {
    let big = (m - 1) as f64;
    match bc {
        GrfBc::Dirichlet => {
            let k = m - 2;
            let mut b = vec![0.0; m * k];
            for i in 1..m - 1 {
                for j in 0..k {
                    b[i * k + j] = (PI * ((i * (j + 1)) % (2 * (m - 1))) as f64 / big).sin();
                }
            }
            b
        }
        _ => {
            let mut b = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    b[i * m + j] = (PI * ((i * j) % (2 * (m - 1))) as f64 / big).cos();
                }
            }
            b
        }
    }
}

fn sample_component(law: &GrfLaw, bc: GrfBc, domain: &Domain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nd = domain.ndims();
    let eigs: Vec<Vec<f64>> = (0..nd).map(|a| axis_eigs(domain, a, bc)).collect();
    let mut shape: Vec<usize> = eigs.iter().map(Vec::len).collect();
    let count: usize = shape.iter().product();
    let mut coeffs = Vec::with_capacity(count);
    let mut idx = vec![0usize; nd];
    for _ in 0..count {
        let lambda: f64 = idx.iter().enumerate().map(|(a, &j)| eigs[a][j]).sum();
        let xi: f64 = rng.sample(StandardNormal);
        coeffs.push(xi * law.spectral_scale(lambda));
        for a in (0..nd).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let mut data = coeffs;
    for a in 0..nd {
        let m = domain.shape()[a];
        data = along_axis(&data, &shape, a, &axis_basis(m, bc), m);
        shape[a] = m;
    }
    data
}

pub fn sample_grf(law: &GrfLaw, domain: &Domain, rng: &mut ChaCha8Rng) -> GridField {
    let values = match law.bc {
        GrfBc::Mixed => {
            let d = sample_component(law, GrfBc::Dirichlet, domain, rng);
            let n = sample_component(law, GrfBc::Neumann, domain, rng);
            d.iter().zip(&n).map(|(a, b)| (a + b) / 2f64.sqrt()).collect()
        }
        bc => sample_component(law, bc, domain, rng),
    };
    GridField::new(domain.clone(), values).expect("sample has the domain's length")
}

/// Mode exponents of the data laws. A covariance `(−Δ + 9I)^(−s)` has mode
/// standard deviation `(λ + 9)^(−s/2)`.
pub const DATA_EXPONENT: f64 = 0.75;
pub const BOUND_EXPONENT: f64 = 1.0;
/// Common amplitude of the data laws, chosen so that roughly 70% of
/// elliptic reference controls touch their bounds.
pub const DATA_AMPLITUDE: f64 = 16.0;

/// `u_a = min(a + v, 0)`, `u_b = max(b + w, 0)` with `a ~ U(−10, −1)`,
/// `b ~ U(1, 10)` and `v, w` from the mixed bound law.
pub fn sample_bounds(domain: &Domain, rng: &mut ChaCha8Rng) -> (GridField, GridField) {
    let law = GrfLaw::new(GrfBc::Mixed, BOUND_EXPONENT).scaled(DATA_AMPLITUDE);
    let a = rng.gen_range(-10.0..-1.0);
    let b = rng.gen_range(1.0..10.0);
    let v = sample_grf(&law, domain, rng);
    let w = sample_grf(&law, domain, rng);
    (v.map(|x| (a + x).min(0.0)), w.map(|x| (b + x).max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    EllipticIso,
    EllipticAniso,
    Parabolic,
}

pub const ALPHA: f64 = 0.01;
pub const PARABOLIC_BETA: f64 = 0.01;
pub const PARABOLIC_BOUND: f64 = 6.0;

impl ExperimentKind {
    pub fn code(self) -> u8 {
        match self {
            ExperimentKind::EllipticIso => 0,
            ExperimentKind::EllipticAniso => 1,
            ExperimentKind::Parabolic => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ExperimentKind::EllipticIso),
            1 => Ok(ExperimentKind::EllipticAniso),
            2 => Ok(ExperimentKind::Parabolic),
            c => Err(Error::Format(format!("unknown experiment code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EllipticIso => "elliptic-iso",
            ExperimentKind::EllipticAniso => "elliptic-aniso",
            ExperimentKind::Parabolic => "parabolic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [ExperimentKind::EllipticIso, ExperimentKind::EllipticAniso, ExperimentKind::Parabolic]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment kind {s:?}")))
    }

    pub fn pde_kind(self) -> PdeKind {
        match self {
            ExperimentKind::EllipticIso => PdeKind::EllipticDirichlet,
            ExperimentKind::EllipticAniso => PdeKind::EllipticAnisoNeumann {
                a1: 1.0,
                a2: 100.0,
                c: 1.0,
            },
            ExperimentKind::Parabolic => PdeKind::HeatDirichlet,
        }
    }

    /// `m × m`, or `m × m × m` (with `m_T = m`) for the parabolic case.
    pub fn domain(self, m: usize) -> Result<Domain> {
        match self {
            ExperimentKind::Parabolic => Domain::space_time(m, m),
            _ => Domain::square(m),
        }
    }

    pub fn regularizer(self, lower: GridField, upper: GridField) -> Regularizer {
        match self {
            ExperimentKind::Parabolic => Regularizer::L1Box {
                beta: PARABOLIC_BETA,
                lower,
                upper,
            },
            _ => Regularizer::Box { lower, upper },
        }
    }

    pub fn operator(self, domain: &Domain) -> Result<Arc<PdeOperator>> {
        Ok(Arc::new(PdeOperator::new(self.pde_kind(), domain)?))
    }

    /// Problem data `(y_d, f, u_a, u_b)` for one instance.
    pub fn sample_data(self, domain: &Domain, rng: &mut ChaCha8Rng) -> [GridField; 4] {
        let law = |bc| GrfLaw::new(bc, DATA_EXPONENT).scaled(DATA_AMPLITUDE);
        match self {
            ExperimentKind::EllipticIso | ExperimentKind::EllipticAniso => {
                let y_bc = if self == ExperimentKind::EllipticIso {
                    GrfBc::Dirichlet
                } else {
                    GrfBc::Mixed
                };
                let y_d = sample_grf(&law(y_bc), domain, rng);
                let f = sample_grf(&law(GrfBc::Mixed), domain, rng);
                let (u_a, u_b) = sample_bounds(domain, rng);
                [y_d, f, u_a, u_b]
            }
            ExperimentKind::Parabolic => {
                let y_d = sample_grf(&law(GrfBc::Mixed), domain, rng);
                let f = sample_grf(&law(GrfBc::Mixed), domain, rng);
                [
                    y_d,
                    f,
                    GridField::constant(domain, -PARABOLIC_BOUND),
                    GridField::constant(domain, PARABOLIC_BOUND),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub y_d: GridField,
    pub f: GridField,
    pub u_a: GridField,
    pub u_b: GridField,
    pub u_star: GridField,
    /// KKT residual of the reference solve.
    pub residual: f64,
}

impl DatasetRecord {
    pub fn problem(&self, kind: ExperimentKind, op: Arc<PdeOperator>) -> Result<ProblemInstance> {
        ProblemInstance::new(
            op,
            ALPHA,
            kind.regularizer(self.u_a.clone(), self.u_b.clone()),
            self.y_d.clone(),
            self.f.clone(),
        )
    }

    /// `|A|/|Ω|` of the active set `{u* = u_a or u* = u_b}`, or `None` if it is empty.
    pub fn active_ratio(&self) -> Option<f64> {
        let d = self.u_star.domain();
        let w = d.weights();
        let mut measure = 0.0;
        let mut any = false;
        for (i, &u) in self.u_star.values().iter().enumerate() {
            if u == self.u_a.values()[i] || u == self.u_b.values()[i] {
                measure += w[i];
                any = true;
            }
        }
        any.then(|| measure / w.iter().sum::<f64>())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: ExperimentKind,
    pub domain: Domain,
    pub records: Vec<DatasetRecord>,
}

/// Reference solves use this KKT tolerance; records above it are dropped.
pub const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_ITER: usize = 60;

fn generate_record(kind: ExperimentKind, domain: &Domain, op: &Arc<PdeOperator>, mut rng: RngState) -> Result<Option<DatasetRecord>> {
    let [y_d, f, u_a, u_b] = kind.sample_data(domain, rng.rng());
    let prob = ProblemInstance::new(op.clone(), ALPHA, kind.regularizer(u_a.clone(), u_b.clone()), y_d.clone(), f.clone())?;
    let (state, report) = ssn_solve(&prob, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
    if !report.converged {
        return Ok(None);
    }
    Ok(Some(DatasetRecord {
        y_d,
        f,
        u_a,
        u_b,
        u_star: state.u,
        residual: report.final_residual(),
    }))
}

/// Generates `n` records; instance `i` draws from substream `i` of `seed`.
/// Instances whose reference solve fails are logged and replaced by later
/// substreams, so the output depends only on `(kind, n, m, seed)`.
pub fn gen_dataset(kind: ExperimentKind, n: usize, m: usize, seed: u64) -> Result<Dataset> {
    gen_dataset_on(kind, kind.domain(m)?, n, seed)
}

/// [`gen_dataset`] on an explicit domain, e.g. a space-time grid with `m_T ≠ m`.
pub fn gen_dataset_on(kind: ExperimentKind, domain: Domain, n: usize, seed: u64) -> Result<Dataset> {
    if domain.ndims() != kind.domain(domain.shape()[domain.ndims() - 1])?.ndims() {
        return Err(Error::InvalidArgument(format!("{}-dimensional grid for {}", domain.ndims(), kind.name())));
    }
    let op = kind.operator(&domain)?;
    let base = RngState::seeded(seed);
    let mut records = Vec::with_capacity(n);
    let mut next = 0u64;
    while records.len() < n {
        let want = (n - records.len()) as u64;
        let batch: Vec<Result<Option<DatasetRecord>>> = (next..next + want)
            .into_par_iter()
            .map(|i| generate_record(kind, &domain, &op, base.split(i)))
            .collect();
        for (offset, rec) in batch.into_iter().enumerate() {
            match rec? {
                Some(r) => records.push(r),
                None => warn!("instance {} skipped: reference solve did not converge", next + offset as u64),
            }
        }
        next += want;
    }
    Ok(Dataset { kind, domain, records })
}

/// Interpolates the problem data of every record onto resolution `m` and
/// re-solves the reference controls there.
pub fn resample_dataset(ds: &Dataset, m: usize) -> Result<Dataset> {
    let domain = ds.kind.domain(m)?;
    let op = ds.kind.operator(&domain)?;
    let records = ds
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let [y_d, f, u_a, u_b] = [&r.y_d, &r.f, &r.u_a, &r.u_b].map(|x| resample(x, &domain));
            let (y_d, f, u_a, u_b) = (y_d?, f?, u_a?, u_b?);
            let prob = ProblemInstance::new(op.clone(), ALPHA, ds.kind.regularizer(u_a.clone(), u_b.clone()), y_d.clone(), f.clone())?;
            let (state, report) = ssn_solve(&prob, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
            if !report.converged {
                warn!("record {i}: reference solve at m={m} stopped at residual {:e}", report.final_residual());
            }
            Ok(DatasetRecord {
                y_d,
                f,
                u_a,
                u_b,
                u_star: state.u,
                residual: report.final_residual(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind: ds.kind,
        domain,
        records,
    })
}

/// Recomputes the KKT residual of every stored control.
pub fn verify_dataset(ds: &Dataset) -> Result<Vec<f64>> {
    let op = ds.kind.operator(&ds.domain)?;
    ds.records
        .par_iter()
        .map(|r| {
            let prob = r.problem(ds.kind, op.clone())?;
            let p = prob.dual_of(&r.u_star)?;
            kkt_residual(&prob, &SaddleState { u: r.u_star.clone(), p })
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"IUZW";
const VERSION: u16 = 1;

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[ds.kind.code(), ds.domain.ndims() as u8])?;
    for &m in ds.domain.shape() {
        w.write_all(&(m as u32).to_le_bytes())?;
    }
    w.write_all(&(ds.records.len() as u32).to_le_bytes())?;
    for r in &ds.records {
        for field in [&r.y_d, &r.f, &r.u_a, &r.u_b, &r.u_star] {
            for v in field.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&r.residual.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(&mut BufReader::new(File::open(path)?))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated dataset: {e}")))?;
    Ok(b)
}

pub fn read_dataset_from(r: &mut impl Read) -> Result<Dataset> {
    if &read_array::<4>(r)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let [code, ndims] = read_array::<2>(r)?;
    let kind = ExperimentKind::from_code(code)?;
    let shape: Vec<usize> = (0..ndims)
        .map(|_| read_array::<4>(r).map(|b| u32::from_le_bytes(b) as usize))
        .collect::<Result<_>>()?;
    let domain = match (kind, shape.as_slice()) {
        (ExperimentKind::Parabolic, &[mt, m, m2]) if m == m2 => Domain::space_time(m, mt)?,
        (ExperimentKind::EllipticIso | ExperimentKind::EllipticAniso, &[m, m2]) if m == m2 => Domain::square(m)?,
        _ => return Err(Error::Format(format!("shape {shape:?} does not fit {}", kind.name()))),
    };
    let count = u32::from_le_bytes(read_array(r)?) as usize;
    let len = domain.len();
    let read_field = |r: &mut dyn Read| -> Result<GridField> {
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated dataset: {e}")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridField::new(domain.clone(), values)
    };
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let y_d = read_field(r)?;
        let f = read_field(r)?;
        let u_a = read_field(r)?;
        let u_b = read_field(r)?;
        let u_star = read_field(r)?;
        let residual = f64::from_le_bytes(read_array(r)?);
        records.push(DatasetRecord { y_d, f, u_a, u_b, u_star, residual });
    }
    Ok(Dataset { kind, domain, records })
}
