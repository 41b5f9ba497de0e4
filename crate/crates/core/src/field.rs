//! Scalar fields on vertex-centred uniform grids over boxes.
//!
//! A [`Domain`] is either the unit square (two spatial axes) or the unit
//! square times a time interval. Values are stored row-major with the
//! first axis slowest; for space-time domains the first axis is time, so
//! each time slice is a contiguous spatial block.
//!
//! The discrete L² geometry is the tensor-product trapezoid rule: every
//! grid point carries the cell volume `∏ spacing`, halved once for each
//! axis on which the point sits on the boundary.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Smallest admissible point count along any axis.
pub const MIN_RESOLUTION: usize = 4;

#[derive(Clone, Debug)]
pub struct Domain {
    shape: Vec<usize>,
    extent: Vec<f64>,
    time_axis: bool,
    weights: Arc<[f64]>,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.extent == other.extent && self.time_axis == other.time_axis
    }
}

impl Domain {
    /// General box. `time_axis` marks axis 0 as the time axis.
    pub fn new(shape: Vec<usize>, extent: Vec<f64>, time_axis: bool) -> Result<Self> {
        if shape.is_empty() || shape.len() != extent.len() {
            return Err(Error::InvalidDomain(format!(
                "shape {shape:?} and extent {extent:?} disagree"
            )));
        }
        if let Some(&m) = shape.iter().find(|&&m| m < MIN_RESOLUTION) {
            return Err(Error::InvalidDomain(format!(
                "resolution {m} below minimum {MIN_RESOLUTION}"
            )));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidDomain(format!("non-positive extent {extent:?}")));
        }
        let weights = quadrature_weights(&shape, &extent);
        Ok(Self {
            shape,
            extent,
            time_axis,
            weights: weights.into(),
        })
    }

    /// `m × m` grid on the unit square.
    pub fn square(m: usize) -> Result<Self> {
        Self::new(vec![m, m], vec![1.0, 1.0], false)
    }

    /// `m_t × m × m` grid on `[0,1] × (0,1)²`, time slowest.
    pub fn space_time(m: usize, m_t: usize) -> Result<Self> {
        Self::new(vec![m_t, m, m], vec![1.0, 1.0, 1.0], true)
    }

    pub fn ndims(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn has_time_axis(&self) -> bool {
        self.time_axis
    }

    /// Shape of the spatial block (all axes except time).
    pub fn spatial_shape(&self) -> &[usize] {
        if self.time_axis {
            &self.shape[1..]
        } else {
            &self.shape
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / (self.shape[axis] - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.ndims()).map(|a| self.spacing(a)).product()
    }

    /// Per-point trapezoid weights, in storage order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical coordinates of the point with flat index `idx`.
    pub fn coords(&self, mut idx: usize, out: &mut [f64]) {
        for axis in (0..self.ndims()).rev() {
            let m = self.shape[axis];
            out[axis] = (idx % m) as f64 * self.spacing(axis);
            idx /= m;
        }
    }

    /// True when the point lies on the spatial boundary (time ends excluded).
    pub fn on_spatial_boundary(&self, mut idx: usize) -> bool {
        let first = usize::from(self.time_axis);
        let mut hit = false;
        for axis in (0..self.ndims()).rev() {
            let m = self.shape[axis];
            let i = idx % m;
            idx /= m;
            if axis >= first && (i == 0 || i == m - 1) {
                hit = true;
            }
        }
        hit
    }

    /// Same geometry with a different number of points per axis.
    pub fn with_shape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.extent.clone(), self.time_axis)
    }

    pub fn check_same(&self, other: &Domain) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DomainMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }
}

fn quadrature_weights(shape: &[usize], extent: &[f64]) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = shape
        .iter()
        .zip(extent)
        .map(|(&m, &e)| {
            let h = e / (m - 1) as f64;
            (0..m)
                .map(|i| if i == 0 || i == m - 1 { 0.5 * h } else { h })
                .collect()
        })
        .collect();
    let mut w = vec![1.0];
    for axis in per_axis {
        w = w
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| a * b))
            .collect();
    }
    w
}

/// A real-valued function sampled on a [`Domain`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    domain: Domain,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(domain: Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::DomainMismatch(format!(
                "{} values for a domain of {} points",
                values.len(),
                domain.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite field value".into()));
        }
        Ok(Self { domain, values })
    }

    /// Skips the finiteness scan; callers guarantee the length.
    pub(crate) fn from_raw(domain: Domain, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn zeros(domain: &Domain) -> Self {
        Self::from_raw(domain.clone(), vec![0.0; domain.len()])
    }

    pub fn constant(domain: &Domain, c: f64) -> Self {
        Self::from_raw(domain.clone(), vec![c; domain.len()])
    }

    /// Samples `f` at every grid point; `f` receives coordinates in axis order.
    pub fn from_fn(domain: &Domain, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; domain.ndims()];
        let values = (0..domain.len())
            .map(|i| {
                domain.coords(i, &mut x);
                f(&x)
            })
            .collect();
        Self::from_raw(domain.clone(), values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.domain.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same domain.
    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.domain.check_same(&other.domain)?;
        Ok(Self::from_raw(
            self.domain.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &GridField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &GridField) -> Result<()> {
        self.domain.check_same(&x.domain)?;
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Discrete L² inner product with trapezoid weights.
pub fn inner_product(a: &GridField, b: &GridField) -> Result<f64> {
    a.domain.check_same(&b.domain)?;
    Ok(weighted_dot(a.domain.weights(), &a.values, &b.values))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

pub fn norm_l2(a: &GridField) -> f64 {
    weighted_dot(a.domain.weights(), &a.values, &a.values).sqrt()
}

/// Discrete L¹ norm with trapezoid weights.
pub fn norm_l1(a: &GridField) -> f64 {
    a.domain
        .weights()
        .iter()
        .zip(&a.values)
        .map(|(w, v)| w * v.abs())
        .sum()
}

/// `‖u_hat − u_star‖ / max(‖u_star‖, eps_floor)`.
pub fn relative_error(u_hat: &GridField, u_star: &GridField, eps_floor: f64) -> Result<f64> {
    u_hat.domain.check_same(&u_star.domain)?;
    let w = u_hat.domain.weights();
    let diff: f64 = w
        .iter()
        .zip(&u_hat.values)
        .zip(&u_star.values)
        .map(|((w, a), b)| w * (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / norm_l2(u_star).max(eps_floor))
}

/// Multilinear interpolation onto another grid over the same box.
pub fn resample(a: &GridField, target: &Domain) -> Result<GridField> {
    let src = &a.domain;
    if src.ndims() != target.ndims()
        || src.has_time_axis() != target.has_time_axis()
        || src
            .extent()
            .iter()
            .zip(target.extent())
            .any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0))
    {
        return Err(Error::DomainMismatch(format!(
            "cannot resample extent {:?} onto {:?}",
            src.extent(),
            target.extent()
        )));
    }
    let d = src.ndims();
    // Per axis: for each target index, the lower source index and the weight of the upper one.
    let stencils: Vec<Vec<(usize, f64)>> = (0..d)
        .map(|axis| {
            let ms = src.shape()[axis];
            let mt = target.shape()[axis];
            (0..mt)
                .map(|i| {
                    let pos = i as f64 * (ms - 1) as f64 / (mt - 1) as f64;
                    let lo = (pos.floor() as usize).min(ms - 2);
                    (lo, pos - lo as f64)
                })
                .collect()
        })
        .collect();
    let src_strides = strides(src.shape());
    let mut out = Vec::with_capacity(target.len());
    let mut idx = vec![0usize; d];
    for flat in 0..target.len() {
        let mut rem = flat;
        for axis in (0..d).rev() {
            idx[axis] = rem % target.shape()[axis];
            rem /= target.shape()[axis];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut offset = 0;
            for axis in 0..d {
                let (lo, t) = stencils[axis][idx[axis]];
                let upper = (corner >> axis) & 1 == 1;
                weight *= if upper { t } else { 1.0 - t };
                offset += (lo + usize::from(upper)) * src_strides[axis];
            }
            if weight != 0.0 {
                acc += weight * a.values[offset];
            }
        }
        out.push(acc);
    }
    Ok(GridField::from_raw(target.clone(), out))
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        s[axis] = s[axis + 1] * shape[axis + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinsin(m: usize) -> GridField {
        let d = Domain::square(m).unwrap();
        GridField::from_fn(&d, |x| (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    #[test]
    fn constant_one_integrates_to_area() {
        for m in [4, 7, 33] {
            let d = Domain::square(m).unwrap();
            let one = GridField::constant(&d, 1.0);
            assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-12);
            assert!((norm_l2(&GridField::constant(&d, 2.0)) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_product_with_zero() {
        let a = sinsin(16);
        let z = GridField::zeros(a.domain());
        assert_eq!(inner_product(&a, &z).unwrap(), 0.0);
        assert_eq!(norm_l2(&z), 0.0);
    }

    #[test]
    fn sine_product_matches_analytic_integral() {
        // ∫∫ sin²(πx) sin²(πy) = 1/4
        let a = sinsin(64);
        assert!((inner_product(&a, &a).unwrap() - 0.25).abs() < 1e-3);
        assert!((norm_l2(&a) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn space_time_weights_sum_to_volume() {
        let d = Domain::space_time(5, 7).unwrap();
        let total: f64 = d.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_error_cases() {
        let u = sinsin(12);
        assert_eq!(relative_error(&u, &u, 1e-8).unwrap(), 0.0);
        let z = GridField::zeros(u.domain());
        assert!((relative_error(&z, &u, 1e-8).unwrap() - 1.0).abs() < 1e-14);
        let small = GridField::constant(u.domain(), 1e-4);
        assert!((relative_error(&small, &z, 1e-8).unwrap() - 1e4).abs() < 1e-6);
    }

    #[test]
    fn mismatched_domains_are_rejected() {
        let a = sinsin(8);
        let b = sinsin(9);
        assert!(matches!(inner_product(&a, &b), Err(Error::DomainMismatch(_))));
        assert!(relative_error(&a, &b, 1e-8).is_err());
    }

    #[test]
    fn resolution_floor_enforced() {
        assert!(Domain::square(3).is_err());
        assert!(Domain::space_time(8, 2).is_err());
    }

    #[test]
    fn resample_reproduces_constants_and_linears() {
        let d32 = Domain::square(32).unwrap();
        let d64 = Domain::square(64).unwrap();
        let c = GridField::constant(&d32, 3.5);
        let r = resample(&c, &d64).unwrap();
        assert!(r.values().iter().all(|v| (v - 3.5).abs() < 1e-14));
        let lin = GridField::from_fn(&d32, |x| x[0]);
        let r = resample(&lin, &d64).unwrap();
        let direct = GridField::from_fn(&d64, |x| x[0]);
        assert!(r.sub(&direct).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn resample_smooth_field_close_to_direct_sampling() {
        let r = resample(&sinsin(64), &Domain::square(128).unwrap()).unwrap();
        assert!(r.sub(&sinsin(128)).unwrap().max_abs() <= 1e-2);
    }

    #[test]
    fn resample_rejects_other_boxes() {
        let a = sinsin(8);
        let d = Domain::new(vec![8, 8], vec![2.0, 1.0], false).unwrap();
        assert!(resample(&a, &d).is_err());
    }
}
