//! Sine, cosine and truncated Fourier transforms on uniform grids.
//!
//! Every transform is a separable product of dense per-axis matrices. The
//! matrices are built once per size and cached. Resolutions in this
//! project stay below a few hundred points per axis, where the dense
//! product is cheap and exact to rounding.
//!
//! Conventions: forward transforms are plain sums, inverses carry the
//! `1/n` factors.
//!
//! * Sine (DST-I) acts on the interior of a vertex grid with `m` points:
//!   basis `sin(jπi/(m−1))`, `j = 1..m−2`. These are the eigenvectors of
//!   the Dirichlet 5-point Laplacian.
//! * Cosine (DCT-I) acts on all `m` points with end weights ½:
//!   basis `cos(jπi/(m−1))`, `j = 0..m−1`, the Neumann eigenvectors.
//! * Periodic transforms treat the grid as a torus of `n` points and keep
//!   the modes `|k_i| ≤ k_max`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{AddAssign, Mul};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{Domain, GridField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralKind {
    Sine,
    Cosine,
    PeriodicFull,
    PeriodicTruncated,
}

/// Transform coefficients. For periodic kinds the index along each axis is
/// `k + k_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCoeffs {
    pub kind: SpectralKind,
    pub shape: Vec<usize>,
    pub k_max: usize,
    pub values: Vec<Complex64>,
}

impl SpectralCoeffs {
    /// Coefficient at the periodic wavenumber `k` (one entry per axis).
    pub fn at_wavenumber(&self, k: &[i64]) -> Complex64 {
        let km = self.k_max as i64;
        let mut flat = 0usize;
        for (axis, &ki) in k.iter().enumerate() {
            flat = flat * self.shape[axis] + (ki + km) as usize;
        }
        self.values[flat]
    }
}

/// `out[o, r, i] = Σ_c mat[r, c] · input[o, c, i]` along `axis`.
pub(crate) fn along_axis<A, B, C>(
    input: &[A],
    shape: &[usize],
    axis: usize,
    mat: &[B],
    rows: usize,
) -> Vec<C>
where
    A: Copy,
    B: Copy + Mul<A, Output = C>,
    C: Copy + Default + AddAssign,
{
    let n = shape[axis];
    debug_assert_eq!(mat.len(), rows * n);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![C::default(); outer * rows * inner];
    for o in 0..outer {
        let src = &input[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        if inner == 1 {
            for (r, d) in dst.iter_mut().enumerate() {
                let row = &mat[r * n..(r + 1) * n];
                let mut acc = C::default();
                for (&m, &x) in row.iter().zip(src) {
                    acc += m * x;
                }
                *d = acc;
            }
        } else {
            for r in 0..rows {
                let d = &mut dst[r * inner..(r + 1) * inner];
                for c in 0..n {
                    let m = mat[r * n + c];
                    let s = &src[c * inner..(c + 1) * inner];
                    for (di, &si) in d.iter_mut().zip(s) {
                        *di += m * si;
                    }
                }
            }
        }
    }
    out
}

type Cache<K, V> = OnceLock<Mutex<HashMap<K, Arc<V>>>>;

fn cached<K: std::hash::Hash + Eq + Clone, V>(
    cache: &'static Cache<K, V>,
    key: K,
    build: impl FnOnce() -> V,
) -> Arc<V> {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = map.lock().unwrap().get(&key) {
        return v.clone();
    }
    let v = Arc::new(build());
    map.lock().unwrap().entry(key).or_insert(v).clone()
}

/// `(m−2)×(m−2)` matrix `sin(jπi/(m−1))`; symmetric, its own inverse up to `2/(m−1)`.
pub(crate) fn sine_matrix(m: usize) -> Arc<Vec<f64>> {
    static CACHE: Cache<usize, Vec<f64>> = OnceLock::new();
    cached(&CACHE, m, || {
        let n = m - 2;
        let big = (m - 1) as f64;
        let mut s = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                s[j * n + i] = (PI * ((j + 1) * (i + 1)) as f64 / big).sin();
            }
        }
        s
    })
}

/// Forward DCT-I matrix `c_i cos(jπi/(m−1))` with `c_i = ½` at the ends.
pub(crate) fn cosine_matrix(m: usize) -> Arc<Vec<f64>> {
    static CACHE: Cache<usize, Vec<f64>> = OnceLock::new();
    cached(&CACHE, m, || {
        let big = (m - 1) as f64;
        let mut c = vec![0.0; m * m];
        for j in 0..m {
            for i in 0..m {
                let end = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                c[j * m + i] = end * (PI * ((j * i) % (2 * (m - 1))) as f64 / big).cos();
            }
        }
        c
    })
}

/// Inverse DCT-I matrix: `x_i = (2/(m−1)) Σ_j c_j X_j cos(jπi/(m−1))`.
pub(crate) fn inverse_cosine_matrix(m: usize) -> Arc<Vec<f64>> {
    static CACHE: Cache<usize, Vec<f64>> = OnceLock::new();
    cached(&CACHE, m, || {
        let big = (m - 1) as f64;
        let mut c = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let end = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
                c[i * m + j] = 2.0 / big * end * (PI * ((j * i) % (2 * (m - 1))) as f64 / big).cos();
            }
        }
        c
    })
}

/// Applies the sine transform along the listed axes of an interior block.
pub(crate) fn sine_along(values: &[f64], shape: &[usize], axes: &[usize], inverse: bool) -> Vec<f64> {
    let mut data = values.to_vec();
    for &axis in axes {
        let n = shape[axis];
        let m = n + 2;
        let s = sine_matrix(m);
        data = along_axis(&data, shape, axis, &s, n);
        if inverse {
            let scale = 2.0 / (m - 1) as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }
    data
}

pub(crate) fn cosine_along(values: &[f64], shape: &[usize], axes: &[usize], inverse: bool) -> Vec<f64> {
    let mut data = values.to_vec();
    for &axis in axes {
        let m = shape[axis];
        let mat = if inverse {
            inverse_cosine_matrix(m)
        } else {
            cosine_matrix(m)
        };
        data = along_axis(&data, shape, axis, &mat, m);
    }
    data
}

/// Copies the interior block (all indices `1..m−1` on the listed axes).
pub(crate) fn interior(values: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut inner_shape = shape.to_vec();
    for &a in axes {
        inner_shape[a] -= 2;
    }
    let mut out = Vec::with_capacity(inner_shape.iter().product());
    let strides = crate::field::strides(shape);
    let total: usize = inner_shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        let mut rem = flat;
        for axis in (0..shape.len()).rev() {
            idx[axis] = rem % inner_shape[axis];
            rem /= inner_shape[axis];
        }
        let offset: usize = (0..shape.len())
            .map(|a| (idx[a] + usize::from(axes.contains(&a))) * strides[a])
            .sum();
        out.push(values[offset]);
    }
    (out, inner_shape)
}

/// Inverse of [`interior`]: embeds the block and leaves the rim at zero.
pub(crate) fn embed_interior(block: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let mut inner_shape = shape.to_vec();
    for &a in axes {
        inner_shape[a] -= 2;
    }
    let strides = crate::field::strides(shape);
    let mut out = vec![0.0; shape.iter().product()];
    let mut idx = vec![0usize; shape.len()];
    for (flat, &v) in block.iter().enumerate() {
        let mut rem = flat;
        for axis in (0..shape.len()).rev() {
            idx[axis] = rem % inner_shape[axis];
            rem /= inner_shape[axis];
        }
        let offset: usize = (0..shape.len())
            .map(|a| (idx[a] + usize::from(axes.contains(&a))) * strides[a])
            .sum();
        out[offset] = v;
    }
    out
}

fn real_coeffs(kind: SpectralKind, shape: Vec<usize>, values: Vec<f64>) -> SpectralCoeffs {
    SpectralCoeffs {
        kind,
        shape,
        k_max: 0,
        values: values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
    }
}

/// Sine coefficients of the interior values over every axis.
pub fn dst(a: &GridField) -> SpectralCoeffs {
    let shape = a.domain().shape();
    let axes: Vec<usize> = (0..shape.len()).collect();
    let (block, inner) = interior(a.values(), shape, &axes);
    real_coeffs(SpectralKind::Sine, inner.clone(), sine_along(&block, &inner, &axes, false))
}

/// Field with the given sine coefficients; the boundary is zero.
pub fn idst(c: &SpectralCoeffs, domain: &Domain) -> Result<GridField> {
    expect_kind(c, SpectralKind::Sine)?;
    let axes: Vec<usize> = (0..domain.ndims()).collect();
    let want: Vec<usize> = domain.shape().iter().map(|m| m - 2).collect();
    if c.shape != want {
        return Err(Error::DomainMismatch(format!("coefficients {:?} for interior {:?}", c.shape, want)));
    }
    let re: Vec<f64> = c.values.iter().map(|z| z.re).collect();
    let block = sine_along(&re, &c.shape, &axes, true);
    Ok(GridField::from_raw(domain.clone(), embed_interior(&block, domain.shape(), &axes)))
}

pub fn dct(a: &GridField) -> SpectralCoeffs {
    let shape = a.domain().shape().to_vec();
    let axes: Vec<usize> = (0..shape.len()).collect();
    let v = cosine_along(a.values(), &shape, &axes, false);
    real_coeffs(SpectralKind::Cosine, shape, v)
}

pub fn idct(c: &SpectralCoeffs, domain: &Domain) -> Result<GridField> {
    expect_kind(c, SpectralKind::Cosine)?;
    if c.shape != domain.shape() {
        return Err(Error::DomainMismatch(format!("coefficients {:?} for grid {:?}", c.shape, domain.shape())));
    }
    let axes: Vec<usize> = (0..domain.ndims()).collect();
    let re: Vec<f64> = c.values.iter().map(|z| z.re).collect();
    Ok(GridField::from_raw(domain.clone(), cosine_along(&re, &c.shape, &axes, true)))
}

fn expect_kind(c: &SpectralCoeffs, kind: SpectralKind) -> Result<()> {
    if c.kind == kind {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("expected {kind:?} coefficients, got {:?}", c.kind)))
    }
}

/// Periodic DFT matrices for one axis of length `n`, keeping `|k| ≤ k_max`.
struct AxisDft {
    /// `(2k+1) × n`, entries `e^{−2πikx/n}`.
    fwd: Vec<Complex64>,
    /// `n × (2k+1)`, entries `e^{+2πikx/n}`.
    inv: Vec<Complex64>,
    /// Split copies of `fwd` and `inv`, for GEMM.
    fwd_split: SplitMat,
    inv_split: SplitMat,
    /// `(k+1) × n`, non-negative wavenumbers only.
    fwd_half_split: SplitMat,
    /// `n × (k+1)`.
    inv_half_split: SplitMat,
}

/// Row-major complex matrix stored as separate real and imaginary parts.
struct SplitMat {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl SplitMat {
    fn new(m: &[Complex64], rows: usize) -> Self {
        Self {
            rows,
            cols: m.len() / rows,
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
    }
}

/// Strided view of a real or complex matrix; `im` is absent for real data.
#[derive(Clone, Copy)]
struct View {
    re: *const f64,
    im: Option<*const f64>,
    rs: isize,
    cs: isize,
}

/// Output view; without `im` only the real part of the product is stored.
#[derive(Clone, Copy)]
struct ViewMut {
    re: *mut f64,
    im: Option<*mut f64>,
    rs: isize,
    cs: isize,
}

/// `c = a·b` for `m×k` by `k×n` complex matrices, split into real GEMMs.
///
/// # Safety
/// Every view must address valid memory for its shape, and `c` must not
/// alias `a` or `b`.
unsafe fn cgemm(m: usize, k: usize, n: usize, a: View, b: View, c: ViewMut) {
    let mm = |x: *const f64, rx, cx, y: *const f64, ry, cy, alpha, beta, z: *mut f64| {
        matrixmultiply::dgemm(m, k, n, alpha, x, rx, cx, y, ry, cy, beta, z, c.rs, c.cs)
    };
    mm(a.re, a.rs, a.cs, b.re, b.rs, b.cs, 1.0, 0.0, c.re);
    if let (Some(ai), Some(bi)) = (a.im, b.im) {
        mm(ai, a.rs, a.cs, bi, b.rs, b.cs, -1.0, 1.0, c.re);
    }
    if let Some(ci) = c.im {
        let mut beta = 0.0;
        if let Some(bi) = b.im {
            mm(a.re, a.rs, a.cs, bi, b.rs, b.cs, 1.0, beta, ci);
            beta = 1.0;
        }
        if let Some(ai) = a.im {
            mm(ai, a.rs, a.cs, b.re, b.rs, b.cs, 1.0, beta, ci);
        }
    }
}

/// GEMM form of [`along_axis`] with the matrix `mat` (`rows × shape[axis]`).
/// `src` and `dst` hold interleaved complex data when complex (stride 2).
fn axis_gemm(src: View, shape: &[usize], axis: usize, mat: &SplitMat, dst: ViewMut) {
    let n = shape[axis];
    debug_assert_eq!(mat.cols, n);
    let rows = mat.rows;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (sx, so) = (src.cs, dst.cs);
    let m = View { re: mat.re.as_ptr(), im: Some(mat.im.as_ptr()), rs: n as isize, cs: 1 };
    // SAFETY: offsets stay inside the `outer·n·inner` source and
    // `outer·rows·inner` destination blocks the callers allocate.
    unsafe {
        if inner == 1 {
            let x = View { rs: n as isize * sx, ..src };
            let mt = View { rs: 1, cs: n as isize, ..m };
            let out = ViewMut { rs: rows as isize * so, ..dst };
            cgemm(outer, n, rows, x, mt, out);
        } else {
            for o in 0..outer {
                let (oi, oo) = ((o * n * inner) as isize * sx, (o * rows * inner) as isize * so);
                let x = View {
                    re: src.re.offset(oi),
                    im: src.im.map(|p| p.offset(oi)),
                    rs: inner as isize * sx,
                    cs: sx,
                };
                let out = ViewMut {
                    re: dst.re.offset(oo),
                    im: dst.im.map(|p| p.offset(oo)),
                    rs: inner as isize * so,
                    cs: so,
                };
                cgemm(rows, n, inner, m, x, out);
            }
        }
    }
}

fn real_view(v: &[f64]) -> View {
    View { re: v.as_ptr(), im: None, rs: 0, cs: 1 }
}

fn complex_view(v: &[Complex64]) -> View {
    let p = v.as_ptr() as *const f64;
    // SAFETY: `Complex64` is `repr(C)` with `re` then `im`.
    View { re: p, im: Some(unsafe { p.add(1) }), rs: 0, cs: 2 }
}

fn complex_view_mut(v: &mut [Complex64]) -> ViewMut {
    let p = v.as_mut_ptr() as *mut f64;
    // SAFETY: as in `complex_view`.
    ViewMut { re: p, im: Some(unsafe { p.add(1) }), rs: 0, cs: 2 }
}

fn twiddle(k: i64, x: usize, n: usize, sign: f64) -> Complex64 {
    let r = (k * x as i64).rem_euclid(n as i64) as f64;
    Complex64::from_polar(1.0, sign * 2.0 * PI * r / n as f64)
}

fn axis_dft(n: usize, k_max: usize) -> Arc<AxisDft> {
    static CACHE: Cache<(usize, usize), AxisDft> = OnceLock::new();
    cached(&CACHE, (n, k_max), || {
        let km = k_max as i64;
        let full = 2 * k_max + 1;
        let mut fwd = Vec::with_capacity(full * n);
        for k in -km..=km {
            fwd.extend((0..n).map(|x| twiddle(k, x, n, -1.0)));
        }
        let mut inv = Vec::with_capacity(full * n);
        for x in 0..n {
            inv.extend((-km..=km).map(|k| twiddle(k, x, n, 1.0)));
        }
        let mut fwd_half = Vec::with_capacity((k_max + 1) * n);
        for k in 0..=km {
            fwd_half.extend((0..n).map(|x| twiddle(k, x, n, -1.0)));
        }
        let mut inv_half = Vec::with_capacity((k_max + 1) * n);
        for x in 0..n {
            inv_half.extend((0..=km).map(|k| twiddle(k, x, n, 1.0)));
        }
        AxisDft {
            fwd_split: SplitMat::new(&fwd, full),
            inv_split: SplitMat::new(&inv, n),
            fwd_half_split: SplitMat::new(&fwd_half, k_max + 1),
            inv_half_split: SplitMat::new(&inv_half, n),
            fwd,
            inv,
        }
    })
}

fn check_k_max(shape: &[usize], k_max: usize) -> Result<()> {
    if let Some(&n) = shape.iter().find(|&&n| 2 * k_max >= n) {
        return Err(Error::InvalidArgument(format!(
            "k_max {k_max} needs more than {n} points per axis"
        )));
    }
    Ok(())
}

/// Periodic DFT keeping the modes with every `|k_i| ≤ k_max`.
pub fn fft_trunc(a: &GridField, k_max: usize) -> Result<SpectralCoeffs> {
    let shape = a.domain().shape().to_vec();
    check_k_max(&shape, k_max)?;
    let full = 2 * k_max + 1;
    let mut data: Vec<Complex64> = a.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut cur = shape.clone();
    for axis in 0..shape.len() {
        let t = axis_dft(shape[axis], k_max);
        data = along_axis(&data, &cur, axis, &t.fwd, full);
        cur[axis] = full;
    }
    let kind = if shape.iter().all(|&n| n == full) {
        SpectralKind::PeriodicFull
    } else {
        SpectralKind::PeriodicTruncated
    };
    Ok(SpectralCoeffs {
        kind,
        shape: cur,
        k_max,
        values: data,
    })
}

/// `Re Σ_k c(k) e^{2πik·x/n}` over the retained box, without normalisation.
fn periodic_synthesis(c: &SpectralCoeffs, target: &Domain) -> Result<Vec<f64>> {
    if !matches!(c.kind, SpectralKind::PeriodicFull | SpectralKind::PeriodicTruncated) {
        return Err(Error::InvalidArgument(format!("expected periodic coefficients, got {:?}", c.kind)));
    }
    let shape = target.shape();
    check_k_max(shape, c.k_max)?;
    if c.shape.len() != shape.len() {
        return Err(Error::DomainMismatch("coefficient rank differs from target".into()));
    }
    let mut data = c.values.clone();
    let mut cur = c.shape.clone();
    for axis in 0..shape.len() {
        let t = axis_dft(shape[axis], c.k_max);
        data = along_axis(&data, &cur, axis, &t.inv, shape[axis]);
        cur[axis] = shape[axis];
    }
    Ok(data.into_iter().map(|z| z.re).collect())
}

/// Inverse of [`fft_trunc`]: real part of the normalised synthesis.
pub fn ifft_trunc(c: &SpectralCoeffs, target: &Domain) -> Result<GridField> {
    let norm = 1.0 / target.len() as f64;
    let v = periodic_synthesis(c, target)?;
    Ok(GridField::from_raw(target.clone(), v.into_iter().map(|x| x * norm).collect()))
}

/// Adjoint of [`fft_trunc`] for the real inner product on the grid and
/// `Re⟨·,·⟩` on coefficients; equals `n^d · ifft_trunc`.
pub fn fft_trunc_adjoint(c: &SpectralCoeffs, target: &Domain) -> Result<GridField> {
    Ok(GridField::from_raw(target.clone(), periodic_synthesis(c, target)?))
}

/// Zero-extends on the high side of every axis up to `target_shape`.
pub fn pad_extend(a: &GridField, target_shape: &[usize]) -> Result<GridField> {
    let src = a.domain();
    if target_shape.len() != src.ndims() || target_shape.iter().zip(src.shape()).any(|(t, s)| t < s) {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {:?} to {:?}",
            src.shape(),
            target_shape
        )));
    }
    let extent: Vec<f64> = (0..src.ndims())
        .map(|ax| src.spacing(ax) * (target_shape[ax] - 1) as f64)
        .collect();
    let domain = Domain::new(target_shape.to_vec(), extent, src.has_time_axis())?;
    let values = pad_values(a.values(), src.shape(), target_shape);
    Ok(GridField::from_raw(domain, values))
}

pub fn crop(a: &GridField, orig: &Domain) -> Result<GridField> {
    let src = a.domain();
    if orig.ndims() != src.ndims() || orig.shape().iter().zip(src.shape()).any(|(o, s)| o > s) {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {:?} to {:?}",
            src.shape(),
            orig.shape()
        )));
    }
    Ok(GridField::from_raw(orig.clone(), crop_values(a.values(), src.shape(), orig.shape())))
}

/// Raw zero-padding of a row-major block.
pub fn pad_values(values: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; target.iter().product()];
    copy_block(values, shape, &mut out, target, shape);
    out
}

/// Raw leading-corner crop of a row-major block.
pub fn crop_values(values: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; target.iter().product()];
    copy_block(values, shape, &mut out, target, target);
    out
}

/// Copies the leading `block` corner between two row-major arrays.
fn copy_block(src: &[f64], src_shape: &[usize], dst: &mut [f64], dst_shape: &[usize], block: &[usize]) {
    let d = block.len();
    let last = block[d - 1];
    let rows: usize = block[..d - 1].iter().product();
    let ss = crate::field::strides(src_shape);
    let ds = crate::field::strides(dst_shape);
    let mut idx = vec![0usize; d.saturating_sub(1)];
    for r in 0..rows {
        let mut rem = r;
        for axis in (0..d - 1).rev() {
            idx[axis] = rem % block[axis];
            rem /= block[axis];
        }
        let so: usize = idx.iter().zip(&ss).map(|(i, s)| i * s).sum();
        let doff: usize = idx.iter().zip(&ds).map(|(i, s)| i * s).sum();
        dst[doff..doff + last].copy_from_slice(&src[so..so + last]);
    }
}

/// Truncated real DFT on a half box of wavenumbers, used by the learned
/// spectral layers.
///
/// The retained set is `|k_i| ≤ k_max` on every axis except the last, where
/// `0 ≤ k ≤ k_max`. Synthesis doubles the modes with positive last
/// wavenumber so that a per-mode complex map `M` realises the real operator
/// `v ↦ Re F⁻¹(M̃ F v)` with `M̃` the Hermitian extension of `M`.
pub struct HalfDft {
    shape: Vec<usize>,
    k_max: usize,
    axes: Vec<Arc<AxisDft>>,
    /// Per last-axis wavenumber: `w_k / n^d` with `w_0 = 1`, `w_k = 2`.
    last_weights: Vec<f64>,
}

impl HalfDft {
    pub fn new(shape: &[usize], k_max: usize) -> Result<Arc<Self>> {
        check_k_max(shape, k_max)?;
        static CACHE: Cache<(Vec<usize>, usize), HalfDft> = OnceLock::new();
        Ok(cached(&CACHE, (shape.to_vec(), k_max), || {
            let total: usize = shape.iter().product();
            HalfDft {
                shape: shape.to_vec(),
                k_max,
                axes: shape.iter().map(|&n| axis_dft(n, k_max)).collect(),
                last_weights: (0..=k_max)
                    .map(|k| if k == 0 { 1.0 } else { 2.0 } / total as f64)
                    .collect(),
            }
        }))
    }

    pub fn grid_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn mode_shape(&self) -> Vec<usize> {
        let d = self.shape.len();
        (0..d)
            .map(|a| if a + 1 == d { self.k_max + 1 } else { 2 * self.k_max + 1 })
            .collect()
    }

    pub fn num_modes(&self) -> usize {
        self.mode_shape().iter().product()
    }

    /// `V̂(k) = Σ_x v(x) e^{−2πik·x/n}` on the half box.
    pub fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        self.forward_batch(v, 1)
    }

    /// [`HalfDft::forward`] of `count` fields stored back to back.
    pub fn forward_batch(&self, v: &[f64], count: usize) -> Vec<Complex64> {
        assert_eq!(v.len(), count * self.grid_len(), "HalfDft::forward_batch length");
        let d = self.shape.len();
        let mut cur = Vec::with_capacity(d + 1);
        cur.push(count);
        cur.extend_from_slice(&self.shape);
        cur[d] = self.k_max + 1;
        let mut data = vec![Complex64::default(); cur.iter().product()];
        cur[d] = self.shape[d - 1];
        axis_gemm(real_view(v), &cur, d, &self.axes[d - 1].fwd_half_split, complex_view_mut(&mut data));
        cur[d] = self.k_max + 1;
        for axis in 1..d {
            let t = &self.axes[axis - 1].fwd_split;
            let mut next_shape = cur.clone();
            next_shape[axis] = t.rows;
            let mut next = vec![Complex64::default(); next_shape.iter().product()];
            axis_gemm(complex_view(&data), &cur, axis, t, complex_view_mut(&mut next));
            data = next;
            cur = next_shape;
        }
        data
    }

    fn scale_last(&self, c: &mut [Complex64]) {
        let k1 = self.k_max + 1;
        for (i, z) in c.iter_mut().enumerate() {
            *z *= self.last_weights[i % k1];
        }
    }

    /// `Re Σ_k c(k) e^{2πik·x/n}` without weights.
    pub fn forward_adjoint(&self, c: &[Complex64]) -> Vec<f64> {
        self.forward_adjoint_batch(c, 1)
    }

    /// [`HalfDft::forward_adjoint`] of `count` coefficient blocks.
    pub fn forward_adjoint_batch(&self, c: &[Complex64], count: usize) -> Vec<f64> {
        assert_eq!(c.len(), count * self.num_modes(), "HalfDft::forward_adjoint_batch length");
        let d = self.shape.len();
        let mut cur = vec![count];
        cur.extend(self.mode_shape());
        let mut owned;
        let mut data = c;
        for axis in 1..d {
            let t = &self.axes[axis - 1].inv_split;
            let mut next_shape = cur.clone();
            next_shape[axis] = t.rows;
            let mut next = vec![Complex64::default(); next_shape.iter().product()];
            axis_gemm(complex_view(data), &cur, axis, t, complex_view_mut(&mut next));
            owned = next;
            data = &owned;
            cur = next_shape;
        }
        let t = &self.axes[d - 1].inv_half_split;
        let mut out = vec![0.0; count * self.grid_len()];
        let dst = ViewMut { re: out.as_mut_ptr(), im: None, rs: 0, cs: 1 };
        axis_gemm(complex_view(data), &cur, d, t, dst);
        out
    }

    /// Real field `(1/n^d) Σ_k w_k Re(c(k) e^{2πik·x/n})`.
    pub fn synth(&self, c: &[Complex64]) -> Vec<f64> {
        self.synth_batch(c, 1)
    }

    pub fn synth_batch(&self, c: &[Complex64], count: usize) -> Vec<f64> {
        let mut scaled = c.to_vec();
        self.scale_last(&mut scaled);
        self.forward_adjoint_batch(&scaled, count)
    }

    /// Adjoint of [`HalfDft::synth`]: `(w_k/n^d) Σ_x g(x) e^{−2πik·x/n}`.
    pub fn synth_adjoint(&self, g: &[f64]) -> Vec<Complex64> {
        self.synth_adjoint_batch(g, 1)
    }

    pub fn synth_adjoint_batch(&self, g: &[f64], count: usize) -> Vec<Complex64> {
        let mut c = self.forward_batch(g, count);
        self.scale_last(&mut c);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(d: &Domain, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::from_fn(d, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_interior(d: &Domain, seed: u64) -> GridField {
        let mut f = random_field(d, seed);
        for i in 0..d.len() {
            if d.on_spatial_boundary(i) {
                f.values_mut()[i] = 0.0;
            }
        }
        f
    }

    #[test]
    fn sine_eigenvector_has_single_coefficient() {
        let d = Domain::square(17).unwrap();
        let a = GridField::from_fn(&d, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
        let c = dst(&a);
        let n = 15;
        for (i, z) in c.values.iter().enumerate() {
            if i == 0 {
                assert!(z.re.abs() > 1.0);
            } else {
                assert!(z.norm() < 1e-12, "mode ({}, {}) = {}", i / n, i % n, z);
            }
        }
    }

    #[test]
    fn sine_and_cosine_round_trips() {
        for m in [8, 16, 32] {
            let d = Domain::square(m).unwrap();
            let a = random_interior(&d, m as u64);
            let back = idst(&dst(&a), &d).unwrap();
            assert!(back.sub(&a).unwrap().max_abs() < 1e-12);
            let b = random_field(&d, 7 + m as u64);
            let back = idct(&dct(&b), &d).unwrap();
            assert!(back.sub(&b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn sine_parseval() {
        // With this normalisation Σ a² = (2/(m−1))^d Σ c².
        let m = 16;
        let d = Domain::square(m).unwrap();
        let a = random_interior(&d, 3);
        let c = dst(&a);
        let lhs: f64 = a.values().iter().map(|v| v * v).sum();
        let rhs: f64 = c.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * (2.0 / (m - 1) as f64).powi(2);
        assert!((lhs - rhs).abs() < 1e-10 * lhs);
    }

    #[test]
    fn cosine_basis_vectors() {
        let d = Domain::square(9).unwrap();
        let one = GridField::constant(&d, 1.0);
        let c = dct(&one);
        assert!(c.values.iter().skip(1).all(|z| z.norm() < 1e-12));
        let a = GridField::from_fn(&d, |x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let c = dct(&a);
        for (i, z) in c.values.iter().enumerate() {
            if i != 9 + 1 {
                assert!(z.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn three_dimensional_round_trip() {
        let d = Domain::space_time(8, 6).unwrap();
        let b = random_field(&d, 5);
        let back = idct(&dct(&b), &d).unwrap();
        assert!(back.sub(&b).unwrap().max_abs() < 1e-12);
    }

    fn periodic_domain(n: usize) -> Domain {
        Domain::square(n).unwrap()
    }

    #[test]
    fn single_cosine_mode() {
        let n = 15;
        let d = periodic_domain(n);
        let a = GridField::from_fn(&d, |x| {
            let i = (x[0] * (n - 1) as f64).round();
            (2.0 * PI * i / n as f64).cos()
        });
        let c = fft_trunc(&a, 3).unwrap();
        let nonzero = c.values.iter().filter(|z| z.norm() > 1e-9).count();
        assert_eq!(nonzero, 2);
        assert!((c.at_wavenumber(&[1, 0]) - c.at_wavenumber(&[-1, 0]).conj()).norm() < 1e-12);
        let back = ifft_trunc(&c, &d).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn truncation_removes_high_mode() {
        let n = 16;
        let d = periodic_domain(n);
        let a = GridField::from_fn(&d, |x| {
            let i = (x[0] * (n - 1) as f64).round();
            (2.0 * PI * 5.0 * i / n as f64).cos()
        });
        let back = ifft_trunc(&fft_trunc(&a, 4).unwrap(), &d).unwrap();
        assert!(back.max_abs() < 1e-12);
    }

    #[test]
    fn k_max_bound_is_enforced() {
        let d = periodic_domain(8);
        assert!(fft_trunc(&GridField::zeros(&d), 4).is_err());
        assert!(fft_trunc(&GridField::zeros(&d), 3).is_ok());
    }

    #[test]
    fn periodic_round_trip_and_hermitian_symmetry() {
        for n in [9, 17, 33] {
            let d = periodic_domain(n);
            let a = random_field(&d, n as u64);
            let c = fft_trunc(&a, (n - 1) / 2).unwrap();
            assert_eq!(c.kind, SpectralKind::PeriodicFull);
            let km = ((n - 1) / 2) as i64;
            for k0 in -km..=km {
                for k1 in -km..=km {
                    let z = c.at_wavenumber(&[k0, k1]);
                    let w = c.at_wavenumber(&[-k0, -k1]).conj();
                    assert!((z - w).norm() < 1e-12 * (n * n) as f64);
                }
            }
            let back = ifft_trunc(&c, &d).unwrap();
            assert!(back.sub(&a).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_adjoint_matches_dense_matrix() {
        let n = 8;
        let k = 2;
        let d = periodic_domain(n);
        // Dense matrix of the map v -> fft_trunc(v), built column by column.
        let mut cols = Vec::new();
        for j in 0..d.len() {
            let mut e = GridField::zeros(&d);
            e.values_mut()[j] = 1.0;
            cols.push(fft_trunc(&e, k).unwrap().values);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_field(&d, 12);
        let modes = (2 * k + 1) * (2 * k + 1);
        let w = SpectralCoeffs {
            kind: SpectralKind::PeriodicTruncated,
            shape: vec![2 * k + 1, 2 * k + 1],
            k_max: k,
            values: (0..modes)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        };
        let fv = fft_trunc(&v, k).unwrap();
        let lhs: f64 = fv.values.iter().zip(&w.values).map(|(a, b)| (a * b.conj()).re).sum();
        // Dense transpose applied to w.
        let dense: Vec<f64> = cols
            .iter()
            .map(|col| col.iter().zip(&w.values).map(|(a, b)| (a * b.conj()).re).sum())
            .collect();
        let adj = fft_trunc_adjoint(&w, &d).unwrap();
        let rhs: f64 = v.values().iter().zip(adj.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        for (x, y) in dense.iter().zip(adj.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pad_and_crop() {
        let d = Domain::square(64).unwrap();
        let a = random_field(&d, 1);
        let p = pad_extend(&a, &[72, 72]).unwrap();
        assert_eq!(crop(&p, &d).unwrap(), a);
        let ones = pad_extend(&GridField::constant(&d, 1.0), &[72, 72]).unwrap();
        for i in 0..72 {
            for j in 0..72 {
                let v = ones.values()[i * 72 + j];
                assert_eq!(v, if i < 64 && j < 64 { 1.0 } else { 0.0 });
            }
        }
        let z = pad_extend(&GridField::zeros(&d), &[72, 72]).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert!(pad_extend(&a, &[60, 72]).is_err());
    }

    #[test]
    fn half_dft_identity_map() {
        let shape = [9, 9];
        let h = HalfDft::new(&shape, 4).unwrap();
        let d = Domain::square(9).unwrap();
        let v = random_field(&d, 2);
        let back = h.synth(&h.forward(v.values()));
        for (a, b) in back.iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn half_dft_adjoint_pairs() {
        let shape = [10, 12];
        let h = HalfDft::new(&shape, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<Complex64> = (0..h.num_modes())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let fv = h.forward(&v);
        let lhs: f64 = fv.iter().zip(&c).map(|(a, b)| (a * b.conj()).re).sum();
        let rhs: f64 = v.iter().zip(h.forward_adjoint(&c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let sv = h.synth(&c);
        let lhs: f64 = sv.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = c.iter().zip(h.synth_adjoint(&v)).map(|(a, b)| (a * b.conj()).re).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn half_dft_batches_match_direct_sums() {
        let shape = [5, 6, 7];
        let (k, count) = (2, 3);
        let h = HalfDft::new(&shape, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..count * 210).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = h.forward_batch(&v, count);
        let ms = h.mode_shape();
        let ks = |i: usize, ax: usize| if ax == 2 { i as i64 } else { i as i64 - k as i64 };
        for b in 0..count {
            for (mi, z) in got[b * h.num_modes()..(b + 1) * h.num_modes()].iter().enumerate() {
                let kk = [ks(mi / (ms[1] * ms[2]), 0), ks(mi / ms[2] % ms[1], 1), ks(mi % ms[2], 2)];
                let mut want = Complex64::default();
                for (xi, &x) in v[b * 210..(b + 1) * 210].iter().enumerate() {
                    let xs = [xi / 42, xi / 7 % 6, xi % 7];
                    let phase: f64 = (0..3).map(|a| kk[a] as f64 * xs[a] as f64 / shape[a] as f64).sum();
                    want += Complex64::from_polar(x, -2.0 * PI * phase);
                }
                assert!((z - want).norm() < 1e-10, "batch {b} mode {mi}");
            }
        }
        let back = h.forward_adjoint_batch(&got, count);
        for b in 0..count {
            let one = h.forward_adjoint(&got[b * h.num_modes()..(b + 1) * h.num_modes()]);
            assert_eq!(&back[b * 210..(b + 1) * 210], &one[..]);
        }
    }
}
