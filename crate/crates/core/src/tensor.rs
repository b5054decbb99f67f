//! Dense complex tensors.
//!
//! Every tensor stores its entries in row-major order: the last axis varies
//! fastest. Reshapes never move data, they only reinterpret the shape.
//! Rank-2 tensors double as matrices with `shape = [rows, cols]`.

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

mod small;

/// Relative size below which a singular value counts as numerically zero.
pub const SINGULAR_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

/// Result of [`truncated_svd`]: `m ≈ left · diag(singular_values) · right`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub left_isometry: ComplexTensor,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `k × cols`, orthonormal rows.
    pub right_isometry: ComplexTensor,
    /// Sum of squares of the dropped singular values.
    pub discarded_weight: f64,
    /// Number of singular values above the numerical floor, before the bond
    /// limit was applied.
    pub numerical_rank: usize,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {len} entries but {} were given",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    /// Builds a tensor without validation; callers guarantee consistency.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<C64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![C64::new(0.0, 0.0); len])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Rank-2 tensor from row-major real entries.
    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        Self::new(
            vec![rows, cols],
            entries.iter().map(|&x| C64::new(x, 0.0)).collect(),
        )
    }

    /// Rank-1 tensor.
    pub fn vector(entries: Vec<C64>) -> Result<Self> {
        Self::new(vec![entries.len()], entries)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: C64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| {
            assert!(i < s, "index {i} out of range for extent {s}");
            acc * s + i
        })
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Dimension(format!(
                "{axes:?} is not a permutation of {rank} axes"
            )));
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let old_strides = strides(&self.shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| old_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            // odometer increment over the new shape
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self::from_parts(new_shape, out))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|x| x * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    fn require_matrix(&self, what: &str) -> Result<()> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "{what} expects a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> Result<Self> {
        self.require_matrix("adjoint")?;
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j].conj());
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.require_matrix("matmul")?;
        other.require_matrix("matmul")?;
        if self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} · {:?}",
                self.shape, other.shape
            )));
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        Ok(Self::from_parts(vec![n, m], gemm(&self.data, &other.data, n, k, m)))
    }

    /// Kronecker product of two matrices, `self` being the slow index.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        self.require_matrix("kron")?;
        other.require_matrix("kron")?;
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        let mut out = Self::zeros(&[ar * br, ac * bc]);
        let cols = ac * bc;
        for i in 0..ar {
            for j in 0..ac {
                let a = self.data[i * ac + j];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..br {
                    for l in 0..bc {
                        out.data[(i * br + k) * cols + j * bc + l] = a * other.data[k * bc + l];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `A·B − B·A`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    /// Distance of `self†·self` from the identity (max absolute entry).
    pub fn unitarity_defect(&self) -> Result<f64> {
        let p = self.adjoint()?.matmul(self)?;
        Ok(p.max_abs_diff(&Self::identity(p.rows())))
    }

    pub(crate) fn to_faer(&self) -> Mat<C64> {
        let c = self.shape[1];
        Mat::from_fn(self.shape[0], c, |i, j| self.data[i * c + j])
    }

    pub(crate) fn from_faer(m: MatRef<'_, C64>) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self::from_parts(vec![r, c], data)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_finite(data: &[C64]) -> Result<()> {
    if let Some(pos) = data.iter().position(|x| !(x.re.is_finite() && x.im.is_finite())) {
        return Err(Error::Numeric(format!("entry {pos} is {}", data[pos])));
    }
    Ok(())
}

/// Row-major `n×k` times `k×m`.
pub(crate) fn gemm(a: &[C64], b: &[C64], n: usize, k: usize, m: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// Contracts `a` with `b` over the listed `(axis_of_a, axis_of_b)` pairs.
///
/// The result carries the free axes of `a` (in order) followed by the free
/// axes of `b`.
pub fn contract(a: &ComplexTensor, b: &ComplexTensor, axis_pairs: &[(usize, usize)]) -> Result<ComplexTensor> {
    for &(ia, ib) in axis_pairs {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(Error::Dimension(format!(
                "axis pair ({ia}, {ib}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(Error::Dimension(format!(
                "axis {ia} of a has extent {} but axis {ib} of b has extent {}",
                a.shape[ia], b.shape[ib]
            )));
        }
    }
    let a_free: Vec<usize> = (0..a.rank()).filter(|i| !axis_pairs.iter().any(|p| p.0 == *i)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|i| !axis_pairs.iter().any(|p| p.1 == *i)).collect();
    let a_order: Vec<usize> = a_free.iter().copied().chain(axis_pairs.iter().map(|p| p.0)).collect();
    let b_order: Vec<usize> = axis_pairs.iter().map(|p| p.1).chain(b_free.iter().copied()).collect();
    let inner: usize = axis_pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = a_free.iter().map(|&i| a.shape[i]).product();
    let m: usize = b_free.iter().map(|&i| b.shape[i]).product();
    let ap = a.permute(&a_order)?;
    let bp = b.permute(&b_order)?;
    let data = gemm(&ap.data, &bp.data, n, inner, m);
    let mut shape: Vec<usize> = a_free.iter().map(|&i| a.shape[i]).collect();
    shape.extend(b_free.iter().map(|&i| b.shape[i]));
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(ComplexTensor::from_parts(shape, data))
}

/// Singular value decomposition keeping at most `max_bond` values, and only
/// those above `cutoff · σ_max`. At least one value is always kept.
pub fn truncated_svd(m: &ComplexTensor, cutoff: f64, max_bond: usize) -> Result<SvdResult> {
    m.require_matrix("truncated_svd")?;
    if !(cutoff >= 0.0) {
        return Err(Error::Validation(format!("cutoff must be ≥ 0, got {cutoff}")));
    }
    if max_bond == 0 {
        return Err(Error::Validation("max_bond must be ≥ 1".into()));
    }
    if !m.is_finite() {
        return Err(Error::Numeric("truncated_svd input contains NaN or Inf".into()));
    }
    let (rows, cols) = (m.rows(), m.cols());
    let total = m.norm_sqr();
    if total == 0.0 {
        let mut left = ComplexTensor::zeros(&[rows, 1]);
        left.data[0] = C64::new(1.0, 0.0);
        let mut right = ComplexTensor::zeros(&[1, cols]);
        right.data[0] = C64::new(1.0, 0.0);
        return Ok(SvdResult {
            left_isometry: left,
            singular_values: vec![0.0],
            right_isometry: right,
            discarded_weight: 0.0,
            numerical_rank: 0,
        });
    }

    let (u, sv, vh) = thin_svd_parts(m)?;
    let n = sv.len();

    let smax = sv[0];
    let floor = cutoff.max(SINGULAR_FLOOR) * smax;
    let numerical_rank = sv.iter().filter(|&&x| x > SINGULAR_FLOOR * smax).count();
    let keep = sv.iter().filter(|&&x| x > floor).count().clamp(1, max_bond);

    let kept: Vec<f64> = sv[..keep].to_vec();
    let discarded_weight: f64 = sv[keep..].iter().map(|x| x * x).sum();

    let mut left = Vec::with_capacity(rows * keep);
    for r in 0..rows {
        left.extend_from_slice(&u[r * n..r * n + keep]);
    }
    let right = vh[..keep * cols].to_vec();
    Ok(SvdResult {
        left_isometry: ComplexTensor::from_parts(vec![rows, keep], left),
        singular_values: kept,
        right_isometry: ComplexTensor::from_parts(vec![keep, cols], right),
        discarded_weight,
        numerical_rank,
    })
}

/// `exp(m)` for a square matrix: scaling and squaring around a Taylor
/// series truncated at double precision.
/// Full thin SVD as row-major `(u, σ, v†)`, singular values descending.
fn thin_svd_parts(m: &ComplexTensor) -> Result<(Vec<C64>, Vec<f64>, Vec<C64>)> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows.min(cols) <= small::SMALL_SVD_DIM {
        let t = small::jacobi_svd(&m.data, rows, cols);
        return Ok((t.u, t.s, t.vh));
    }
    let svd = m
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    let n = sv.nrows();
    let mut uu = Vec::with_capacity(rows * n);
    for r in 0..rows {
        for i in 0..n {
            uu.push(u[(r, i)]);
        }
    }
    let mut vh = Vec::with_capacity(n * cols);
    for i in 0..n {
        for c in 0..cols {
            vh.push(v[(c, i)].conj());
        }
    }
    let s: Vec<f64> = (0..n).map(|i| sv[i].re).collect();
    if !all_finite(&uu) || !all_finite(&vh) || s.iter().any(|x| !x.is_finite()) {
        log::warn!("general SVD returned non-finite factors for a {rows}x{cols} block; using Jacobi");
        let t = small::jacobi_svd(&m.data, rows, cols);
        return Ok((t.u, t.s, t.vh));
    }
    Ok((uu, s, vh))
}

fn all_finite(xs: &[C64]) -> bool {
    xs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Thin QR of a row-major `rows × cols` matrix: `(Q, R)` with `Q` of shape
/// `rows × k` and `R` of shape `k × cols`, `k = min(rows, cols)`.
pub(crate) fn thin_qr(data: &[C64], rows: usize, cols: usize) -> (ComplexTensor, ComplexTensor) {
    let k = rows.min(cols);
    if k <= small::SMALL_QR_DIM {
        let (q, r) = small::householder_qr(data, rows, cols);
        return (ComplexTensor::from_parts(vec![rows, k], q), ComplexTensor::from_parts(vec![k, cols], r));
    }
    let m = ComplexTensor::from_parts(vec![rows, cols], data.to_vec()).to_faer();
    let qr = m.qr();
    let (q, r) = (ComplexTensor::from_faer(qr.compute_thin_Q().as_ref()), ComplexTensor::from_faer(qr.thin_R()));
    if all_finite(&q.data) && all_finite(&r.data) {
        return (q, r);
    }
    log::warn!("general QR returned non-finite factors for a {rows}x{cols} block; using Householder");
    let (q, r) = small::householder_qr(data, rows, cols);
    (ComplexTensor::from_parts(vec![rows, k], q), ComplexTensor::from_parts(vec![k, cols], r))
}

pub fn matrix_exponential(m: &ComplexTensor) -> Result<ComplexTensor> {
    m.require_matrix("matrix_exponential")?;
    if m.rows() != m.cols() {
        return Err(Error::Dimension(format!(
            "matrix_exponential needs a square matrix, got {:?}",
            m.shape
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numeric("matrix_exponential input contains NaN or Inf".into()));
    }
    let n = m.rows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| m.data[i * n + j].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as u32 } else { 0 };
    let a = m.scale(C64::new(0.5f64.powi(squarings as i32), 0.0));
    let mut sum = ComplexTensor::identity(n);
    let mut term = ComplexTensor::identity(n);
    for k in 1..=30 {
        term = term.matmul(&a)?.scale(C64::new(1.0 / k as f64, 0.0));
        sum = sum.add(&term)?;
        if term.frobenius_norm() <= f64::EPSILON * 1e-3 * sum.frobenius_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    check_finite(&sum.data)?;
    Ok(sum)
}

/// `exp(−i·θ·σ)` style helper: `exp(factor · m)`.
pub fn exp_scaled(m: &ComplexTensor, factor: C64) -> Result<ComplexTensor> {
    matrix_exponential(&m.scale(factor))
}
