//! Domain types shared across the crate, plus the fixed transforms (KLT and
//! DCT) that serve as baselines.
//!
//! All transforms use the row convention `y = T x`: the rows of a
//! [`TransformMatrix`] are the basis vectors, and decoding applies `Tᵀ`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `max |TᵀT − I|` accepted for a transform matrix.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Smallest eigenvalue allowed for a covariance, relative to its trace.
const PSD_REL_TOL: f64 = 1e-9;

/// A symmetric positive-semidefinite second-moment matrix of one stationary
/// block.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    m: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Validates and symmetrizes `raw`.
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        validate_covariance(&raw)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::NotSquare { rows: n, cols: r.len() });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Builds from a row-major slice of `k²` entries.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let k = self.dim();
        let mut out = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                out.push(self.m[(i, j)]);
            }
        }
        out
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    /// Returns `C + δI`.
    pub fn ridge(&self, delta: f64) -> Self {
        let k = self.dim();
        CovarianceMatrix {
            m: &self.m + DMatrix::identity(k, k) * delta,
        }
    }

    /// `C + δI` with `δ = 1e-9·trace(C)/k`, the regularization applied to
    /// rank-deficient training covariances.
    pub fn regularized(&self) -> Self {
        let k = self.dim() as f64;
        self.ridge(1e-9 * self.trace() / k)
    }

    /// Weighted average of covariances of equal dimension.
    pub fn weighted_mean(items: &[CovarianceMatrix], weights: &[f64]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyInput("covariance list"))?;
        if weights.len() != items.len() {
            return Err(Error::DimensionMismatch {
                expected: items.len(),
                found: weights.len(),
            });
        }
        let k = first.dim();
        let mut acc = DMatrix::zeros(k, k);
        for (c, &w) in items.iter().zip(weights) {
            check_dim(k, c.dim())?;
            acc += c.as_matrix() * w;
        }
        Self::new(acc)
    }

    pub fn mean(items: &[CovarianceMatrix]) -> Result<Self> {
        let w = vec![1.0 / items.len().max(1) as f64; items.len()];
        Self::weighted_mean(items, &w)
    }

    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        CovarianceMatrix { m }
    }
}

/// A `k×k` orthonormal matrix used as a row transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    m: DMatrix<f64>,
}

impl TransformMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transform matrix"));
        }
        let dev = orthonormality_error(&m);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { max_deviation: dev });
        }
        Ok(TransformMatrix { m })
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(k: usize) -> Self {
        TransformMatrix {
            m: DMatrix::identity(k, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let k = self.dim();
        let mut out = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                out.push(self.m[(i, j)]);
            }
        }
        out
    }

    /// `max |TᵀT − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.m)
    }

    /// Applies the forward transform `y = T x`.
    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        let k = self.dim();
        for (r, yr) in y.iter_mut().enumerate().take(k) {
            let mut acc = 0.0;
            for (c, xc) in x.iter().enumerate().take(k) {
                acc += self.m[(r, c)] * xc;
            }
            *yr = acc;
        }
    }

    /// Applies the inverse transform `x = Tᵀ y`.
    pub fn inverse(&self, y: &[f64], x: &mut [f64]) {
        let k = self.dim();
        x[..k].fill(0.0);
        for (r, &yr) in y.iter().enumerate().take(k) {
            if yr == 0.0 {
                continue;
            }
            for (c, xc) in x.iter_mut().enumerate().take(k) {
                *xc += self.m[(r, c)] * yr;
            }
        }
    }

    /// Wraps a matrix the caller has already made orthonormal (a polar factor
    /// or an eigenvector basis).
    pub(crate) fn from_orthonormal_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&m) <= 1e-8);
        TransformMatrix { m }
    }
}

pub(crate) fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    let g = m.transpose() * m;
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Per-coefficient step sizes and dead-zone widths of the dead-zone uniform
/// quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    steps: Vec<f64>,
    dead_zones: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(steps: Vec<f64>, dead_zones: Vec<f64>) -> Result<Self> {
        if steps.len() != dead_zones.len() {
            return Err(Error::DimensionMismatch {
                expected: steps.len(),
                found: dead_zones.len(),
            });
        }
        if steps.is_empty() {
            return Err(Error::EmptyInput("quantizer steps"));
        }
        if let Some(bad) = steps.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "quantizer step must be positive, got {bad}"
            )));
        }
        if let Some(bad) = dead_zones.iter().find(|z| !(z.is_finite() && **z >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "dead zone must be non-negative, got {bad}"
            )));
        }
        Ok(QuantizerSpec { steps, dead_zones })
    }

    /// Same step and dead zone for every coefficient.
    pub fn uniform(k: usize, step: f64, dead_zone: f64) -> Result<Self> {
        Self::new(vec![step; k], vec![dead_zone; k])
    }

    pub fn dim(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn dead_zones(&self) -> &[f64] {
        &self.dead_zones
    }

    /// Multiplies every step and dead zone by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.steps.iter().map(|s| s * factor).collect(),
            self.dead_zones.iter().map(|z| z * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    HighRateGaussian,
    Laplacian,
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelTag::HighRateGaussian => f.write_str("HighRateGaussian"),
            ModelTag::Laplacian => f.write_str("Laplacian"),
        }
    }
}

/// An ordered set of orthonormal transforms of one dimension, together with
/// the quantizer and MSE model they were designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformCodebook {
    matrices: Vec<TransformMatrix>,
    quantizer: QuantizerSpec,
    model_tag: ModelTag,
}

impl TransformCodebook {
    pub fn new(matrices: Vec<TransformMatrix>, quantizer: QuantizerSpec, model_tag: ModelTag) -> Result<Self> {
        let first = matrices.first().ok_or(Error::EmptyInput("codebook"))?;
        let k = first.dim();
        for t in &matrices {
            check_dim(k, t.dim())?;
        }
        check_dim(k, quantizer.dim())?;
        Ok(TransformCodebook {
            matrices,
            quantizer,
            model_tag,
        })
    }

    pub fn size(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn matrices(&self) -> &[TransformMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, i: usize) -> &TransformMatrix {
        &self.matrices[i]
    }

    pub fn quantizer(&self) -> &QuantizerSpec {
        &self.quantizer
    }

    pub fn model_tag(&self) -> ModelTag {
        self.model_tag
    }

    pub fn with_quantizer(&self, quantizer: QuantizerSpec) -> Result<Self> {
        Self::new(self.matrices.clone(), quantizer, self.model_tag)
    }

    /// Returns a copy with `t` appended as the last codeword.
    pub fn with_appended(&self, t: TransformMatrix) -> Result<Self> {
        let mut matrices = self.matrices.clone();
        matrices.push(t);
        Self::new(matrices, self.quantizer.clone(), self.model_tag)
    }

    pub(crate) fn replace_matrices(&mut self, matrices: Vec<TransformMatrix>) {
        debug_assert_eq!(matrices.len(), self.matrices.len());
        self.matrices = matrices;
    }
}

/// A locally stationary block: `|B|` vectors of dimension `k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryBlock {
    dim: usize,
    data: Vec<f64>,
    cached: Option<CovarianceMatrix>,
}

impl StationaryBlock {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("vector dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyBlock);
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * data.len().div_ceil(dim),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("block vectors"));
        }
        Ok(StationaryBlock {
            dim,
            data,
            cached: None,
        })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyBlock)?;
        let k = first.len();
        let mut data = Vec::with_capacity(k * vectors.len());
        for v in vectors {
            check_dim(k, v.len())?;
            data.extend_from_slice(v);
        }
        Self::new(k, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Sum of squared entries over all vectors.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Second-moment matrix `(1/|B|)·Σ x xᵀ`, taken from the cache when set.
    pub fn covariance(&self) -> CovarianceMatrix {
        match &self.cached {
            Some(c) => c.clone(),
            None => self.compute_covariance(),
        }
    }

    pub fn cached_covariance(&self) -> Option<&CovarianceMatrix> {
        self.cached.as_ref()
    }

    pub fn with_cached_covariance(mut self) -> Self {
        self.cached = Some(self.compute_covariance());
        self
    }

    fn compute_covariance(&self) -> CovarianceMatrix {
        let k = self.dim;
        let mut acc = vec![0.0; k * k];
        for x in self.vectors() {
            for i in 0..k {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                for j in i..k {
                    acc[i * k + j] += xi * x[j];
                }
            }
        }
        let n = self.len() as f64;
        let m = DMatrix::from_fn(k, k, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            acc[a * k + b] / n
        });
        CovarianceMatrix::from_symmetric_unchecked(m)
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Symmetrizes `raw` and checks it is positive semidefinite.
pub fn validate_covariance(raw: &DMatrix<f64>) -> Result<CovarianceMatrix> {
    if raw.nrows() != raw.ncols() {
        return Err(Error::NotSquare {
            rows: raw.nrows(),
            cols: raw.ncols(),
        });
    }
    if raw.nrows() == 0 {
        return Err(Error::EmptyInput("covariance matrix"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix"));
    }
    let sym = (raw + raw.transpose()) * 0.5;
    let trace = sym.trace();
    let min_eig = SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_REL_TOL * trace.abs() || trace < 0.0 {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eig,
        });
    }
    Ok(CovarianceMatrix::from_symmetric_unchecked(sym))
}

/// Karhunen–Loève transform of `c`: unit eigenvectors as rows, sorted by
/// non-increasing eigenvalue, each row's first nonzero entry positive.
/// Rows sharing an eigenvalue are ordered lexicographically.
pub fn klt(c: &CovarianceMatrix) -> TransformMatrix {
    let k = c.dim();
    let eig = SymmetricEigen::new(c.as_matrix().clone());
    let scale = c.trace().abs().max(1.0);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..k)
        .map(|col| {
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            fix_sign(&mut v);
            (eig.eigenvalues[col], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    // reorder runs of (numerically) equal eigenvalues
    let tie_tol = 1e-12 * scale;
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (pairs[start].0 - pairs[end].0).abs() <= tie_tol {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        }
        start = end;
    }

    let m = DMatrix::from_fn(k, k, |r, col| pairs[r].1[col]);
    TransformMatrix::from_orthonormal_unchecked(m)
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Orthonormal DCT-II matrix: `T[m][n] = c_m·cos(π(2n+1)m / 2k)`.
pub fn dct_matrix(k: usize) -> TransformMatrix {
    assert!(k >= 1, "DCT size must be positive");
    let kf = k as f64;
    let m = DMatrix::from_fn(k, k, |row, col| {
        let c = if row == 0 { (1.0 / kf).sqrt() } else { (2.0 / kf).sqrt() };
        c * (PI * (2.0 * col as f64 + 1.0) * row as f64 / (2.0 * kf)).cos()
    });
    TransformMatrix::from_orthonormal_unchecked(m)
}

/// Non-separable 2-D DCT for `b×b` blocks rasterized row-major: `D ⊗ D`.
pub fn dct2d_nonseparable(b: usize) -> TransformMatrix {
    let d = dct_matrix(b).into_inner();
    let m = DMatrix::from_fn(b * b, b * b, |r, c| d[(r / b, c / b)] * d[(r % b, c % b)]);
    TransformMatrix::from_orthonormal_unchecked(m)
}

/// The DCT appropriate for vectors of dimension `k`: the 2-D construction when
/// `k` is a perfect square, the 1-D DCT otherwise.
pub fn default_dct(k: usize) -> TransformMatrix {
    let b = (k as f64).sqrt().round() as usize;
    if b * b == k && b > 1 {
        dct2d_nonseparable(b)
    } else {
        dct_matrix(k)
    }
}

/// `diag(T C Tᵀ)`, with tiny negative round-off clamped to zero.
pub fn coefficient_variances(t: &TransformMatrix, c: &CovarianceMatrix) -> Result<Vec<f64>> {
    check_dim(t.dim(), c.dim())?;
    let tc = t.as_matrix() * c.as_matrix();
    Ok(variances_from_tc(t.as_matrix(), &tc, c.trace()))
}

pub(crate) fn variances_from_tc(t: &DMatrix<f64>, tc: &DMatrix<f64>, trace: f64) -> Vec<f64> {
    let k = t.nrows();
    let clamp = 1e-12 * trace.abs().max(1.0);
    (0..k)
        .map(|j| {
            let v = tc.row(j).dot(&t.row(j));
            if v < 0.0 && v >= -clamp {
                0.0
            } else {
                v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c1() -> CovarianceMatrix {
        CovarianceMatrix::from_rows(&[vec![1.54, -1.84], vec![-1.84, 2.62]]).unwrap()
    }

    #[test]
    fn identity_covariance_is_accepted_unchanged() {
        let c = CovarianceMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.as_matrix(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn toy_covariance_is_accepted() {
        assert_eq!(c1().to_row_major(), vec![1.54, -1.84, -1.84, 2.62]);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let err = CovarianceMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap_err();
        match err {
            Error::NotPsd { min_eigenvalue } => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_square_is_rejected() {
        let raw = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            validate_covariance(&raw),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let raw = DMatrix::from_row_slice(2, 2, &[2.0, 0.2, 0.0, 1.0]);
        let c = validate_covariance(&raw).unwrap();
        assert_eq!(c.as_matrix()[(0, 1)], 0.1);
        assert_eq!(c.as_matrix()[(1, 0)], 0.1);
    }

    #[test]
    fn klt_of_sorted_diagonal_is_identity() {
        let c = CovarianceMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(klt(&c).as_matrix(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn klt_of_unsorted_diagonal_swaps_rows() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let t = klt(&c);
        assert_eq!(t.to_row_major(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn klt_of_all_ones() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let t = klt(&c);
        let h = 0.5f64.sqrt();
        let expect = [h, h, h, -h];
        for (a, b) in t.to_row_major().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn klt_of_toy_matrix_matches_characteristic_polynomial() {
        // eigenpairs of [[a, b], [b, d]] from the quadratic formula
        let (a, b, d): (f64, f64, f64) = (1.54, -1.84, 2.62);
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d).powi(2) + b * b).sqrt();
        let lambdas = [mean + disc, mean - disc];
        let t = klt(&c1());
        for (row, &lambda) in lambdas.iter().enumerate() {
            // (a − λ) v0 + b v1 = 0  →  v ∝ (b, λ − a)
            let mut v = [b, lambda - a];
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            if v[0] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            for col in 0..2 {
                assert!((t.as_matrix()[(row, col)] - v[col]).abs() < 1e-12);
            }
        }
        let diag = t.as_matrix() * c1().as_matrix() * t.as_matrix().transpose();
        assert!(diag[(0, 1)].abs() < 1e-10 && diag[(1, 0)].abs() < 1e-10);
        let vars = coefficient_variances(&t, &c1()).unwrap();
        assert!((vars[0] - lambdas[0]).abs() < 1e-12);
        assert!((vars[1] - lambdas[1]).abs() < 1e-12);
    }

    #[test]
    fn klt_tie_break_is_lexicographic() {
        let t = klt(&CovarianceMatrix::new(DMatrix::identity(3, 3)).unwrap());
        // ascending lexicographic order puts e2 = (0, 0, 1) first
        assert_eq!(t.to_row_major(), vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let rows: Vec<Vec<f64>> = (0..3).map(|r| t.as_matrix().row(r).iter().copied().collect()).collect();
        let mut sorted = rows.clone();
        sorted.sort_by(|a, b| lex_cmp(a, b));
        assert_eq!(rows, sorted);
    }

    #[test]
    fn dct_small_cases() {
        assert_eq!(dct_matrix(1).to_row_major(), vec![1.0]);
        let h = 0.5f64.sqrt();
        for (a, b) in dct_matrix(2).to_row_major().iter().zip([h, h, h, -h]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(dct_matrix(16).orthonormality_error() < 1e-12);
    }

    #[test]
    fn dct2d_small_cases() {
        assert_eq!(dct2d_nonseparable(1).to_row_major(), vec![1.0]);
        let t = dct2d_nonseparable(2);
        let mut y = [0.0; 4];
        t.forward(&[1.0, 1.0, 1.0, 1.0], &mut y);
        let expect = [2.0, 0.0, 0.0, 0.0];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dct2d_nonseparable(4).orthonormality_error() < 1e-12);
    }

    #[test]
    fn dct2d_matches_separable_application() {
        // D ⊗ D on a row-major block equals D·X·Dᵀ rasterized row-major
        let b = 4;
        let d = dct_matrix(b);
        let x = DMatrix::from_fn(b, b, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let sep = d.as_matrix() * &x * d.as_matrix().transpose();
        let flat: Vec<f64> = (0..b * b).map(|n| x[(n / b, n % b)]).collect();
        let mut y = vec![0.0; b * b];
        dct2d_nonseparable(b).forward(&flat, &mut y);
        for n in 0..b * b {
            assert!((y[n] - sep[(n / b, n % b)]).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_variances_basic() {
        let c = CovarianceMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(
            coefficient_variances(&TransformMatrix::identity(2), &c).unwrap(),
            vec![3.0, 5.0]
        );
        assert!(matches!(
            coefficient_variances(&TransformMatrix::identity(3), &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transform_rejects_non_orthonormal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(TransformMatrix::new(m), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn quantizer_spec_validation() {
        assert!(QuantizerSpec::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(QuantizerSpec::new(vec![1.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(QuantizerSpec::new(vec![1.0], vec![1.0, 1.0]).is_err());
        assert!(QuantizerSpec::uniform(3, 0.5, 0.0).is_ok());
    }

    #[test]
    fn block_covariance_is_second_moment() {
        let b = StationaryBlock::from_vectors(&[vec![1.0, 2.0], vec![-1.0, 0.0]]).unwrap();
        let c = b.covariance();
        assert_eq!(c.to_row_major(), vec![1.0, 1.0, 1.0, 2.0]);
        let cached = b.clone().with_cached_covariance();
        assert_eq!(cached.cached_covariance(), Some(&c));
    }

    #[test]
    fn forward_inverse_round_trip() {
        let t = klt(&c1());
        let x = [0.3, -1.7];
        let mut y = [0.0; 2];
        let mut back = [0.0; 2];
        t.forward(&x, &mut y);
        t.inverse(&y, &mut back);
        assert!((back[0] - x[0]).abs() < 1e-14 && (back[1] - x[1]).abs() < 1e-14);
    }
}
