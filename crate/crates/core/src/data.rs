//! Training and test data: Gaussian-mixture sampling, raw residual-frame
//! ingestion into spatio-temporal stationary blocks, covariance estimation,
//! and a synthetic ensemble of oriented AR-like image-patch sources.
//!
//! Frame files are raw 8-bit single-plane data, frame-major and row-major
//! within a frame. A byte value `v` encodes the residual `v − 128`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designer::needs_ridge;
use crate::error::{Error, Result};
use crate::types::{check_dim, CovarianceMatrix, StationaryBlock};

pub const RESIDUAL_OFFSET: i32 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    weights: Vec<f64>,
    components: Vec<CovarianceMatrix>,
}

impl GaussianMixtureSpec {
    pub fn new(weights: Vec<f64>, components: Vec<CovarianceMatrix>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyInput("mixture components"))?;
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                found: weights.len(),
            });
        }
        for c in &components {
            check_dim(first.dim(), c.dim())?;
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(GaussianMixtureSpec { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[CovarianceMatrix] {
        &self.components
    }

    /// `Σ_i w_i C_i`.
    pub fn mixture_covariance(&self) -> Result<CovarianceMatrix> {
        CovarianceMatrix::weighted_mean(&self.components, &self.weights)
    }
}

/// The three two-dimensional components of the toy example, equally weighted.
pub fn toy_mixture_spec() -> GaussianMixtureSpec {
    let c = |a: f64, b: f64, d: f64| CovarianceMatrix::from_rows(&[vec![a, b], vec![b, d]]).expect("valid toy matrix");
    GaussianMixtureSpec::new(
        vec![1.0 / 3.0; 3],
        vec![c(1.54, -1.84, 2.62), c(0.46, 0.40, 0.70), c(2.22, 0.77, 0.38)],
    )
    .expect("valid toy mixture")
}

/// Symmetric square root `V·sqrt(Λ)·Vᵀ`, negative round-off eigenvalues
/// clamped to zero.
pub fn symmetric_sqrt(c: &CovarianceMatrix) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.as_matrix().clone());
    let s = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn draw_gaussian(root: &DMatrix<f64>, rng: &mut impl Rng, out: &mut Vec<f64>) {
    let k = root.nrows();
    let g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    out.extend((root * g).iter());
}

/// Draws `n` i.i.d. mixture vectors, returned row-major with their
/// component labels.
pub fn sample_mixture_labeled(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots: Vec<DMatrix<f64>> = spec.components.iter().map(symmetric_sqrt).collect();
    let pick = WeightedIndex::new(&spec.weights).expect("validated weights");
    let mut data = Vec::with_capacity(n * spec.dim());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let i = pick.sample(&mut rng);
        draw_gaussian(&roots[i], &mut rng, &mut data);
        labels.push(i);
    }
    (data, labels)
}

/// Draws `n` i.i.d. mixture vectors, returned row-major.
pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Vec<f64> {
    sample_mixture_labeled(spec, n, seed).0
}

/// Draws `n` vectors from `N(0, c)`, returned row-major.
pub fn sample_gaussian(c: &CovarianceMatrix, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let root = symmetric_sqrt(c);
    let mut data = Vec::with_capacity(n * c.dim());
    for _ in 0..n {
        draw_gaussian(&root, rng, &mut data);
    }
    data
}

/// Splits row-major vectors into consecutive blocks of `block_len` vectors;
/// the last block may be shorter.
pub fn chunk_into_blocks(dim: usize, data: &[f64], block_len: usize) -> Result<Vec<StationaryBlock>> {
    if block_len == 0 {
        return Err(Error::InvalidParameter("block length must be positive".into()));
    }
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: data.len(),
        });
    }
    data.chunks(block_len * dim)
        .map(|c| StationaryBlock::new(dim, c.to_vec()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSetSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub bit_depth: u32,
    pub spatial_block: usize,
    pub vector_block: usize,
    pub temporal_group: usize,
}

impl FrameSetSpec {
    pub fn new(width: usize, height: usize, frame_count: usize) -> Self {
        FrameSetSpec {
            width,
            height,
            frame_count,
            bit_depth: 8,
            spatial_block: 16,
            vector_block: 4,
            temporal_group: 8,
        }
    }

    /// Infers the frame count from a file length.
    pub fn for_byte_len(width: usize, height: usize, len: u64) -> Result<Self> {
        let frame = (width * height) as u64;
        if frame == 0 {
            return Err(Error::InvalidParameter("frame size must be positive".into()));
        }
        if len % frame != 0 || len == 0 {
            return Err(Error::SizeMismatch {
                expected: len.div_ceil(frame).max(1) * frame,
                found: len,
            });
        }
        Ok(Self::new(width, height, (len / frame) as usize))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(Error::InvalidParameter("frame dimensions must be positive".into()));
        }
        if self.bit_depth != 8 {
            return Err(Error::InvalidParameter(format!(
                "only 8-bit frames are supported, got {}",
                self.bit_depth
            )));
        }
        if self.spatial_block == 0 || self.vector_block == 0 || self.temporal_group == 0 {
            return Err(Error::InvalidParameter("block sizes must be positive".into()));
        }
        if self.width % self.spatial_block != 0 || self.height % self.spatial_block != 0 {
            return Err(Error::IndivisibleDimensions(format!(
                "{}x{} frame is not a multiple of {}",
                self.width, self.height, self.spatial_block
            )));
        }
        if self.spatial_block % self.vector_block != 0 {
            return Err(Error::IndivisibleDimensions(format!(
                "spatial block {} is not a multiple of vector block {}",
                self.spatial_block, self.vector_block
            )));
        }
        Ok(())
    }

    pub fn frame_bytes(&self) -> usize {
        self.width * self.height
    }

    pub fn expected_bytes(&self) -> u64 {
        (self.frame_bytes() * self.frame_count) as u64
    }

    pub fn vector_dim(&self) -> usize {
        self.vector_block * self.vector_block
    }

    /// Number of frames that fill complete temporal groups.
    pub fn retained_frames(&self) -> usize {
        self.frame_count / self.temporal_group * self.temporal_group
    }

    /// Byte offset of every retained sample in emission order: group, then
    /// spatial block row-major, then frame, then sub-block row-major, then
    /// pixel row-major.
    fn sample_offsets(&self) -> impl Iterator<Item = usize> + '_ {
        let (s, v) = (self.spatial_block, self.vector_block);
        let groups = self.frame_count / self.temporal_group;
        let (bw, bh) = (self.width / s, self.height / s);
        (0..groups).flat_map(move |g| {
            (0..bh * bw).flat_map(move |b| {
                let (by, bx) = (b / bw, b % bw);
                (0..self.temporal_group).flat_map(move |f| {
                    let frame = (g * self.temporal_group + f) * self.frame_bytes();
                    (0..(s / v) * (s / v)).flat_map(move |sb| {
                        let (sy, sx) = (sb / (s / v), sb % (s / v));
                        (0..v * v).map(move |p| {
                            let row = by * s + sy * v + p / v;
                            let col = bx * s + sx * v + p % v;
                            frame + row * self.width + col
                        })
                    })
                })
            })
        })
    }

    fn samples_per_block(&self) -> usize {
        self.spatial_block * self.spatial_block * self.temporal_group
    }
}

/// Builds stationary blocks from raw frame bytes. Frames past the last
/// complete temporal group are dropped.
pub fn ingest_frame_bytes(bytes: &[u8], spec: &FrameSetSpec) -> Result<Vec<StationaryBlock>> {
    spec.validate()?;
    if bytes.len() as u64 != spec.expected_bytes() {
        return Err(Error::SizeMismatch {
            expected: spec.expected_bytes(),
            found: bytes.len() as u64,
        });
    }
    let dropped = spec.frame_count - spec.retained_frames();
    if dropped > 0 {
        log::warn!("dropping {dropped} trailing frames that do not fill a temporal group");
    }
    let per_block = spec.samples_per_block();
    let samples: Vec<f64> = spec
        .sample_offsets()
        .map(|o| (bytes[o] as i32 - RESIDUAL_OFFSET) as f64)
        .collect();
    samples
        .chunks_exact(per_block)
        .map(|c| StationaryBlock::new(spec.vector_dim(), c.to_vec()))
        .collect()
}

pub fn ingest_frames(path: impl AsRef<Path>, spec: &FrameSetSpec) -> Result<Vec<StationaryBlock>> {
    let bytes = std::fs::read(path)?;
    ingest_frame_bytes(&bytes, spec)
}

/// Inverse of [`ingest_frame_bytes`] on the retained frames. Samples outside
/// the byte range are rejected.
pub fn reassemble_frames(blocks: &[StationaryBlock], spec: &FrameSetSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let mut out = vec![RESIDUAL_OFFSET as u8; spec.retained_frames() * spec.frame_bytes()];
    let expected = spec.retained_frames() / spec.temporal_group
        * (spec.width / spec.spatial_block)
        * (spec.height / spec.spatial_block);
    if blocks.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: blocks.len(),
        });
    }
    let values = blocks.iter().flat_map(|b| b.data().iter().copied());
    for (o, v) in spec.sample_offsets().zip(values) {
        let byte = v + RESIDUAL_OFFSET as f64;
        if !(0.0..=255.0).contains(&byte) || byte.fract() != 0.0 {
            return Err(Error::Format(format!("sample {v} is not an 8-bit residual")));
        }
        out[o] = byte as u8;
    }
    Ok(out)
}

/// Second-moment matrix of each block, ridge-regularized when near-singular.
pub fn estimate_covariances(blocks: &[StationaryBlock]) -> Result<Vec<CovarianceMatrix>> {
    blocks
        .par_iter()
        .map(|b| {
            if b.is_empty() {
                return Err(Error::EmptyBlock);
            }
            let c = CovarianceMatrix::new(b.covariance().as_matrix().clone())?;
            Ok(if needs_ridge(&c) { c.regularized() } else { c })
        })
        .collect()
}

/// Synthetic non-stationary source of `side×side` image patches. Each class
/// is a zero-mean Gaussian with an oriented separable-exponential
/// correlation: correlation `ρ_a^{|d·u|}·ρ_b^{|d·u⊥|}` between pixels at
/// displacement `d`, where `u` is the class orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnsembleSpec {
    pub side: usize,
    pub classes: usize,
    pub block_len: usize,
    pub seed: u64,
}

impl Default for SyntheticEnsembleSpec {
    fn default() -> Self {
        SyntheticEnsembleSpec {
            side: 4,
            classes: 8,
            block_len: 128,
            seed: 0,
        }
    }
}

/// Oriented AR-like covariance on a `side×side` grid, row-major pixels.
pub fn oriented_ar_covariance(
    side: usize,
    angle: f64,
    rho_along: f64,
    rho_across: f64,
    variance: f64,
) -> Result<CovarianceMatrix> {
    let k = side * side;
    let (c, s) = (angle.cos(), angle.sin());
    let m = DMatrix::from_fn(k, k, |i, j| {
        let dy = (i / side) as f64 - (j / side) as f64;
        let dx = (i % side) as f64 - (j % side) as f64;
        let along = (dx * c + dy * s).abs();
        let across = (-dx * s + dy * c).abs();
        variance * rho_along.powf(along) * rho_across.powf(across)
    });
    CovarianceMatrix::new(m)
}

impl SyntheticEnsembleSpec {
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    fn class_params(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.classes)
            .map(|_| {
                (
                    rng.random_range(0.0..std::f64::consts::PI),
                    rng.random_range(0.85..0.98),
                    rng.random_range(0.2..0.7),
                    rng.random_range(0.5..2.0) * 100.0,
                )
            })
            .collect()
    }

    /// Class prototypes drawn from the spec seed.
    pub fn prototypes(&self) -> Result<Vec<CovarianceMatrix>> {
        self.class_params()
            .into_iter()
            .map(|(angle, along, across, var)| oriented_ar_covariance(self.side, angle, along, across, var))
            .collect()
    }

    /// `count` blocks, each drawn from a uniformly chosen class whose
    /// correlation parameters are jittered by a few percent.
    pub fn sample_blocks(&self, count: usize, stream: u64) -> Result<Vec<StationaryBlock>> {
        if self.classes == 0 || self.side == 0 || self.block_len == 0 {
            return Err(Error::InvalidParameter(
                "synthetic ensemble sizes must be positive".into(),
            ));
        }
        let params = self.class_params();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        (0..count)
            .map(|_| {
                let (angle, along, across, var) = params[rng.random_range(0..self.classes)];
                let jitter = |rng: &mut ChaCha8Rng| 1.0 + 0.03 * rng.random_range(-1.0..1.0);
                let angle = angle + 0.05 * rng.random_range(-1.0..1.0);
                let along = (along * jitter(&mut rng)).min(0.99);
                let across = across * jitter(&mut rng);
                let var = var * jitter(&mut rng);
                let c = oriented_ar_covariance(self.side, angle, along, across, var)?;
                StationaryBlock::new(self.dim(), sample_gaussian(&c, self.block_len, &mut rng))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_components_are_verbatim() {
        let s = toy_mixture_spec();
        assert_eq!(s.components()[0].to_row_major(), vec![1.54, -1.84, -1.84, 2.62]);
        assert_eq!(s.components()[1].to_row_major(), vec![0.46, 0.40, 0.40, 0.70]);
        assert_eq!(s.components()[2].to_row_major(), vec![2.22, 0.77, 0.77, 0.38]);
        for c in s.components() {
            assert!(c.min_eigenvalue() > 0.0);
        }
        let m = s.mixture_covariance().unwrap();
        let expect = [
            (1.54 + 0.46 + 2.22) / 3.0,
            (-1.84 + 0.40 + 0.77) / 3.0,
            (2.62 + 0.70 + 0.38) / 3.0,
        ];
        assert!((m.as_matrix()[(0, 0)] - expect[0]).abs() < 1e-15);
        assert!((m.as_matrix()[(0, 1)] - expect[1]).abs() < 1e-15);
        assert!((m.as_matrix()[(1, 1)] - expect[2]).abs() < 1e-15);
    }

    #[test]
    fn weights_are_validated() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(GaussianMixtureSpec::new(vec![0.5, 0.4], vec![c.clone(), c.clone()]).is_err());
        assert!(GaussianMixtureSpec::new(vec![1.5, -0.5], vec![c.clone(), c.clone()]).is_err());
        assert!(GaussianMixtureSpec::new(vec![1.0], vec![c]).is_ok());
    }

    #[test]
    fn sampling_is_reproducible_and_respects_weights() {
        let s = toy_mixture_spec();
        assert_eq!(sample_mixture(&s, 100, 5), sample_mixture(&s, 100, 5));
        let only_first = GaussianMixtureSpec::new(vec![1.0, 0.0, 0.0], s.components().to_vec()).unwrap();
        let (_, labels) = sample_mixture_labeled(&only_first, 1000, 1);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn identity_sample_covariance() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = GaussianMixtureSpec::new(vec![1.0], vec![c]).unwrap();
        let x = sample_mixture(&s, 1_000_000, 3);
        let est = StationaryBlock::new(2, x).unwrap().covariance();
        let err = (est.as_matrix() - DMatrix::identity(2, 2)).norm();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn symmetric_sqrt_squares_back() {
        let c = toy_mixture_spec().components()[0].clone();
        let r = symmetric_sqrt(&c);
        assert!((&r * &r - c.as_matrix()).amax() < 1e-12);
        assert!((&r - r.transpose()).amax() < 1e-14);
    }

    #[test]
    fn frame_counting() {
        let spec = FrameSetSpec::new(32, 32, 8);
        let blocks = ingest_frame_bytes(&vec![128u8; 32 * 32 * 8], &spec).unwrap();
        assert_eq!(blocks.len(), 4);
        for b in &blocks {
            assert_eq!((b.len(), b.dim()), (128, 16));
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
        let covs = estimate_covariances(&blocks).unwrap();
        assert!(covs.iter().all(|c| c.trace() == 0.0));
    }

    #[test]
    fn single_pixel_lands_where_predicted() {
        // pixel (row 21, col 6) of frame 3 in a 32x32 frame
        let spec = FrameSetSpec::new(32, 32, 8);
        let mut bytes = vec![128u8; 32 * 32 * 8];
        bytes[3 * 1024 + 21 * 32 + 6] = 255;
        let blocks = ingest_frame_bytes(&bytes, &spec).unwrap();
        // spatial block (1, 0) -> index 2; sub-block (1, 1) -> 5; pixel (1, 2) -> 6
        let mut hits = vec![];
        for (bi, b) in blocks.iter().enumerate() {
            for (vi, v) in b.vectors().enumerate() {
                for (pi, &x) in v.iter().enumerate() {
                    if x != 0.0 {
                        hits.push((bi, vi, pi, x));
                    }
                }
            }
        }
        assert_eq!(hits, vec![(2, 3 * 16 + 5, 6, 127.0)]);
    }

    #[test]
    fn ingestion_errors() {
        let spec = FrameSetSpec::new(32, 32, 8);
        assert!(matches!(
            ingest_frame_bytes(&[0u8; 10], &spec),
            Err(Error::SizeMismatch { .. })
        ));
        let bad = FrameSetSpec::new(40, 32, 8);
        assert!(matches!(
            ingest_frame_bytes(&vec![0u8; 40 * 32 * 8], &bad),
            Err(Error::IndivisibleDimensions(_))
        ));
        assert!(matches!(
            FrameSetSpec::for_byte_len(32, 32, 1000),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn trailing_frames_are_dropped() {
        let spec = FrameSetSpec::new(16, 16, 11);
        let blocks = ingest_frame_bytes(&vec![130u8; 16 * 16 * 11], &spec).unwrap();
        assert_eq!(blocks.len(), 1);
        let back = reassemble_frames(&blocks, &spec).unwrap();
        assert_eq!(back, vec![130u8; 16 * 16 * 8]);
    }

    #[test]
    fn identical_vectors_give_rank_one_plus_ridge() {
        let v = [1.0, 2.0, -1.0];
        let block = StationaryBlock::from_vectors(&[v.to_vec(), v.to_vec(), v.to_vec()]).unwrap();
        let c = &estimate_covariances(&[block]).unwrap()[0];
        let outer = DMatrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        assert!((c.as_matrix() - outer).amax() < 1e-8);
        assert!(c.min_eigenvalue() > 0.0);
    }

    #[test]
    fn oriented_covariances_are_valid() {
        let spec = SyntheticEnsembleSpec::default();
        for c in spec.prototypes().unwrap() {
            assert_eq!(c.dim(), 16);
            assert!(c.min_eigenvalue() > 0.0);
        }
        let a = spec.sample_blocks(5, 1).unwrap();
        assert_eq!(a, spec.sample_blocks(5, 1).unwrap());
        assert_ne!(a, spec.sample_blocks(5, 2).unwrap());
        assert_eq!(a[0].len(), 128);
    }
}
