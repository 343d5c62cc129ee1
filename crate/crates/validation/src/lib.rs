//! Fixtures shared by the acceptance suite in `tests/acceptance.rs`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcb_core::data::{estimate_covariances, sample_gaussian, toy_mixture_spec, SyntheticEnsembleSpec};
use tcb_core::{CovarianceMatrix, ModelTag, QuantizerSpec, StationaryBlock, TransformCodebook, TransformMatrix};

/// Codebook over `ts` with step and dead zone both `step`.
pub fn codebook(ts: Vec<TransformMatrix>, step: f64) -> TransformCodebook {
    let k = ts[0].dim();
    TransformCodebook::new(
        ts,
        QuantizerSpec::uniform(k, step, step).unwrap(),
        ModelTag::HighRateGaussian,
    )
    .unwrap()
}

/// Sample covariances of `count` blocks, cycling through the toy components.
pub fn toy_training_covs(count: usize, block_len: usize, seed: u64) -> Vec<CovarianceMatrix> {
    let spec = toy_mixture_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<StationaryBlock> = (0..count)
        .map(|i| StationaryBlock::new(2, sample_gaussian(&spec.components()[i % 3], block_len, &mut rng)).unwrap())
        .collect();
    estimate_covariances(&blocks).unwrap()
}

/// The 16-dimensional synthetic ensemble used for design-scale checks.
pub fn synthetic() -> SyntheticEnsembleSpec {
    SyntheticEnsembleSpec {
        seed: 99,
        ..SyntheticEnsembleSpec::default()
    }
}
