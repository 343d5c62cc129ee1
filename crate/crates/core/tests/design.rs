use tcb_core::data::{estimate_covariances, sample_gaussian, toy_mixture_spec};
use tcb_core::designer::{
    assign_partition, codebook_objective, design_codebook, design_from, update_codewords, DesignConfig, InitMode,
};
use tcb_core::objectives::{avg_objective, theta_highrate, MseModel};
use tcb_core::{default_dct, klt, CovarianceMatrix, ModelTag, QuantizerSpec, StationaryBlock, TransformCodebook};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_components() -> Vec<CovarianceMatrix> {
    toy_mixture_spec().components().to_vec()
}

fn replicated_toy(copies: usize) -> Vec<CovarianceMatrix> {
    let base = toy_components();
    (0..copies).flat_map(|_| base.iter().cloned()).collect()
}

fn sampled_toy(count: usize, block_len: usize, seed: u64) -> Vec<CovarianceMatrix> {
    let spec = toy_mixture_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<StationaryBlock> = (0..count)
        .map(|i| StationaryBlock::new(2, sample_gaussian(&spec.components()[i % 3], block_len, &mut rng)).unwrap())
        .collect();
    estimate_covariances(&blocks).unwrap()
}

fn laplace_model() -> MseModel {
    MseModel::laplacian(QuantizerSpec::uniform(2, 1.0, 1.0).unwrap())
}

#[test]
fn single_codeword_on_single_covariance_reaches_klt() {
    let c = toy_components()[0].clone();
    let covs = vec![c.clone()];
    let (cb, report) = design_codebook(&covs, &DesignConfig::new(1, MseModel::high_rate(0.0))).unwrap();
    let reached = theta_highrate(cb.matrix(0), &c, 0.0).unwrap();
    let optimum = theta_highrate(&klt(&c), &c, 0.0).unwrap();
    assert!((reached - optimum).abs() <= 1e-9 * c.trace(), "{reached} vs {optimum}");
    assert!(report.converged);
}

#[test]
fn klt_seeded_design_beats_the_klt_codebook() {
    let covs = replicated_toy(4);
    let model = MseModel::high_rate(0.0);
    let klts = TransformCodebook::new(
        toy_components().iter().map(klt).collect(),
        QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
        ModelTag::HighRateGaussian,
    )
    .unwrap();
    let reference = codebook_objective(&klts, &covs, &model).unwrap();

    let mut cfg = DesignConfig::new(3, model.clone());
    cfg.init = InitMode::KltSeeds;
    let (cb, report) = design_codebook(&covs, &cfg).unwrap();
    let reached = codebook_objective(&cb, &covs, &model).unwrap();
    assert!(reached <= reference + 1e-9, "{reached} vs {reference}");
    assert!(*report.objective_trace.last().unwrap() <= reference + 1e-9);
}

#[test]
fn traces_are_monotone_for_every_init_and_model() {
    let covs = sampled_toy(150, 256, 11);
    for init in [InitMode::SplitFromOne, InitMode::KltSeeds, InitMode::RandomOrthonormal] {
        for model in [MseModel::high_rate(0.0), laplace_model()] {
            let mut cfg = DesignConfig::new(3, model);
            cfg.init = init;
            let (cb, report) = design_codebook(&covs, &cfg).unwrap();
            assert!(
                report.objective_trace.windows(2).all(|w| w[1] <= w[0]),
                "{init:?}: {:?}",
                report.objective_trace
            );
            assert_eq!(report.objective_trace.len(), report.iterations + 1);
            assert!(report.iterations <= cfg.max_outer_iters);
            for t in cb.matrices() {
                assert!(t.orthonormality_error() <= 1e-10);
            }
            assert_eq!(report.final_partition.cell_sizes.iter().sum::<usize>(), covs.len());
        }
    }
}

#[test]
fn every_cell_objective_is_non_increasing_through_a_run() {
    let covs = sampled_toy(120, 128, 3);
    let model = MseModel::high_rate(0.0);
    let mut cfg = DesignConfig::new(3, model.clone());
    cfg.init = InitMode::RandomOrthonormal;
    let (mut cb, _) = {
        let mut c = cfg.clone();
        c.max_outer_iters = 1;
        design_codebook(&covs, &c).unwrap()
    };
    for _ in 0..8 {
        let partition = assign_partition(&cb, &covs, &model).unwrap();
        let next = update_codewords(&partition, &covs, &cb, &cfg).unwrap();
        for cell in 0..cb.size() {
            let members: Vec<&CovarianceMatrix> = partition.members(cell).map(|m| &covs[m]).collect();
            if members.is_empty() {
                continue;
            }
            let before = avg_objective(&model, cb.matrix(cell), &members).unwrap();
            let after = avg_objective(&model, next.matrix(cell), &members).unwrap();
            assert!(after <= before + 1e-12, "cell {cell}: {before} -> {after}");
        }
        cb = next;
    }
}

#[test]
fn design_output_is_a_fixed_point() {
    let covs = sampled_toy(90, 256, 8);
    for model in [MseModel::high_rate(0.0), laplace_model()] {
        let cfg = DesignConfig::new(3, model);
        let (cb, _) = design_codebook(&covs, &cfg).unwrap();
        let (_, again) = design_from(&covs, cb, &cfg).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.converged);
    }
}

#[test]
fn appended_dct_is_last_and_never_hurts() {
    let covs = sampled_toy(60, 256, 21);
    let model = MseModel::high_rate(0.0);
    let mut cfg = DesignConfig::new(2, model.clone());
    let (plain, _) = design_codebook(&covs, &cfg).unwrap();
    cfg.append_dct = true;
    let (with_dct, _) = design_codebook(&covs, &cfg).unwrap();
    assert_eq!(with_dct.size(), 3);
    assert_eq!(with_dct.matrix(2), &default_dct(2));
    assert_eq!(&with_dct.matrices()[..2], plain.matrices());
    for c in &covs {
        let best = |cb: &TransformCodebook| {
            cb.matrices()
                .iter()
                .map(|t| model.theta(t, c).unwrap())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(best(&with_dct) <= best(&plain));
    }
}

#[test]
fn design_is_deterministic() {
    let covs = sampled_toy(60, 256, 4);
    let cfg = DesignConfig::new(3, MseModel::high_rate(0.0));
    let (a, ra) = design_codebook(&covs, &cfg).unwrap();
    let (b, rb) = design_codebook(&covs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
