use tcb_core::codec::{
    decode_block, encode_block, evaluate_adaptive, find_step_for_rate, sweep_rate_points, EvalOptions, DEFAULT_RATE_TOL,
};
use tcb_core::data::{chunk_into_blocks, sample_mixture, toy_mixture_spec};
use tcb_core::quantizer::{dequantize, quantize};
use tcb_core::{dct_matrix, klt, ModelTag, QuantizerSpec, StationaryBlock, TransformCodebook, TransformMatrix};

fn toy_blocks(n: usize, block_len: usize, seed: u64) -> Vec<StationaryBlock> {
    chunk_into_blocks(2, &sample_mixture(&toy_mixture_spec(), n, seed), block_len).unwrap()
}

fn codebook(ts: Vec<TransformMatrix>, step: f64) -> TransformCodebook {
    let k = ts[0].dim();
    TransformCodebook::new(
        ts,
        QuantizerSpec::uniform(k, step, step).unwrap(),
        ModelTag::HighRateGaussian,
    )
    .unwrap()
}

fn toy_klt_codebook(step: f64) -> TransformCodebook {
    let comps = toy_mixture_spec().components().to_vec();
    codebook(comps.iter().map(klt).collect(), step)
}

/// Per-codeword block MSE recomputed from scratch with the scalar quantizer.
fn brute_force_mse(block: &StationaryBlock, t: &TransformMatrix, step: f64) -> f64 {
    let m = t.as_matrix();
    let mut total = 0.0;
    for x in block.vectors() {
        let xv = nalgebra::DVector::from_column_slice(x);
        let y = m * &xv;
        let yq = y.map(|v| dequantize(quantize(v, step, step).unwrap(), step, step).unwrap());
        let xr = m.transpose() * yq;
        total += (xv - xr).norm_squared();
    }
    total / block.len() as f64
}

#[test]
fn sweep_is_monotone_on_toy_data() {
    let blocks = toy_blocks(60_000, 1000, 1);
    let grid = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];
    let pts = sweep_rate_points(&blocks, &toy_klt_codebook(1.0), &grid, &EvalOptions::default()).unwrap();
    assert_eq!(pts.len(), grid.len());
    for w in pts.windows(2) {
        assert!(w[1].rate <= w[0].rate + 0.01, "{w:?}");
        assert!(w[1].psnr_db <= w[0].psnr_db + 0.05, "{w:?}");
    }
}

#[test]
fn joint_scaling_leaves_rate_unchanged() {
    let blocks = toy_blocks(20_000, 500, 2);
    let doubled: Vec<StationaryBlock> = blocks
        .iter()
        .map(|b| StationaryBlock::new(2, b.data().iter().map(|v| 2.0 * v).collect()).unwrap())
        .collect();
    let opts = EvalOptions::default();
    let cb = toy_klt_codebook(0.8);
    let a = evaluate_adaptive(&blocks, &cb, &opts).unwrap();
    let b = evaluate_adaptive(
        &doubled,
        &cb.with_quantizer(QuantizerSpec::uniform(2, 1.6, 1.6).unwrap()).unwrap(),
        &opts,
    )
    .unwrap();
    assert_eq!(a.rate_point.rate, b.rate_point.rate);
    assert_eq!(a.usage, b.usage);
    assert!((a.rate_point.snr_db - b.rate_point.snr_db).abs() < 1e-9);
}

#[test]
fn step_search_recovers_a_probed_step() {
    let blocks = toy_blocks(30_000, 1000, 3);
    let cb = codebook(vec![dct_matrix(2)], 1.0);
    let opts = EvalOptions::default();
    let probe = 1.37;
    let target = sweep_rate_points(&blocks, &cb, &[probe], &opts).unwrap()[0].rate;
    let found = find_step_for_rate(&blocks, &cb, target, 1e-4, &opts).unwrap();
    assert!((found.rate - target).abs() <= 1e-4);
    assert!((found.step - probe).abs() / probe < 0.02, "{} vs {probe}", found.step);
}

#[test]
fn toy_search_hits_the_target_rate() {
    let blocks = toy_blocks(300_000, 4096, 4);
    let cb = codebook(vec![dct_matrix(2)], 1.0);
    let opts = EvalOptions::default();
    let found = find_step_for_rate(&blocks, &cb, 0.6, DEFAULT_RATE_TOL, &opts).unwrap();
    let measured = sweep_rate_points(&blocks, &cb, &[found.step], &opts).unwrap()[0].rate;
    assert!((measured - 0.6).abs() <= 0.01, "rate {measured} at step {}", found.step);
}

#[test]
fn selection_is_the_exhaustive_minimum() {
    let blocks = toy_blocks(20_000, 200, 5);
    let step = 0.9;
    let cb = toy_klt_codebook(step).with_appended(dct_matrix(2)).unwrap();
    for block in &blocks {
        let res = encode_block(block, &cb).unwrap();
        let brute: Vec<f64> = cb.matrices().iter().map(|t| brute_force_mse(block, t, step)).collect();
        for (a, b) in res.candidate_mse.iter().zip(&brute) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
        let best = brute.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(res.mse <= best + 1e-9 * best.max(1.0));
        let first_best = brute.iter().position(|&v| v <= best + 1e-12 * best.max(1.0)).unwrap();
        assert_eq!(res.chosen_index, first_best);

        let decoded = decode_block(&res, &cb).unwrap();
        let err: f64 = decoded
            .iter()
            .zip(block.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / block.len() as f64;
        assert!((err - res.mse).abs() <= 1e-9 * res.mse.max(1.0));
    }
}

#[test]
fn superset_never_raises_block_mse() {
    let blocks = toy_blocks(40_000, 400, 6);
    let opts = EvalOptions::default();
    for step in [0.5, 1.0, 2.0] {
        let base = toy_klt_codebook(step);
        let sup = base.with_appended(dct_matrix(2)).unwrap();
        let a = evaluate_adaptive(&blocks, &base, &opts).unwrap();
        let b = evaluate_adaptive(&blocks, &sup, &opts).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert!(y.mse <= x.mse);
        }
        assert_eq!(b.usage.iter().sum::<u64>(), blocks.len() as u64);
    }
}

#[test]
fn dct_only_codebook_matches_fixed_transform_coding() {
    let blocks = toy_blocks(10_000, 500, 7);
    let step = 1.2;
    let cb = codebook(vec![dct_matrix(2)], step);
    let ev = evaluate_adaptive(&blocks, &cb, &EvalOptions::default()).unwrap();
    assert_eq!(ev.side_info_rate, 0.0);
    let total: f64 = blocks
        .iter()
        .map(|b| brute_force_mse(b, &dct_matrix(2), step) * b.len() as f64)
        .sum();
    let samples: f64 = blocks.iter().map(|b| b.data().len() as f64).sum();
    assert!((ev.rate_point.mse - total / samples).abs() <= 1e-12 * total.max(1.0));
}
