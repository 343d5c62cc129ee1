use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use tcb_core::codec::{
    bd_metrics, evaluate_adaptive, find_step_for_rate, sweep_rate_points, EvalOptions, RatePoint, SideInfoMode,
    DEFAULT_RATE_TOL,
};
use tcb_core::data::{
    chunk_into_blocks, estimate_covariances, ingest_frames, sample_gaussian, sample_mixture, sample_mixture_labeled,
    toy_mixture_spec, FrameSetSpec,
};
use tcb_core::designer::{design_codebook, DesignConfig, InitMode};
use tcb_core::io;
use tcb_core::manifold::ManifoldOptParams;
use tcb_core::objectives::MseModel;
use tcb_core::{Error, QuantizerSpec, Result, StationaryBlock, TransformCodebook};

use crate::manifest::{sibling_manifest, Recorder};
use crate::{BdArgs, DataArg, EvalArgs, GenToyArgs, IngestArgs, InitArg, ModelArg, SideInfoArg, TrainArgs, TrainMode};

/// Six significant digits.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn gen_toy(a: &GenToyArgs) -> Result<()> {
    let rec = Recorder::start();
    if a.train_n == 0 || a.test_n == 0 || a.block_len == 0 {
        return Err(Error::InvalidParameter("sample counts must be positive".into()));
    }
    create_dir(&a.out)?;
    let spec = toy_mixture_spec();
    let k = spec.dim();

    let covs = match a.train_mode {
        TrainMode::Components => {
            let (data, labels) = sample_mixture_labeled(&spec, a.train_n, a.seed);
            let mut per: Vec<Vec<f64>> = vec![Vec::new(); spec.components().len()];
            for (x, &l) in data.chunks_exact(k).zip(&labels) {
                per[l].extend_from_slice(x);
            }
            let blocks: Vec<StationaryBlock> = per
                .into_iter()
                .filter(|d| !d.is_empty())
                .map(|d| StationaryBlock::new(k, d))
                .collect::<Result<_>>()?;
            estimate_covariances(&blocks)?
        }
        TrainMode::Blocks => {
            let count = a.train_n / a.block_len;
            if count == 0 {
                return Err(Error::InvalidParameter("--train-n is smaller than --block-len".into()));
            }
            let (_, labels) = sample_mixture_labeled(&spec, count, a.seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(2));
            let blocks: Vec<StationaryBlock> = labels
                .iter()
                .map(|&l| StationaryBlock::new(k, sample_gaussian(&spec.components()[l], a.block_len, &mut rng)))
                .collect::<Result<_>>()?;
            estimate_covariances(&blocks)?
        }
    };

    let test = sample_mixture(&spec, a.test_n, a.seed.wrapping_add(1));
    let covs_path = a.out.join("train_covs.json");
    let test_path = a.out.join("test_vectors.bin");
    let mix_path = a.out.join("mixture.json");
    io::write_covariance_set(&covs_path, &covs)?;
    io::write_vectors(&test_path, k, &test)?;
    io::write_mixture_spec(&mix_path, &spec)?;
    println!("training covariances: {}", covs.len());
    println!("test vectors: {} (dim {k})", a.test_n);
    rec.write(
        &a.out.join("manifest.json"),
        "gen-toy",
        a,
        Some(a.seed),
        vec![],
        vec![covs_path, test_path, mix_path],
    )
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let rec = Recorder::start();
    let covs = io::read_covariance_set(&a.covs)?;
    let k = covs[0].dim();
    let q = QuantizerSpec::uniform(k, a.delta, a.deadzone.unwrap_or(a.delta))?;
    let model = match a.model {
        ModelArg::Highrate => MseModel::high_rate(a.rate),
        ModelArg::Laplace => MseModel::laplacian(q.clone()),
    };
    let mut cfg = DesignConfig::new(a.n, model);
    cfg.quantizer = Some(q);
    cfg.epsilon = a.epsilon;
    cfg.max_outer_iters = a.max_iters;
    cfg.init = match a.init {
        InitArg::Split => InitMode::SplitFromOne,
        InitArg::Klt => InitMode::KltSeeds,
        InitArg::Random => InitMode::RandomOrthonormal,
    };
    cfg.seed = a.seed;
    cfg.inner = ManifoldOptParams {
        max_iters: a.inner_iters,
        ..ManifoldOptParams::default()
    };
    cfg.append_dct = a.append_dct;

    let (codebook, report) = design_codebook(&covs, &cfg)?;
    create_dir(&a.out)?;
    let cb_path = a.out.join("codebook.json");
    let rep_path = a.out.join("report.json");
    io::write_codebook(&cb_path, &codebook)?;
    io::write_design_report(&rep_path, &report)?;

    let last = report.objective_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "codebook size {} (dim {k}); objective {} after {} iterations; converged: {}",
        codebook.size(),
        sig6(last),
        report.iterations,
        report.converged
    );
    println!("cell sizes: {:?}", report.final_partition.cell_sizes);
    rec.write(
        &a.out.join("manifest.json"),
        "train",
        a,
        Some(a.seed),
        vec![a.covs.clone()],
        vec![cb_path, rep_path],
    )
}

fn load_blocks(a: &EvalArgs, codebook: &TransformCodebook) -> Result<Vec<StationaryBlock>> {
    match a.data {
        DataArg::Vectors => {
            let (dim, data) = io::read_vectors(&a.input)?;
            if dim != codebook.dim() {
                return Err(Error::DimensionMismatch {
                    expected: codebook.dim(),
                    found: dim,
                });
            }
            chunk_into_blocks(dim, &data, a.block_len)
        }
        DataArg::Frames => {
            let (Some(w), Some(h)) = (a.width, a.height) else {
                return Err(Error::InvalidParameter(
                    "--width and --height are required for frames".into(),
                ));
            };
            let len = fs::metadata(&a.input)?.len();
            let spec = FrameSetSpec::for_byte_len(w, h, len)?;
            ingest_frames(&a.input, &spec)
        }
    }
}

fn print_point(label: &str, p: &RatePoint) {
    println!(
        "{label}rate {} bps, PSNR {} dB, SNR {} dB, MSE {}",
        sig6(p.rate),
        sig6(p.psnr_db),
        sig6(p.snr_db),
        sig6(p.mse)
    );
}

/// Usage is reported at the searched step with `--target-rate`, otherwise
/// at the codebook's own quantizer.
pub fn eval(a: &EvalArgs) -> Result<()> {
    let rec = Recorder::start();
    let codebook = io::read_codebook(&a.codebook)?;
    let blocks = load_blocks(a, &codebook)?;
    let opts = EvalOptions {
        side_info: match a.side_info {
            SideInfoArg::Entropy => SideInfoMode::IndexEntropy,
            SideInfoArg::Fixed => SideInfoMode::FixedLog2N,
        },
        peak: a.peak,
    };

    let (points, usage_codebook) = if let Some(target) = a.target_rate {
        let found = find_step_for_rate(&blocks, &codebook, target, DEFAULT_RATE_TOL, &opts)?;
        println!("step {} reaches rate {} bps", sig6(found.step), sig6(found.rate));
        let cb = codebook.with_quantizer(QuantizerSpec::uniform(codebook.dim(), found.step, found.step)?)?;
        (sweep_rate_points(&blocks, &codebook, &[found.step], &opts)?, cb)
    } else if let Some(grid) = &a.delta_grid {
        (sweep_rate_points(&blocks, &codebook, grid, &opts)?, codebook.clone())
    } else {
        (
            vec![evaluate_adaptive(&blocks, &codebook, &opts)?.rate_point],
            codebook.clone(),
        )
    };
    let usage = evaluate_adaptive(&blocks, &usage_codebook, &opts)?.usage;

    for p in &points {
        print_point("", p);
    }
    println!("codeword usage: {usage:?}");

    create_dir(&a.out)?;
    let rp = a.out.join("rate_points.csv");
    let up = a.out.join("usage.csv");
    io::write_rate_points(&rp, &points)?;
    io::write_usage(&up, &usage)?;
    rec.write(
        &a.out.join("manifest.json"),
        "eval",
        a,
        None,
        vec![a.codebook.clone(), a.input.clone()],
        vec![rp, up],
    )
}

pub fn bd(a: &BdArgs) -> Result<()> {
    let rec = Recorder::start();
    let ca = io::read_rate_points(&a.curve_a)?;
    let cb = io::read_rate_points(&a.curve_b)?;
    let m = bd_metrics(&ca, &cb)?;
    println!(
        "BD-PSNR {} dB, BD-rate {} %",
        sig6(m.bd_psnr_db),
        sig6(m.bd_rate_percent)
    );
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&m)? + "\n")?;
        rec.write(
            &sibling_manifest(out),
            "bd",
            a,
            None,
            vec![a.curve_a.clone(), a.curve_b.clone()],
            vec![out.clone()],
        )?;
    }
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let rec = Recorder::start();
    let len = fs::metadata(&a.frames)?.len();
    let spec = FrameSetSpec::for_byte_len(a.width, a.height, len)?;
    let blocks = ingest_frames(&a.frames, &spec)?;
    if blocks.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} frames do not fill a group of {}",
            spec.frame_count, spec.temporal_group
        )));
    }
    let covs = estimate_covariances(&blocks)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    io::write_covariance_set(&a.out, &covs)?;
    println!(
        "{} frames, {} stationary blocks of {} vectors (dim {})",
        spec.frame_count,
        covs.len(),
        blocks[0].len(),
        blocks[0].dim()
    );
    rec.write(
        &sibling_manifest(&a.out),
        "ingest",
        a,
        None,
        vec![a.frames.clone()],
        vec![PathBuf::from(&a.out)],
    )
}
