//! Operational adaptive transform coding: per-block codeword selection by
//! empirical MSE, rate accounting with side information, step-size search
//! and Bjøntegaard-delta comparison of rate-distortion curves.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{dequantize_raw, quantize_raw, QuantIndex, SymbolCounter};
use crate::types::{check_dim, QuantizerSpec, StationaryBlock, TransformCodebook, TransformMatrix};

pub const DEFAULT_PEAK: f64 = 255.0;
pub const DEFAULT_RATE_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCodingResult {
    pub chosen_index: usize,
    /// Mean squared error per vector, `(1/|B|)·Σ‖X − X̂‖²`.
    pub mse: f64,
    /// Quantization indices of the chosen codeword, row-major `|B|×k`.
    pub coeff_indices: Vec<QuantIndex>,
    /// Block-local coefficient entropy, per-position estimates averaged.
    pub bits_per_sample_est: f64,
    /// Per-vector MSE of every codeword, in codebook order.
    pub candidate_mse: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub rate: f64,
    pub psnr_db: f64,
    pub snr_db: f64,
    /// Mean squared error per sample.
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SideInfoMode {
    FixedLog2N,
    #[default]
    IndexEntropy,
}

impl std::str::FromStr for SideInfoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "log2n" => Ok(SideInfoMode::FixedLog2N),
            "entropy" => Ok(SideInfoMode::IndexEntropy),
            other => Err(Error::InvalidParameter(format!("unknown side-info mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub side_info: SideInfoMode,
    pub peak: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            side_info: SideInfoMode::IndexEntropy,
            peak: DEFAULT_PEAK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub chosen_index: usize,
    pub mse: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rate_point: RatePoint,
    pub coefficient_rate: f64,
    pub side_info_rate: f64,
    pub blocks: Vec<BlockDiagnostics>,
    pub usage: Vec<u64>,
}

/// Squared error of one codeword on one block, summed over vectors.
fn block_error(block: &StationaryBlock, t: &TransformMatrix, q: &QuantizerSpec) -> f64 {
    let k = block.dim();
    let mut y = vec![0.0; k];
    let mut xr = vec![0.0; k];
    let mut err = 0.0;
    for x in block.vectors() {
        t.forward(x, &mut y);
        for (j, v) in y.iter_mut().enumerate() {
            let (d, z) = (q.steps()[j], q.dead_zones()[j]);
            *v = dequantize_raw(quantize_raw(*v, d, z), d, z);
        }
        t.inverse(&y, &mut xr);
        err += x.iter().zip(&xr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    err
}

fn check_block(block: &StationaryBlock, codebook: &TransformCodebook) -> Result<()> {
    check_dim(codebook.dim(), block.dim())?;
    if block.is_empty() {
        return Err(Error::EmptyBlock);
    }
    Ok(())
}

/// Index of the smallest value, ties to the lowest index.
fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Selects the codeword with the lowest empirical MSE on `block`.
fn select(block: &StationaryBlock, codebook: &TransformCodebook) -> (usize, Vec<f64>) {
    let errors: Vec<f64> = codebook
        .matrices()
        .iter()
        .map(|t| block_error(block, t, codebook.quantizer()))
        .collect();
    (argmin_lowest(&errors), errors)
}

fn count_symbols(block: &StationaryBlock, t: &TransformMatrix, q: &QuantizerSpec, counters: &mut [SymbolCounter]) {
    let mut y = vec![0.0; block.dim()];
    for x in block.vectors() {
        t.forward(x, &mut y);
        for (j, &v) in y.iter().enumerate() {
            counters[j].push(quantize_raw(v, q.steps()[j], q.dead_zones()[j]));
        }
    }
}

fn mean_entropy(counters: &[SymbolCounter]) -> f64 {
    counters.iter().map(SymbolCounter::entropy).sum::<f64>() / counters.len() as f64
}

pub fn encode_block(block: &StationaryBlock, codebook: &TransformCodebook) -> Result<BlockCodingResult> {
    check_block(block, codebook)?;
    let (chosen, errors) = select(block, codebook);
    let n = block.len() as f64;
    let t = codebook.matrix(chosen);
    let q = codebook.quantizer();
    let k = block.dim();
    let mut coeff_indices = Vec::with_capacity(block.data().len());
    let mut counters = vec![SymbolCounter::new(); k];
    let mut y = vec![0.0; k];
    for x in block.vectors() {
        t.forward(x, &mut y);
        for (j, &v) in y.iter().enumerate() {
            let i = quantize_raw(v, q.steps()[j], q.dead_zones()[j]);
            counters[j].push(i);
            coeff_indices.push(QuantIndex(i));
        }
    }
    Ok(BlockCodingResult {
        chosen_index: chosen,
        mse: errors[chosen] / n,
        coeff_indices,
        bits_per_sample_est: mean_entropy(&counters),
        candidate_mse: errors.iter().map(|e| e / n).collect(),
    })
}

/// Reconstructs a block from its coding result.
pub fn decode_block(result: &BlockCodingResult, codebook: &TransformCodebook) -> Result<Vec<f64>> {
    let k = codebook.dim();
    if result.chosen_index >= codebook.size() {
        return Err(Error::DimensionMismatch {
            expected: codebook.size(),
            found: result.chosen_index + 1,
        });
    }
    if result.coeff_indices.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            expected: k * result.coeff_indices.len().div_ceil(k),
            found: result.coeff_indices.len(),
        });
    }
    let t = codebook.matrix(result.chosen_index);
    let q = codebook.quantizer();
    let mut out = vec![0.0; result.coeff_indices.len()];
    let mut y = vec![0.0; k];
    for (idx, xr) in result.coeff_indices.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        for (j, i) in idx.iter().enumerate() {
            y[j] = dequantize_raw(i.0, q.steps()[j], q.dead_zones()[j]);
        }
        t.inverse(&y, xr);
    }
    Ok(out)
}

fn decibels(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Codes every block with its best codeword and measures rate and quality.
pub fn evaluate_adaptive(
    blocks: &[StationaryBlock],
    codebook: &TransformCodebook,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput("block list"));
    }
    for b in blocks {
        check_block(b, codebook)?;
    }
    if !(opts.peak > 0.0 && opts.peak.is_finite()) {
        return Err(Error::InvalidParameter("PSNR peak must be positive".into()));
    }
    let k = codebook.dim();
    let coded: Vec<(BlockDiagnostics, Vec<SymbolCounter>)> = blocks
        .par_iter()
        .map(|b| {
            let (chosen, errors) = select(b, codebook);
            let mut counters = vec![SymbolCounter::new(); k];
            count_symbols(b, codebook.matrix(chosen), codebook.quantizer(), &mut counters);
            let diag = BlockDiagnostics {
                chosen_index: chosen,
                mse: errors[chosen] / b.len() as f64,
                energy: b.energy(),
            };
            (diag, counters)
        })
        .collect();

    let mut counters = vec![SymbolCounter::new(); k];
    let mut usage = vec![0u64; codebook.size()];
    let mut total_err = 0.0;
    let mut total_energy = 0.0;
    let mut samples = 0usize;
    let mut diagnostics = Vec::with_capacity(blocks.len());
    for ((diag, c), b) in coded.into_iter().zip(blocks) {
        for (acc, part) in counters.iter_mut().zip(&c) {
            acc.merge(part);
        }
        usage[diag.chosen_index] += 1;
        total_err += diag.mse * b.len() as f64;
        total_energy += diag.energy;
        samples += b.data().len();
        diagnostics.push(diag);
    }

    let coefficient_rate = mean_entropy(&counters);
    let side_bits_per_block = match opts.side_info {
        SideInfoMode::FixedLog2N => (codebook.size() as f64).log2(),
        SideInfoMode::IndexEntropy => crate::quantizer::entropy_from_counts(usage.iter().copied()),
    };
    let side_info_rate = side_bits_per_block * blocks.len() as f64 / samples as f64;
    let mse = total_err / samples as f64;
    Ok(Evaluation {
        rate_point: RatePoint {
            rate: coefficient_rate + side_info_rate,
            psnr_db: decibels(opts.peak * opts.peak, mse),
            snr_db: decibels(total_energy, total_err),
            mse,
        },
        coefficient_rate,
        side_info_rate,
        blocks: diagnostics,
        usage,
    })
}

fn with_step(codebook: &TransformCodebook, step: f64) -> Result<TransformCodebook> {
    codebook.with_quantizer(QuantizerSpec::uniform(codebook.dim(), step, step)?)
}

/// One rate point per step size, with the dead zone equal to the step.
pub fn sweep_rate_points(
    blocks: &[StationaryBlock],
    codebook: &TransformCodebook,
    steps: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<RatePoint>> {
    if steps.is_empty() {
        return Err(Error::EmptyInput("step grid"));
    }
    if steps.iter().any(|&d| !(d > 0.0 && d.is_finite())) || steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "step grid must be positive and increasing".into(),
        ));
    }
    steps
        .iter()
        .map(|&d| Ok(evaluate_adaptive(blocks, &with_step(codebook, d)?, opts)?.rate_point))
        .collect()
}

/// Root-mean-square sample value over all blocks.
pub fn source_rms(blocks: &[StationaryBlock]) -> f64 {
    let (energy, samples) = blocks
        .iter()
        .fold((0.0, 0usize), |(e, n), b| (e + b.energy(), n + b.data().len()));
    if samples == 0 {
        0.0
    } else {
        (energy / samples as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSearch {
    pub step: f64,
    pub rate: f64,
    pub probes: usize,
}

/// Bisects the step size (dead zone equal to step) until the measured rate
/// is within `tol` of `target`.
pub fn find_step_for_rate(
    blocks: &[StationaryBlock],
    codebook: &TransformCodebook,
    target: f64,
    tol: f64,
    opts: &EvalOptions,
) -> Result<StepSearch> {
    if !(target >= 0.0 && target.is_finite()) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "rate target must be non-negative and tol positive".into(),
        ));
    }
    let sigma = source_rms(blocks);
    if sigma == 0.0 {
        return Err(Error::InvalidParameter("source has zero energy".into()));
    }
    let rate_at = |d: f64| -> Result<f64> {
        Ok(evaluate_adaptive(blocks, &with_step(codebook, d)?, opts)?
            .rate_point
            .rate)
    };
    let (lo0, hi0) = (1e-4 * sigma, 1e2 * sigma);
    let mut probes = 2;
    let r_lo = rate_at(lo0)?;
    let r_hi = rate_at(hi0)?;
    let mut nearest = if (r_lo - target).abs() < (r_hi - target).abs() {
        (lo0, r_lo)
    } else {
        (hi0, r_hi)
    };
    if (nearest.1 - target).abs() <= tol {
        return Ok(StepSearch {
            step: nearest.0,
            rate: nearest.1,
            probes,
        });
    }
    if target > r_lo || target < r_hi {
        return Err(Error::BracketExhausted {
            lo: lo0,
            hi: hi0,
            target,
            nearest: nearest.1,
        });
    }
    let (mut lo, mut hi) = (lo0, hi0);
    while hi / lo > 1.0 + 1e-12 {
        let mid = (lo * hi).sqrt();
        let r = rate_at(mid)?;
        probes += 1;
        if (r - target).abs() < (nearest.1 - target).abs() {
            nearest = (mid, r);
        }
        if (r - target).abs() <= tol {
            return Ok(StepSearch {
                step: mid,
                rate: r,
                probes,
            });
        }
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BracketExhausted {
        lo: lo0,
        hi: hi0,
        target,
        nearest: nearest.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdMetrics {
    pub bd_psnr_db: f64,
    pub bd_rate_percent: f64,
}

/// Least-squares cubic fit, coefficients in ascending powers.
fn polyfit3(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(x.len(), 4, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidParameter(format!("curve fit failed: {e}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curve fit"));
    }
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

fn poly_integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn curve_columns(curve: &[RatePoint]) -> Result<(Vec<f64>, Vec<f64>)> {
    if curve.len() < 4 {
        return Err(Error::InsufficientPoints { found: curve.len() });
    }
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.rate, p.psnr_db)).collect();
    if pts.iter().any(|&(r, q)| !(r > 0.0 && r.is_finite() && q.is_finite())) {
        return Err(Error::InvalidParameter(
            "BD metrics need positive rates and finite PSNR".into(),
        ));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts.iter().map(|&(r, q)| (r.log10(), q)).unzip())
}

/// Bjøntegaard deltas of `curve_b` relative to `curve_a`: average PSNR gain
/// at equal rate and average rate change (percent) at equal PSNR.
pub fn bd_metrics(curve_a: &[RatePoint], curve_b: &[RatePoint]) -> Result<BdMetrics> {
    let (la, qa) = curve_columns(curve_a)?;
    let (lb, qb) = curve_columns(curve_b)?;

    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (lo_r, hi_r) = (min(&la).max(min(&lb)), max(&la).min(max(&lb)));
    let (lo_q, hi_q) = (min(&qa).max(min(&qb)), max(&qa).min(max(&qb)));
    if !(hi_r > lo_r) || !(hi_q > lo_q) {
        return Err(Error::NoOverlap);
    }

    let pa = polyfit3(&la, &qa)?;
    let pb = polyfit3(&lb, &qb)?;
    let bd_psnr_db = (poly_integral(&pb, lo_r, hi_r) - poly_integral(&pa, lo_r, hi_r)) / (hi_r - lo_r);

    let ra = polyfit3(&qa, &la)?;
    let rb = polyfit3(&qb, &lb)?;
    let avg_log = (poly_integral(&rb, lo_q, hi_q) - poly_integral(&ra, lo_q, hi_q)) / (hi_q - lo_q);
    let bd_rate_percent = (10f64.powf(avg_log) - 1.0) * 100.0;

    Ok(BdMetrics {
        bd_psnr_db,
        bd_rate_percent,
    })
}
