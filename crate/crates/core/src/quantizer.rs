//! Infinite-support dead-zone uniform scalar quantizer.
//!
//! The zero cell is `(−z/2, z/2)`; beyond it the cells have width `Δ` and
//! are reconstructed at their midpoints. The closed-form Laplacian MSE below
//! was derived under midpoint reconstruction, and
//! [`numeric_quant_mse_oracle`] checks it by direct integration.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantIndex(pub i64);

impl QuantIndex {
    pub const ZERO: QuantIndex = QuantIndex(0);

    pub fn value(self) -> i64 {
        self.0
    }
}

fn check_params(step: f64, dead_zone: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if !(dead_zone.is_finite() && dead_zone >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dead zone must be non-negative, got {dead_zone}"
        )));
    }
    Ok(())
}

pub fn quantize(y: f64, step: f64, dead_zone: f64) -> Result<QuantIndex> {
    check_params(step, dead_zone)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("quantizer input"));
    }
    Ok(QuantIndex(quantize_raw(y, step, dead_zone)))
}

pub fn dequantize(i: QuantIndex, step: f64, dead_zone: f64) -> Result<f64> {
    check_params(step, dead_zone)?;
    Ok(dequantize_raw(i.0, step, dead_zone))
}

/// Unchecked index rule for hot loops; parameters are validated upstream by
/// [`crate::types::QuantizerSpec`].
#[inline]
pub(crate) fn quantize_raw(y: f64, step: f64, dead_zone: f64) -> i64 {
    let a = y.abs();
    let half = 0.5 * dead_zone;
    if a < half {
        return 0;
    }
    let mag = ((a - half) / step).floor() as i64 + 1;
    if y < 0.0 {
        -mag
    } else {
        mag
    }
}

#[inline]
pub(crate) fn dequantize_raw(i: i64, step: f64, dead_zone: f64) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let mag = 0.5 * dead_zone + (i.unsigned_abs() as f64 - 1.0) * step + 0.5 * step;
    if i < 0 {
        -mag
    } else {
        mag
    }
}

/// Plug-in entropy estimate in bits per symbol.
pub fn empirical_entropy(indices: &[QuantIndex]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("quantization indices"));
    }
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for i in indices {
        *counts.entry(i.0).or_default() += 1;
    }
    Ok(entropy_from_counts(counts.values().copied()))
}

pub(crate) fn entropy_from_counts(counts: impl IntoIterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single symbol gives -1·log2(1) = -0.0
    h.max(0.0)
}

/// Accumulates symbol counts, for entropy estimates over streams too large to
/// hold as index lists.
#[derive(Debug, Clone, Default)]
pub struct SymbolCounter {
    counts: HashMap<i64, u64>,
}

impl SymbolCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, symbol: i64) {
        *self.counts.entry(symbol).or_default() += 1;
    }

    pub fn merge(&mut self, other: &SymbolCounter) {
        for (&s, &c) in &other.counts {
            *self.counts.entry(s).or_default() += c;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn entropy(&self) -> f64 {
        // sorted so the floating-point sum does not depend on hash order
        let mut pairs: Vec<(i64, u64)> = self.counts.iter().map(|(&s, &c)| (s, c)).collect();
        pairs.sort_unstable();
        entropy_from_counts(pairs.into_iter().map(|(_, c)| c))
    }
}

fn check_laplace(variance: f64, step: f64, dead_zone: f64) -> Result<()> {
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance must be positive, got {variance}"
        )));
    }
    check_params(step, dead_zone)
}

// Power-series coefficients of x·coth(x/2) − 2 = Σ_{n≥1} C[n−1]·x^{2n},
// C[n−1] = 2·B_{2n}/(2n)!. Twenty terms reach full precision for x ≤ 2.
const COTH_SERIES: [f64; 20] = [
    1.666_666_666_666_666_7e-1,
    -2.777_777_777_777_777_8e-3,
    6.613_756_613_756_613_8e-5,
    -1.653_439_153_439_153_4e-6,
    4.175_351_397_573_619_8e-8,
    -1.056_838_027_737_498_6e-9,
    2.676_507_306_136_935_8e-11,
    -6.779_360_592_645_165_7e-13,
    1.717_212_411_255_568_9e-14,
    -4.349_737_397_116_123_7e-16,
    1.101_800_565_672_045_9e-17,
    -2.790_892_937_162_504_7e-19,
    7.069_414_079_258_934_9e-21,
    -1.790_703_485_407_509_4e-22,
    4.535_904_904_675_366_1e-24,
    -1.148_958_133_774_440_5e-25,
    2.910_344_951_229_729_8e-27,
    -7.371_989_881_330_620_4e-29,
    1.867_346_851_419_008_9e-30,
    -4.730_044_831_401_259_9e-32,
];

// Below this argument the closed forms lose digits to cancellation.
const SERIES_SWITCH: f64 = 2.0;

/// `q(x) = x²/4 − x·coth(x/2) + 2`, which behaves like `x²/12` near zero.
fn q_term(x: f64) -> f64 {
    if x < SERIES_SWITCH {
        let x2 = x * x;
        let mut pow = x2 * x2;
        let mut acc = x2 / 12.0;
        for c in &COTH_SERIES[1..] {
            acc -= c * pow;
            pow *= x2;
        }
        acc
    } else {
        0.25 * x * x - x / (0.5 * x).tanh() + 2.0
    }
}

/// `2q(x) − x·q'(x)`, which behaves like `−x⁴/180` near zero.
fn q_combo(x: f64) -> f64 {
    if x < SERIES_SWITCH {
        let x2 = x * x;
        let mut pow = x2 * x2;
        let mut acc = 0.0;
        for (i, c) in COTH_SERIES.iter().enumerate().skip(1) {
            let n = (i + 1) as f64;
            acc += (2.0 * n - 2.0) * c * pow;
            pow *= x2;
        }
        acc
    } else {
        let half = 0.5 * x;
        let sh = half.sinh();
        let dq = half - 1.0 / half.tanh() + half / (sh * sh);
        2.0 * q_term(x) - x * dq
    }
}

/// `e^{−s}·(e^s − 1 − s − s²/2)`.
fn damped_tail3(s: f64) -> f64 {
    if s < SERIES_SWITCH {
        let mut term = s * s * s / 6.0;
        let mut acc = 0.0;
        for n in 3..40 {
            acc += term;
            term *= s / (n as f64 + 1.0);
        }
        (-s).exp() * acc
    } else {
        1.0 - (-s).exp() * (1.0 + s + 0.5 * s * s)
    }
}

/// `e^{−s}·(4(e^s − 1 − s − s²/2) − s³)`.
fn damped_combo3(s: f64) -> f64 {
    if s < SERIES_SWITCH {
        // 4·Σ_{n≥3} sⁿ/n! − s³ = −s³/3 + 4·Σ_{n≥4} sⁿ/n!
        let s3 = s * s * s;
        let mut term = s3 * s / 24.0;
        let mut acc = -s3 / 3.0;
        for n in 4..40 {
            acc += 4.0 * term;
            term *= s / (n as f64 + 1.0);
        }
        (-s).exp() * acc
    } else {
        4.0 * damped_tail3(s) - s * s * s * (-s).exp()
    }
}

/// MSE of quantizing a zero-mean Laplace variable of variance `σ²` with step
/// `Δ` and dead zone `z`, using the closed form
/// `θ = 2b² − e^{−z/2b}((z² − Δ²)/4 + zb + Δb·(e^{Δ/b} + 1)/(e^{Δ/b} − 1))`,
/// `b = √(σ²/2)`.
///
/// Evaluated as `b²·h(z/2b, Δ/b)` with the leading terms cancelled
/// analytically, so the result keeps full relative precision at high rate
/// where `θ ≪ σ²`.
pub fn laplace_quant_mse(variance: f64, step: f64, dead_zone: f64) -> Result<f64> {
    check_laplace(variance, step, dead_zone)?;
    Ok(laplace_mse_unchecked(variance, step, dead_zone))
}

pub(crate) fn laplace_mse_unchecked(variance: f64, step: f64, dead_zone: f64) -> f64 {
    let b = (0.5 * variance).sqrt();
    let s = dead_zone / (2.0 * b);
    let x = step / b;
    let h = 2.0 * damped_tail3(s) + (-s).exp() * q_term(x);
    (b * b * h).max(0.0)
}

/// `dθ/dσ²` of [`laplace_quant_mse`], equal to `(dθ/db)/(4b)`.
pub fn laplace_quant_mse_dvar(variance: f64, step: f64, dead_zone: f64) -> Result<f64> {
    check_laplace(variance, step, dead_zone)?;
    Ok(laplace_dvar_unchecked(variance, step, dead_zone))
}

pub(crate) fn laplace_dvar_unchecked(variance: f64, step: f64, dead_zone: f64) -> f64 {
    let b = (0.5 * variance).sqrt();
    let s = dead_zone / (2.0 * b);
    let x = step / b;
    // dθ/db = b·(2h − s·∂h/∂s − x·∂h/∂x)
    let w = damped_combo3(s) + (-s).exp() * (q_combo(x) + s * q_term(x));
    0.25 * w
}

/// Numerically integrates `E[(Y − Ŷ)²]` for a Laplace `Y` through the
/// quantize/dequantize pair, cell by cell, with adaptive Gauss–Kronrod
/// quadrature. Independent of the closed form; used to validate it.
pub fn numeric_quant_mse_oracle(variance: f64, step: f64, dead_zone: f64) -> Result<f64> {
    check_laplace(variance, step, dead_zone)?;
    let b = (0.5 * variance).sqrt();
    let density = |y: f64| (-y / b).exp() / (2.0 * b);
    let err_sq = |y: f64| {
        let i = quantize_raw(y, step, dead_zone);
        let r = y - dequantize_raw(i, step, dead_zone);
        r * r * density(y)
    };

    // beyond 60b the remaining mass is ~e^{−60}
    let horizon = 60.0 * b;
    let tail_tol = 1e-15 * variance.min(step * step);
    let half = 0.5 * dead_zone;

    let mut total = integrate(&err_sq, 0.0, half.min(horizon));
    if half < horizon {
        let mut n: u64 = 1;
        loop {
            let lo = half + (n - 1) as f64 * step;
            let hi = lo + step;
            total += integrate(&err_sq, lo, hi.min(horizon));
            // every later cell has squared error at most Δ²/4
            let tail = 0.25 * step * step * (-hi / b).exp();
            if tail < tail_tol || hi > horizon {
                break;
            }
            n += 1;
        }
    }
    Ok(2.0 * total)
}

// Gauss–Kronrod 7/15 nodes and weights on [−1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    integrate_adaptive(f, a, b, 0)
}

fn integrate_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    let tol = 1e-16 + 1e-13 * value.abs();
    if err <= tol || depth >= 40 {
        return value;
    }
    let m = 0.5 * (a + b);
    integrate_adaptive(f, a, m, depth + 1) + integrate_adaptive(f, m, b, depth + 1)
}
