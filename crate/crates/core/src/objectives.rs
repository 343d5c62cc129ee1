//! Differentiable transform-coding MSE models `Θ(T, C)` and their Euclidean
//! gradients with respect to the entries of `T`.
//!
//! Both models depend on `T` only through the coefficient variances
//! `σ²_j = (T C Tᵀ)_jj`, whose gradient is `2 e_j e_jᵀ T C`. Each model thus
//! reduces to a per-coefficient sensitivity `∂Θ/∂σ²_j` that scales row `j`
//! of `T C`.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantizer::{laplace_dvar_unchecked, laplace_mse_unchecked};
use crate::types::{check_dim, variances_from_tc, CovarianceMatrix, ModelTag, QuantizerSpec, TransformMatrix};

/// Variances at or below this fraction of `trace(C)` are treated as
/// degenerate.
pub const DEGENERATE_VARIANCE_REL: f64 = 1e-12;

const PAR_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MseModel {
    pub tag: ModelTag,
    /// Used by the Laplacian model only.
    pub quantizer: Option<QuantizerSpec>,
    /// Target rate `R0` in bits per vector; used by the high-rate model only.
    pub target_rate: f64,
}

impl MseModel {
    pub fn high_rate(target_rate: f64) -> Self {
        MseModel {
            tag: ModelTag::HighRateGaussian,
            quantizer: None,
            target_rate,
        }
    }

    pub fn laplacian(quantizer: QuantizerSpec) -> Self {
        MseModel {
            tag: ModelTag::Laplacian,
            quantizer: Some(quantizer),
            target_rate: 0.0,
        }
    }

    fn laplace_quantizer(&self) -> Result<&QuantizerSpec> {
        self.quantizer
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("Laplacian model requires a quantizer".into()))
    }

    pub fn theta(&self, t: &TransformMatrix, c: &CovarianceMatrix) -> Result<f64> {
        match self.tag {
            ModelTag::HighRateGaussian => theta_highrate(t, c, self.target_rate),
            ModelTag::Laplacian => theta_laplace(t, c, self.laplace_quantizer()?),
        }
    }

    pub fn gradient(&self, t: &TransformMatrix, c: &CovarianceMatrix) -> Result<DMatrix<f64>> {
        match self.tag {
            ModelTag::HighRateGaussian => grad_theta_highrate(t, c, self.target_rate),
            ModelTag::Laplacian => grad_theta_laplace(t, c, self.laplace_quantizer()?),
        }
    }
}

struct Prepared {
    tc: DMatrix<f64>,
    variances: Vec<f64>,
}

/// Computes `T C` and the coefficient variances, rejecting degenerate ones.
/// Returns `None` for an all-zero covariance, whose coding error is zero for
/// every transform.
fn prepare(t: &TransformMatrix, c: &CovarianceMatrix) -> Result<Option<Prepared>> {
    check_dim(t.dim(), c.dim())?;
    let trace = c.trace();
    if trace == 0.0 {
        return Ok(None);
    }
    let tc = t.as_matrix() * c.as_matrix();
    let variances = variances_from_tc(t.as_matrix(), &tc, trace);
    let threshold = DEGENERATE_VARIANCE_REL * trace;
    if let Some((index, &variance)) = variances.iter().enumerate().find(|(_, &v)| v <= threshold) {
        return Err(Error::DegenerateVariance {
            index,
            variance,
            threshold,
        });
    }
    Ok(Some(Prepared { tc, variances }))
}

fn highrate_value(variances: &[f64], target_rate: f64) -> f64 {
    let k = variances.len() as f64;
    let log_geo = variances.iter().map(|v| v.ln()).sum::<f64>() / k;
    (k * PI * E / 6.0) * log_geo.exp() * (-2.0 * target_rate / k).exp2()
}

/// High-rate Gaussian MMSE `(kπe/6)·(Π σ²_j)^{1/k}·2^{−2R0/k}`.
pub fn theta_highrate(t: &TransformMatrix, c: &CovarianceMatrix, target_rate: f64) -> Result<f64> {
    Ok(match prepare(t, c)? {
        Some(p) => highrate_value(&p.variances, target_rate),
        None => 0.0,
    })
}

/// Gradient of [`theta_highrate`], including the chain-rule factor of the
/// k-th root: row `j` is `Θ·2/(k σ²_j)·(T C)_j`.
pub fn grad_theta_highrate(t: &TransformMatrix, c: &CovarianceMatrix, target_rate: f64) -> Result<DMatrix<f64>> {
    let k = t.dim();
    let Some(p) = prepare(t, c)? else {
        return Ok(DMatrix::zeros(k, k));
    };
    let theta = highrate_value(&p.variances, target_rate);
    let kf = k as f64;
    let mut g = p.tc;
    for (j, &v) in p.variances.iter().enumerate() {
        let s = theta * 2.0 / (kf * v);
        g.row_mut(j).scale_mut(s);
    }
    Ok(g)
}

/// Laplacian model `Σ_j θ(σ²_j, Δ_j, z_j)`.
pub fn theta_laplace(t: &TransformMatrix, c: &CovarianceMatrix, q: &QuantizerSpec) -> Result<f64> {
    check_dim(t.dim(), q.dim())?;
    Ok(match prepare(t, c)? {
        Some(p) => p
            .variances
            .iter()
            .zip(q.steps().iter().zip(q.dead_zones()))
            .map(|(&v, (&d, &z))| laplace_mse_unchecked(v, d, z))
            .sum(),
        None => 0.0,
    })
}

/// Gradient of [`theta_laplace`]: row `j` is `2·∂θ/∂σ²_j·(T C)_j`.
pub fn grad_theta_laplace(t: &TransformMatrix, c: &CovarianceMatrix, q: &QuantizerSpec) -> Result<DMatrix<f64>> {
    check_dim(t.dim(), q.dim())?;
    let k = t.dim();
    let Some(p) = prepare(t, c)? else {
        return Ok(DMatrix::zeros(k, k));
    };
    let mut g = p.tc;
    for (j, &v) in p.variances.iter().enumerate() {
        let s = 2.0 * laplace_dvar_unchecked(v, q.steps()[j], q.dead_zones()[j]);
        g.row_mut(j).scale_mut(s);
    }
    Ok(g)
}

/// Covariances per batched `T·[C₁ … C_n]` product.
const CHUNK: usize = 64;

/// Runs `f` on consecutive chunks of `covs` together with `T` times the
/// chunk's covariances laid side by side. Chunks are fixed, so the results
/// do not depend on the thread count.
fn map_chunks<R, F>(t: &TransformMatrix, covs: &[&CovarianceMatrix], f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&[&CovarianceMatrix], &DMatrix<f64>) -> Result<R> + Sync,
{
    let k = t.dim();
    for c in covs {
        check_dim(k, c.dim())?;
    }
    let run = |chunk: &[&CovarianceMatrix]| {
        let mut x = DMatrix::zeros(k, k * chunk.len());
        for (i, c) in chunk.iter().enumerate() {
            x.columns_mut(i * k, k).copy_from(c.as_matrix());
        }
        f(chunk, &(t.as_matrix() * x))
    };
    if covs.len() >= PAR_THRESHOLD {
        covs.par_chunks(CHUNK).map(run).collect()
    } else {
        covs.chunks(CHUNK).map(run).collect()
    }
}

/// Variances of one covariance from its block of `T C`, or `None` when the
/// covariance is zero.
fn block_variances(t: &DMatrix<f64>, tc: &DMatrixView<f64>, c: &CovarianceMatrix) -> Result<Option<Vec<f64>>> {
    let trace = c.trace();
    if trace == 0.0 {
        return Ok(None);
    }
    let clamp = 1e-12 * trace.abs().max(1.0);
    let threshold = DEGENERATE_VARIANCE_REL * trace;
    let mut variances = Vec::with_capacity(t.nrows());
    for j in 0..t.nrows() {
        let mut v = tc.row(j).dot(&t.row(j));
        if v < 0.0 && v >= -clamp {
            v = 0.0;
        }
        if v <= threshold {
            return Err(Error::DegenerateVariance {
                index: j,
                variance: v,
                threshold,
            });
        }
        variances.push(v);
    }
    Ok(Some(variances))
}

impl MseModel {
    fn value_from_variances(&self, variances: &[f64]) -> Result<f64> {
        Ok(match self.tag {
            ModelTag::HighRateGaussian => highrate_value(variances, self.target_rate),
            ModelTag::Laplacian => {
                let q = self.laplace_quantizer()?;
                variances
                    .iter()
                    .zip(q.steps().iter().zip(q.dead_zones()))
                    .map(|(&v, (&d, &z))| laplace_mse_unchecked(v, d, z))
                    .sum()
            }
        })
    }

    /// `2·∂Θ/∂σ²_j`, the factor applied to row `j` of `T C`.
    fn row_scales(&self, variances: &[f64]) -> Result<Vec<f64>> {
        Ok(match self.tag {
            ModelTag::HighRateGaussian => {
                let theta = highrate_value(variances, self.target_rate);
                let kf = variances.len() as f64;
                variances.iter().map(|&v| theta * 2.0 / (kf * v)).collect()
            }
            ModelTag::Laplacian => {
                let q = self.laplace_quantizer()?;
                variances
                    .iter()
                    .zip(q.steps().iter().zip(q.dead_zones()))
                    .map(|(&v, (&d, &z))| 2.0 * laplace_dvar_unchecked(v, d, z))
                    .collect()
            }
        })
    }

    fn check_quantizer(&self, k: usize) -> Result<()> {
        if self.tag == ModelTag::Laplacian {
            check_dim(k, self.laplace_quantizer()?.dim())?;
        }
        Ok(())
    }
}

/// Sample average of `Θ(T, C)` over `covs`.
pub fn avg_objective(model: &MseModel, t: &TransformMatrix, covs: &[&CovarianceMatrix]) -> Result<f64> {
    if covs.is_empty() {
        return Err(Error::EmptyInput("covariance list"));
    }
    model.check_quantizer(t.dim())?;
    let k = t.dim();
    let sums = map_chunks(t, covs, |chunk, tx| {
        let mut sum = 0.0;
        for (i, c) in chunk.iter().enumerate() {
            if let Some(v) = block_variances(t.as_matrix(), &tx.columns(i * k, k), c)? {
                sum += model.value_from_variances(&v)?;
            }
        }
        Ok(sum)
    })?;
    Ok(sums.iter().sum::<f64>() / covs.len() as f64)
}

/// Sample average of the gradient over `covs`.
pub fn avg_gradient(model: &MseModel, t: &TransformMatrix, covs: &[&CovarianceMatrix]) -> Result<DMatrix<f64>> {
    if covs.is_empty() {
        return Err(Error::EmptyInput("covariance list"));
    }
    model.check_quantizer(t.dim())?;
    let k = t.dim();
    let partial = map_chunks(t, covs, |chunk, tx| {
        let mut acc = DMatrix::zeros(k, k);
        for (i, c) in chunk.iter().enumerate() {
            let tc = tx.columns(i * k, k);
            if let Some(v) = block_variances(t.as_matrix(), &tc, c)? {
                let scales = model.row_scales(&v)?;
                for a in 0..k {
                    for (j, &s) in scales.iter().enumerate() {
                        acc[(j, a)] += s * tc[(j, a)];
                    }
                }
            }
        }
        Ok(acc)
    })?;
    let mut acc = DMatrix::zeros(k, k);
    for g in &partial {
        acc += g;
    }
    Ok(acc / covs.len() as f64)
}
