//! Block-coordinate-descent design of a transform codebook.
//!
//! Starting from an initial codebook, the designer alternates two exact or
//! descent steps on the ensemble-average model MSE:
//!
//! 1. assign every training covariance to the codeword with the lowest
//!    model MSE (ties go to the lowest index);
//! 2. re-optimize each codeword over the orthogonal group for the
//!    covariances assigned to it, warm-started from its current value.
//!
//! It stops when the relative improvement of the average falls to
//! `epsilon` or after `max_outer_iters` rounds. Both steps can only lower
//! the average, so the recorded trace is non-increasing.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{minimize_on_ok, random_orthonormal, random_unit_tangent, retract, ManifoldOptParams};
use crate::objectives::{avg_gradient, avg_objective, MseModel, DEGENERATE_VARIANCE_REL};
use crate::types::{check_dim, default_dct, klt, CovarianceMatrix, QuantizerSpec, TransformCodebook, TransformMatrix};

/// Size of the tangent perturbation used when splitting or repairing a
/// codeword.
pub const SPLIT_PERTURBATION: f64 = 1e-3;

/// Outer-iteration cap for the short refinement runs between splits.
const SPLIT_REFINE_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub cell_sizes: Vec<usize>,
}

impl Partition {
    pub fn from_assignment(assignment: Vec<usize>, cells: usize) -> Self {
        let mut cell_sizes = vec![0; cells];
        for &a in &assignment {
            cell_sizes[a] += 1;
        }
        Partition { assignment, cell_sizes }
    }

    pub fn members(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == cell)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    RandomOrthonormal,
    KltSeeds,
    SplitFromOne,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-orthonormal" => Ok(InitMode::RandomOrthonormal),
            "klt" | "klt-seeds" => Ok(InitMode::KltSeeds),
            "split" | "split-from-one" => Ok(InitMode::SplitFromOne),
            other => Err(Error::InvalidParameter(format!("unknown init mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignConfig {
    pub codebook_size: usize,
    pub model: MseModel,
    /// Quantizer stored in the output codebook. Falls back to the model's
    /// quantizer, then to unit steps with matching dead zones.
    pub quantizer: Option<QuantizerSpec>,
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub init: InitMode,
    pub seed: u64,
    pub inner: ManifoldOptParams,
    pub append_dct: bool,
}

impl DesignConfig {
    pub fn new(codebook_size: usize, model: MseModel) -> Self {
        DesignConfig {
            codebook_size,
            model,
            quantizer: None,
            epsilon: 1e-4,
            max_outer_iters: 100,
            init: InitMode::SplitFromOne,
            seed: 0,
            inner: ManifoldOptParams::default(),
            append_dct: false,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.codebook_size == 0 {
            return Err(Error::InvalidParameter("codebook size must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("max_outer_iters must be positive".into()));
        }
        if let Some(q) = &self.model.quantizer {
            check_dim(k, q.dim())?;
        }
        if let Some(q) = &self.quantizer {
            check_dim(k, q.dim())?;
        }
        self.inner.validate()
    }

    fn codebook_quantizer(&self, k: usize) -> Result<QuantizerSpec> {
        match (&self.quantizer, &self.model.quantizer) {
            (Some(q), _) | (None, Some(q)) => Ok(q.clone()),
            (None, None) => QuantizerSpec::uniform(k, 1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    /// Ensemble-average model MSE of the initial codebook followed by one
    /// entry per outer iteration.
    pub objective_trace: Vec<f64>,
    pub final_partition: Partition,
    pub iterations: usize,
    pub converged: bool,
}

/// Assigns each covariance to its lowest-MSE codeword, ties to the lowest
/// index.
pub fn assign_partition(
    codebook: &TransformCodebook,
    covs: &[CovarianceMatrix],
    model: &MseModel,
) -> Result<Partition> {
    let scored = score_all(codebook.matrices(), covs, model)?;
    Ok(Partition::from_assignment(
        scored.iter().map(|&(i, _)| i).collect(),
        codebook.size(),
    ))
}

/// Best codeword index and its MSE for every covariance.
fn score_all(matrices: &[TransformMatrix], covs: &[CovarianceMatrix], model: &MseModel) -> Result<Vec<(usize, f64)>> {
    covs.par_iter()
        .map(|c| {
            let mut best = (0, f64::INFINITY);
            for (i, t) in matrices.iter().enumerate() {
                let v = model.theta(t, c)?;
                if v < best.1 {
                    best = (i, v);
                }
            }
            Ok(best)
        })
        .collect()
}

/// Compensated sum in slice order.
fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn cell_refs<'a>(partition: &Partition, covs: &'a [CovarianceMatrix], cell: usize) -> Vec<&'a CovarianceMatrix> {
    partition.members(cell).map(|m| &covs[m]).collect()
}

/// Per-cell sums of the model MSE under `partition`.
fn cell_totals(
    matrices: &[TransformMatrix],
    partition: &Partition,
    covs: &[CovarianceMatrix],
    model: &MseModel,
) -> Result<Vec<f64>> {
    (0..matrices.len())
        .map(|cell| {
            let refs = cell_refs(partition, covs, cell);
            let values: Vec<f64> = refs
                .par_iter()
                .map(|c| model.theta(&matrices[cell], c))
                .collect::<Result<_>>()?;
            Ok(stable_sum(values))
        })
        .collect()
}

fn ensemble_objective(
    matrices: &[TransformMatrix],
    partition: &Partition,
    covs: &[CovarianceMatrix],
    model: &MseModel,
) -> Result<f64> {
    let totals = cell_totals(matrices, partition, covs, model)?;
    Ok(stable_sum(totals) / covs.len() as f64)
}

/// Re-optimizes every non-empty cell's codeword, warm-started from the
/// current one. Empty cells receive a perturbed copy of the codeword whose
/// cell carries the largest total MSE.
pub fn update_codewords(
    partition: &Partition,
    covs: &[CovarianceMatrix],
    codebook: &TransformCodebook,
    config: &DesignConfig,
) -> Result<TransformCodebook> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    update_codewords_with(partition, covs, codebook, config, &mut rng)
}

fn update_codewords_with(
    partition: &Partition,
    covs: &[CovarianceMatrix],
    codebook: &TransformCodebook,
    config: &DesignConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TransformCodebook> {
    if partition.assignment.len() != covs.len() {
        return Err(Error::DimensionMismatch {
            expected: covs.len(),
            found: partition.assignment.len(),
        });
    }
    if partition.cell_sizes.len() != codebook.size() {
        return Err(Error::DimensionMismatch {
            expected: codebook.size(),
            found: partition.cell_sizes.len(),
        });
    }
    let model = &config.model;
    let old = codebook.matrices();

    let mut updated: Vec<TransformMatrix> = (0..codebook.size())
        .into_par_iter()
        .map(|cell| -> Result<TransformMatrix> {
            let refs = cell_refs(partition, covs, cell);
            if refs.is_empty() {
                return Ok(old[cell].clone());
            }
            let res = minimize_on_ok(
                |t| avg_objective(model, t, &refs),
                |t| avg_gradient(model, t, &refs),
                &old[cell],
                &config.inner,
            )?;
            if res.iterations > 0 && res.objective_value < res.objective_trace[0] {
                Ok(res.minimizer)
            } else {
                Ok(old[cell].clone())
            }
        })
        .collect::<Result<_>>()?;

    let empty: Vec<usize> = (0..codebook.size()).filter(|&c| partition.cell_sizes[c] == 0).collect();
    if !empty.is_empty() {
        let totals = cell_totals(&updated, partition, covs, model)?;
        let donor = argmax_lowest(&totals);
        for cell in empty {
            updated[cell] = perturb(&updated[donor], rng)?;
        }
    }

    let mut out = codebook.clone();
    out.replace_matrices(updated);
    Ok(out)
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn perturb(t: &TransformMatrix, rng: &mut ChaCha8Rng) -> Result<TransformMatrix> {
    let z = random_unit_tangent(t, rng);
    retract(t, &(z * SPLIT_PERTURBATION))
}

/// True when some transform could give `c` a degenerate coefficient
/// variance.
pub fn needs_ridge(c: &CovarianceMatrix) -> bool {
    let tr = c.trace();
    tr > 0.0 && c.min_eigenvalue() <= 10.0 * DEGENERATE_VARIANCE_REL * tr
}

/// Ridge-regularizes the covariances for which [`needs_ridge`] holds.
pub fn regularize_training_set(covs: &[CovarianceMatrix]) -> Vec<CovarianceMatrix> {
    covs.par_iter()
        .map(|c| if needs_ridge(c) { c.regularized() } else { c.clone() })
        .collect()
}

fn check_training_set(covs: &[CovarianceMatrix]) -> Result<usize> {
    let first = covs.first().ok_or(Error::EmptyTrainingSet)?;
    let k = first.dim();
    for c in covs {
        check_dim(k, c.dim())?;
    }
    Ok(k)
}

/// Builds the starting codebook according to `config.init`.
pub fn initialize_codebook(covs: &[CovarianceMatrix], config: &DesignConfig) -> Result<TransformCodebook> {
    let k = check_training_set(covs)?;
    config.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let quantizer = config.codebook_quantizer(k)?;
    let n = config.codebook_size;
    let matrices = match config.init {
        InitMode::RandomOrthonormal => (0..n).map(|_| random_orthonormal(k, &mut rng)).collect(),
        InitMode::KltSeeds => farthest_point_seeds(covs, n, &mut rng)
            .into_iter()
            .map(|i| klt(&covs[i]))
            .collect(),
        InitMode::SplitFromOne => return split_from_one(covs, config, quantizer, &mut rng),
    };
    TransformCodebook::new(matrices, quantizer, config.model.tag)
}

/// Farthest-point sampling under the Frobenius distance. The first seed is
/// drawn at random; ties go to the lowest index.
fn farthest_point_seeds(covs: &[CovarianceMatrix], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let first = rng.random_range(0..covs.len());
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = covs
        .iter()
        .map(|c| (c.as_matrix() - covs[first].as_matrix()).norm())
        .collect();
    while chosen.len() < n {
        let next = argmax_lowest(&min_dist);
        chosen.push(next);
        for (d, c) in min_dist.iter_mut().zip(covs) {
            *d = d.min((c.as_matrix() - covs[next].as_matrix()).norm());
        }
    }
    chosen
}

fn split_from_one(
    covs: &[CovarianceMatrix],
    config: &DesignConfig,
    quantizer: QuantizerSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TransformCodebook> {
    let mean = CovarianceMatrix::mean(covs)?;
    let mut codebook = TransformCodebook::new(vec![klt(&mean)], quantizer, config.model.tag)?;
    let short = config.max_outer_iters.min(SPLIT_REFINE_ITERS);
    loop {
        codebook = run_bcd(covs, codebook, config, short, rng)?.0;
        if codebook.size() >= config.codebook_size {
            return Ok(codebook);
        }
        let partition = assign_partition(&codebook, covs, &config.model)?;
        let totals = cell_totals(codebook.matrices(), &partition, covs, &config.model)?;
        let donor = argmax_lowest(&totals);
        let child = perturb(codebook.matrix(donor), rng)?;
        codebook = codebook.with_appended(child)?;
    }
}

fn run_bcd(
    covs: &[CovarianceMatrix],
    mut codebook: TransformCodebook,
    config: &DesignConfig,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TransformCodebook, DesignReport)> {
    let model = &config.model;
    let mut partition = assign_partition(&codebook, covs, model)?;
    let mut prev = ensemble_objective(codebook.matrices(), &partition, covs, model)?;
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        if iterations > 0 {
            partition = assign_partition(&codebook, covs, model)?;
        }
        codebook = update_codewords_with(&partition, covs, &codebook, config, rng)?;
        let current = ensemble_objective(codebook.matrices(), &partition, covs, model)?;
        iterations += 1;
        trace.push(current);
        log::debug!("outer iteration {iterations}: objective {current:.9e}");
        let improvement = if prev > 0.0 { (prev - current) / prev } else { 0.0 };
        if improvement <= config.epsilon {
            converged = true;
            break;
        }
        prev = current;
    }

    let final_partition = assign_partition(&codebook, covs, model)?;
    Ok((
        codebook,
        DesignReport {
            objective_trace: trace,
            final_partition,
            iterations,
            converged,
        },
    ))
}

/// Designs a codebook of `config.codebook_size` transforms for `covs`.
/// When `config.append_dct` is set the DCT is appended afterwards, so the
/// result holds one extra codeword.
pub fn design_codebook(covs: &[CovarianceMatrix], config: &DesignConfig) -> Result<(TransformCodebook, DesignReport)> {
    let k = check_training_set(covs)?;
    config.validate(k)?;
    if covs.len() < config.codebook_size {
        log::warn!(
            "training set has {} covariances for a codebook of {}",
            covs.len(),
            config.codebook_size
        );
    }
    let train = regularize_training_set(covs);
    let initial = initialize_codebook(&train, config)?;
    design_from(&train, initial, config)
}

/// Runs the alternating descent from a caller-supplied codebook.
pub fn design_from(
    covs: &[CovarianceMatrix],
    initial: TransformCodebook,
    config: &DesignConfig,
) -> Result<(TransformCodebook, DesignReport)> {
    let k = check_training_set(covs)?;
    config.validate(k)?;
    check_dim(k, initial.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5851_f42d_4c95_7f2d));
    let (codebook, report) = run_bcd(covs, initial, config, config.max_outer_iters, &mut rng)?;
    let codebook = if config.append_dct {
        codebook.with_appended(default_dct(k))?
    } else {
        codebook
    };
    Ok((codebook, report))
}

/// Average model MSE of `codebook` over `covs` with each covariance coded by
/// its best codeword.
pub fn codebook_objective(codebook: &TransformCodebook, covs: &[CovarianceMatrix], model: &MseModel) -> Result<f64> {
    check_training_set(covs)?;
    let scored = score_all(codebook.matrices(), covs, model)?;
    Ok(stable_sum(scored.iter().map(|&(_, v)| v)) / covs.len() as f64)
}

/// Tangent-projected gradient norm of the cell objective at each codeword,
/// for diagnostics.
pub fn cell_gradient_norms(
    codebook: &TransformCodebook,
    partition: &Partition,
    covs: &[CovarianceMatrix],
    model: &MseModel,
) -> Result<Vec<f64>> {
    (0..codebook.size())
        .map(|cell| {
            let refs = cell_refs(partition, covs, cell);
            if refs.is_empty() {
                return Ok(0.0);
            }
            let t = codebook.matrix(cell);
            let g: DMatrix<f64> = avg_gradient(model, t, &refs)?;
            Ok(crate::manifold::tangent_project(t, &g).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::theta_highrate;

    fn toy() -> Vec<CovarianceMatrix> {
        vec![
            CovarianceMatrix::from_rows(&[vec![1.54, -1.84], vec![-1.84, 2.62]]).unwrap(),
            CovarianceMatrix::from_rows(&[vec![0.46, 0.40], vec![0.40, 0.70]]).unwrap(),
            CovarianceMatrix::from_rows(&[vec![2.22, 0.77], vec![0.77, 0.38]]).unwrap(),
        ]
    }

    fn hr_config(n: usize) -> DesignConfig {
        DesignConfig::new(n, MseModel::high_rate(0.0))
    }

    #[test]
    fn single_codeword_takes_everything() {
        let covs = toy();
        let cb = TransformCodebook::new(
            vec![TransformMatrix::identity(2)],
            QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
            crate::types::ModelTag::HighRateGaussian,
        )
        .unwrap();
        let p = assign_partition(&cb, &covs, &MseModel::high_rate(0.0)).unwrap();
        assert_eq!(p.assignment, vec![0, 0, 0]);
        assert_eq!(p.cell_sizes, vec![3]);
    }

    #[test]
    fn duplicate_codewords_tie_to_lowest_index() {
        let covs = toy();
        let t = klt(&covs[0]);
        let cb = TransformCodebook::new(
            vec![t.clone(), t],
            QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
            crate::types::ModelTag::HighRateGaussian,
        )
        .unwrap();
        let p = assign_partition(&cb, &covs, &MseModel::high_rate(0.0)).unwrap();
        assert_eq!(p.assignment, vec![0, 0, 0]);
        assert_eq!(p.cell_sizes, vec![3, 0]);
    }

    #[test]
    fn own_klt_wins_the_partition() {
        let covs = toy();
        let pair = vec![covs[0].clone(), covs[2].clone()];
        let cb = TransformCodebook::new(
            vec![klt(&covs[0]), klt(&covs[2])],
            QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
            crate::types::ModelTag::HighRateGaussian,
        )
        .unwrap();
        // brute-force check of all four pairings
        for (ci, c) in pair.iter().enumerate() {
            let own = theta_highrate(cb.matrix(ci), c, 0.0).unwrap();
            let other = theta_highrate(cb.matrix(1 - ci), c, 0.0).unwrap();
            assert!(own < other);
        }
        let p = assign_partition(&cb, &pair, &MseModel::high_rate(0.0)).unwrap();
        assert_eq!(p.assignment, vec![0, 1]);
    }

    #[test]
    fn single_cell_update_reaches_klt_value() {
        let c = toy()[0].clone();
        let cfg = hr_config(1);
        let start = TransformMatrix::identity(2);
        let cb = TransformCodebook::new(
            vec![start],
            QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
            crate::types::ModelTag::HighRateGaussian,
        )
        .unwrap();
        let p = Partition::from_assignment(vec![0], 1);
        let out = update_codewords(&p, std::slice::from_ref(&c), &cb, &cfg).unwrap();
        let got = theta_highrate(out.matrix(0), &c, 0.0).unwrap();
        let best = theta_highrate(&klt(&c), &c, 0.0).unwrap();
        assert!(got <= best + 1e-9 * c.trace(), "{got} vs {best}");
    }

    #[test]
    fn empty_cell_is_repaired_from_largest_cell() {
        let covs = toy();
        let cfg = hr_config(2);
        let t0 = klt(&covs[0]);
        let cb = TransformCodebook::new(
            vec![t0.clone(), TransformMatrix::identity(2)],
            QuantizerSpec::uniform(2, 1.0, 1.0).unwrap(),
            crate::types::ModelTag::HighRateGaussian,
        )
        .unwrap();
        let p = Partition::from_assignment(vec![0, 0, 0], 2);
        let out = update_codewords(&p, &covs, &cb, &cfg).unwrap();
        let dist = (out.matrix(1).as_matrix() - out.matrix(0).as_matrix()).norm();
        assert!(dist > 0.0 && dist < 1e-2, "distance {dist}");
        assert!(out.matrix(1).orthonormality_error() <= 1e-10);
    }

    #[test]
    fn klt_seeds_pick_each_distinct_matrix() {
        let covs = toy();
        let mut cfg = hr_config(3);
        cfg.init = InitMode::KltSeeds;
        let cb = initialize_codebook(&covs, &cfg).unwrap();
        let mut matched = [false; 3];
        for t in cb.matrices() {
            for (i, c) in covs.iter().enumerate() {
                if (t.as_matrix() - klt(c).as_matrix()).amax() < 1e-15 {
                    matched[i] = true;
                }
            }
        }
        assert_eq!(matched, [true; 3]);
    }

    #[test]
    fn initialization_is_deterministic_and_orthonormal() {
        let covs = toy();
        for init in [InitMode::RandomOrthonormal, InitMode::KltSeeds, InitMode::SplitFromOne] {
            let mut cfg = hr_config(3);
            cfg.init = init;
            cfg.seed = 17;
            let a = initialize_codebook(&covs, &cfg).unwrap();
            let b = initialize_codebook(&covs, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.size(), 3);
            for t in a.matrices() {
                assert!(t.orthonormality_error() <= 1e-10);
            }
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(
            design_codebook(&[], &hr_config(1)),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn init_mode_parses() {
        assert_eq!("split".parse::<InitMode>().unwrap(), InitMode::SplitFromOne);
        assert_eq!("klt".parse::<InitMode>().unwrap(), InitMode::KltSeeds);
        assert!("nope".parse::<InitMode>().is_err());
    }
}
