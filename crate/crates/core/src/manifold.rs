//! Steepest descent on the orthogonal group `O(k)`.
//!
//! Each iteration projects the Euclidean gradient onto the tangent space at
//! the current point, steps against it, and maps the result back onto the
//! group with the polar retraction. Step sizes follow an Armijo rule that
//! doubles while the sufficient-decrease test passes and halves otherwise;
//! the accepted step seeds the next iteration.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TransformMatrix;

/// Below this step size the line search gives up.
pub const MIN_STEP: f64 = 1e-14;

/// Smallest singular value of `T + V` accepted by [`retract`].
pub const RETRACT_RANK_TOL: f64 = 1e-12;

const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldOptParams {
    pub max_iters: usize,
    /// Stop once `‖Z‖_F ≤ grad_tol·(1 + |f(T0)|)`.
    pub grad_tol: f64,
    /// Sufficient-decrease coefficient in `(0, 1)`.
    pub armijo_sigma: f64,
    pub initial_step: f64,
}

impl Default for ManifoldOptParams {
    fn default() -> Self {
        ManifoldOptParams {
            max_iters: 500,
            grad_tol: 1e-8,
            armijo_sigma: 0.5,
            initial_step: 1.0,
        }
    }
}

impl ManifoldOptParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidParameter("grad_tol must be positive".into()));
        }
        if !(self.armijo_sigma > 0.0 && self.armijo_sigma < 1.0) {
            return Err(Error::InvalidParameter("armijo_sigma must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidParameter("initial_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub minimizer: TransformMatrix,
    pub objective_value: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point followed by the value after each
    /// accepted step.
    pub objective_trace: Vec<f64>,
    /// Tangent-gradient norm at the returned point.
    pub final_gradient_norm: f64,
}

/// Projects `g` onto the tangent space of `O(k)` at `t`:
/// `Z = G − T·sym(TᵀG) = T·skew(TᵀG)`.
pub fn tangent_project(t: &TransformMatrix, g: &DMatrix<f64>) -> DMatrix<f64> {
    let tm = t.as_matrix();
    let a = tm.transpose() * g;
    let skew = (&a - a.transpose()) * 0.5;
    tm * skew
}

/// Nearest orthonormal matrix to `T + V` in Frobenius norm: the polar factor
/// `U·Wᵀ` of the SVD `T + V = U·S·Wᵀ`.
pub fn retract(t: &TransformMatrix, v: &DMatrix<f64>) -> Result<TransformMatrix> {
    let m = t.as_matrix() + v;
    polar_factor(m)
}

pub(crate) fn polar_factor(m: DMatrix<f64>) -> Result<TransformMatrix> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("retraction input"));
    }
    let svd = m.svd(true, true);
    let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest < RETRACT_RANK_TOL {
        return Err(Error::RankDeficient {
            smallest_singular: smallest,
        });
    }
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::RankDeficient {
            smallest_singular: smallest,
        });
    };
    Ok(TransformMatrix::from_orthonormal_unchecked(u * v_t))
}

/// Orthonormal matrix from the polar factor of a matrix with i.i.d. standard
/// normal entries.
pub fn random_orthonormal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> TransformMatrix {
    loop {
        let m = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(t) = polar_factor(m) {
            return t;
        }
    }
}

/// Random tangent vector at `t` with unit Frobenius norm.
pub fn random_unit_tangent<R: Rng + ?Sized>(t: &TransformMatrix, rng: &mut R) -> DMatrix<f64> {
    let k = t.dim();
    loop {
        let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = tangent_project(t, &g);
        let n = z.norm();
        if n > 1e-12 {
            return z / n;
        }
    }
}

/// Minimizes `f` over `O(k)` starting from `t0`, using `grad` for its
/// Euclidean gradient.
pub fn minimize_on_ok<F, G>(f: F, grad: G, t0: &TransformMatrix, params: &ManifoldOptParams) -> Result<OptResult>
where
    F: Fn(&TransformMatrix) -> Result<f64>,
    G: Fn(&TransformMatrix) -> Result<DMatrix<f64>>,
{
    params.validate()?;
    let mut t = t0.clone();
    let mut value = f(&t)?;
    let tol = params.grad_tol * (1.0 + value.abs());
    let mut trace = vec![value];
    let mut step = params.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    let mut z_norm;

    // returns the trial point and its value if the step passes the Armijo test
    let attempt = |t: &TransformMatrix,
                   z: &DMatrix<f64>,
                   value: f64,
                   z_norm2: f64,
                   mu: f64|
     -> Result<Option<(TransformMatrix, f64)>> {
        let trial = match retract(t, &(z * -mu)) {
            Ok(r) => r,
            Err(Error::RankDeficient { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let fv = f(&trial)?;
        if value - fv >= params.armijo_sigma * mu * z_norm2 {
            Ok(Some((trial, fv)))
        } else {
            Ok(None)
        }
    };

    loop {
        let z = tangent_project(&t, &grad(&t)?);
        z_norm = z.norm();
        if z_norm <= tol {
            converged = true;
            break;
        }
        if iterations >= params.max_iters {
            break;
        }
        let z_norm2 = z_norm * z_norm;

        let mut accepted = attempt(&t, &z, value, z_norm2, step)?;
        if accepted.is_some() {
            for _ in 0..MAX_DOUBLINGS {
                match attempt(&t, &z, value, z_norm2, 2.0 * step)? {
                    Some(better) => {
                        step *= 2.0;
                        accepted = Some(better);
                    }
                    None => break,
                }
            }
        } else {
            while accepted.is_none() {
                step *= 0.5;
                if step < MIN_STEP {
                    break;
                }
                accepted = attempt(&t, &z, value, z_norm2, step)?;
            }
        }

        match accepted {
            Some((next, fv)) => {
                t = next;
                value = fv;
                trace.push(value);
                iterations += 1;
            }
            None => {
                // no representable step decreases f: numerically stationary
                log::debug!("line search exhausted after {iterations} iterations, |Z| = {z_norm:e}");
                break;
            }
        }
    }
    Ok(OptResult {
        minimizer: t,
        objective_value: value,
        iterations,
        converged,
        objective_trace: trace,
        final_gradient_norm: z_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal(k: usize, rng: &mut ChaCha8Rng) -> TransformMatrix {
        let m = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
        polar_factor(m).unwrap()
    }

    fn random_skew(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
        (&a - a.transpose()) * 0.5
    }

    #[test]
    fn projecting_the_point_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_orthonormal(5, &mut rng);
        let z = tangent_project(&t, t.as_matrix());
        assert!(z.amax() < 1e-12);
    }

    #[test]
    fn tangent_vectors_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_orthonormal(4, &mut rng);
        let g = t.as_matrix() * random_skew(4, &mut rng);
        let z = tangent_project(&t, &g);
        assert!((&z - &g).amax() < 1e-12);
    }

    #[test]
    fn projection_is_a_descent_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = random_orthonormal(6, &mut rng);
            let g = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() - 0.5);
            let z = tangent_project(&t, &g);
            let inner = -(g.dot(&z));
            assert!((inner + z.norm_squared()).abs() < 1e-12);
            assert!(inner <= 0.0);
            let tz = t.as_matrix().transpose() * &z;
            assert!((&tz + tz.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn retract_zero_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_orthonormal(5, &mut rng);
        let r = retract(&t, &DMatrix::zeros(5, 5)).unwrap();
        assert!((r.as_matrix() - t.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn retract_matches_exponential_to_third_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 4;
        let mut v = random_skew(k, &mut rng);
        v *= 1e-3 / v.norm();
        // truncated series exp(V) = I + V + V²/2 + V³/6 + ...
        let i = DMatrix::<f64>::identity(k, k);
        let v2 = &v * &v;
        let v3 = &v2 * &v;
        let v4 = &v3 * &v;
        let expm = &i + &v + &v2 / 2.0 + &v3 / 6.0 + &v4 / 24.0;
        let r = retract(&TransformMatrix::identity(k), &v).unwrap();
        let diff = (r.as_matrix() - expm).norm();
        assert!(diff < 1e-9, "diff {diff:e}");
    }

    #[test]
    fn retract_output_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let t = random_orthonormal(8, &mut rng);
            let v = DMatrix::from_fn(8, 8, |_, _| 3.0 * (rng.random::<f64>() - 0.5));
            let r = retract(&t, &v).unwrap();
            assert!(r.orthonormality_error() <= 1e-10);
        }
    }

    #[test]
    fn retract_rejects_rank_deficient() {
        let t = TransformMatrix::identity(2);
        let v = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(retract(&t, &v), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn no_drift_over_many_retractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = random_orthonormal(6, &mut rng);
        for _ in 0..10_000 {
            let v = t.as_matrix() * (random_skew(6, &mut rng) * 0.05);
            t = retract(&t, &v).unwrap();
        }
        assert!(t.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn procrustes_objective_reaches_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 4;
        let target = random_orthonormal(k, &mut rng);
        let a = target.as_matrix().clone();
        let f = |t: &TransformMatrix| Ok((t.as_matrix() - &a).norm_squared());
        let g = |t: &TransformMatrix| Ok((t.as_matrix() - &a) * 2.0);
        let params = ManifoldOptParams::default();
        let mut hits = 0;
        let target_det = a.determinant().signum();
        for _ in 0..20 {
            // starts drawn on the connected component of O(k) containing A
            let mut m = random_orthonormal(k, &mut rng).into_inner();
            if m.determinant().signum() != target_det {
                m.row_mut(0).neg_mut();
            }
            let t0 = TransformMatrix::new(m).unwrap();
            let res = minimize_on_ok(f, g, &t0, &params).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
            if res.objective_value <= 1e-8 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "only {hits}/20 reached the global minimum");
    }

    #[test]
    fn invalid_params_are_rejected() {
        let f = |_: &TransformMatrix| Ok(0.0);
        let g = |t: &TransformMatrix| Ok(DMatrix::zeros(t.dim(), t.dim()));
        let t0 = TransformMatrix::identity(2);
        let bad = ManifoldOptParams {
            armijo_sigma: 1.5,
            ..Default::default()
        };
        assert!(minimize_on_ok(f, g, &t0, &bad).is_err());
    }
}
