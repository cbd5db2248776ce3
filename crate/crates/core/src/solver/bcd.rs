use super::admm::{composite_admm, noise_level, scaled_objective_gram, AdmmConfig, AdmmState, SIGMA_FLOOR};
use super::problem::GramProblem;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) struct BcdOutcome<T> {
    pub sigma: T,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Alternates the closed-form noise update `sigma = ||Y - X B|| / sqrt(nq)`
/// with an iRRR solve at weights `sigma * w` until `sigma` settles.
///
/// The surrogate `state.a` holds the current coefficients on entry and exit.
pub(crate) fn scaled_bcd<T: Real>(
    prob: &GramProblem<T>,
    penalties: &[T],
    state: &mut AdmmState<T>,
    sigma_tol: f64,
    max_outer: usize,
    inner: &AdmmConfig,
    trace: &mut Vec<T>,
) -> Result<BcdOutcome<T>> {
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let tol = T::lit(sigma_tol);
    let mut sigma = noise_level(prob, &state.a)?;
    let mut history = vec![sigma.as_f64()];
    let mut collapsing = 0;

    for outer in 1..=max_outer {
        let thresholds: Vec<T> = penalties.iter().map(|&t| t * sigma).collect();
        let previous = state.clone();
        composite_admm(prob, nq, &thresholds, state, inner)?;

        // Inexact inner solves must not increase the objective at fixed sigma.
        let f_new = scaled_objective_gram(prob, &state.a, sigma, penalties)?;
        let f_old = scaled_objective_gram(prob, &previous.a, sigma, penalties)?;
        if f_new > f_old {
            *state = previous;
        }

        let sigma_new = noise_level(prob, &state.a)?;
        trace.push(scaled_objective_gram(prob, &state.a, sigma_new, penalties)?);
        let change = (sigma_new / sigma - T::one()).abs();
        sigma = sigma_new;
        history.push(sigma.as_f64());
        if outer >= 2 * COLLAPSE_LAG && outer % COLLAPSE_LAG == 0 {
            match aitken_limit(&history) {
                Some(limit) if limit < SIGMA_FLOOR => collapsing += 1,
                _ => collapsing = 0,
            }
            if collapsing >= 2 {
                return Err(Error::NoiseCollapse { sigma: sigma.as_f64() });
            }
        }
        if change < tol {
            return Ok(BcdOutcome {
                sigma,
                outer_iterations: outer,
                converged: true,
            });
        }
    }
    Ok(BcdOutcome {
        sigma,
        outer_iterations: max_outer,
        converged: false,
    })
}

const COLLAPSE_LAG: usize = 10;

/// Aitken extrapolation of a decreasing, convex run of the noise iterates
/// spaced `COLLAPSE_LAG` apart.
fn aitken_limit(history: &[f64]) -> Option<f64> {
    let t = history.len() - 1;
    let (s0, s1, s2) = (history[t - 2 * COLLAPSE_LAG], history[t - COLLAPSE_LAG], history[t]);
    let (d1, d2) = (s1 - s0, s2 - s1);
    if !(d2 < 0.0 && d1 < 0.0) || !(d2 - d1 > 0.0) {
        return None;
    }
    Some(s2 - d2 * d2 / (d2 - d1))
}
