//! ADMM iterations for composite nuclear-norm penalized least squares, with
//! and without the joint noise-level update.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::problem::GramProblem;
use crate::error::{Error, Result};
use crate::linops::nuclear_prox;
use crate::scalar::Real;

/// Step size and stopping rule. `rho0` and `rho_max` are in units of the mean
/// curvature of the quadratic loss, so the same values work for any scaling
/// of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho0: f64,
    /// Multiplicative increase of `rho` after every iteration (1 disables it).
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Relative tolerance on the primal and dual residuals.
    pub tol: f64,
    pub max_iters: usize,
    /// Abort when the residuals grow for this many consecutive iterations.
    pub divergence_window: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            rho_growth: 1.01,
            rho_max: 1e4,
            tol: 1e-6,
            max_iters: 5000,
            divergence_window: 100,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(Error::invalid("rho0", format!("must be positive, got {}", self.rho0)));
        }
        if !(self.rho_growth >= 1.0) {
            return Err(Error::invalid("rho_growth", "must be at least 1"));
        }
        if !(self.rho_max >= self.rho0) {
            return Err(Error::invalid("rho_max", "must be at least rho0"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        Ok(())
    }
}

/// Surrogates `A`, unscaled multipliers `Lambda` (stacked over blocks), step
/// size and the residuals of the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T: Real> {
    pub a: DMatrix<T>,
    pub lambda_mult: DMatrix<T>,
    pub rho: T,
    pub r_primal: T,
    pub r_dual: T,
}

impl<T: Real> AdmmState<T> {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            a: DMatrix::zeros(p, q),
            lambda_mult: DMatrix::zeros(p, q),
            rho: T::one(),
            r_primal: T::zero(),
            r_dual: T::zero(),
        }
    }

    /// Surrogate blocks `A_k` for the given block sizes.
    pub fn a_blocks(&self, sizes: &[usize]) -> Vec<DMatrix<T>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let b = self.a.rows(start, s).into_owned();
                start += s;
                b
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdmmOutcome {
    pub iterations: usize,
    pub converged: bool,
}

fn a_step<T: Real>(
    prob: &GramProblem<T>,
    b: &DMatrix<T>,
    state: &mut AdmmState<T>,
    thresholds: &[T],
) -> Result<()> {
    let inv_rho = T::one() / state.rho;
    for k in 0..prob.num_blocks() {
        let (off, size) = (prob.offsets[k], prob.sizes[k]);
        let target = b.rows(off, size) - state.lambda_mult.rows(off, size) * inv_rho;
        let updated = nuclear_prox(&target, thresholds[k] * inv_rho)?;
        state.a.rows_mut(off, size).copy_from(&updated);
    }
    Ok(())
}

struct DivergenceGuard<T> {
    last: Option<T>,
    streak: usize,
    window: usize,
}

impl<T: Real> DivergenceGuard<T> {
    fn new(window: usize) -> Self {
        Self {
            last: None,
            streak: 0,
            window,
        }
    }

    /// Tracks `||A - B|| + ||A - A_prev||`, which does not depend on `rho`.
    fn check(&mut self, iteration: usize, state: &AdmmState<T>) -> Result<()> {
        let metric = state.r_primal + state.r_dual / state.rho;
        let diverged = !metric.is_finite_value() || {
            if matches!(self.last, Some(prev) if metric > prev) {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
            self.window > 0 && self.streak >= self.window
        };
        self.last = Some(metric);
        if diverged {
            return Err(Error::Divergence {
                iterations: iteration,
                r_primal: state.r_primal.as_f64(),
                r_dual: state.r_dual.as_f64(),
            });
        }
        Ok(())
    }
}

/// With every threshold zero the problem is plain least squares.
fn unpenalized<T: Real>(prob: &GramProblem<T>, thresholds: &[T], state: &mut AdmmState<T>) -> Option<AdmmOutcome> {
    if thresholds.iter().any(|&t| t != T::zero()) {
        return None;
    }
    state.a = prob.least_squares();
    state.lambda_mult.fill(T::zero());
    state.r_primal = T::zero();
    state.r_dual = T::zero();
    Some(AdmmOutcome {
        iterations: 1,
        converged: true,
    })
}

/// Minimizes `1/(2c) ||Y - X B||^2 + sum_k t_k ||B_k||_*` starting from `state`.
pub(crate) fn composite_admm<T: Real>(
    prob: &GramProblem<T>,
    c: T,
    thresholds: &[T],
    state: &mut AdmmState<T>,
    cfg: &AdmmConfig,
) -> Result<AdmmOutcome> {
    if let Some(out) = unpenalized(prob, thresholds, state) {
        return Ok(out);
    }
    let curv = prob.curvature / c;
    let rho_cap = T::lit(cfg.rho_max) * curv;
    let growth = T::lit(cfg.rho_growth);
    state.rho = T::lit(cfg.rho0) * curv;
    let eps_p = T::lit(cfg.tol) * prob.coef_scale();
    let eps_d = eps_p * curv;
    let xty_c = &prob.xty / c;
    let mut guard = DivergenceGuard::new(cfg.divergence_window);

    for it in 1..=cfg.max_iters {
        let rhs = &xty_c + &state.lambda_mult + &state.a * state.rho;
        let b = prob.shifted_solve(&rhs, c, state.rho);
        let a_prev = state.a.clone();
        a_step(prob, &b, state, thresholds)?;
        let gap = &state.a - &b;
        state.lambda_mult += &gap * state.rho;
        state.r_primal = gap.norm();
        state.r_dual = (&state.a - &a_prev).norm() * state.rho;
        if state.r_primal <= eps_p && state.r_dual <= eps_d {
            return Ok(AdmmOutcome {
                iterations: it,
                converged: true,
            });
        }
        guard.check(it, state)?;
        state.rho = (state.rho * growth).min(rho_cap);
    }
    Ok(AdmmOutcome {
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Direct ADMM on the scaled objective
/// `||Y - X B||^2 / (2 nq sigma) + sigma / 2 + lambda sum_k w_k ||B_k||_*`:
/// a `B`-step at the previous `sigma`, the closed-form `sigma`-step, the
/// singular value thresholding `A`-step and the dual step, once per iteration.
pub(crate) fn scaled_admm<T: Real>(
    prob: &GramProblem<T>,
    thresholds: &[T],
    state: &mut AdmmState<T>,
    sigma: &mut T,
    cfg: &AdmmConfig,
    trace: &mut Vec<T>,
) -> Result<AdmmOutcome> {
    if let Some(out) = unpenalized(prob, thresholds, state) {
        *sigma = noise_level(prob, &state.a)?;
        trace.push(scaled_objective_gram(prob, &state.a, *sigma, thresholds)?);
        return Ok(out);
    }
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let curv0 = prob.curvature / (nq * *sigma);
    let rho_cap = T::lit(cfg.rho_max) * curv0;
    let growth = T::lit(cfg.rho_growth);
    state.rho = T::lit(cfg.rho0) * curv0;
    let eps_p = T::lit(cfg.tol) * prob.coef_scale();
    let mut guard = DivergenceGuard::new(cfg.divergence_window);

    for it in 1..=cfg.max_iters {
        let c = nq * *sigma;
        let rhs = &prob.xty / c + &state.lambda_mult + &state.a * state.rho;
        let b = prob.shifted_solve(&rhs, c, state.rho);
        *sigma = noise_level(prob, &b)?;
        let a_prev = state.a.clone();
        a_step(prob, &b, state, thresholds)?;
        let gap = &state.a - &b;
        state.lambda_mult += &gap * state.rho;
        state.r_primal = gap.norm();
        state.r_dual = (&state.a - &a_prev).norm() * state.rho;

        let sigma_a = noise_level(prob, &state.a)?;
        trace.push(scaled_objective_gram(prob, &state.a, sigma_a, thresholds)?);

        let eps_d = eps_p * prob.curvature / (nq * *sigma);
        if state.r_primal <= eps_p && state.r_dual <= eps_d {
            return Ok(AdmmOutcome {
                iterations: it,
                converged: true,
            });
        }
        guard.check(it, state)?;
        state.rho = (state.rho * growth).min(rho_cap);
    }
    Ok(AdmmOutcome {
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Below this (in units of the null-model noise level) the fit interpolates.
pub(crate) const SIGMA_FLOOR: f64 = 1e-4;

/// `||Y - X B||_F / sqrt(nq)`.
pub(crate) fn noise_level<T: Real>(prob: &GramProblem<T>, b: &DMatrix<T>) -> Result<T> {
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let sigma = (prob.rss(b) / nq).sqrt();
    if !(sigma > T::lit(SIGMA_FLOOR)) {
        return Err(Error::NoiseCollapse {
            sigma: sigma.as_f64(),
        });
    }
    Ok(sigma)
}

pub(crate) fn scaled_objective_gram<T: Real>(
    prob: &GramProblem<T>,
    b: &DMatrix<T>,
    sigma: T,
    thresholds: &[T],
) -> Result<T> {
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let two = T::lit(2.0);
    Ok(prob.rss(b) / (two * nq * sigma) + sigma / two + prob.penalty(b, thresholds)?)
}
