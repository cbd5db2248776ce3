use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{nuisance_matrix, Prepared};
use super::{fit_prepared, lambda_grid, lambda_max_prepared, AdmmState, PenaltyWeights, SolverConfig};
use crate::composition::MultiViewDesign;
use crate::error::{Error, Result};
use crate::linops::{pinv_apply, SpectralTolerance};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_size: usize,
    /// Smallest grid value relative to `lambda_max`.
    pub min_ratio: f64,
    pub seed: u64,
    /// Explicit grid; overrides the log-spaced default.
    pub grid: Option<Vec<f64>>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            grid_size: 50,
            min_ratio: 1e-4,
            seed: 0,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_nll: f64,
    pub fold_nll: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T: Real> {
    pub lambda: T,
    /// One row per grid value, largest lambda first.
    pub table: Vec<CvRow>,
}

/// Fold index of every observation: a seeded random permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &obs) in perm.iter().enumerate() {
        fold[obs] = pos % folds;
    }
    fold
}

/// K-fold cross-validation of `lambda` by held-out Gaussian negative
/// log-likelihood, `(n_v q / 2) log(2 pi sigma^2) + ||Y_v - Yhat_v||^2 / (2 sigma^2)`
/// with the training-fold `sigma`. Ties go to the larger `lambda`.
pub fn cross_validate_lambda<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    cv: &CvConfig,
    solver: &SolverConfig,
) -> Result<CvResult<T>> {
    let n = design.n();
    if y.nrows() != n {
        return Err(Error::mismatch("response rows (design has n rows)", n, y.nrows()));
    }
    if cv.folds < 2 || cv.folds > n {
        return Err(Error::invalid(
            "folds",
            format!("need 2 <= folds <= n = {n}, got {}", cv.folds),
        ));
    }
    let mut grid: Vec<T> = match &cv.grid {
        Some(g) => g.iter().map(|&v| T::lit(v)).collect(),
        None => {
            let prep = Prepared::new(y, design)?;
            lambda_grid(lambda_max_prepared(&prep, weights)?, cv.grid_size, cv.min_ratio)
        }
    };
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|&l| !(l >= T::zero())) {
        return Err(Error::invalid("grid", "lambda values must be nonnegative"));
    }
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let fold_of = fold_assignment(n, cv.folds, cv.seed);
    let per_fold: Vec<Vec<f64>> = (0..cv.folds)
        .into_par_iter()
        .map(|f| fold_path(y, design, weights, solver, &grid, &fold_of, f))
        .collect::<Result<Vec<_>>>()?;

    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        let fold_nll: Vec<f64> = per_fold.iter().map(|f| f[i]).collect();
        let mean_nll = fold_nll.iter().sum::<f64>() / fold_nll.len() as f64;
        // Strict improvement only: earlier (larger) lambda wins ties.
        if mean_nll.is_finite() && best.is_none_or(|(_, b)| mean_nll < b) {
            best = Some((i, mean_nll));
        }
        table.push(CvRow {
            lambda: lambda.as_f64(),
            mean_nll,
            fold_nll,
        });
    }
    let (idx, _) = best.ok_or_else(|| Error::NoiseCollapse { sigma: 0.0 })?;
    Ok(CvResult {
        lambda: grid[idx],
        table,
    })
}

fn fold_path<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    solver: &SolverConfig,
    grid: &[T],
    fold_of: &[usize],
    fold: usize,
) -> Result<Vec<f64>> {
    let train: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != fold).collect();
    let valid: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] == fold).collect();
    let d_train = design.select_rows(&train);
    let d_valid = design.select_rows(&valid);
    let y_train = y.select_rows(&train);
    let y_valid = y.select_rows(&valid);
    let prep = Prepared::new(&y_train, &d_train)?;
    let x_valid = d_valid.concatenated();
    let nuis_valid = nuisance_matrix(&d_valid);
    let nuis_train = nuisance_matrix(&d_train);
    let x_train = d_train.concatenated();
    let nvq = (valid.len() * y.ncols()) as f64;

    let mut state = AdmmState::zeros(prep.gram.p, prep.gram.q);
    let mut out = Vec::with_capacity(grid.len());
    let mut best = f64::INFINITY;
    for &lambda in grid {
        let w = weights.with_lambda(lambda);
        let raw = match fit_prepared(&prep, &w, solver, &mut state) {
            Ok(raw) => raw,
            Err(e @ Error::NoiseCollapse { .. }) => {
                // Smaller lambdas only fit the training fold more closely.
                log::debug!("fold {fold}, lambda {lambda}: {e}");
                out.resize(grid.len(), f64::INFINITY);
                break;
            }
            Err(e) if e.is_numerical() => {
                log::debug!("fold {fold}, lambda {lambda}: {e}");
                state = AdmmState::zeros(prep.gram.p, prep.gram.q);
                out.push(f64::INFINITY);
                continue;
            }
            Err(e) => return Err(e),
        };
        let b = &state.a * prep.y_scale;
        let sigma = (raw.sigma * prep.y_scale).as_f64();
        let mut pred = &x_valid * &b;
        if let (Some(nt), Some(nv)) = (&nuis_train, &nuis_valid) {
            let coef = pinv_apply(nt, &(&y_train - &x_train * &b), &SpectralTolerance::default())?;
            pred += nv * coef;
        }
        let rss = (&y_valid - pred).norm_squared().as_f64();
        let var = sigma * sigma;
        let nll = 0.5 * nvq * (2.0 * std::f64::consts::PI * var).ln() + rss / (2.0 * var);
        out.push(nll);
        // The path has run well past the held-out optimum: stop overfitting.
        if nll > best + nvq {
            out.resize(grid.len(), f64::INFINITY);
            break;
        }
        best = best.min(nll);
    }
    Ok(out)
}
