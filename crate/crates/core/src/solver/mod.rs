//! Scaled composite nuclear-norm penalized regression.
//!
//! The estimator jointly minimizes
//! `||Y - 1 mu' - Z0 C0 - X B||^2 / (2 nq sigma) + sigma / 2 + lambda sum_k w_k ||B_k||_*`
//! over the coefficients and the noise level. Intercept and controls are
//! unpenalized and are partialled out before the penalized problem is solved.

mod admm;
mod bcd;
mod cv;
pub(crate) mod problem;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use admm::{AdmmConfig, AdmmState};
pub(crate) use admm::composite_admm;
pub use cv::{cross_validate_lambda, fold_assignment, CvConfig, CvResult, CvRow};

use crate::composition::MultiViewDesign;
use crate::error::{Error, Result};
use crate::linops::spectral_norm;
use crate::scalar::Real;
use admm::{noise_level, scaled_admm, scaled_objective_gram};
use problem::{residualized_blocks, Prepared};

/// Default `epsilon` in the penalty weights.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Bcd,
    Admm,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Bcd => "bcd",
            SolverKind::Admm => "admm",
        })
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bcd" => Ok(SolverKind::Bcd),
            "admm" => Ok(SolverKind::Admm),
            other => Err(Error::invalid("solver", format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Outer stopping rule of the coordinate descent: relative change of sigma.
    pub sigma_tol: f64,
    pub max_outer: usize,
    /// Inner iRRR solves of the coordinate descent.
    pub inner: AdmmConfig,
    /// Direct ADMM on the scaled objective.
    pub admm: AdmmConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Bcd,
            sigma_tol: 1e-6,
            max_outer: 200,
            inner: AdmmConfig::default(),
            admm: AdmmConfig {
                max_iters: 20_000,
                ..AdmmConfig::default()
            },
        }
    }
}

impl SolverConfig {
    pub fn with_kind(kind: SolverKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_tol > 0.0) {
            return Err(Error::invalid("sigma_tol", "must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer", "must be positive"));
        }
        self.inner.validate()?;
        self.admm.validate()
    }
}

/// Group weights `w_k = d1(X_k) (sqrt(p_k q) + sqrt(2 log(K/eps))) / (nq)`,
/// the companion `w*_k = sqrt(p_k/n) + sqrt(2 log(K/eps) / (nq))` used by the
/// score estimation, and the tuning parameter `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights<T: Real> {
    pub w: Vec<T>,
    pub w_star: Vec<T>,
    pub epsilon: f64,
    pub lambda: T,
    /// Groups whose design block is numerically zero (weight 0).
    pub degenerate: Vec<usize>,
}

impl<T: Real> PenaltyWeights<T> {
    pub fn with_lambda(&self, lambda: T) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn num_groups(&self) -> usize {
        self.w.len()
    }

    fn penalties(&self) -> Vec<T> {
        self.w.iter().map(|&w| w * self.lambda).collect()
    }
}

/// Weights for `design` and a `q`-column response. `lambda` starts at zero.
pub fn compute_weights<T: Real>(
    design: &MultiViewDesign<T>,
    q: usize,
    epsilon: f64,
) -> Result<PenaltyWeights<T>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    if q == 0 {
        return Err(Error::invalid("q", "response must have at least one column"));
    }
    let blocks = residualized_blocks(design)?;
    let n = design.n();
    let k = blocks.len();
    let log_term = (2.0 * (k as f64 / epsilon).ln()).sqrt();
    let nq = (n * q) as f64;
    let mut w = Vec::with_capacity(k);
    let mut w_star = Vec::with_capacity(k);
    let mut degenerate = Vec::new();
    for (idx, block) in blocks.iter().enumerate() {
        let pk = block.ncols() as f64;
        let d1 = spectral_norm(block)?;
        if d1 == T::zero() {
            log::warn!("group {} has a zero design block; its weight is set to 0", idx + 1);
            degenerate.push(idx);
        }
        w.push(d1 * T::lit((((pk * q as f64).sqrt()) + log_term) / nq));
        w_star.push(T::lit((pk / n as f64).sqrt() + log_term / nq.sqrt()));
    }
    Ok(PenaltyWeights {
        w,
        w_star,
        epsilon,
        lambda: T::zero(),
        degenerate,
    })
}

/// Smallest `lambda` at which every penalized block is zero:
/// `max_k d1(X_k' Y_c) / (nq sigma0 w_k)` with `sigma0` the null-model noise level.
pub fn lambda_max<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
) -> Result<T> {
    let prep = Prepared::new(y, design)?;
    lambda_max_prepared(&prep, weights)
}

fn lambda_max_prepared<T: Real>(prep: &Prepared<T>, weights: &PenaltyWeights<T>) -> Result<T> {
    let prob = &prep.gram;
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let mut best = T::zero();
    for k in 0..prob.num_blocks() {
        if weights.w[k] == T::zero() {
            continue;
        }
        let xty = prob.xty.rows(prob.offsets[k], prob.sizes[k]).into_owned();
        let v = spectral_norm(&xty)? / (nq * weights.w[k]);
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// `size` log-spaced values from `lambda_max` down to `min_ratio * lambda_max`.
pub fn lambda_grid<T: Real>(lambda_max: T, size: usize, min_ratio: f64) -> Vec<T> {
    if size == 0 {
        return Vec::new();
    }
    if size == 1 {
        return vec![lambda_max];
    }
    let lo = min_ratio.ln();
    (0..size)
        .map(|i| {
            let t = i as f64 / (size - 1) as f64;
            lambda_max * T::lit((lo * t).exp())
        })
        .collect()
}

/// Output of a scaled fit, in the units of the original response.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFit<T: Real> {
    pub b_blocks: Vec<DMatrix<T>>,
    pub mu: DVector<T>,
    pub c0: DMatrix<T>,
    pub sigma: T,
    pub lambda: T,
    /// Objective at the returned `(B, sigma)`.
    pub objective: T,
    pub objective_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub solver_kind: SolverKind,
}

impl<T: Real> ScaledFit<T> {
    pub fn stacked(&self) -> DMatrix<T> {
        crate::composition::concat_rows(&self.b_blocks)
    }

    pub fn active_groups(&self) -> Vec<usize> {
        self.b_blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|&v| v != T::zero()))
            .map(|(k, _)| k)
            .collect()
    }
}

pub(crate) struct RawSolution<T: Real> {
    pub sigma: T,
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the configured solver on a prepared problem. `state.a` carries a warm
/// start in and the solution (in normalized units) out.
pub(crate) fn fit_prepared<T: Real>(
    prep: &Prepared<T>,
    weights: &PenaltyWeights<T>,
    cfg: &SolverConfig,
    state: &mut AdmmState<T>,
) -> Result<RawSolution<T>> {
    let prob = &prep.gram;
    let penalties = weights.penalties();
    let mut trace = Vec::new();
    match cfg.kind {
        SolverKind::Bcd => {
            let out = bcd::scaled_bcd(
                prob,
                &penalties,
                state,
                cfg.sigma_tol,
                cfg.max_outer,
                &cfg.inner,
                &mut trace,
            )?;
            Ok(RawSolution {
                sigma: out.sigma,
                trace,
                iterations: out.outer_iterations,
                converged: out.converged,
            })
        }
        SolverKind::Admm => {
            let mut sigma = noise_level(prob, &state.a)?;
            let out = scaled_admm(prob, &penalties, state, &mut sigma, &cfg.admm, &mut trace)?;
            let sigma = noise_level(prob, &state.a)?;
            Ok(RawSolution {
                sigma,
                trace,
                iterations: out.iterations,
                converged: out.converged,
            })
        }
    }
}

fn check_inputs<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
) -> Result<()> {
    if y.nrows() != design.n() {
        return Err(Error::mismatch("response rows (design has n rows)", design.n(), y.nrows()));
    }
    if weights.num_groups() != design.num_groups() {
        return Err(Error::mismatch("number of weights", design.num_groups(), weights.num_groups()));
    }
    if !(weights.lambda >= T::zero()) {
        return Err(Error::invalid("lambda", "must be nonnegative"));
    }
    Ok(())
}

/// Scaled fit with the solver selected in `cfg`.
pub fn scaled_fit<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    cfg: &SolverConfig,
) -> Result<ScaledFit<T>> {
    check_inputs(y, design, weights)?;
    cfg.validate()?;
    let prep = Prepared::new(y, design)?;
    let mut state = AdmmState::zeros(prep.gram.p, prep.gram.q);
    let raw = fit_prepared(&prep, weights, cfg, &mut state)?;
    assemble(&prep, y, design, weights, &state, raw, cfg.kind)
}

/// Block-coordinate descent: alternate the noise update and an iRRR solve.
pub fn scaled_fit_bcd<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    cfg: &SolverConfig,
) -> Result<ScaledFit<T>> {
    let cfg = SolverConfig {
        kind: SolverKind::Bcd,
        ..cfg.clone()
    };
    scaled_fit(y, design, weights, &cfg)
}

/// Direct ADMM on the scaled objective.
pub fn scaled_fit_admm<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    cfg: &SolverConfig,
) -> Result<ScaledFit<T>> {
    let cfg = SolverConfig {
        kind: SolverKind::Admm,
        ..cfg.clone()
    };
    scaled_fit(y, design, weights, &cfg)
}

pub(crate) fn assemble<T: Real>(
    prep: &Prepared<T>,
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    state: &AdmmState<T>,
    raw: RawSolution<T>,
    kind: SolverKind,
) -> Result<ScaledFit<T>> {
    let s = prep.y_scale;
    let b = &state.a * s;
    let objective = scaled_objective_gram(&prep.gram, &state.a, raw.sigma, &weights.penalties())? * s;
    let q = y.ncols();
    let (mu, c0) = split_nuisance(prep.back_solve(y, design, &b)?, design, q);
    Ok(ScaledFit {
        b_blocks: state.a_blocks(&prep.gram.sizes).into_iter().map(|m| m * s).collect(),
        mu,
        c0,
        sigma: raw.sigma * s,
        lambda: weights.lambda,
        objective,
        objective_trace: raw.trace.into_iter().map(|v| v * s).collect(),
        iterations: raw.iterations,
        converged: raw.converged,
        solver_kind: kind,
    })
}

fn split_nuisance<T: Real>(
    coef: Option<DMatrix<T>>,
    design: &MultiViewDesign<T>,
    q: usize,
) -> (DVector<T>, DMatrix<T>) {
    let p0 = design.num_controls();
    let Some(coef) = coef else {
        return (DVector::zeros(q), DMatrix::zeros(p0, q));
    };
    let mut row = 0;
    let mu = if design.has_intercept() {
        row = 1;
        coef.row(0).transpose()
    } else {
        DVector::zeros(q)
    };
    let c0 = if p0 > 0 {
        coef.rows(row, p0).into_owned()
    } else {
        DMatrix::zeros(0, q)
    };
    (mu, c0)
}

/// Result of the fixed-noise iRRR problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrrFit<T: Real> {
    pub b_blocks: Vec<DMatrix<T>>,
    pub mu: DVector<T>,
    pub c0: DMatrix<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `||Y - X B||^2 / (2nq) + lambda sigma_fixed sum_k w_k ||B_k||_*` by ADMM.
/// A non-converged run returns its last iterate with `converged = false`.
pub fn irrr_fit<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    weights: &PenaltyWeights<T>,
    sigma_fixed: T,
    cfg: &AdmmConfig,
) -> Result<IrrrFit<T>> {
    check_inputs(y, design, weights)?;
    cfg.validate()?;
    if !(sigma_fixed > T::zero()) {
        return Err(Error::invalid("sigma_fixed", "must be positive"));
    }
    let prep = Prepared::new(y, design)?;
    let prob = &prep.gram;
    let s = prep.y_scale;
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let thresholds: Vec<T> = weights
        .w
        .iter()
        .map(|&w| weights.lambda * sigma_fixed * w / s)
        .collect();
    let mut state = AdmmState::zeros(prob.p, prob.q);
    let out = composite_admm(prob, nq, &thresholds, &mut state, cfg)?;
    let objective = (prob.rss(&state.a) / (T::lit(2.0) * nq) + prob.penalty(&state.a, &thresholds)?) * s * s;
    let b = &state.a * s;
    let (mu, c0) = split_nuisance(prep.back_solve(y, design, &b)?, design, y.ncols());
    Ok(IrrrFit {
        b_blocks: state.a_blocks(&prob.sizes).into_iter().map(|m| m * s).collect(),
        mu,
        c0,
        objective,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Scaled objective of arbitrary coefficients, with the intercept and controls
/// profiled out and `sigma` given.
pub fn scaled_objective<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    b_blocks: &[DMatrix<T>],
    sigma: T,
    weights: &PenaltyWeights<T>,
) -> Result<T> {
    check_inputs(y, design, weights)?;
    let prep = Prepared::new(y, design)?;
    let s = prep.y_scale;
    let b = crate::composition::concat_rows(b_blocks) / s;
    Ok(scaled_objective_gram(&prep.gram, &b, sigma / s, &weights.penalties())? * s)
}

/// Stationarity check of a scaled fit for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktBlock {
    pub group: usize,
    /// `d1(X_k' (Y - Yhat)) / (nq sigma)`.
    pub gradient_norm: f64,
    /// `lambda w_k`.
    pub bound: f64,
    pub active: bool,
}

impl KktBlock {
    /// Inactive blocks need `gradient_norm <= bound`; active blocks need equality.
    pub fn holds(&self, rel_slack: f64) -> bool {
        let upper = self.gradient_norm <= self.bound * (1.0 + rel_slack) + 1e-14;
        if self.active {
            upper && self.gradient_norm >= self.bound * (1.0 - rel_slack) - 1e-14
        } else {
            upper
        }
    }
}

pub fn kkt_certificate<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    fit: &ScaledFit<T>,
    weights: &PenaltyWeights<T>,
) -> Result<Vec<KktBlock>> {
    check_inputs(y, design, weights)?;
    let prep = Prepared::new(y, design)?;
    let prob = &prep.gram;
    let s = prep.y_scale;
    let b = fit.stacked() / s;
    let grad = prob.neg_gradient(&b);
    let nq = T::from_usize_lossy(prob.n * prob.q);
    let sigma = fit.sigma / s;
    (0..prob.num_blocks())
        .map(|k| {
            let g = grad.rows(prob.offsets[k], prob.sizes[k]).into_owned();
            Ok(KktBlock {
                group: k,
                gradient_norm: (spectral_norm(&g)? / (nq * sigma)).as_f64(),
                bound: (fit.lambda * weights.w[k]).as_f64(),
                active: fit.b_blocks[k].iter().any(|&v| v != T::zero()),
            })
        })
        .collect()
}
