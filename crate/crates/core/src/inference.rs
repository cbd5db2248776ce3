//! De-biased estimates and chi-square group tests.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::MultiViewDesign;
use crate::error::{Error, Result};
use crate::linops::{pinv_apply, SpectralTolerance};
use crate::scalar::Real;
use crate::scorer::{check_feasibility, ScoreConfig, ScoreContext, ScoreProjection};
use crate::solver::{
    compute_weights, cross_validate_lambda, scaled_fit, CvConfig, CvResult, PenaltyWeights, ScaledFit,
    SolverConfig, DEFAULT_EPSILON,
};
use crate::stats::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Multivariate,
    UnivariateUnion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestReport {
    pub k: usize,
    pub name: String,
    pub t_stat: f64,
    /// `rank(X_k) q` (or `rank(X_k)` for the union test).
    pub df: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub method: TestMethod,
    pub d1_diag: f64,
    pub xi: f64,
    /// False when no feasible score was found; `p_value` is then 1.
    pub testable: bool,
    pub note: Option<String>,
}

impl GroupTestReport {
    fn untestable(k: usize, name: &str, method: TestMethod, note: String) -> Self {
        Self {
            k,
            name: name.to_string(),
            t_stat: 0.0,
            df: 0,
            p_value: 1.0,
            p_adjusted: 1.0,
            method,
            d1_diag: f64::NAN,
            xi: f64::NAN,
            testable: false,
            note: Some(note),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedEstimate<T: Real> {
    pub k: usize,
    /// `p_k x q` coefficients, available when `X_k` has full column rank.
    pub b_debiased: Option<DMatrix<T>>,
    /// De-biased group effect `X_k B_k` (`n x q`), always available.
    pub group_effect: DMatrix<T>,
    /// `||Rem_k||_F`, known only when the true coefficients are supplied.
    pub remainder_norm: Option<f64>,
}

/// `Y - 1 mu' - Z0 C0 - sum_{j != skip} X_j B_j`.
fn partial_residual<T: Real>(
    fit: &ScaledFit<T>,
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    skip: Option<usize>,
) -> Result<DMatrix<T>> {
    if y.nrows() != design.n() {
        return Err(Error::mismatch("response rows (design has n rows)", design.n(), y.nrows()));
    }
    if fit.b_blocks.len() != design.num_groups() || fit.mu.len() != y.ncols() {
        return Err(Error::mismatch("fitted groups", design.num_groups(), fit.b_blocks.len()));
    }
    let mut r = y.clone();
    if design.has_intercept() {
        for (j, mut col) in r.column_iter_mut().enumerate() {
            col.add_scalar_mut(-fit.mu[j]);
        }
    }
    if let Some(c) = design.controls() {
        r -= c * &fit.c0;
    }
    for (j, b) in fit.b_blocks.iter().enumerate() {
        if Some(j) != skip {
            r -= design.block(j) * b;
        }
    }
    Ok(r)
}

fn require_feasible<T: Real>(sp: &ScoreProjection<T>) -> Result<()> {
    if check_feasibility(sp).passed() {
        Ok(())
    } else {
        Err(Error::FeasibilityNotVerified { group: sp.k })
    }
}

fn sum_except<T: Real>(design: &MultiViewDesign<T>, blocks: &[DMatrix<T>], skip: usize, q: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(design.n(), q);
    for (j, b) in blocks.iter().enumerate() {
        if j != skip {
            out += design.block(j) * b;
        }
    }
    out
}

/// `B_k + (S_k' X_k)^+ S_k' (Y - X B)` when `X_k` has full column rank, and
/// always the group effect `X_k B_k + (P_k Q_k)^+ P_k (Y - X B)`.
pub fn debias<T: Real>(
    fit: &ScaledFit<T>,
    sp: &ScoreProjection<T>,
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
) -> Result<DebiasedEstimate<T>> {
    require_feasible(sp)?;
    let k = sp.k;
    let resid = partial_residual(fit, y, design, None)?;
    let tol = SpectralTolerance::default();
    let xk = crate::solver::problem::residualized_blocks(design)?.swap_remove(k);
    let bk = &fit.b_blocks[k];
    let b_debiased = if sp.r_prime == xk.ncols() {
        let sx = sp.s_matrix.tr_mul(&xk);
        Some(bk + pinv_apply(&sx, &sp.s_matrix.tr_mul(&resid), &tol)?)
    } else {
        None
    };
    // (P_k Q_k)^+ = V (W'V)^+ W' for orthonormal bases W of P_k and V of Q_k.
    let wv = sp.p_basis.tr_mul(&sp.q_basis);
    let corr = &sp.q_basis * pinv_apply(&wv, &sp.p_basis.tr_mul(&resid), &tol)?;
    let group_effect = &xk * bk + corr;
    Ok(DebiasedEstimate {
        k,
        b_debiased,
        group_effect,
        remainder_norm: None,
    })
}

/// `Rem_k = P_k sum_{j != k} X_j (B_j - B*_j)`.
pub fn remainder<T: Real>(
    sp: &ScoreProjection<T>,
    fit: &ScaledFit<T>,
    design: &MultiViewDesign<T>,
    b_true: &[DMatrix<T>],
) -> Result<DMatrix<T>> {
    if b_true.len() != fit.b_blocks.len() {
        return Err(Error::mismatch("true coefficient blocks", fit.b_blocks.len(), b_true.len()));
    }
    let diff: Vec<DMatrix<T>> = fit.b_blocks.iter().zip(b_true).map(|(a, b)| a - b).collect();
    let q = fit.mu.len();
    let m = sum_except(design, &diff, sp.k, q);
    Ok(&sp.p_basis * sp.p_basis.tr_mul(&m))
}

/// `T_k = ||P_k (Y - sum_{j != k} X_j B_j)||^2 / sigma^2` against `chi2(rank(X_k) q)`.
pub fn group_test<T: Real>(
    fit: &ScaledFit<T>,
    sp: &ScoreProjection<T>,
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    k: usize,
) -> Result<GroupTestReport> {
    if sp.k != k {
        return Err(Error::invalid("k", format!("score belongs to group {}, not {k}", sp.k)));
    }
    require_feasible(sp)?;
    let r = partial_residual(fit, y, design, Some(k))?;
    test_from_residual(sp, &r, fit.sigma, &design.group_names()[k], TestMethod::Multivariate)
}

fn test_from_residual<T: Real>(
    sp: &ScoreProjection<T>,
    r: &DMatrix<T>,
    sigma: T,
    name: &str,
    method: TestMethod,
) -> Result<GroupTestReport> {
    let q = r.ncols();
    let proj = sp.p_basis.tr_mul(r).norm_squared().as_f64();
    let s2 = sigma.as_f64().powi(2);
    let t_stat = proj / s2;
    let df = sp.r_prime * q;
    let (p_value, note) = if df == 0 {
        log::warn!("group {name} has a zero-rank design block; reporting p = 1");
        (1.0, Some("zero-rank design block".to_string()))
    } else {
        (chi2_sf(t_stat, df as f64)?, None)
    };
    Ok(GroupTestReport {
        k: sp.k,
        name: name.to_string(),
        t_stat,
        df,
        p_value,
        p_adjusted: p_value,
        method,
        d1_diag: sp.d1_diag,
        xi: sp.xi,
        testable: true,
        note,
    })
}

/// `||P_k E - Rem_k||^2 / sigma^2`, which needs the simulated error matrix and
/// the true coefficients.
pub fn pivotal_statistic<T: Real>(
    sp: &ScoreProjection<T>,
    e_true: Option<&DMatrix<T>>,
    b_true: Option<&[DMatrix<T>]>,
    fit: &ScaledFit<T>,
    design: &MultiViewDesign<T>,
) -> Result<f64> {
    let (Some(e), Some(b)) = (e_true, b_true) else {
        return Err(Error::TruthRequired);
    };
    if e.shape() != (design.n(), fit.mu.len()) {
        return Err(Error::mismatch("rows of the error matrix", design.n(), e.nrows()));
    }
    let diff: Vec<DMatrix<T>> = fit.b_blocks.iter().zip(b).map(|(a, b)| a - b).collect();
    let m = e - sum_except(design, &diff, sp.k, e.ncols());
    Ok(sp.p_basis.tr_mul(&m).norm_squared().as_f64() / fit.sigma.as_f64().powi(2))
}

/// Benjamini-Hochberg step-up adjusted p-values in the input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid("p_values", format!("{bad} lies outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[b].total_cmp(&p_values[a]));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate() {
        let rank = m - pos;
        running = running.min(p_values[i] * m as f64 / rank as f64);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

fn adjust_reports(reports: &mut [GroupTestReport]) -> Result<()> {
    let p: Vec<f64> = reports.iter().map(|r| r.p_value).collect();
    for (r, a) in reports.iter_mut().zip(bh_adjust(&p)?) {
        r.p_adjusted = a;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum LambdaPolicy {
    Cv,
    Fixed(f64),
}

/// Everything between the data and the group reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub lambda: LambdaPolicy,
    pub solver: SolverConfig,
    pub cv: CvConfig,
    pub score: ScoreConfig,
    pub alpha: f64,
    pub fdr: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            lambda: LambdaPolicy::Cv,
            solver: SolverConfig::default(),
            cv: CvConfig::default(),
            score: ScoreConfig::default(),
            alpha: 0.05,
            fdr: 0.10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("fdr", self.fdr)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::invalid("lambda", format!("must be finite and nonnegative, got {l}")));
            }
        }
        self.solver.validate()?;
        self.score.validate()
    }
}

/// Scaled fit with the configured lambda policy.
pub fn tuned_fit<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    cfg: &PipelineConfig,
) -> Result<(ScaledFit<T>, PenaltyWeights<T>, Option<CvResult<T>>)> {
    let weights = compute_weights(design, y.ncols(), cfg.epsilon)?;
    let (lambda, cv) = match cfg.lambda {
        LambdaPolicy::Fixed(l) => (T::lit(l), None),
        LambdaPolicy::Cv => {
            let cv = cross_validate_lambda(y, design, &weights, &cfg.cv, &cfg.solver)?;
            (cv.lambda, Some(cv))
        }
    };
    let weights = weights.with_lambda(lambda);
    let fit = scaled_fit(y, design, &weights, &cfg.solver)?;
    Ok((fit, weights, cv))
}

/// Feasible scores for every group of `design` for a `q`-column response.
pub fn scores_for<T: Real>(
    design: &MultiViewDesign<T>,
    q: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<Result<ScoreProjection<T>>>> {
    let w_star = compute_weights(design, q, cfg.epsilon)?.w_star;
    let ctx = ScoreContext::new(design, &cfg.score.tol)?;
    Ok(ctx.estimate_all(&w_star, &cfg.score))
}

fn reports_from_fit<T: Real>(
    fit: &ScaledFit<T>,
    scores: &[Result<ScoreProjection<T>>],
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    method: TestMethod,
) -> Result<Vec<GroupTestReport>> {
    let names = design.group_names();
    let full = partial_residual(fit, y, design, None)?;
    scores
        .iter()
        .enumerate()
        .map(|(k, sp)| match sp {
            Ok(sp) => {
                let r = &full + design.block(k) * &fit.b_blocks[k];
                test_from_residual(sp, &r, fit.sigma, &names[k], method)
            }
            Err(e) => Ok(GroupTestReport::untestable(k, &names[k], method, e.to_string())),
        })
        .collect()
}

/// Multivariate fit and tests for every group.
#[derive(Debug, Clone)]
pub struct MultivariateAnalysis<T: Real> {
    pub fit: ScaledFit<T>,
    pub weights: PenaltyWeights<T>,
    pub cv: Option<CvResult<T>>,
    pub reports: Vec<GroupTestReport>,
}

/// Tunes, fits and tests every group. Precomputed `scores` (they depend only
/// on the design and `q`) may be passed in.
pub fn analyze<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    cfg: &PipelineConfig,
    scores: Option<&[Result<ScoreProjection<T>>]>,
) -> Result<MultivariateAnalysis<T>> {
    cfg.validate()?;
    let (fit, weights, cv) = tuned_fit(y, design, cfg)?;
    let owned;
    let scores = match scores {
        Some(s) => s,
        None => {
            owned = scores_for(design, y.ncols(), cfg)?;
            &owned
        }
    };
    if scores.len() != design.num_groups() {
        return Err(Error::mismatch("number of scores", design.num_groups(), scores.len()));
    }
    let mut reports = reports_from_fit(&fit, scores, y, design, TestMethod::Multivariate)?;
    adjust_reports(&mut reports)?;
    Ok(MultivariateAnalysis {
        fit,
        weights,
        cv,
        reports,
    })
}

/// Per-response tests: `out[j][k]` is the test of group `k` on response `j`.
pub fn univariate_tests<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    cfg: &PipelineConfig,
    scores_q1: Option<&[Result<ScoreProjection<T>>]>,
) -> Result<Vec<Vec<GroupTestReport>>> {
    cfg.validate()?;
    let owned;
    let scores = match scores_q1 {
        Some(s) => s,
        None => {
            owned = scores_for(design, 1, cfg)?;
            &owned
        }
    };
    (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let yj = y.columns(j, 1).into_owned();
            let (fit, _, _) = tuned_fit(&yj, design, cfg)?;
            reports_from_fit(&fit, scores, &yj, design, TestMethod::UnivariateUnion)
        })
        .collect()
}

/// Bonferroni union of per-response tests: `p = min(q min_j p_j, 1)`.
pub fn combine_union(per_response: &[Vec<GroupTestReport>]) -> Result<Vec<GroupTestReport>> {
    let q = per_response.len();
    let Some(first) = per_response.first() else {
        return Err(Error::invalid("y", "response has no columns"));
    };
    let mut out = Vec::with_capacity(first.len());
    for k in 0..first.len() {
        let best = per_response
            .iter()
            .map(|r| &r[k])
            .min_by(|a, b| a.p_value.total_cmp(&b.p_value))
            .expect("q >= 1");
        let mut rep = best.clone();
        rep.p_value = (best.p_value * q as f64).min(1.0);
        rep.method = TestMethod::UnivariateUnion;
        out.push(rep);
    }
    adjust_reports(&mut out)?;
    Ok(out)
}

/// Union test for group `k` at level `alpha`: reports the combined p-value,
/// which is below `alpha` exactly when some response has `p < alpha / q`.
pub fn union_test<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    k: usize,
    alpha: f64,
    cfg: &PipelineConfig,
) -> Result<GroupTestReport> {
    if k >= design.num_groups() {
        return Err(Error::invalid("k", format!("group index {k} out of range")));
    }
    let cfg = PipelineConfig { alpha, ..cfg.clone() };
    let per = univariate_tests(y, design, &cfg, None)?;
    let mut rep = combine_union(&per)?.swap_remove(k);
    rep.p_adjusted = rep.p_value;
    Ok(rep)
}

/// One post-hoc univariate test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocTest {
    pub k: usize,
    pub name: String,
    pub response: usize,
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub multivariate: Vec<GroupTestReport>,
    /// Groups whose BH-adjusted multivariate p-value is below the FDR level.
    pub screened: Vec<usize>,
    pub posthoc: Vec<PosthocTest>,
}

/// Preset "screen-then-posthoc": multivariate tests of all groups with BH at
/// `cfg.fdr`, then univariate tests of the screened groups on every response
/// with BH over that second stage.
pub fn screen_then_posthoc<T: Real>(
    y: &DMatrix<T>,
    design: &MultiViewDesign<T>,
    cfg: &PipelineConfig,
) -> Result<ScreenReport> {
    let multi = analyze(y, design, cfg, None)?;
    let screened: Vec<usize> = multi
        .reports
        .iter()
        .filter(|r| r.testable && r.p_adjusted < cfg.fdr)
        .map(|r| r.k)
        .collect();
    let mut posthoc = Vec::new();
    if !screened.is_empty() {
        let per = univariate_tests(y, design, cfg, None)?;
        for (j, reps) in per.iter().enumerate() {
            for &k in &screened {
                let r = &reps[k];
                posthoc.push(PosthocTest {
                    k,
                    name: r.name.clone(),
                    response: j,
                    t_stat: r.t_stat,
                    df: r.df,
                    p_value: r.p_value,
                    p_adjusted: r.p_value,
                });
            }
        }
        let p: Vec<f64> = posthoc.iter().map(|t| t.p_value).collect();
        for (t, a) in posthoc.iter_mut().zip(bh_adjust(&p)?) {
            t.p_adjusted = a;
        }
    }
    Ok(ScreenReport {
        multivariate: multi.reports,
        screened,
        posthoc,
    })
}
