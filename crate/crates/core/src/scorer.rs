//! Score matrices for de-biasing.
//!
//! For group `k` the score is the residual of a nuclear-norm penalized
//! regression of `X_k` on the other groups,
//! `min (1/2n) ||X_k - sum_j X_j G_j||^2 + sum_j (xi w''_j / sqrt(n)) ||X_j G_j||_*`,
//! where the penalty acts on the group effects `X_j G_j`. Writing
//! `X_j G_j = U_j H_j` with `U_j` an orthonormal basis of the column space of
//! `X_j` turns this into a composite nuclear-norm problem in `H` that the
//! solver's ADMM handles directly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::{concat_columns, MultiViewDesign};
use crate::error::{Error, Result};
use crate::linops::{orthonormal_basis, spectral_norm, SpectralTolerance, ThinSvd};
use crate::scalar::Real;
use crate::solver::problem::{residualized_blocks, GramProblem};
use crate::solver::{composite_admm, AdmmConfig, AdmmState};

pub const DEFAULT_XI: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub xi: f64,
    /// Number of times `xi` is halved when the score fails the feasibility check.
    pub max_halvings: usize,
    pub admm: AdmmConfig,
    pub tol: SpectralTolerance,
    /// Relative slack of the KKT bound.
    pub kkt_slack: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            xi: DEFAULT_XI,
            max_halvings: 10,
            admm: AdmmConfig {
                tol: 1e-8,
                max_iters: 20_000,
                ..AdmmConfig::default()
            },
            tol: SpectralTolerance::default(),
            kkt_slack: 1e-3,
        }
    }
}

impl ScoreConfig {
    pub fn with_xi(xi: f64) -> Self {
        Self {
            xi,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(Error::invalid("xi", format!("must be finite and nonnegative, got {}", self.xi)));
        }
        self.admm.validate()
    }
}

/// Stationarity of the score regression for one other group `j`:
/// `d1(Q_j S_k) / sqrt(n)` against `xi w''_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreKkt {
    pub group: usize,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreProjection<T: Real> {
    pub k: usize,
    /// `S_k`, `n x p_k`.
    pub s_matrix: DMatrix<T>,
    /// Orthonormal basis of the range of `P_k`, the projector onto `C(P_{0,k} X_k)`
    /// with `P_{0,k}` the projector onto `C(S_k)`.
    pub p_basis: DMatrix<T>,
    /// Orthonormal basis of `C(X_k)`, the range of `Q_k`.
    pub q_basis: DMatrix<T>,
    /// `rank(X_k)`.
    pub r_prime: usize,
    pub rank_sx: usize,
    /// `d1(P_k (I - Q_k))`.
    pub d1_diag: f64,
    /// Smallest singular value of `S_k / sqrt(n)` among the first `r_prime`.
    pub d_min: f64,
    pub xi: f64,
    pub kkt: Vec<ScoreKkt>,
    kkt_slack: f64,
}

impl<T: Real> ScoreProjection<T> {
    pub fn n(&self) -> usize {
        self.s_matrix.nrows()
    }

    pub fn p_k_proj(&self) -> DMatrix<T> {
        &self.p_basis * self.p_basis.transpose()
    }

    pub fn q_k_proj(&self) -> DMatrix<T> {
        &self.q_basis * self.q_basis.transpose()
    }

    /// Builds the projection diagnostics for a given score. `kkt` is left empty
    /// when the score did not come from the penalized regression.
    pub fn from_score(
        design: &MultiViewDesign<T>,
        k: usize,
        s_matrix: DMatrix<T>,
        xi: f64,
        tol: &SpectralTolerance,
    ) -> Result<Self> {
        let blocks = residualized_blocks(design)?;
        let xk = blocks
            .get(k)
            .ok_or_else(|| Error::invalid("k", format!("group index {k} out of range")))?;
        Self::build(xk, k, s_matrix, xi, Vec::new(), tol, ScoreConfig::default().kkt_slack)
    }

    fn build(
        xk: &DMatrix<T>,
        k: usize,
        s_matrix: DMatrix<T>,
        xi: f64,
        kkt: Vec<ScoreKkt>,
        tol: &SpectralTolerance,
        kkt_slack: f64,
    ) -> Result<Self> {
        if s_matrix.shape() != xk.shape() {
            return Err(Error::mismatch("score matrix columns", xk.ncols(), s_matrix.ncols()));
        }
        let n = xk.nrows();
        // Ranks of the score are judged on the scale of X_k, so a score that
        // vanishes up to rounding counts as rank zero.
        let x_svd = ThinSvd::new(xk)?;
        let r_prime = x_svd.rank(tol);
        let q_basis = x_svd.u.columns(0, r_prime).into_owned();
        let dx = x_svd.d1();
        let s_svd = ThinSvd::new(&s_matrix)?;
        let s_rank = s_svd.rank_against(tol, dx);
        let s_basis = s_svd.u.columns(0, s_rank).into_owned();
        let rank_sx = ThinSvd::new(&s_matrix.tr_mul(xk))?.rank_against(tol, dx * dx);
        let p_basis = if s_basis.ncols() == 0 {
            DMatrix::zeros(n, 0)
        } else {
            orthonormal_basis(&(&s_basis * s_basis.tr_mul(xk)), tol)?
        };
        let d1_diag = complement_norm(&p_basis, &q_basis);
        let scale = T::from_usize_lossy(n).sqrt();
        let d_min = if r_prime == 0 {
            0.0
        } else {
            s_svd.s.get(r_prime - 1).map_or(0.0, |&v| (v / scale).as_f64())
        };
        Ok(Self {
            k,
            s_matrix,
            p_basis,
            q_basis,
            r_prime,
            rank_sx,
            d1_diag,
            d_min,
            xi,
            kkt,
            kkt_slack,
        })
    }
}

/// `d1(W W' (I - V V'))` for orthonormal `W`, `V`, i.e. `sqrt(lambda_max(I - W'V V'W))`.
fn complement_norm<T: Real>(w: &DMatrix<T>, v: &DMatrix<T>) -> f64 {
    if w.ncols() == 0 {
        return 0.0;
    }
    let m = w.tr_mul(v);
    let c = DMatrix::identity(w.ncols(), w.ncols()) - &m * m.transpose();
    let top = SymmetricEigen::new(c)
        .eigenvalues
        .iter()
        .map(|e| e.as_f64())
        .fold(0.0f64, f64::max);
    top.max(0.0).sqrt().min(1.0)
}

/// Outcome of the checks that make a score usable for de-biasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub group: usize,
    pub d1_diag: f64,
    pub d1_ok: bool,
    pub rank_sx: usize,
    pub rank_x: usize,
    pub rank_ok: bool,
    /// Largest `d1(Q_j S_k)/sqrt(n)` over `xi w''_j` (0 without other groups).
    pub kkt_max_ratio: f64,
    pub kkt_ok: bool,
    pub d_min: f64,
}

impl FeasibilityReport {
    pub fn passed(&self) -> bool {
        self.d1_ok && self.rank_ok && self.kkt_ok
    }
}

pub fn check_feasibility<T: Real>(sp: &ScoreProjection<T>) -> FeasibilityReport {
    let mut ratio = 0.0f64;
    let mut kkt_ok = true;
    for c in &sp.kkt {
        let slack = 1e-8 * (1.0 + c.bound);
        if c.norm > c.bound * (1.0 + sp.kkt_slack) + slack {
            kkt_ok = false;
        }
        if c.bound > 0.0 {
            ratio = ratio.max(c.norm / c.bound);
        } else if c.norm > slack {
            ratio = f64::INFINITY;
        }
    }
    FeasibilityReport {
        group: sp.k,
        d1_diag: sp.d1_diag,
        d1_ok: sp.d1_diag < 1.0 - 1e-10,
        rank_sx: sp.rank_sx,
        rank_x: sp.r_prime,
        rank_ok: sp.rank_sx == sp.r_prime,
        kkt_max_ratio: ratio,
        kkt_ok,
        d_min: sp.d_min,
    }
}

/// Scores for all groups share the orthonormal bases of the design blocks.
pub struct ScoreContext<T: Real> {
    n: usize,
    blocks: Vec<DMatrix<T>>,
    bases: Vec<DMatrix<T>>,
}

impl<T: Real> ScoreContext<T> {
    pub fn new(design: &MultiViewDesign<T>, tol: &SpectralTolerance) -> Result<Self> {
        let blocks = residualized_blocks(design)?;
        let bases = blocks
            .iter()
            .map(|b| orthonormal_basis(b, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: design.n(),
            blocks,
            bases,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.blocks.len()
    }

    /// Solves the score regression for group `k` at `cfg.xi`, without fallback.
    pub fn estimate(&self, k: usize, w_star: &[T], cfg: &ScoreConfig) -> Result<ScoreProjection<T>> {
        cfg.validate()?;
        let kk = self.num_groups();
        if k >= kk {
            return Err(Error::invalid("k", format!("group index {k} out of range for {kk} groups")));
        }
        if w_star.len() != kk {
            return Err(Error::mismatch("number of score weights", kk, w_star.len()));
        }
        let xk = &self.blocks[k];
        let others: Vec<usize> = (0..kk)
            .filter(|&j| j != k && self.bases[j].ncols() > 0)
            .collect();
        if others.is_empty() {
            return ScoreProjection::build(xk, k, xk.clone(), cfg.xi, Vec::new(), &cfg.tol, cfg.kkt_slack);
        }
        let u = concat_columns(&others.iter().map(|&j| self.bases[j].clone()).collect::<Vec<_>>());
        let sizes: Vec<usize> = others.iter().map(|&j| self.bases[j].ncols()).collect();
        let sqrt_n = T::from_usize_lossy(self.n).sqrt();
        let thresholds: Vec<T> = others
            .iter()
            .map(|&j| T::lit(cfg.xi) * w_star[j] / sqrt_n)
            .collect();
        let prob = GramProblem::new(&u, xk, sizes)?;
        let mut state = AdmmState::zeros(prob.p, prob.q);
        let out = composite_admm(&prob, T::from_usize_lossy(self.n), &thresholds, &mut state, &cfg.admm)?;
        if !out.converged {
            log::warn!("score regression for group {} stopped after {} iterations", k + 1, out.iterations);
        }
        let s = xk - &u * &state.a;
        let kkt = others
            .iter()
            .map(|&j| {
                Ok(ScoreKkt {
                    group: j,
                    norm: (spectral_norm(&self.bases[j].tr_mul(&s))? / sqrt_n).as_f64(),
                    bound: cfg.xi * w_star[j].as_f64(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreProjection::build(xk, k, s, cfg.xi, kkt, &cfg.tol, cfg.kkt_slack)
    }

    /// Starts at `cfg.xi` and halves it up to `cfg.max_halvings` times until the
    /// score passes [`check_feasibility`].
    pub fn estimate_feasible(&self, k: usize, w_star: &[T], cfg: &ScoreConfig) -> Result<ScoreProjection<T>> {
        let mut xi = cfg.xi;
        let mut last = None;
        for attempt in 0..=cfg.max_halvings {
            let sp = self.estimate(k, w_star, &ScoreConfig { xi, ..cfg.clone() })?;
            let report = check_feasibility(&sp);
            if report.passed() {
                if attempt > 0 {
                    log::info!("group {}: score feasible at xi = {xi}", k + 1);
                }
                return Ok(sp);
            }
            log::debug!("group {}: xi = {xi} infeasible: {report:?}", k + 1);
            last = Some(report);
            xi *= 0.5;
        }
        let report = last.expect("at least one attempt");
        if !report.rank_ok {
            return Err(Error::ScoreDeficient {
                group: k,
                rank_sx: report.rank_sx,
                rank_x: report.rank_x,
            });
        }
        Err(Error::FeasibilityNotVerified { group: k })
    }

    /// Feasible scores for every group, computed in parallel.
    pub fn estimate_all(&self, w_star: &[T], cfg: &ScoreConfig) -> Vec<Result<ScoreProjection<T>>> {
        (0..self.num_groups())
            .into_par_iter()
            .map(|k| self.estimate_feasible(k, w_star, cfg))
            .collect()
    }
}

/// Score for group `k` at `xi` with default solver settings and no fallback.
pub fn estimate_score<T: Real>(
    design: &MultiViewDesign<T>,
    k: usize,
    xi: f64,
    w_star: &[T],
) -> Result<ScoreProjection<T>> {
    let cfg = ScoreConfig::with_xi(xi);
    ScoreContext::new(design, &cfg.tol)?.estimate(k, w_star, &cfg)
}

const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CachedScore {
    version: u32,
    k: usize,
    xi: f64,
    rows: usize,
    cols: usize,
    /// Row-major entries of `S_k`.
    s: Vec<f64>,
    kkt: Vec<ScoreKkt>,
}

/// On-disk cache of score matrices keyed by a hash of the design, the score
/// weights and the solver settings, the group and `xi`.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    dir: PathBuf,
}

impl ScoreCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str, k: usize, xi: f64) -> PathBuf {
        self.dir.join(format!("{key}-k{k}-xi{xi:e}.json"))
    }

    /// Feasible score for group `k`, read from the cache when present.
    pub fn get_or_estimate<T: Real>(
        &self,
        design: &MultiViewDesign<T>,
        ctx: &ScoreContext<T>,
        k: usize,
        w_star: &[T],
        cfg: &ScoreConfig,
    ) -> Result<ScoreProjection<T>> {
        let key = design_key(design, w_star, cfg);
        let mut xi = cfg.xi;
        for _ in 0..=cfg.max_halvings {
            let path = self.path(&key, k, xi);
            if path.exists() {
                let sp = self.load(&path, design, cfg)?;
                if check_feasibility(&sp).passed() {
                    return Ok(sp);
                }
            }
            xi *= 0.5;
        }
        let sp = ctx.estimate_feasible(k, w_star, cfg)?;
        self.store(&self.path(&key, k, sp.xi), &sp)?;
        Ok(sp)
    }

    fn load<T: Real>(&self, path: &Path, design: &MultiViewDesign<T>, cfg: &ScoreConfig) -> Result<ScoreProjection<T>> {
        let entry: CachedScore = serde_json::from_slice(&fs::read(path)?)?;
        if entry.version != CACHE_VERSION {
            return Err(Error::Cache(format!("{}: version {} != {CACHE_VERSION}", path.display(), entry.version)));
        }
        if entry.s.len() != entry.rows * entry.cols {
            return Err(Error::Cache(format!("{}: wrong number of entries", path.display())));
        }
        let s = DMatrix::from_row_iterator(entry.rows, entry.cols, entry.s.iter().map(|&v| T::lit(v)));
        let blocks = residualized_blocks(design)?;
        ScoreProjection::build(&blocks[entry.k], entry.k, s, entry.xi, entry.kkt, &cfg.tol, cfg.kkt_slack)
    }

    fn store<T: Real>(&self, path: &Path, sp: &ScoreProjection<T>) -> Result<()> {
        let (rows, cols) = sp.s_matrix.shape();
        let mut s = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                s.push(sp.s_matrix[(i, j)].as_f64());
            }
        }
        let entry = CachedScore {
            version: CACHE_VERSION,
            k: sp.k,
            xi: sp.xi,
            rows,
            cols,
            s,
            kkt: sp.kkt.clone(),
        };
        fs::write(path, serde_json::to_vec(&entry)?)?;
        Ok(())
    }
}

/// Hex SHA-256 of everything a score depends on besides `k` and `xi`.
pub fn design_key<T: Real>(design: &MultiViewDesign<T>, w_star: &[T], cfg: &ScoreConfig) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(std::any::type_name::<T>().as_bytes());
    h.update((design.n() as u64).to_le_bytes());
    h.update([design.has_intercept() as u8]);
    let mut put = |m: &DMatrix<T>| {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.as_f64().to_le_bytes());
        }
    };
    for b in design.x_blocks() {
        put(b);
    }
    if let Some(c) = design.controls() {
        put(c);
    }
    for w in w_star {
        h.update(w.as_f64().to_le_bytes());
    }
    h.update(cfg.admm.tol.to_le_bytes());
    h.update((cfg.admm.max_iters as u64).to_le_bytes());
    h.update(cfg.tol.rel_tol.to_le_bytes());
    h.update(cfg.tol.abs_floor.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
