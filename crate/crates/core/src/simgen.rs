//! Monte Carlo designs and the replication harness.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{clr_design, to_compositions, MultiViewDesign, SubCompositionalDataset};
use crate::error::{Error, Result};
use crate::inference::{
    analyze, combine_union, pivotal_statistic, scores_for, univariate_tests, PipelineConfig,
};
use crate::scorer::ScoreProjection;
use crate::stats::{chi2_quantile, ks_pvalue, ks_statistic, mean, normal_cdf, normal_quantile, qq_points, qq_slope, sample_sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Normal1,
    Normal2,
    Compositional,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// Block-diagonal AR(1) covariance.
    WithinGroup,
    /// AR(1) covariance over all `p` predictors.
    AmongGroup,
    /// Log-normal counts with AR(1) covariance over all taxa, turned into
    /// sub-compositions and a clr design.
    LognormalAr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesignSpec {
    pub setting: Setting,
    pub n: usize,
    pub q: usize,
    pub group_sizes: Vec<usize>,
    pub true_ranks: Vec<usize>,
    pub rho_x: f64,
    pub correlation: Correlation,
    pub snr: f64,
    pub seed: u64,
    pub intercept: bool,
    /// Rescale `B*` so its largest absolute entry is 1.
    pub scale_coefficients: bool,
    /// Log-scale means of the counts (compositional designs only).
    pub log_mean: Option<Vec<f64>>,
    /// Keep `X` and `B*` fixed across replications and redraw only `E`.
    pub fixed_design: bool,
}

impl SimDesignSpec {
    pub fn p(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// `n = 500, q = 5`, five groups of 10, `r_1 = 2`.
    pub fn normal1(snr: f64, rho_x: f64, correlation: Correlation) -> Self {
        Self {
            setting: Setting::Normal1,
            n: 500,
            q: 5,
            group_sizes: vec![10; 5],
            true_ranks: vec![2, 0, 0, 0, 0],
            rho_x,
            correlation,
            snr,
            seed: 1,
            intercept: false,
            scale_coefficients: true,
            log_mean: None,
            fixed_design: false,
        }
    }

    /// `n = 200, q = 10`, twenty groups of 20, `r_1 = 1`.
    pub fn normal2(snr: f64, rho_x: f64, correlation: Correlation) -> Self {
        let mut ranks = vec![0; 20];
        ranks[0] = 1;
        Self {
            setting: Setting::Normal2,
            n: 200,
            q: 10,
            group_sizes: vec![20; 20],
            true_ranks: ranks,
            ..Self::normal1(snr, rho_x, correlation)
        }
    }

    /// `n = 40, q = 10`, ten groups of 6 taxa; groups 1-5 have one dominant
    /// taxon, `r_1 = r_6 = 2`.
    pub fn compositional(snr: f64, rho_x: f64) -> Self {
        let mut log_mean = Vec::with_capacity(60);
        for k in 0..10 {
            for j in 0..6 {
                log_mean.push(if k < 5 && j == 0 { 10.0 } else { 1.0 });
            }
        }
        let mut ranks = vec![0; 10];
        ranks[0] = 2;
        ranks[5] = 2;
        Self {
            setting: Setting::Compositional,
            n: 40,
            q: 10,
            group_sizes: vec![6; 10],
            true_ranks: ranks,
            rho_x,
            correlation: Correlation::LognormalAr,
            snr,
            seed: 1,
            intercept: true,
            scale_coefficients: false,
            log_mean: Some(log_mean),
            fixed_design: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.q == 0 || self.group_sizes.is_empty() {
            return Err(Error::invalid("spec", "need n >= 2, q >= 1 and at least one group"));
        }
        if self.group_sizes.contains(&0) {
            return Err(Error::invalid("group_sizes", "sizes must be positive"));
        }
        if self.true_ranks.len() != self.group_sizes.len() {
            return Err(Error::mismatch("true_ranks", self.group_sizes.len(), self.true_ranks.len()));
        }
        for (k, (&r, &pk)) in self.true_ranks.iter().zip(&self.group_sizes).enumerate() {
            if r > pk.min(self.q) {
                return Err(Error::invalid(
                    "true_ranks",
                    format!("rank {r} of group {} exceeds min(p_k, q) = {}", k + 1, pk.min(self.q)),
                ));
            }
        }
        if !(self.rho_x.abs() < 1.0) {
            return Err(Error::invalid("rho_x", format!("need |rho| < 1, got {}", self.rho_x)));
        }
        if !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(Error::invalid("snr", format!("must be positive, got {}", self.snr)));
        }
        if let Some(m) = &self.log_mean {
            if m.len() != self.p() {
                return Err(Error::mismatch("log_mean", self.p(), m.len()));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(rep)))
}

/// Stream for the design shared by all replications of a fixed-design run.
fn fixed_design_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed) ^ 0x5eed_f1ed_de51_9000))
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `B*_k = J_k R_k'` with standard normal factors; optionally rescaled so the
/// largest absolute entry over all blocks is 1.
pub fn gen_coefficients(spec: &SimDesignSpec, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let mut blocks: Vec<DMatrix<f64>> = spec
        .group_sizes
        .iter()
        .zip(&spec.true_ranks)
        .map(|(&pk, &r)| {
            if r == 0 {
                return DMatrix::zeros(pk, spec.q);
            }
            let j = normal_matrix(rng, pk, r);
            let rr = normal_matrix(rng, spec.q, r);
            j * rr.transpose()
        })
        .collect();
    if spec.scale_coefficients {
        let top = blocks.iter().flat_map(|b| b.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        if top > 0.0 {
            for b in &mut blocks {
                *b /= top;
            }
        }
    }
    blocks
}

/// Rows of `N(0, Sigma)` with AR(1) correlation `rho^|i-j|`, over all columns
/// or restarted at each block boundary.
fn ar_rows(rng: &mut ChaCha8Rng, n: usize, sizes: &[usize], rho: f64, within: bool) -> DMatrix<f64> {
    let p: usize = sizes.iter().sum();
    let mut starts = vec![false; p];
    if within {
        let mut acc = 0;
        for &s in sizes {
            starts[acc] = true;
            acc += s;
        }
    } else {
        starts[0] = true;
    }
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(rng);
            let v = if starts[j] { z } else { rho * prev + innov * z };
            x[(i, j)] = v;
            prev = v;
        }
    }
    x
}

/// Gaussian design for the normal settings.
pub fn gen_normal_design(spec: &SimDesignSpec, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if !(spec.rho_x.abs() < 1.0) {
        return Err(Error::invalid("rho_x", format!("need |rho| < 1, got {}", spec.rho_x)));
    }
    let within = match spec.correlation {
        Correlation::WithinGroup => true,
        Correlation::AmongGroup => false,
        Correlation::LognormalAr => {
            return Err(Error::invalid("correlation", "log-normal designs are compositional"));
        }
    };
    Ok(ar_rows(rng, spec.n, &spec.group_sizes, spec.rho_x, within))
}

/// Log-normal counts `exp(N(mu, Sigma))`, normalized within each group.
pub fn gen_compositional(spec: &SimDesignSpec, rng: &mut ChaCha8Rng) -> Result<SubCompositionalDataset<f64>> {
    if !(spec.rho_x.abs() < 1.0) {
        return Err(Error::invalid("rho_x", format!("need |rho| < 1, got {}", spec.rho_x)));
    }
    let p = spec.p();
    let mut w = ar_rows(rng, spec.n, &spec.group_sizes, spec.rho_x, false);
    let zero = vec![0.0; p];
    let mu = spec.log_mean.as_deref().unwrap_or(&zero);
    for mut row in w.row_iter_mut() {
        for j in 0..p {
            row[j] = (row[j] + mu[j]).exp();
        }
    }
    let blocks = crate::composition::split_columns(&w, &spec.group_sizes)?;
    to_compositions(blocks, crate::composition::default_group_names(spec.num_groups()))
}

/// `sigma = sd(vec(XB*)) / snr` with the sample standard deviation.
pub fn calibrate_noise(linear_pred: &DMatrix<f64>, snr: f64) -> Result<f64> {
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(Error::invalid("snr", format!("must be positive, got {snr}")));
    }
    let v: Vec<f64> = linear_pred.iter().copied().collect();
    let sd = sample_sd(&v);
    if !(sd > 0.0) {
        return Err(Error::invalid("snr", "the linear predictor is constant; the SNR is undefined"));
    }
    Ok(sd / snr)
}

/// Design, truth and noise scale; `E` is drawn separately.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub design: MultiViewDesign<f64>,
    pub b_true: Vec<DMatrix<f64>>,
    pub linear_pred: DMatrix<f64>,
    /// Noise sd; 1 when every true rank is zero.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub truth: SimTruth,
    pub e: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

pub fn gen_truth(spec: &SimDesignSpec, rng: &mut ChaCha8Rng) -> Result<SimTruth> {
    spec.validate()?;
    let design = match spec.correlation {
        Correlation::LognormalAr => clr_design(&gen_compositional(spec, rng)?, None, spec.intercept)?,
        _ => {
            let x = gen_normal_design(spec, rng)?;
            let blocks = crate::composition::split_columns(&x, &spec.group_sizes)?;
            MultiViewDesign::from_blocks(blocks, spec.intercept)?
        }
    };
    let b_true = gen_coefficients(spec, rng);
    let linear_pred = design.concatenated() * crate::composition::concat_rows(&b_true);
    let sigma = if spec.true_ranks.iter().all(|&r| r == 0) {
        1.0
    } else {
        calibrate_noise(&linear_pred, spec.snr)?
    };
    Ok(SimTruth {
        design,
        b_true,
        linear_pred,
        sigma,
    })
}

pub fn gen_response(truth: &SimTruth, rng: &mut ChaCha8Rng) -> SimData {
    let (n, q) = truth.linear_pred.shape();
    let e = normal_matrix(rng, n, q) * truth.sigma;
    let y = &truth.linear_pred + &e;
    SimData {
        truth: truth.clone(),
        e,
        y,
    }
}

/// Data for one replication, honoring the fixed-design flag.
pub fn gen_replication(spec: &SimDesignSpec, rep: u64, fixed: Option<&SimTruth>) -> Result<SimData> {
    let mut rng = replication_rng(spec.seed, rep);
    let truth = match fixed {
        Some(t) => t.clone(),
        None => gen_truth(spec, &mut rng)?,
    };
    Ok(gen_response(&truth, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub reps: usize,
    pub pipeline: PipelineConfig,
    /// Also run the per-response union test.
    pub union: bool,
}

impl RunConfig {
    pub fn new(reps: usize, alpha: f64) -> Self {
        Self {
            reps,
            pipeline: PipelineConfig {
                alpha,
                ..PipelineConfig::default()
            },
            union: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub sigma: f64,
    pub sigma_hat: f64,
    pub lambda: f64,
    pub p_multi: Vec<f64>,
    pub p_union: Vec<f64>,
    pub t_stat: Vec<f64>,
    pub df: Vec<usize>,
    pub pivotal: Vec<f64>,
    pub d1_diag: Vec<f64>,
    pub xi: Vec<f64>,
}

impl ReplicationRecord {
    fn failed(rep: usize, sigma: f64, msg: String) -> Self {
        Self {
            rep,
            ok: false,
            error: Some(msg),
            sigma,
            sigma_hat: f64::NAN,
            lambda: f64::NAN,
            p_multi: Vec::new(),
            p_union: Vec::new(),
            t_stat: Vec::new(),
            df: Vec::new(),
            pivotal: Vec::new(),
            d1_diag: Vec::new(),
            xi: Vec::new(),
        }
    }

    pub fn sigma_ratio(&self) -> f64 {
        self.sigma_hat / self.sigma - 1.0
    }
}

type Scores = Vec<Result<ScoreProjection<f64>>>;

fn run_one(
    spec: &SimDesignSpec,
    cfg: &RunConfig,
    rep: usize,
    fixed: Option<&(SimTruth, Scores, Option<Scores>)>,
) -> ReplicationRecord {
    let data = match gen_replication(spec, rep as u64, fixed.map(|f| &f.0)) {
        Ok(d) => d,
        Err(e) => return ReplicationRecord::failed(rep, f64::NAN, e.to_string()),
    };
    let sigma = data.truth.sigma;
    match replicate(&data, cfg, fixed.map(|f| (&f.1, f.2.as_ref()))) {
        Ok(mut rec) => {
            rec.rep = rep;
            rec
        }
        Err(e) => ReplicationRecord::failed(rep, sigma, e.to_string()),
    }
}

fn replicate(data: &SimData, cfg: &RunConfig, scores: Option<(&Scores, Option<&Scores>)>) -> Result<ReplicationRecord> {
    let design = &data.truth.design;
    let pipe = &cfg.pipeline;
    let owned;
    let multi_scores = match scores {
        Some((s, _)) => s,
        None => {
            owned = scores_for(design, data.y.ncols(), pipe)?;
            &owned
        }
    };
    let analysis = analyze(&data.y, design, pipe, Some(multi_scores))?;
    if let Some(bad) = analysis.reports.iter().find(|r| !r.testable) {
        return Err(Error::invalid(
            "score",
            format!("group {} untestable: {}", bad.name, bad.note.clone().unwrap_or_default()),
        ));
    }
    let mut pivotal = Vec::with_capacity(design.num_groups());
    for sp in multi_scores {
        let sp = sp.as_ref().expect("testable implies a score");
        pivotal.push(pivotal_statistic(sp, Some(&data.e), Some(&data.truth.b_true), &analysis.fit, design)?);
    }
    let p_union = if cfg.union {
        let per = univariate_tests(&data.y, design, pipe, scores.and_then(|s| s.1).map(|v| v.as_slice()))?;
        combine_union(&per)?.iter().map(|r| r.p_value).collect()
    } else {
        Vec::new()
    };
    Ok(ReplicationRecord {
        rep: 0,
        ok: true,
        error: None,
        sigma: data.truth.sigma,
        sigma_hat: analysis.fit.sigma,
        lambda: analysis.fit.lambda,
        p_multi: analysis.reports.iter().map(|r| r.p_value).collect(),
        p_union,
        t_stat: analysis.reports.iter().map(|r| r.t_stat).collect(),
        df: analysis.reports.iter().map(|r| r.df).collect(),
        pivotal,
        d1_diag: analysis.reports.iter().map(|r| r.d1_diag).collect(),
        xi: analysis.reports.iter().map(|r| r.xi).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub spec: SimDesignSpec,
    pub alpha: f64,
    pub reps_requested: usize,
    pub reps_completed: usize,
    pub reps_failed: usize,
    pub failures: Vec<(usize, String)>,
    pub group_names: Vec<String>,
    /// Per-group rejection rates of the multivariate test (FP for null groups, TP otherwise).
    pub rejection_multi: Vec<f64>,
    /// Same for the union test; empty when it was not run.
    pub rejection_union: Vec<f64>,
    pub sigma_ratio_mean: f64,
    pub sigma_ratio_sd: f64,
    pub abs_sigma_ratio_mean: f64,
    pub abs_sigma_ratio_sd: f64,
    pub d1_diag_mean: Vec<f64>,
    pub df: Vec<usize>,
    /// `sqrt(2nq) (sigma_hat / sigma - 1)` per completed replication.
    pub qq_sigma: Vec<f64>,
    pub qq_sigma_slope: f64,
    pub ks_sigma: KsResult,
    /// Pivotal statistics per group, one entry per completed replication.
    pub qq_pivotal: Vec<Vec<f64>>,
    pub pivotal_mean: Vec<f64>,
}

/// Rejection indicators of group `k`, as 0/1, over completed replications.
pub fn rejections(records: &[ReplicationRecord], k: usize, alpha: f64, union: bool) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.ok)
        .map(|r| {
            let p = if union { r.p_union[k] } else { r.p_multi[k] };
            if p < alpha {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Runs every replication and aggregates, keeping the per-replication records.
pub fn run_replications_detailed(
    spec: &SimDesignSpec,
    cfg: &RunConfig,
) -> Result<(ReplicationSummary, Vec<ReplicationRecord>)> {
    spec.validate()?;
    cfg.pipeline.validate()?;
    if cfg.reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    let fixed = if spec.fixed_design {
        let truth = gen_truth(spec, &mut fixed_design_rng(spec.seed))?;
        let multi = scores_for(&truth.design, spec.q, &cfg.pipeline)?;
        let uni = if cfg.union {
            Some(scores_for(&truth.design, 1, &cfg.pipeline)?)
        } else {
            None
        };
        Some((truth, multi, uni))
    } else {
        None
    };
    let records: Vec<ReplicationRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_one(spec, cfg, rep, fixed.as_ref()))
        .collect();
    let summary = summarize(spec, cfg, &records)?;
    Ok((summary, records))
}

pub fn run_replications(spec: &SimDesignSpec, cfg: &RunConfig) -> Result<ReplicationSummary> {
    run_replications_detailed(spec, cfg).map(|(s, _)| s)
}

pub fn summarize(spec: &SimDesignSpec, cfg: &RunConfig, records: &[ReplicationRecord]) -> Result<ReplicationSummary> {
    let alpha = cfg.pipeline.alpha;
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.ok).collect();
    let failures: Vec<(usize, String)> = records
        .iter()
        .filter(|r| !r.ok)
        .map(|r| (r.rep, r.error.clone().unwrap_or_default()))
        .collect();
    let kk = spec.num_groups();
    let rate = |k: usize, union: bool| {
        let v = rejections(records, k, alpha, union);
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    let ratios: Vec<f64> = ok.iter().map(|r| r.sigma_ratio()).collect();
    let abs: Vec<f64> = ratios.iter().map(|v| v.abs()).collect();
    let scale = ((2 * spec.n * spec.q) as f64).sqrt();
    let qq_sigma: Vec<f64> = ratios.iter().map(|v| v * scale).collect();
    let (slope, ks) = if qq_sigma.len() >= 2 {
        let d = ks_statistic(&qq_sigma, normal_cdf);
        (
            qq_slope(&qq_points(&qq_sigma, normal_quantile)),
            KsResult {
                statistic: d,
                p_value: ks_pvalue(d, qq_sigma.len()),
            },
        )
    } else {
        (f64::NAN, KsResult { statistic: f64::NAN, p_value: f64::NAN })
    };
    let qq_pivotal: Vec<Vec<f64>> = (0..kk).map(|k| ok.iter().map(|r| r.pivotal[k]).collect()).collect();
    let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
    Ok(ReplicationSummary {
        spec: spec.clone(),
        alpha,
        reps_requested: cfg.reps,
        reps_completed: ok.len(),
        reps_failed: failures.len(),
        failures,
        group_names: crate::composition::default_group_names(kk),
        rejection_multi: (0..kk).map(|k| rate(k, false)).collect(),
        rejection_union: if cfg.union { (0..kk).map(|k| rate(k, true)).collect() } else { Vec::new() },
        sigma_ratio_mean: avg(&ratios),
        sigma_ratio_sd: sample_sd(&ratios),
        abs_sigma_ratio_mean: avg(&abs),
        abs_sigma_ratio_sd: sample_sd(&abs),
        d1_diag_mean: (0..kk).map(|k| avg(&ok.iter().map(|r| r.d1_diag[k]).collect::<Vec<_>>())).collect(),
        df: ok.first().map(|r| r.df.clone()).unwrap_or_default(),
        qq_sigma,
        qq_sigma_slope: slope,
        ks_sigma: ks,
        pivotal_mean: qq_pivotal.iter().map(|v| avg(v)).collect(),
        qq_pivotal,
    })
}

/// Named simulation presets: `(spec, run config)`.
pub fn preset(name: &str, seed: u64) -> Result<(SimDesignSpec, RunConfig)> {
    let (mut spec, mut cfg) = match name {
        "table1-s1" => (SimDesignSpec::normal1(0.2, 0.0, Correlation::AmongGroup), RunConfig::new(100, 0.05)),
        "table1-s1-low" => (SimDesignSpec::normal1(0.1, 0.0, Correlation::AmongGroup), RunConfig::new(100, 0.05)),
        "table1-s2" => (SimDesignSpec::normal2(0.2, 0.0, Correlation::AmongGroup), RunConfig::new(100, 0.05)),
        "table3-comp" => (SimDesignSpec::compositional(2.0, 0.2), RunConfig::new(100, 0.05)),
        "fig2a" => {
            let mut s = SimDesignSpec::normal1(0.1, 0.5, Correlation::WithinGroup);
            s.fixed_design = true;
            let mut c = RunConfig::new(100, 0.05);
            c.union = false;
            (s, c)
        }
        "null-small" => {
            let s = SimDesignSpec {
                setting: Setting::Custom,
                n: 100,
                q: 3,
                group_sizes: vec![5; 4],
                true_ranks: vec![0; 4],
                fixed_design: true,
                ..SimDesignSpec::normal1(1.0, 0.0, Correlation::AmongGroup)
            };
            let mut c = RunConfig::new(500, 0.05);
            c.union = false;
            (s, c)
        }
        other => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
            ))
        }
    };
    spec.seed = seed;
    cfg.pipeline.cv.seed = seed;
    Ok((spec, cfg))
}

pub const PRESETS: &[&str] = &["table1-s1", "table1-s1-low", "table1-s2", "table3-comp", "fig2a", "null-small"];

/// Writes `summary.json`, `replications.csv` and `qq.tsv` into `dir`.
pub fn write_outputs(dir: &Path, summary: &ReplicationSummary, records: &[ReplicationRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    fs::write(dir.join("summary.json"), json)?;
    write_records_csv(&dir.join("replications.csv"), summary, records)?;
    write_qq(&dir.join("qq.tsv"), summary)?;
    Ok(())
}

fn write_records_csv(path: &Path, summary: &ReplicationSummary, records: &[ReplicationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names = &summary.group_names;
    let mut header = vec!["rep".to_string(), "ok".into(), "sigma".into(), "sigma_hat".into(), "lambda".into()];
    for prefix in ["p_multi", "p_union", "t_stat", "pivotal", "d1_diag"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    header.push("error".into());
    w.write_record(&header)?;
    let k = names.len();
    let cells = |v: &[f64]| -> Vec<String> {
        (0..k).map(|i| v.get(i).map_or(String::new(), |x| format!("{x:?}"))).collect()
    };
    for r in records {
        let mut row = vec![
            r.rep.to_string(),
            r.ok.to_string(),
            format!("{:?}", r.sigma),
            format!("{:?}", r.sigma_hat),
            format!("{:?}", r.lambda),
        ];
        for v in [&r.p_multi, &r.p_union, &r.t_stat, &r.pivotal, &r.d1_diag] {
            row.extend(cells(v));
        }
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Q-Q panels: `sigma` against N(0, 1) and `pivotal_<group>` against its chi-square.
pub fn write_qq(path: &Path, summary: &ReplicationSummary) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "theoretical_quantile\tempirical_quantile\tpanel_id")?;
    for (t, e) in qq_points(&summary.qq_sigma, normal_quantile) {
        writeln!(out, "{t:?}\t{e:?}\tsigma")?;
    }
    for (k, sample) in summary.qq_pivotal.iter().enumerate() {
        let Some(&df) = summary.df.get(k) else { continue };
        if df == 0 || sample.is_empty() {
            continue;
        }
        let points = qq_points(sample, |p| chi2_quantile(p, df as f64).unwrap_or(f64::NAN));
        for (t, e) in points {
            writeln!(out, "{t:?}\t{e:?}\tpivotal_{}", summary.group_names[k])?;
        }
    }
    Ok(())
}
