use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use subviews::composition::{clr_design, SubCompositionalDataset, DEFAULT_COUNT_FILL};
use subviews::inference::{analyze, combine_union, screen_then_posthoc, univariate_tests, LambdaPolicy, PipelineConfig};
use subviews::io::{
    read_group_map, read_matrix_csv, render_report, report_rows, sig6, write_json, write_report_csv, write_text,
    FitRecord, TestOutput,
};
use subviews::simgen::{preset, run_replications_detailed, write_outputs, ReplicationSummary, SimDesignSpec, PRESETS};
use subviews::solver::SolverKind;
use subviews::{Design, Error};

#[derive(Parser)]
#[command(name = "subviews", version, about = "Scaled integrative reduced-rank regression and group tests for grouped sub-compositional predictors")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "SUBVIEWS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune lambda and fit the scaled model.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Fit and run the group tests.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        levels: LevelArgs,
        /// Also run the per-response union test.
        #[arg(long)]
        union: bool,
        /// Multivariate screen at the FDR level, then univariate post-hoc tests of the screened groups.
        #[arg(long)]
        posthoc: bool,
    },
    /// Run a Monte Carlo preset or spec.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        levels: LevelArgs,
    },
    /// Q-Q data for the noise estimate and the pivotal statistics (fixed design).
    Qq {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Re-emit the TSV from an existing summary.json instead of simulating.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Response CSV (n rows, header row).
    #[arg(long)]
    y: PathBuf,
    /// Counts or proportions CSV (n rows, columns in group order).
    #[arg(long)]
    counts: PathBuf,
    /// Group map JSON: {"groups": [{"name": .., "size": ..}, ..]}.
    #[arg(long)]
    groups: PathBuf,
    /// Unpenalized control covariates CSV.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Replacement for zero entries before normalizing.
    #[arg(long, default_value_t = DEFAULT_COUNT_FILL)]
    fill: f64,
    /// Drop the intercept.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// `cv` or a fixed nonnegative value.
    #[arg(long, default_value = "cv")]
    lambda: String,
    #[arg(long, default_value = "bcd")]
    solver: SolverKind,
    /// Score regression tuning.
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct LevelArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.10)]
    fdr: f64,
}

#[derive(Args)]
struct SimArgs {
    /// Built-in preset.
    #[arg(long, default_value = "table1-s1", value_parser = PossibleValuesParser::new(PRESETS))]
    preset: String,
    /// JSON design spec overriding the preset's design.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Skip the union test.
    #[arg(long)]
    no_union: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn pipeline(model: &ModelArgs, alpha: f64, fdr: f64) -> Result<PipelineConfig, Error> {
    let lambda = if model.lambda.eq_ignore_ascii_case("cv") {
        LambdaPolicy::Cv
    } else {
        let v: f64 = model
            .lambda
            .parse()
            .map_err(|_| Error::invalid("lambda", format!("expected `cv` or a number, got `{}`", model.lambda)))?;
        LambdaPolicy::Fixed(v)
    };
    let mut cfg = PipelineConfig {
        lambda,
        alpha,
        fdr,
        ..PipelineConfig::default()
    };
    cfg.solver.kind = model.solver;
    cfg.score.xi = model.xi;
    cfg.cv.seed = model.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load(data: &DataArgs) -> Result<(DMatrix<f64>, Design), Error> {
    let map = read_group_map(&data.groups)?;
    let counts = read_matrix_csv(&data.counts)?;
    if counts.data.ncols() != map.total() {
        return Err(Error::mismatch("count columns (sum of group sizes)", map.total(), counts.data.ncols()));
    }
    let y = read_matrix_csv(&data.y)?;
    if y.data.nrows() != counts.data.nrows() {
        return Err(Error::mismatch("response rows (counts have n rows)", counts.data.nrows(), y.data.nrows()));
    }
    let controls = match &data.controls {
        Some(p) => {
            let c = read_matrix_csv(p)?;
            if c.data.nrows() != counts.data.nrows() {
                return Err(Error::mismatch("control rows (counts have n rows)", counts.data.nrows(), c.data.nrows()));
            }
            Some(c.data)
        }
        None => None,
    };
    let comp = SubCompositionalDataset::from_columns(&counts.data, &map.sizes(), map.names())?.to_compositions(data.fill)?;
    let design = clr_design(&comp, controls, !data.no_intercept)?;
    Ok((y.data, design))
}

fn cmd_fit(data: &DataArgs, model: &ModelArgs) -> Result<(), Error> {
    let cfg = pipeline(model, 0.05, 0.10)?;
    let (y, design) = load(data)?;
    let (fit, _, cv) = subviews::inference::tuned_fit(&y, &design, &cfg)?;
    let record = FitRecord::new(&fit, design.group_names(), cv.map(|c| c.table))?;
    std::fs::create_dir_all(&data.out)?;
    write_json(&data.out.join("fit.json"), &record)?;
    let mut text = format!(
        "lambda {}  sigma {}  solver {}  converged {}\n",
        sig6(record.lambda),
        sig6(record.sigma),
        record.solver,
        record.converged
    );
    for (k, name) in record.groups.iter().enumerate() {
        text.push_str(&format!(
            "{name}: rank {}  norm {}\n",
            record.group_ranks[k],
            sig6(record.group_norms[k])
        ));
    }
    write_text(&data.out.join("fit_summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_test(data: &DataArgs, model: &ModelArgs, levels: &LevelArgs, union: bool, posthoc: bool) -> Result<(), Error> {
    let cfg = pipeline(model, levels.alpha, levels.fdr)?;
    let (y, design) = load(data)?;
    std::fs::create_dir_all(&data.out)?;
    let analysis = analyze(&y, &design, &cfg, None)?;
    let multivariate = report_rows(&analysis.reports, cfg.alpha, cfg.fdr);
    let union_rows = if union {
        let per = univariate_tests(&y, &design, &cfg, None)?;
        Some(report_rows(&combine_union(&per)?, cfg.alpha, cfg.fdr))
    } else {
        None
    };
    let screen = if posthoc {
        Some(screen_then_posthoc(&y, &design, &cfg)?)
    } else {
        None
    };
    let mut text = format!(
        "sigma {}  lambda {}  alpha {}  fdr {}\n\n{}",
        sig6(analysis.fit.sigma),
        sig6(analysis.fit.lambda),
        cfg.alpha,
        cfg.fdr,
        render_report(&multivariate)
    );
    write_report_csv(&data.out.join("report.csv"), &multivariate)?;
    if let Some(rows) = &union_rows {
        text.push_str(&format!("\nunion test\n{}", render_report(rows)));
        write_report_csv(&data.out.join("report_union.csv"), rows)?;
    }
    if let Some(s) = &screen {
        text.push_str("\npost-hoc univariate tests\n");
        for t in &s.posthoc {
            text.push_str(&format!(
                "{} response {}  T {}  df {}  p {}  p_bh {}\n",
                t.name,
                t.response + 1,
                sig6(t.t_stat),
                t.df,
                sig6(t.p_value),
                sig6(t.p_adjusted)
            ));
        }
    }
    let out = TestOutput {
        alpha: cfg.alpha,
        fdr: cfg.fdr,
        sigma: analysis.fit.sigma,
        lambda: analysis.fit.lambda,
        multivariate,
        union: union_rows,
        screen,
    };
    write_json(&data.out.join("report.json"), &out)?;
    write_text(&data.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn sim_setup(sim: &SimArgs, model: &ModelArgs, alpha: f64, fdr: f64) -> Result<(SimDesignSpec, subviews::simgen::RunConfig), Error> {
    let (mut spec, mut run) = preset(&sim.preset, model.seed)?;
    if let Some(path) = &sim.spec {
        spec = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
    }
    let mut cfg = pipeline(model, alpha, fdr)?;
    cfg.cv.seed = model.seed;
    run.pipeline = cfg;
    if let Some(r) = sim.reps {
        run.reps = r;
    }
    if sim.no_union {
        run.union = false;
    }
    Ok((spec, run))
}

fn print_summary(s: &ReplicationSummary) {
    println!(
        "reps {} completed, {} failed; sigma_hat/sigma - 1: mean {} sd {}",
        s.reps_completed,
        s.reps_failed,
        sig6(s.sigma_ratio_mean),
        sig6(s.sigma_ratio_sd)
    );
    for (k, name) in s.group_names.iter().enumerate() {
        let union = s.rejection_union.get(k).map_or(String::new(), |v| format!("  union {}", sig6(*v)));
        println!(
            "{name}: rank {}  multivariate {}{union}  d1 {}",
            s.spec.true_ranks[k],
            sig6(s.rejection_multi[k]),
            sig6(s.d1_diag_mean[k])
        );
    }
}

fn cmd_simulate(sim: &SimArgs, model: &ModelArgs, levels: &LevelArgs) -> Result<(), Error> {
    let (spec, run) = sim_setup(sim, model, levels.alpha, levels.fdr)?;
    let (summary, records) = run_replications_detailed(&spec, &run)?;
    write_outputs(&sim.out, &summary, &records)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_qq(sim: &SimArgs, model: &ModelArgs, summary: Option<&Path>) -> Result<(), Error> {
    let summary: ReplicationSummary = match summary {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => {
            let (mut spec, mut run) = sim_setup(sim, model, 0.05, 0.10)?;
            spec.fixed_design = true;
            run.union = false;
            let (s, records) = run_replications_detailed(&spec, &run)?;
            write_outputs(&sim.out, &s, &records)?;
            s
        }
    };
    std::fs::create_dir_all(&sim.out)?;
    subviews::simgen::write_qq(&sim.out.join("qq.tsv"), &summary)?;
    println!(
        "sigma Q-Q slope {}  KS {} (p = {})",
        sig6(summary.qq_sigma_slope),
        sig6(summary.ks_sigma.statistic),
        sig6(summary.ks_sigma.p_value)
    );
    for (k, name) in summary.group_names.iter().enumerate() {
        println!(
            "{name}: pivotal mean {}  df {}",
            sig6(summary.pivotal_mean[k]),
            summary.df.get(k).copied().unwrap_or(0)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::invalid("threads", e.to_string()))?;
    }
    match &cli.command {
        Command::Fit { data, model } => cmd_fit(data, model),
        Command::Test {
            data,
            model,
            levels,
            union,
            posthoc,
        } => cmd_test(data, model, levels, *union, *posthoc),
        Command::Simulate { sim, model, levels } => cmd_simulate(sim, model, levels),
        Command::Qq { sim, model, summary } => cmd_qq(sim, model, summary.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
