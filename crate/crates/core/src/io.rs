//! File formats: CSV matrices with a header row, the JSON group map, and
//! fit/test reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::composition::GroupMap;
use crate::error::{Error, Result};
use crate::inference::{GroupTestReport, ScreenReport};
use crate::solver::{CvRow, ScaledFit};

/// Numeric table with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub data: DMatrix<f64>,
}

/// Reads a CSV with a header row and only numeric cells.
pub fn read_matrix_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, header has {cols}",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column `{}`: `{cell}` is not a number",
                    path.display(),
                    i + 1,
                    header[j]
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        header,
        data: DMatrix::from_row_slice(rows, cols, &values),
    })
}

pub fn write_matrix_csv(path: &Path, header: &[String], data: &DMatrix<f64>) -> Result<()> {
    if header.len() != data.ncols() {
        return Err(Error::mismatch("header columns", data.ncols(), header.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in data.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_group_map(path: &Path) -> Result<GroupMap> {
    let map: GroupMap = serde_json::from_slice(&fs::read(path)?)?;
    if map.groups.is_empty() {
        return Err(Error::invalid("groups", "group map lists no groups"));
    }
    if let Some(g) = map.groups.iter().find(|g| g.size == 0) {
        return Err(Error::invalid("groups", format!("group `{}` has size 0", g.name)));
    }
    Ok(map)
}

/// Serializable fit summary with full-precision numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub groups: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub lambda: f64,
    pub sigma: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub solver: String,
    /// Per group: `p_k x q` coefficients, row-major.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub group_ranks: Vec<usize>,
    pub group_norms: Vec<f64>,
    pub intercept: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub cv: Option<Vec<CvRow>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FitRecord {
    pub fn new(fit: &ScaledFit<f64>, names: &[String], cv: Option<Vec<CvRow>>) -> Result<Self> {
        let tol = crate::linops::SpectralTolerance::default();
        let group_ranks = fit
            .b_blocks
            .iter()
            .map(|b| crate::linops::numerical_rank(b, &tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            groups: names.to_vec(),
            group_sizes: fit.b_blocks.iter().map(|b| b.nrows()).collect(),
            lambda: fit.lambda,
            sigma: fit.sigma,
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            solver: format!("{:?}", fit.solver_kind).to_lowercase(),
            coefficients: fit.b_blocks.iter().map(rows_of).collect(),
            group_ranks,
            group_norms: fit.b_blocks.iter().map(|b| b.norm()).collect(),
            intercept: fit.mu.iter().copied().collect(),
            controls: rows_of(&fit.c0),
            cv,
        })
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    fs::write(path, out)?;
    Ok(())
}

/// Six significant digits for human-readable tables.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// JSON rows of a group test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    #[serde(rename = "T")]
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub p_bh: f64,
    pub d1_diag: f64,
    pub method: String,
    pub testable: bool,
    /// Raw `p < alpha`.
    pub significant: bool,
    /// BH-adjusted `p < fdr`.
    pub bh_significant: bool,
    pub note: Option<String>,
}

pub fn report_rows(reports: &[GroupTestReport], alpha: f64, fdr: f64) -> Vec<ReportRow> {
    reports
        .iter()
        .map(|r| ReportRow {
            name: r.name.clone(),
            t: r.t_stat,
            df: r.df,
            p: r.p_value,
            p_bh: r.p_adjusted,
            d1_diag: r.d1_diag,
            method: match r.method {
                crate::inference::TestMethod::Multivariate => "multivariate".into(),
                crate::inference::TestMethod::UnivariateUnion => "univariate_union".into(),
            },
            testable: r.testable,
            significant: r.testable && r.p_value < alpha,
            bh_significant: r.testable && r.p_adjusted < fdr,
            note: r.note.clone(),
        })
        .collect()
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "T", "df", "p", "p_bh", "d1_diag", "method", "marker"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            format!("{:?}", r.t),
            r.df.to_string(),
            format!("{:?}", r.p),
            format!("{:?}", r.p_bh),
            format!("{:?}", r.d1_diag),
            r.method.clone(),
            marker(r).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `sig` when `p < alpha`, with `*` appended when BH-significant.
fn marker(r: &ReportRow) -> String {
    if !r.testable {
        return "untestable".into();
    }
    let mut m = String::new();
    if r.significant {
        m.push_str("sig");
    }
    if r.bh_significant {
        m.push('*');
    }
    m
}

/// Fixed-width table of a report, six significant digits.
pub fn render_report(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>5}  {:>12}  {:>12}  {:>9}  marker\n",
        "group", "T", "df", "p", "p_bh", "d1"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>12}  {:>5}  {:>12}  {:>12}  {:>9}  {}\n",
            r.name,
            sig6(r.t),
            r.df,
            sig6(r.p),
            sig6(r.p_bh),
            sig6(r.d1_diag),
            marker(r)
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutput {
    pub alpha: f64,
    pub fdr: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub multivariate: Vec<ReportRow>,
    pub union: Option<Vec<ReportRow>>,
    pub screen: Option<ScreenReport>,
}
