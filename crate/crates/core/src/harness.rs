//! Hedging experiments: shared evaluation paths, every configured method
//! on every option, aggregated square hedging errors and report files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArsvError, Result};
use crate::filters::{run_filter, FilterKind};
use crate::kernels::Measure;
use crate::lrm::{
    hedge_path, hedge_stream, Discounting, ErrorConvention, HedgeMethod, HedgeSetup, McConfig, OptionSpec,
    MIN_N_MC,
};
use crate::model::{path_stream, simulate_paths, ModelParams, ShockLaws};
use crate::rng::StreamId;

fn default_model() -> ModelParams {
    ModelParams::benchmark()
}
fn default_s0() -> f64 {
    100.0
}
fn default_moneyness() -> Vec<f64> {
    vec![1.11, 1.0, 0.90]
}
fn default_maturities() -> Vec<usize> {
    vec![6, 8, 10, 12]
}
fn default_j() -> usize {
    1
}
fn default_methods() -> Vec<HedgeMethod> {
    all_lrm_methods()
        .into_iter()
        .chain([HedgeMethod::Bs])
        .chain(all_duan_methods())
        .collect()
}
fn default_n_eval() -> usize {
    200
}
fn default_n_mc() -> usize {
    2500
}
fn default_true() -> bool {
    true
}

const MEASURES: [Measure; 2] = [Measure::Mmm, Measure::Mc];
const FILTERS: [FilterKind; 2] = [FilterKind::Kalman, FilterKind::Hlik];

pub fn all_lrm_methods() -> Vec<HedgeMethod> {
    MEASURES
        .iter()
        .flat_map(|&measure| FILTERS.iter().map(move |&filter| HedgeMethod::Lrm { measure, filter }))
        .collect()
}

pub fn all_duan_methods() -> Vec<HedgeMethod> {
    MEASURES
        .iter()
        .flat_map(|&measure| FILTERS.iter().map(move |&filter| HedgeMethod::Duan { measure, filter }))
        .collect()
}

/// An experiment grid. Every field has a default, so `{}` is a valid
/// configuration (the daily-hedging short-maturity grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: ModelParams,
    #[serde(default = "default_s0")]
    pub s0: f64,
    /// `S_0 / K` values.
    #[serde(default = "default_moneyness")]
    pub moneyness: Vec<f64>,
    /// Maturities in steps.
    #[serde(default = "default_maturities")]
    pub maturities: Vec<usize>,
    /// Steps between rebalances.
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<HedgeMethod>,
    #[serde(default = "default_n_eval")]
    pub n_eval_paths: usize,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub antithetic: bool,
    #[serde(default)]
    pub discounting: Discounting,
    #[serde(default)]
    pub error_convention: ErrorConvention,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: default_model(),
            s0: default_s0(),
            moneyness: default_moneyness(),
            maturities: default_maturities(),
            j: default_j(),
            methods: default_methods(),
            n_eval_paths: default_n_eval(),
            n_mc: default_n_mc(),
            seed: 0,
            antithetic: true,
            discounting: Discounting::Relative,
            error_convention: ErrorConvention::Discounted,
        }
    }
}

impl ExperimentConfig {
    /// Daily hedging, maturities 6 to 12, every method.
    pub fn exercise1() -> Self {
        ExperimentConfig::default()
    }

    /// Hedging every 10 steps, maturities 10 to 40, no Duan hedge.
    pub fn exercise2() -> Self {
        let mut methods = all_lrm_methods();
        methods.push(HedgeMethod::Bs);
        ExperimentConfig {
            maturities: vec![10, 20, 30, 40],
            j: 10,
            methods,
            ..ExperimentConfig::default()
        }
    }

    /// Hedging every 20 steps, maturities 20 to 120.
    pub fn exercise3() -> Self {
        ExperimentConfig {
            maturities: vec![20, 40, 60, 80, 100, 120],
            j: 20,
            n_eval_paths: 600,
            ..ExperimentConfig::exercise2()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ArsvError::Config(format!("malformed experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ArsvError::io(path, e))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            ArsvError::Config(msg) => ArsvError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ArsvError::Config(m));
        self.model
            .validate()
            .map_err(|e| ArsvError::Config(format!("model: {e}")))?;
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad(format!("s0 must be positive, got {}", self.s0));
        }
        if self.j == 0 {
            return bad("j must be at least 1".into());
        }
        if self.maturities.is_empty() || self.moneyness.is_empty() || self.methods.is_empty() {
            return bad("maturities, moneyness and methods must be non-empty".into());
        }
        for &m in &self.maturities {
            if m == 0 || m % self.j != 0 {
                return bad(format!("maturity {m} is not a positive multiple of j = {}", self.j));
            }
        }
        for &m in &self.moneyness {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("moneyness must be positive, got {m}"));
            }
        }
        let distinct: BTreeSet<String> = self.methods.iter().map(|m| m.to_string()).collect();
        if distinct.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        if self.n_eval_paths == 0 {
            return bad("n_eval_paths must be at least 1".into());
        }
        let needs_mc = self.methods.iter().any(|m| *m != HedgeMethod::Bs);
        if needs_mc && self.n_mc < MIN_N_MC {
            return bad(format!("n_mc must be at least {MIN_N_MC}, got {}", self.n_mc));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.maturities.iter().copied().max().unwrap_or(0)
    }

    pub fn strike(&self, moneyness: f64) -> f64 {
        self.s0 / moneyness
    }
}

/// Outcome of one (path, method, maturity, moneyness) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub path: usize,
    pub method: HedgeMethod,
    pub maturity: usize,
    pub moneyness: f64,
    pub strike: f64,
    /// Square hedging error, absent when the hedge failed.
    pub error: Option<f64>,
    pub censored: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: HedgeMethod,
    pub maturity: usize,
    pub moneyness: f64,
    /// Successful paths.
    pub n: usize,
    pub n_fail: usize,
    pub mse: f64,
    pub stderr: f64,
    /// Censored inner sub-paths over all simulated inner sub-paths.
    pub censored_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDiagnostic {
    pub filter: FilterKind,
    /// Mean over paths of the RMSE of `log sigma_hat` against the latent `log sigma`.
    pub log_vol_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub records: Vec<PathRecord>,
    pub filters: Vec<FilterDiagnostic>,
    /// Not written to any report file.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub fn cell(&self, method: HedgeMethod, maturity: usize, moneyness: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.maturity == maturity && c.moneyness == moneyness)
    }

    /// Per-path errors of one cell, `None` for failed paths, in path order.
    pub fn errors(&self, method: HedgeMethod, maturity: usize, moneyness: f64) -> Vec<Option<f64>> {
        let mut e: Vec<(usize, Option<f64>)> = self
            .records
            .iter()
            .filter(|r| r.method == method && r.maturity == maturity && r.moneyness == moneyness)
            .map(|r| (r.path, r.error))
            .collect();
        e.sort_by_key(|(p, _)| *p);
        e.into_iter().map(|(_, v)| v).collect()
    }
}

/// Inner stream base for one hedge. Evaluation paths use a different
/// domain, so the two families never share a stream.
pub fn inner_stream(path: usize, maturity: usize, method: HedgeMethod) -> StreamId {
    hedge_stream(path, maturity, method)
}

/// Every stream id an experiment consumes directly: evaluation paths and
/// the per-rebalance inner bases. Sub-path streams are children of the latter.
pub fn stream_ids(config: &ExperimentConfig) -> (Vec<StreamId>, Vec<StreamId>) {
    let eval = (0..config.n_eval_paths).map(path_stream).collect();
    let mut inner = Vec::new();
    for path in 0..config.n_eval_paths {
        for &method in &config.methods {
            if method == HedgeMethod::Bs {
                continue;
            }
            for &maturity in &config.maturities {
                let base = inner_stream(path, maturity, method);
                for t in (0..maturity).step_by(config.j) {
                    inner.push(base.child(crate::rng::domain::INNER_MC, t as u64));
                }
            }
        }
    }
    (eval, inner)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = std::time::Instant::now();
    let paths = simulate_paths(
        &config.model,
        config.s0,
        config.horizon(),
        config.n_eval_paths,
        config.seed,
        None,
    )?;

    let records: Vec<Vec<PathRecord>> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let mut out = Vec::new();
            for &method in &config.methods {
                for &maturity in &config.maturities {
                    let options: Vec<OptionSpec> = config
                        .moneyness
                        .iter()
                        .map(|&m| OptionSpec {
                            strike: config.strike(m),
                            maturity,
                            rate: config.model.r,
                        })
                        .collect();
                    let mut mc = McConfig::new(config.n_mc, config.seed, inner_stream(i, maturity, method));
                    mc.antithetic = config.antithetic;
                    mc.discounting = config.discounting;
                    mc.laws = ShockLaws::gaussian();
                    let setup = HedgeSetup {
                        params: config.model,
                        method,
                        j: config.j,
                        mc,
                        convention: config.error_convention,
                    };
                    let result = hedge_path(&path.s[..=maturity], &options, &setup);
                    for (k, &m) in config.moneyness.iter().enumerate() {
                        let (error, censored, failure) = match &result {
                            Ok(runs) => (Some(runs[k].terminal_error), runs[k].censored, None),
                            Err(e) => (None, 0, Some(e.to_string())),
                        };
                        out.push(PathRecord {
                            path: i,
                            method,
                            maturity,
                            moneyness: m,
                            strike: options[k].strike,
                            error,
                            censored,
                            failure,
                        });
                    }
                }
            }
            out
        })
        .collect();
    let records: Vec<PathRecord> = records.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &method in &config.methods {
        for &maturity in &config.maturities {
            for &m in &config.moneyness {
                cells.push(summarize(config, &records, method, maturity, m));
            }
        }
    }

    let used: BTreeSet<FilterKind> = config.methods.iter().filter_map(|m| m.filter()).collect();
    let mut filters = Vec::new();
    for kind in used {
        let rmse: Vec<f64> = paths
            .par_iter()
            .map(|p| -> Result<f64> {
                let fc = run_filter(kind, &config.model, &p.s)?;
                let n = p.sigma.len();
                let sse: f64 = (0..n).map(|t| (fc.sigma_hat[t].ln() - p.sigma[t].ln()).powi(2)).sum();
                Ok((sse / n as f64).sqrt())
            })
            .collect::<Result<_>>()?;
        filters.push(FilterDiagnostic {
            filter: kind,
            log_vol_rmse: rmse.iter().sum::<f64>() / rmse.len() as f64,
        });
    }

    Ok(ExperimentReport {
        config: config.clone(),
        cells,
        records,
        filters,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn summarize(
    config: &ExperimentConfig,
    records: &[PathRecord],
    method: HedgeMethod,
    maturity: usize,
    moneyness: f64,
) -> CellSummary {
    let cell: Vec<&PathRecord> = records
        .iter()
        .filter(|r| r.method == method && r.maturity == maturity && r.moneyness == moneyness)
        .collect();
    let errors: Vec<f64> = cell.iter().filter_map(|r| r.error).collect();
    let (mse, stderr) = mean_and_stderr(&errors);
    let censored: usize = cell.iter().map(|r| r.censored).sum();
    let simulated = if method == HedgeMethod::Bs {
        0
    } else {
        errors.len() * (maturity / config.j) * config.n_mc
    };
    CellSummary {
        method,
        maturity,
        moneyness,
        n: errors.len(),
        n_fail: cell.len() - errors.len(),
        mse,
        stderr,
        censored_fraction: if simulated == 0 {
            0.0
        } else {
            censored as f64 / simulated as f64
        },
    }
}

/// Sample mean and its standard error (sample standard deviation over
/// `sqrt(n)`). Sums run in slice order.
pub fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Paired comparison of two methods on common paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `error_a - error_b`.
    pub mean_diff: f64,
    pub stderr: f64,
    /// `mean_diff / stderr`.
    pub z: f64,
}

impl PairedTest {
    /// One-sided 95% critical value of the standard normal.
    pub const Z95: f64 = 1.6448536269514722;

    /// `a` has significantly smaller error than `b`.
    pub fn a_better(&self) -> bool {
        self.z < -Self::Z95
    }

    /// `a` has significantly larger error than `b`.
    pub fn a_worse(&self) -> bool {
        self.z > Self::Z95
    }
}

pub fn paired_test(a: &[Option<f64>], b: &[Option<f64>]) -> PairedTest {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    let (mean_diff, stderr) = mean_and_stderr(&diffs);
    let z = if stderr > 0.0 {
        mean_diff / stderr
    } else if mean_diff == 0.0 {
        0.0
    } else {
        mean_diff.signum() * f64::INFINITY
    };
    PairedTest {
        n: diffs.len(),
        mean_diff,
        stderr,
        z,
    }
}

pub fn compare(
    report: &ExperimentReport,
    a: HedgeMethod,
    b: HedgeMethod,
    maturity: usize,
    moneyness: f64,
) -> PairedTest {
    paired_test(
        &report.errors(a, maturity, moneyness),
        &report.errors(b, maturity, moneyness),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = ArsvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(ArsvError::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "method",
    "maturity",
    "moneyness",
    "mse",
    "stderr",
    "n_fail",
    "n",
    "censored_fraction",
];
pub const PATHS_HEADER: [&str; 8] = [
    "path", "method", "maturity", "moneyness", "strike", "error", "censored", "failure",
];
pub const PLOT_HEADER: [&str; 4] = ["maturity", "method", "mse", "stderr"];

/// File name of the plot data for one moneyness.
pub fn plot_file_name(moneyness: f64) -> String {
    format!("plot_moneyness_{moneyness}.csv")
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    files: Vec<String>,
    filters: &'a [FilterDiagnostic],
}

/// Write the summary, the per-path table, one plot-data file per moneyness
/// and a JSON manifest into `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| ArsvError::io(dir, e))?;
    let mut written = Vec::new();

    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let summary = dir.join(format!("summary.{ext}"));
    let per_path = dir.join(format!("paths.{ext}"));
    match format {
        ReportFormat::Csv => {
            write_csv(&summary, &SUMMARY_HEADER, report.cells.iter().map(|c| {
                vec![
                    c.method.to_string(),
                    c.maturity.to_string(),
                    c.moneyness.to_string(),
                    c.mse.to_string(),
                    c.stderr.to_string(),
                    c.n_fail.to_string(),
                    c.n.to_string(),
                    c.censored_fraction.to_string(),
                ]
            }))?;
            write_csv(&per_path, &PATHS_HEADER, report.records.iter().map(|r| {
                vec![
                    r.path.to_string(),
                    r.method.to_string(),
                    r.maturity.to_string(),
                    r.moneyness.to_string(),
                    r.strike.to_string(),
                    r.error.map(|e| e.to_string()).unwrap_or_default(),
                    r.censored.to_string(),
                    r.failure.clone().unwrap_or_default(),
                ]
            }))?;
        }
        ReportFormat::Json => {
            write_json(&summary, &report.cells)?;
            write_json(&per_path, &report.records)?;
        }
    }
    written.push(summary);
    written.push(per_path);

    for &m in &report.config.moneyness {
        let file = dir.join(plot_file_name(m));
        let rows = report.config.maturities.iter().flat_map(|&maturity| {
            report.config.methods.iter().filter_map(move |&method| {
                report.cell(method, maturity, m).map(|c| {
                    vec![
                        maturity.to_string(),
                        method.to_string(),
                        c.mse.to_string(),
                        c.stderr.to_string(),
                    ]
                })
            })
        });
        write_csv(&file, &PLOT_HEADER, rows)?;
        written.push(file);
    }

    let manifest = dir.join("manifest.json");
    let files = written
        .iter()
        .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
        .collect();
    write_json(
        &manifest,
        &Manifest {
            generator: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: report.config.seed,
            config: &report.config,
            files,
            filters: &report.filters,
        },
    )?;
    written.push(manifest);
    Ok(written)
}

fn write_csv<I>(file: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(file).map_err(|e| ArsvError::csv(file, e))?;
    w.write_record(header).map_err(|e| ArsvError::csv(file, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| ArsvError::csv(file, e))?;
    }
    w.flush().map_err(|e| ArsvError::io(file, e))
}

fn write_json<T: Serialize>(file: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ArsvError::Config(format!("cannot serialize {}: {e}", file.display())))?;
    text.push('\n');
    fs::write(file, text).map_err(|e| ArsvError::io(file, e))
}
