//! Command-line front end. Exit status: 0 on success, 1 for configuration
//! or input errors, 2 for numerical failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{ArsvError, Result};
use crate::filters::{run_filter, FilterKind};
use crate::harness::{emit_report, run_experiment, ExperimentConfig, ReportFormat};
use crate::lrm::{hedge_path, ErrorConvention, HedgeMethod, HedgeSetup, McConfig, OptionSpec};
use crate::model::{read_path_file, simulate_paths, stationary_moments, write_path_file, ModelParams};
use crate::rng::{domain, StreamId};

pub const THREADS_ENV: &str = "ARSV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "arsv", version, about = "ARSV simulation, volatility filtering and local-risk-minimizing hedging")]
pub struct Cli {
    /// JSON configuration: model parameters, or an experiment grid for `experiment`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (also read from ARSV_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<ReportFormat>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: ArsvError| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate price paths and write one CSV per path.
    Simulate {
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[arg(long, default_value_t = 252)]
        horizon: usize,
        #[arg(long, default_value_t = 100.0)]
        s0: f64,
    },
    /// Print the stationary moments of the model.
    Moments,
    /// Run a volatility filter on a price CSV.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "kalman")]
        filter: String,
    },
    /// Hedge one call along a price CSV and write the run as JSON.
    Hedge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        strike: f64,
        /// Maturity in steps; defaults to the length of the series.
        #[arg(long)]
        maturity: Option<usize>,
        #[arg(long, default_value = "lrm-mmm-kalman")]
        method: String,
        #[arg(long, default_value_t = 1)]
        j: usize,
        #[arg(long, default_value_t = 2500)]
        n_mc: usize,
        /// Record the square error in time-T currency.
        #[arg(long)]
        undiscounted_error: bool,
    },
    /// Run a hedging experiment described by --config.
    Experiment,
}

/// Parse arguments, run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn thread_count(cli: &Cli) -> Result<Option<usize>> {
    if let Some(n) = cli.threads {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ArsvError::Config(format!("{THREADS_ENV} must be a thread count, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match thread_count(cli)? {
        Some(0) => Err(ArsvError::Config("thread count must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ArsvError::Config(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn load_model(cli: &Cli) -> Result<ModelParams> {
    let Some(path) = &cli.config else {
        return Ok(ModelParams::benchmark());
    };
    let text = fs::read_to_string(path).map_err(|e| ArsvError::io(path, e))?;
    let params: ModelParams = serde_json::from_str(&text)
        .map_err(|e| ArsvError::Config(format!("{}: {e}", path.display())))?;
    params
        .validate()
        .map_err(|e| ArsvError::Config(format!("{}: {e}", path.display())))?;
    Ok(params)
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| ArsvError::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| ArsvError::io("<stdout>", e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| ArsvError::Config(format!("cannot serialize output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let format = cli.format.unwrap_or_default();
    match &cli.command {
        Command::Moments => {
            let m = stationary_moments(&load_model(cli)?)?;
            let text = match format {
                ReportFormat::Json => to_json(&m)?,
                ReportFormat::Csv => format!(
                    "var_y,kurtosis_y,mean_b,var_b,annualized_vol\n{},{},{},{},{}\n",
                    m.var_y, m.kurtosis_y, m.mean_b, m.var_b, m.annualized_vol
                ),
            };
            emit_text(cli.out.as_deref(), &text)
        }
        Command::Simulate { paths, horizon, s0 } => {
            let params = load_model(cli)?;
            let sims = simulate_paths(&params, *s0, *horizon, *paths, cli.seed.unwrap_or(0), None)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(|e| ArsvError::io(&dir, e))?;
            match format {
                ReportFormat::Csv => {
                    for (i, p) in sims.iter().enumerate() {
                        write_path_file(p, &dir.join(format!("path_{i:05}.csv")))?;
                    }
                }
                ReportFormat::Json => {
                    let file = dir.join("paths.json");
                    fs::write(&file, to_json(&sims)?).map_err(|e| ArsvError::io(&file, e))?;
                }
            }
            Ok(())
        }
        Command::Filter { input, filter } => {
            let params = load_model(cli)?;
            let kind: FilterKind = filter.parse()?;
            let imported = read_path_file(input)?;
            let fc = run_filter(kind, &params, &imported.prices)?;
            let truth = imported.log_variance.as_ref();
            let text = match format {
                ReportFormat::Csv => {
                    let mut s = String::from("step,sigma_hat,sigma\n");
                    for (k, sh) in fc.sigma_hat.iter().enumerate() {
                        let sigma = truth
                            .and_then(|b| b.get(k))
                            .map(|b| (0.5 * b).exp().to_string())
                            .unwrap_or_default();
                        s.push_str(&format!("{},{},{}\n", k + 1, sh, sigma));
                    }
                    s
                }
                ReportFormat::Json => {
                    #[derive(Serialize)]
                    struct Out<'a> {
                        filter: FilterKind,
                        sigma_hat: &'a [f64],
                        clamped: usize,
                    }
                    to_json(&Out {
                        filter: kind,
                        sigma_hat: &fc.sigma_hat,
                        clamped: fc.clamped,
                    })?
                }
            };
            emit_text(cli.out.as_deref(), &text)
        }
        Command::Hedge {
            input,
            strike,
            maturity,
            method,
            j,
            n_mc,
            undiscounted_error,
        } => {
            let params = load_model(cli)?;
            let method: HedgeMethod = method.parse()?;
            let imported = read_path_file(input)?;
            let maturity = maturity.unwrap_or(imported.prices.len().saturating_sub(1));
            let option = OptionSpec::new(*strike, maturity, params.r)?;
            let setup = HedgeSetup {
                params,
                method,
                j: *j,
                mc: McConfig::new(
                    *n_mc,
                    cli.seed.unwrap_or(0),
                    StreamId::new(domain::INNER_MC, &[method.stream_tag()]),
                ),
                convention: if *undiscounted_error {
                    ErrorConvention::Undiscounted
                } else {
                    ErrorConvention::Discounted
                },
            };
            let run = hedge_path(&imported.prices, &[option], &setup)?.remove(0);
            emit_text(cli.out.as_deref(), &to_json(&run)?)
        }
        Command::Experiment => {
            let Some(path) = &cli.config else {
                return Err(ArsvError::Config("experiment needs --config".into()));
            };
            let mut config = ExperimentConfig::from_file(path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let report = run_experiment(&config)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("arsv-report"));
            let files = emit_report(&report, &dir, format)?;
            eprintln!(
                "{} cells, {} files in {} ({:.1} s)",
                report.cells.len(),
                files.len(),
                dir.display(),
                report.wall_time_secs
            );
            Ok(())
        }
    }
}
