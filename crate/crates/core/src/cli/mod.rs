//! Experiment orchestration: run the three chain ensembles, persist traces,
//! compute every metric and write the JSON and CSV reports.

pub mod config;
mod divergence;
mod report;
mod run;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::mrf::write_trace;

pub use config::{ChainSettings, DivergenceSweep, ExperimentConfig, InputSpec, MetricsOptions};
pub use divergence::{divergence_csv, divergence_sweep, DivergencePoint, DivergenceSummary, HistogramBin};
pub use report::{
    analyze, Analysis, ArmReport, CurvePoint, EssReport, IterationRatios, KsComparison, RobustnessReport,
    SpreadSummary,
};
pub use run::{chain_config, load_inputs, load_traces, run_chains, trace_file_name, Arm, ArmTraces, Inputs};

pub const CONFIG_ECHO: &str = "config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const PER_RV_CSV: &str = "per_rv_metrics.csv";
pub const R2_CSV: &str = "r2_values.csv";
pub const DIVERGENCE_CSV: &str = "divergence.csv";

/// 17 significant digits.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn fmt_opt(x: Option<f64>, missing: &str) -> String {
    x.map_or_else(|| missing.to_string(), fmt_float)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Trace {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Trace {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes the report, the CSVs and the config echo into `dir`.
pub fn write_outputs(dir: &Path, analysis: &Analysis) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_ECHO), analysis.report.config.to_toml_string())?;
    write_file(&dir.join(REPORT_JSON), analysis.report.to_json())?;
    write_file(&dir.join(PER_RV_CSV), &analysis.per_rv_csv)?;
    write_file(&dir.join(R2_CSV), &analysis.r2_csv)?;
    write_file(&dir.join(DIVERGENCE_CSV), &analysis.divergence_csv)
}

/// Runs every chain, writes `traces/` and the reports into `out`.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<Analysis> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let traces = run_chains(config, &inputs)?;
    let trace_dir = out.join("traces");
    create_dir(&trace_dir)?;
    for arm in Arm::ALL {
        for (run, trace) in traces.get(arm).iter().enumerate() {
            write_trace(trace_dir.join(trace_file_name(arm, run, config.run_seed(run))), trace)?;
        }
    }
    let analysis = analyze(config, &inputs, &traces)?;
    write_outputs(out, &analysis)?;
    Ok(analysis)
}

/// Recomputes the report of an earlier `cmd_run` from its config echo and traces.
pub fn cmd_report(dir: &Path) -> Result<Analysis> {
    let echo = dir.join(CONFIG_ECHO);
    if !echo.is_file() {
        return Err(Error::Trace {
            path: echo,
            message: "no experiment config echo; is this an output directory of `run`?".into(),
        });
    }
    let config = ExperimentConfig::load(&echo)?;
    let inputs = load_inputs(&config)?;
    let traces = load_traces(dir, &config, &inputs)?;
    analyze(&config, &inputs, &traces)
}

/// Runs the divergence sweep alone and writes `divergence.csv` and `divergence.json`.
pub fn cmd_divergence(config: &ExperimentConfig, out: &Path) -> Result<DivergenceSummary> {
    let (summary, points) = divergence_sweep(&config.approx, &config.divergence)?;
    create_dir(out)?;
    write_file(&out.join(DIVERGENCE_CSV), divergence_csv(&points))?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out.join("divergence.json"), json)?;
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(name = "robustness", version, about = "Statistical robustness of approximate MCMC samplers on stereo MRFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the software, software+noise and hardware chain ensembles.
    Run(ExperimentArgs),
    /// Sweep random energy vectors and measure exact-vs-approximate JSD.
    Divergence(ExperimentArgs),
    /// Recompute the report of an earlier run from its traces.
    Report {
        /// Output directory of `run`.
        dir: PathBuf,
        /// Write the recomputed outputs here instead of printing report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

impl ExperimentArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let config = ExperimentConfig::load(&self.config)?.with_seed_offset(self.seed_offset);
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
        Ok((config, out))
    }
}

fn with_workers<T>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match workers {
        None => f(),
        Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidState(e.to_string()))?
            .install(f),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let (config, out) = args.load()?;
            let analysis = with_workers(args.workers, || cmd_run(&config, &out))?;
            let r = &analysis.report;
            println!(
                "wrote {} traces and reports to {} ({} of {} pixels active)",
                3 * config.runs,
                out.display(),
                r.active_pixels,
                r.pixels
            );
        }
        Command::Divergence(args) => {
            let (config, out) = args.load()?;
            let s = with_workers(args.workers, || cmd_divergence(&config, &out))?;
            let shown = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
            println!(
                "{} points, {} degenerate, max JSD {} nats, mean {} nats",
                s.points,
                s.degenerate,
                shown(s.max_jsd),
                shown(s.mean_jsd)
            );
        }
        Command::Report { dir, out, workers } => {
            let analysis = with_workers(workers, || cmd_report(&dir))?;
            match out {
                Some(out) => write_outputs(&out, &analysis)?,
                None => print!("{}", analysis.report.to_json()),
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}
