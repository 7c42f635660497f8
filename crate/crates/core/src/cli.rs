//! Command-line front end.
//!
//! `run` writes plot-ready time series, `validate` checks a scenario file and
//! `oracle` runs the brute-force verification suites.
//!
//! Scenario parameters follow flag > file > default precedence: `--horizon`
//! and `--seed` override the values in a `--config` file, which override the
//! preset defaults.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::belief::ForecastMode;
use crate::engine::{run_monte_carlo, AggregateResult, EngineOptions, MonteCarloOptions, ScenarioSource};
use crate::error::{Error, Result};
use crate::model::{stationary_on_prob, ScenarioConfig, ScenarioTemplate};
use crate::oracle::{self, OracleParams};
use crate::policies::{PolicyId, TieBreak};

/// Header of the time-series CSV. Column order is fixed.
pub const CSV_HEADER: &str = "t,policy,run_stat,regret_slot,regret_cum,usage_avg,aoi_avg,aoi_peak";

pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_HORIZON: usize = 2000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "fastgrant", version, about = "Traffic-prediction based fast uplink grant simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo experiment and write metric time series.
    Run(RunArgs),
    /// Check a scenario JSON file.
    Validate {
        /// Path to a scenario JSON document.
        config: PathBuf,
    },
    /// Compare the filter and predictor against brute-force enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// N=10 events, K=50 sensors, L=10 slots.
    Fig3,
    /// N=10 events, K=100 sensors, L=10 slots.
    Fig4,
}

impl Preset {
    pub fn template(self) -> ScenarioTemplate {
        let n_devices = match self {
            Preset::Fig3 => 50,
            Preset::Fig4 => 100,
        };
        ScenarioTemplate {
            n_processes: 10,
            n_devices,
            n_slots: 10,
            horizon: DEFAULT_HORIZON,
            eps_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum BeliefModeArg {
    #[default]
    MapState,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum TieBreakArg {
    #[default]
    Aoi,
    Index,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario JSON file; every run uses this scenario.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Sample scenarios with the dimensions of a reference experiment.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Comma-separated policy list.
    #[arg(long, value_delimiter = ',', default_value = "ra,tdd,fu_limited,fu_feedback,genie")]
    pub policies: Vec<PolicyId>,
    /// Number of Monte-Carlo runs (default 20).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of time slots per run.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[arg(long, value_enum, default_value_t = BeliefModeArg::MapState)]
    pub belief_mode: BeliefModeArg,
    /// Tie-break among equal forecasts: older age first, or index only.
    #[arg(long, value_enum, default_value_t = TieBreakArg::Aoi)]
    pub tie_break: TieBreakArg,
    /// Sample one scenario and reuse it for every run.
    #[arg(long)]
    pub fixed_scenario: bool,
    /// Emit only the final slot instead of every slot.
    #[arg(long)]
    pub summary: bool,
    /// Execute runs sequentially on the calling thread.
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 3)]
    pub max_n: usize,
    #[arg(long, default_value_t = 3)]
    pub max_k: usize,
    #[arg(long, default_value_t = 6)]
    pub max_t: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitMode {
    PerSlot,
    Summary,
}

/// A fully resolved `run` request.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: ScenarioSource,
    pub policies: Vec<PolicyId>,
    pub runs: usize,
    pub master_seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub emit: EmitMode,
    pub options: MonteCarloOptions,
}

impl ExperimentSpec {
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let (source, file_seed) = match &args.config {
            Some(path) => {
                let mut config = load_config(path)?;
                if let Some(h) = args.horizon {
                    config.horizon = h;
                }
                let seed = config.seed;
                (ScenarioSource::Fixed(config), Some(seed))
            }
            None => {
                let mut template = args.preset.unwrap_or(Preset::Fig3).template();
                if let Some(h) = args.horizon {
                    template.horizon = h;
                }
                (ScenarioSource::Sample(template), None)
            }
        };
        let runs = args.runs.unwrap_or(DEFAULT_RUNS);
        if runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        let policies = crate::engine::normalize_policies(&args.policies)?;
        Ok(ExperimentSpec {
            source,
            policies,
            runs,
            master_seed: args.seed.or(file_seed).unwrap_or(DEFAULT_SEED),
            out: args.out.clone(),
            format: args.format,
            emit: if args.summary { EmitMode::Summary } else { EmitMode::PerSlot },
            options: MonteCarloOptions {
                engine: EngineOptions {
                    forecast_mode: match args.belief_mode {
                        BeliefModeArg::MapState => ForecastMode::MapState,
                        BeliefModeArg::Marginal => ForecastMode::Marginal,
                    },
                    tie_break: match args.tie_break {
                        TieBreakArg::Aoi => TieBreak::AgeThenIndex,
                        TieBreakArg::Index => TieBreak::Index,
                    },
                },
                fixed_scenario: args.fixed_scenario,
                parallel: !args.serial,
            },
        })
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}

/// Renders the aggregate as CSV: for each slot, each policy, a `mean` row
/// then a `std` row.
pub fn render_csv(agg: &AggregateResult, emit: EmitMode) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let slots: Vec<usize> = match emit {
        EmitMode::PerSlot => (0..agg.horizon).collect(),
        EmitMode::Summary => agg.horizon.checked_sub(1).into_iter().collect(),
    };
    for slot in slots {
        for series in &agg.series {
            for (stat, points) in [("mean", &series.mean), ("std", &series.std)] {
                let p = points[slot];
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    slot + 1,
                    series.policy,
                    stat,
                    p.regret_slot,
                    p.regret_cum,
                    p.usage_avg,
                    p.aoi_avg,
                    p.aoi_peak
                )
                .expect("writing to a String cannot fail");
            }
        }
    }
    out
}

pub fn render_json(agg: &AggregateResult, emit: EmitMode) -> Result<String> {
    let mut agg = agg.clone();
    if emit == EmitMode::Summary {
        for s in &mut agg.series {
            let keep = s.mean.len().saturating_sub(1);
            s.mean.drain(..keep);
            s.std.drain(..keep);
        }
    }
    let mut text = serde_json::to_string_pretty(&agg)?;
    text.push('\n');
    Ok(text)
}

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn cmd_run(spec: &ExperimentSpec) -> Result<()> {
    let agg = run_monte_carlo(&spec.source, spec.runs, spec.master_seed, &spec.policies, spec.options)?;
    let text = match spec.format {
        OutputFormat::Csv => render_csv(&agg, spec.emit),
        OutputFormat::Json => render_json(&agg, spec.emit)?,
    };
    match &spec.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Validates a scenario file and describes it on stdout.
pub fn cmd_validate(path: &Path) -> Result<String> {
    let config = load_config(path)?;
    let mut out = format!(
        "N={} K={} L={} horizon={} seed={}\n",
        config.n_processes, config.n_devices, config.n_slots, config.horizon, config.seed
    );
    for n in 0..config.n_processes {
        match stationary_on_prob(&config, n) {
            Ok(p) => writeln!(out, "process {n}: stationary P(on) = {p}"),
            Err(_) => writeln!(out, "process {n}: frozen chain, no stationary distribution"),
        }
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Runs the oracle suite; succeeds iff the worst deviation is within tolerance.
pub fn cmd_oracle(args: &OracleArgs) -> Result<String> {
    let params = OracleParams {
        max_n: args.max_n,
        max_k: args.max_k,
        max_t: args.max_t,
        instances: args.instances,
        seed: args.seed,
    };
    let report = oracle::run_suite(&params)?;
    let summary = format!(
        "instances={} forward max |dev|={:e} predictor max |dev|={:e}\n",
        report.instances, report.forward_max_dev, report.predictor_max_dev
    );
    if report.max_deviation() <= args.tolerance {
        Ok(summary)
    } else {
        Err(Error::config(
            "tolerance",
            format!(
                "{}deviation {:e} exceeds tolerance {:e} (instance seed {})",
                summary,
                report.max_deviation(),
                args.tolerance,
                report.worst_seed()
            ),
        ))
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(&ExperimentSpec::from_args(args)?),
        Command::Validate { config } => {
            print!("{}", cmd_validate(config)?);
            Ok(())
        }
        Command::Oracle(args) => {
            print!("{}", cmd_oracle(args)?);
            Ok(())
        }
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
