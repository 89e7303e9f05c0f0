//! The `carbonfl` command line: argument parsing, config resolution and the subcommands.
//!
//! Exit codes: 0 success, 2 usage or config, 3 missing or unreadable file, 4 bad data,
//! 5 no feasible fine-tuning placement, 6 solver failure, 7 simulation failure.

pub mod commands;
pub mod error;
pub mod report;
pub mod spec;
pub mod svg;

use std::path::PathBuf;

use carbonfl_core::SolverKind;
use clap::{Args, Parser, Subcommand};

pub use error::{CliError, ErrorKind, Result};
pub use spec::{Budget, ExperimentSpec, ScheduleSource};

/// Sets the worker-pool size for sweeps and parallel training.
pub const WORKERS_ENV: &str = "CARBONFL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "carbonfl", version, about = "Carbon-aware federated-learning scheduling experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Hourly CI traces (`timestamp,region,ci_kg_per_kwh`); bundled synthetic traces if absent.
    #[arg(long, global = true)]
    pub ci_file: Option<PathBuf>,
    /// JSON experiment file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["exact", "greedy", "auto"])]
    pub solver: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Savings from temporal slack, per client and with client selection.
    AnalyzeSlack(SlackArgs),
    /// Solve the budgeted alpha-fair allocation.
    Schedule(ScheduleArgs),
    /// Train on a schedule for every seed.
    Simulate(SimulateArgs),
    /// Run the budget x alpha x t_ft x s grid with a no-slack baseline per budget.
    Sweep,
    /// Render SVG figures from the CSV files in the output directory.
    Report,
}

#[derive(Debug, Args)]
pub struct SlackArgs {
    /// Training duration T.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Slack values, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub t_sl: Option<Vec<usize>>,
    /// Random start offsets to average over.
    #[arg(long)]
    pub offsets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub t_sl: Option<usize>,
    #[arg(long)]
    pub t_ft: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// kg (`0.94`) or percent of the full-budget reference (`9.69%`).
    #[arg(long)]
    pub budget: Option<Budget>,
    /// Fix the fine-tuning end time instead of searching over it.
    #[arg(long)]
    pub end_time: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, value_enum)]
    pub source: Option<ScheduleSource>,
}

impl ScheduleArgs {
    fn apply(&self, spec: &mut ExperimentSpec) {
        let sc = &mut spec.schedule;
        if let Some(v) = self.rounds {
            sc.rounds = v;
        }
        if let Some(v) = self.t_sl {
            sc.t_sl = v;
        }
        if let Some(v) = self.t_ft {
            sc.t_ft = v;
        }
        if let Some(v) = self.alpha {
            sc.alpha = v;
        }
        if let Some(b) = self.budget {
            sc.set_budget(b);
        }
        if let Some(s) = self.end_time {
            sc.s = Some(s);
        }
    }
}

/// The config file (or defaults) with every flag applied.
pub fn resolve_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match &cli.common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    let common = &cli.common;
    if let Some(p) = &common.ci_file {
        spec.ci_file = Some(p.clone());
    }
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    if let Some(p) = &common.out_dir {
        spec.out_dir = Some(p.clone());
    }
    if let Some(s) = &common.solver {
        spec.schedule.solver = s.parse::<SolverKind>().map_err(CliError::config)?;
    }
    match &cli.command {
        Command::AnalyzeSlack(a) => {
            if let Some(v) = a.rounds {
                spec.slack.rounds = v;
            }
            if let Some(v) = &a.t_sl {
                spec.slack.t_sl = v.clone();
            }
            if let Some(v) = a.offsets {
                spec.slack.offsets = v;
            }
        }
        Command::Schedule(a) => a.apply(&mut spec),
        Command::Simulate(a) => {
            a.schedule.apply(&mut spec);
            if let Some(s) = a.source {
                spec.simulate.source = s;
            }
        }
        Command::Sweep | Command::Report => {}
    }
    Ok(spec)
}

fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let spec = resolve_spec(cli)?;
    let dispatch = || -> Result<()> {
        match &cli.command {
            Command::AnalyzeSlack(_) => commands::analyze_slack(&spec),
            Command::Schedule(_) => commands::schedule(&spec),
            Command::Simulate(_) => commands::simulate(&spec),
            Command::Sweep => commands::sweep(&spec),
            Command::Report => {
                let dir = spec.out_dir();
                let written = report::report(&dir)?;
                println!("report: {} -> {}", written.join(", "), dir.display());
                Ok(())
            }
        }
    };
    match workers()? {
        None => dispatch(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("worker pool: {e}")))?
            .install(dispatch),
    }
}
