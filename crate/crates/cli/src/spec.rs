//! The experiment file, flag overrides, and everything derived from it before a command runs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use carbonfl_core::ci_traces::{
    fixture_client_profiles, fixture_traces, inspect_ci_file, parse_timestamp, CiTraceSet,
};
use carbonfl_core::metrics::ParticipationChain;
use carbonfl_core::scheduler::full_budget_reference;
use carbonfl_core::{
    carbon_cost_matrix, load_ci_traces, ClientProfile, CostMatrix, FlConfig, GapPolicy, ScheduleConfig, SolverKind,
    SyntheticSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Power draw given to clients derived from the regions of a CI file.
pub const DEFAULT_POWER_KW: f64 = 0.3;

/// A carbon budget, either absolute or relative to the full-budget reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Kg(f64),
    Percent(f64),
}

impl Budget {
    pub fn resolve(self, reference_kg: f64) -> f64 {
        match self {
            Self::Kg(kg) => kg,
            Self::Percent(p) => p / 100.0 * reference_kg,
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    /// `0.94` or `0.94kg` is absolute, `9.69%` is relative.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (num, pct) = match s.strip_suffix('%') {
            Some(n) => (n, true),
            None => (s.strip_suffix("kg").unwrap_or(s), false),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("bad budget `{s}` (expected e.g. 0.94 or 9.69%)"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("budget must be finite and non-negative, got `{s}`"));
        }
        Ok(if pct { Self::Percent(v) } else { Self::Kg(v) })
    }
}

/// Scheduler settings. Field names follow the library's schedule config; the budget may be
/// given in kg or as a percentage, and `s` pins the fine-tuning end time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub rounds: usize,
    pub t_sl: usize,
    pub t_ft: usize,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_percent: Option<f64>,
    pub solver: SolverKind,
    pub partial_enumeration: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            rounds: 50,
            t_sl: 50,
            t_ft: 0,
            alpha: 0.1,
            budget_kg: None,
            budget_percent: None,
            solver: SolverKind::Auto,
            partial_enumeration: false,
            s: None,
        }
    }
}

impl ScheduleSpec {
    pub fn horizon(&self) -> usize {
        self.rounds + self.t_sl
    }

    pub fn budget(&self) -> Result<Budget> {
        match (self.budget_kg, self.budget_percent) {
            (Some(_), Some(_)) => Err(CliError::config("set only one of budget_kg and budget_percent")),
            (Some(kg), None) => Ok(Budget::Kg(kg)),
            (None, Some(p)) => Ok(Budget::Percent(p)),
            (None, None) => Ok(Budget::Percent(10.0)),
        }
    }

    pub fn set_budget(&mut self, budget: Budget) {
        match budget {
            Budget::Kg(kg) => {
                self.budget_kg = Some(kg);
                self.budget_percent = None;
            }
            Budget::Percent(p) => {
                self.budget_kg = None;
                self.budget_percent = Some(p);
            }
        }
    }

    pub fn to_config(&self, budget_kg: f64) -> ScheduleConfig<f64> {
        ScheduleConfig {
            rounds: self.rounds,
            t_sl: self.t_sl,
            t_ft: self.t_ft,
            alpha: self.alpha,
            budget_kg,
            solver: self.solver,
            partial_enumeration: self.partial_enumeration,
        }
    }
}

/// IDX files for the optional image task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub synthetic: SyntheticSpec,
    /// Replaces the synthetic task when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlackSpec {
    #[serde(rename = "T")]
    pub rounds: usize,
    pub t_sl: Vec<usize>,
    /// Random start offsets to average over; 0 analyses the window at the start only.
    pub offsets: usize,
}

impl Default for SlackSpec {
    fn default() -> Self {
        Self {
            rounds: 100,
            t_sl: vec![0, 12, 24, 48, 96, 236],
            offsets: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    /// Carbon-aware schedule from the scheduler.
    #[default]
    Optimize,
    /// Every client every slot until the budget runs out.
    Baseline,
    /// Markov-generated participation, one draw per seed.
    Generated,
}

/// Targets for a generated participation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub activity: Vec<f64>,
    pub lambda2: f64,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default = "half")]
    pub latent_activity: f64,
    #[serde(default)]
    pub latent_lambda2: f64,
}

fn half() -> f64 {
    0.5
}

impl ChainSpec {
    pub fn chain(&self) -> Result<ParticipationChain> {
        Ok(ParticipationChain::from_targets(&self.activity, self.lambda2)?.with_latent(
            self.coupling,
            self.latent_activity,
            self.latent_lambda2,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub source: ScheduleSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSpec>,
}

/// Sweep axes. Empty axes fall back to the single value in the schedule section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub budgets: Vec<Budget>,
    pub s_values: Vec<usize>,
    pub t_ft_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Hourly CI traces; the bundled synthetic traces when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_file: Option<PathBuf>,
    /// First hour to load, `YYYY-MM-DDTHH:00:00Z`; the earliest in the file when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    pub gap_policy: GapPolicy,
    /// One client per region of the file when empty.
    pub clients: Vec<ClientProfile>,
    pub schedule: ScheduleSpec,
    pub fl: FlConfig,
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
    /// Not echoed: where the results go is not part of the experiment.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub slack: SlackSpec,
    pub simulate: SimulateSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            ci_file: None,
            start: None,
            gap_policy: GapPolicy::Reject,
            clients: Vec::new(),
            schedule: ScheduleSpec::default(),
            fl: FlConfig::default(),
            task: TaskSpec::default(),
            seeds: vec![0],
            out_dir: None,
            slack: SlackSpec::default(),
            simulate: SimulateSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::new(crate::error::ErrorKind::Io, format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut spec = Self::from_json(&text)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = spec.ci_file.as_mut() {
            rebase(p);
        }
        if let Some(idx) = spec.task.idx.as_mut() {
            rebase(&mut idx.train_images);
            rebase(&mut idx.train_labels);
            rebase(&mut idx.test_images);
            rebase(&mut idx.test_labels);
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("carbonfl-out"))
    }

    /// Hours available from the start hour to the end of the CI data.
    pub fn available_hours(&self) -> Result<usize> {
        let Some(path) = &self.ci_file else {
            return Ok(fixture_traces().hours());
        };
        let summary = inspect_ci_file(path)?;
        let (Some(first), Some(last)) = (summary.first, summary.last) else {
            return Ok(0);
        };
        let start = self.start_hour()?.unwrap_or(first);
        Ok(usize::try_from((last - start).num_hours() + 1).unwrap_or(0))
    }

    fn start_hour(&self) -> Result<Option<carbonfl_core::ci_traces::Timestamp>> {
        self.start
            .as_deref()
            .map(|s| parse_timestamp(s).ok_or_else(|| CliError::config(format!("bad start timestamp `{s}`"))))
            .transpose()
    }

    /// Client profiles and the carbon-cost matrix over the first `hours` hours.
    pub fn load_costs(&self, hours: usize) -> Result<(Vec<ClientProfile>, CostMatrix)> {
        let (traces, profiles) = self.load_traces(hours)?;
        let costs = carbon_cost_matrix(&traces, &profiles, hours)?;
        Ok((profiles, costs))
    }

    fn load_traces(&self, hours: usize) -> Result<(CiTraceSet, Vec<ClientProfile>)> {
        let Some(path) = &self.ci_file else {
            if self.start.is_some() {
                return Err(CliError::config("`start` needs `ci_file`"));
            }
            let profiles = if self.clients.is_empty() {
                fixture_client_profiles()
            } else {
                self.clients.clone()
            };
            return Ok((fixture_traces(), profiles));
        };
        let summary = inspect_ci_file(path)?;
        let profiles = if self.clients.is_empty() {
            summary
                .regions
                .iter()
                .enumerate()
                .map(|(i, r)| ClientProfile::new(i + 1, r.clone(), DEFAULT_POWER_KW))
                .collect()
        } else {
            self.clients.clone()
        };
        let mut regions: Vec<String> = Vec::new();
        for p in &profiles {
            if !regions.contains(&p.region) {
                regions.push(p.region.clone());
            }
        }
        let start = match (self.start_hour()?, summary.first) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => return Err(CliError::data(format!("{} has no data rows", path.display()))),
        };
        let loaded = load_ci_traces(path, &regions, start, hours, self.gap_policy)?;
        if loaded.filled_count > 0 {
            eprintln!("warning: forward-filled {} missing region-hours", loaded.filled_count);
        }
        Ok((loaded.traces, profiles))
    }

    pub fn reference_kg(&self, costs: &CostMatrix) -> f64 {
        full_budget_reference(costs, self.schedule.rounds)
    }

    pub fn check_seeds(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("the seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::config("the seed list has duplicates"));
        }
        Ok(())
    }
}
