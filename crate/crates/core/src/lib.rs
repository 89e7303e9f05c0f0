//! Carbon-aware scheduling of federated-learning clients over time slots.
//!
//! The pipeline: load hourly carbon-intensity traces ([`ci_traces`]), turn them into per-client
//! carbon costs, measure how much temporal slack saves ([`slack`]), solve the budgeted
//! alpha-fair allocation with an optional fine-tuning window ([`scheduler`]), quantify the
//! resulting participation bias ([`metrics`]), and train on the schedule ([`fl_sim`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32`/`f64`); the aliases below fix `f64`.

pub mod ci_traces;
pub mod fl_sim;
pub mod metrics;
pub mod scalar;
pub mod scheduler;
pub mod slack;

pub use ci_traces::{
    carbon_cost_matrix, load_ci_traces, CarbonCostMatrix, CiError, CiTraceSet, ClientProfile, GapPolicy,
};
pub use fl_sim::{
    run_training, Architecture, Dataset, FlConfig, FlError, FlTask, Model, SyntheticSpec, TrainingRun,
};
pub use metrics::{
    estimate_correlation, mc_generate_schedule, selection_stats, CorrelationEstimate, FrequencyHorizon,
    MetricsError, ParticipationChain, SelectionStats,
};
pub use scalar::Scalar;
pub use scheduler::{
    no_slack_baseline, solve_alpha_fair, solve_with_finetuning, FinetuneWindow, ScheduleConfig, ScheduleError,
    ScheduleMatrix, SolverKind,
};
pub use slack::{savings_multi, savings_single, sweep_slack, SelectionReport, SlackError, SlackReport, SlackSweep};

pub type CostMatrix = CarbonCostMatrix<f64>;
pub type Schedule = ScheduleMatrix<f64>;
pub type Config = ScheduleConfig<f64>;
pub type Stats = SelectionStats<f64>;
pub type ClientSavings = SlackReport<f64>;
pub type FleetSavings = SelectionReport<f64>;
pub type Sweep = SlackSweep<f64>;
pub type Task = FlTask<f64>;
pub type Run = TrainingRun<f64>;
