use carbonfl_core::{CiError, FlError, MetricsError, ScheduleError, SlackError};

/// Error families, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Data,
    Infeasible,
    Solver,
    Simulation,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Config => 2,
            Self::Io => 3,
            Self::Data => 4,
            Self::Infeasible => 5,
            Self::Solver => 6,
            Self::Simulation => 7,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Io => "io",
            Self::Data => "data",
            Self::Infeasible => "infeasible",
            Self::Solver => "solver",
            Self::Simulation => "simulation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<CiError> for CliError {
    fn from(e: CiError) -> Self {
        let kind = match e {
            CiError::FileNotFound(_) | CiError::Io(_) => ErrorKind::Io,
            CiError::InvalidProfile { .. } => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SlackError> for CliError {
    fn from(e: SlackError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        let kind = match e {
            ScheduleError::NoFeasiblePlacement | ScheduleError::WindowOverBudget { .. } => ErrorKind::Infeasible,
            ScheduleError::BadAlpha(_) | ScheduleError::BadBudget(_) | ScheduleError::BadConfig(_) => {
                ErrorKind::Config
            }
            _ => ErrorKind::Solver,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<FlError> for CliError {
    fn from(e: FlError) -> Self {
        let kind = match e {
            FlError::BadConfig(_) => ErrorKind::Config,
            FlError::Io(_) => ErrorKind::Io,
            FlError::Idx(_) => ErrorKind::Data,
            _ => ErrorKind::Simulation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::InvalidChain(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config(format!("config: {e}"))
    }
}
