//! Error type shared by all subcommands, carrying the process exit code.
//!
//! Convention: `Usage` is for bad invocations and bad configuration (exit
//! code 2), `Runtime` for failures while doing the work — unreadable files,
//! training blow-ups, I/O (exit code 1).

use std::fmt;

use medqa_core::checkpoint::CheckpointError;
use medqa_core::crossval::CvError;
use medqa_core::data::DataError;
use medqa_core::encoder::ConfigError;
use medqa_core::qa::QaError;
use medqa_core::train::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// The invocation or configuration is wrong; exits with code 2.
    Usage(String),
    /// The work itself failed; exits with code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Renders an error with its full source chain, so e.g. a fold failure
/// still names the underlying numeric problem.
fn chain(err: &dyn std::error::Error) -> String {
    let mut msg = err.to_string();
    let mut source = err.source();
    while let Some(cause) = source {
        msg.push_str(": ");
        msg.push_str(&cause.to_string());
        source = cause.source();
    }
    msg
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        match err {
            DataError::DegenerateRatio { .. } => CliError::Usage(chain(&err)),
            _ => CliError::Runtime(chain(&err)),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::BadConfig { .. } => CliError::Usage(chain(&err)),
            _ => CliError::Runtime(chain(&err)),
        }
    }
}

impl From<CvError> for CliError {
    fn from(err: CvError) -> Self {
        match err {
            CvError::BadOptions { .. } | CvError::TooFewRecords { .. } => {
                CliError::Usage(chain(&err))
            }
            _ => CliError::Runtime(chain(&err)),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(err: ConfigError) -> Self {
        CliError::Usage(chain(&err))
    }
}

impl From<CheckpointError> for CliError {
    fn from(err: CheckpointError) -> Self {
        CliError::Runtime(chain(&err))
    }
}

impl From<QaError> for CliError {
    fn from(err: QaError) -> Self {
        CliError::Runtime(chain(&err))
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(chain(&err))
    }
}

/// Shorthand for ad-hoc runtime failures with a path context.
pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
