//! Scenario execution: load a scenario, drive the loop, write the report.

pub mod operator;
pub mod report;
pub mod scenario;
pub mod sim;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::messages::MessageError;
use crate::metrics::MetricsError;
use crate::netem::NetemError;
use crate::vehicle::VehicleError;
use crate::videopath::VideoError;

pub use operator::ScriptedOperator;
pub use report::{read_outputs, report_dir, write_outputs, ExperimentReport};
pub use scenario::{ConfigError, Mode, OperatorKind, Scenario};
pub use sim::{simulate_schedule, RunData};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario:\n{}", join_config(.0))]
    Config(Vec<ConfigError>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("operator trace: {0}")]
    Trace(String),
    #[error("output files: {0}")]
    Csv(String),
    #[error(transparent)]
    Netem(#[from] NetemError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Unsupported(String),
}

fn join_config(errors: &[ConfigError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for a bad scenario, 3 for a failed run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<Vec<ConfigError>> for RunError {
    fn from(e: Vec<ConfigError>) -> Self {
        RunError::Config(e)
    }
}

/// Runs a virtual-time scenario in memory. `base_dir` resolves relative
/// trace paths.
pub fn simulate(sc: &Scenario, base_dir: Option<&Path>) -> Result<RunData, RunError> {
    sc.check()?;
    if sc.mode != Mode::Virtual {
        return Err(RunError::Unsupported(
            "realtime scenarios run through the bridge, not the virtual runner".into(),
        ));
    }
    let op = ScriptedOperator::new(&sc.operator, base_dir)?;
    simulate_schedule(sc, &op.schedule(sc.duration_us()))
}

/// Simulates `sc` and writes all outputs into `out_dir`.
pub fn run(
    sc: &Scenario,
    base_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<ExperimentReport, RunError> {
    let data = simulate(sc, base_dir)?;
    let report = ExperimentReport::build(sc, &data);
    write_outputs(out_dir, sc, &data, &report)?;
    Ok(report)
}
