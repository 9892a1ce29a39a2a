use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario generation failed: {0}")]
    ScenarioGeneration(String),
    #[error("robot is at its goal; the robot-centric frame is undefined")]
    DegenerateGoal,
    #[error("non-finite activation in {location} (parameter snapshot {snapshot:016x})")]
    Numeric { location: String, snapshot: u64 },
    #[error("training diverged at episode {episode}: running mean |V| = {mean_abs_value}")]
    Divergence { episode: usize, mean_abs_value: f64 },
    #[error("no path from start to goal")]
    NoPath,
    #[error("planner precondition violated: {0}")]
    PlannerPrecondition(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
