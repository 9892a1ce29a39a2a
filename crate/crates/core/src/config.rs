//! Run configuration: one JSON document tying every module's knobs together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::RewardConfig;
use crate::error::{Error, Result};
use crate::orca::OrcaParams;
use crate::planner::PlannerConfig;
use crate::sim::ScenarioSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub map: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub demo_buffer: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub orca: OrcaParams,
    pub planner: PlannerConfig,
    pub paths: PathsConfig,
    /// Whether simulated humans avoid the robot.
    pub humans_see_robot: bool,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    /// Parses and validates a config file; referenced input files must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.planner.validate()?;
        if !(self.orca.time_horizon > 0.0)
            || !(self.orca.reciprocity_share > 0.0 && self.orca.reciprocity_share <= 1.0)
        {
            return Err(Error::InvalidArgument(
                "orca time_horizon must be > 0 and reciprocity_share in (0, 1]".into(),
            ));
        }
        for p in [&self.paths.map, &self.paths.checkpoint]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
