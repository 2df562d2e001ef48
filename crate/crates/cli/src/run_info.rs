use std::path::Path;

use serde::{Deserialize, Serialize};
use tgmr_core::Config;

pub const RUN_FILE: &str = "run.json";

/// Resolved settings written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Full model/training config, for commands that use one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    /// Command-line arguments as parsed.
    pub args: serde_json::Value,
}

impl RunInfo {
    pub fn new(command: &str, seed: u64, config: Option<Config>, args: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            args: serde_json::to_value(args)?,
        })
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| tgmr_core::Error::Dataset {
            location: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(serde_json::from_str(&text).map_err(tgmr_core::Error::from)?)
    }
}
