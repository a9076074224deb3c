//! Run manifests: the resolved command plus the files it wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::CliError;

pub const TOOL: &str = "a3d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Every argument with defaults filled in and paths made absolute.
    pub run: Command,
    /// Output file names, relative to the run's output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(run: Command, outputs: Vec<String>) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            run,
            outputs,
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(Self::file_name(self.run.name()));
        a3d::datamodel::io::write_text(&path, &self.to_json())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = a3d::datamodel::io::read_text(path)?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(CliError::Manifest(format!("{}: not an {TOOL} manifest", path.display())));
        }
        if matches!(m.run, Command::Rerun(_)) {
            return Err(CliError::Manifest(format!("{}: manifest records a rerun", path.display())));
        }
        Ok(m)
    }
}
