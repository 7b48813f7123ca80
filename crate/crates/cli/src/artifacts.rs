use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "run.json";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
}

/// An output directory holding one run's artifacts.
pub struct OutDir {
    pub path: PathBuf,
}

impl OutDir {
    /// Claims `path` for `command`, recording the resolved config. Fails if
    /// it already holds a run, unless `force`.
    pub fn create(path: &Path, force: bool, command: &str, config: &RunConfig) -> Result<Self, CliError> {
        if path.join(MANIFEST).exists() && !force {
            return Err(CliError::Exists(path.to_path_buf()));
        }
        std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let out = Self {
            path: path.to_path_buf(),
        };
        out.write_json(
            MANIFEST,
            &Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command,
                config,
            },
        )?;
        Ok(out)
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path.join(name);
        std::fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.join(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }
}
