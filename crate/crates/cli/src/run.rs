//! Run-directory bookkeeping: every subcommand writes its outputs into one
//! directory and finishes by dropping a `manifest.json` that records the
//! command, the seed (when one applies), the fully resolved config, and the
//! relative paths of everything produced.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| {
            CliError::Run(format!(
                "cannot create run directory {}: {e}",
                root.display()
            ))
        })?;
        Ok(RunDir {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Reserves an output file: returns its full path and records the name
    /// for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.root.join(name)
    }

    /// Writes `manifest.json` and returns the list of produced files.
    pub fn finish(
        self,
        command: &str,
        seed: Option<u64>,
        config: &impl Serialize,
    ) -> Result<(), CliError> {
        let manifest = serde_json::json!({
            "command": command,
            "seed": seed,
            "config": serde_json::to_value(config)
                .map_err(|e| CliError::Run(format!("config serialization: {e}")))?,
            "outputs": self.outputs,
        });
        let path = self.root.join("manifest.json");
        std::fs::write(&path, format!("{manifest:#}\n"))
            .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Fails with a missing-input error unless `path` exists.
pub fn require_exists(what: &'static str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Reads and deserializes a JSON config file.
pub fn read_json<T: serde::de::DeserializeOwned>(
    what: &'static str,
    path: &Path,
) -> Result<T, CliError> {
    require_exists(what, path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{what} {}: {e}", path.display())))
}
