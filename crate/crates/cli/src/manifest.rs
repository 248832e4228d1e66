use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sdfrecon::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

/// Record of one command invocation, written into its output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub scene: Option<String>,
    /// Flat key-value snapshot of the effective configuration.
    pub config: BTreeMap<String, String>,
    /// Inputs as given on the command line.
    pub inputs: BTreeMap<String, String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

/// Output directory of a command plus the manifest being assembled.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Run {
    /// Creates `dir`. An existing non-empty directory is only reused with
    /// `overwrite`, and only if it is a previous run's output (holds a
    /// manifest); its contents are then removed.
    pub fn start(command: &str, dir: &Path, overwrite: bool, seed: Option<u64>) -> Result<Self> {
        let occupied = dir.is_dir() && fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_some();
        if occupied {
            if !overwrite {
                return Err(Error::Validation(format!(
                    "output directory {} is not empty (pass --overwrite to replace it)",
                    dir.display()
                )));
            }
            if !dir.join(MANIFEST).is_file() {
                return Err(Error::Validation(format!(
                    "refusing to overwrite {}: it has no {MANIFEST}, so it was not written by this tool",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
        } else if dir.exists() && !dir.is_dir() {
            return Err(Error::Validation(format!("{} exists and is not a directory", dir.display())));
        }
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                scene: None,
                config: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                started_unix,
                elapsed_secs: 0.0,
            },
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn config_kv(&mut self, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.manifest.config.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `contents` to `name` inside the output directory.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io(&p, e))?;
        self.produced(name);
        Ok(())
    }

    pub fn produced(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.elapsed_secs = self.started.elapsed().as_secs_f64();
        let p = self.path(MANIFEST);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&p, json).map_err(|e| io(&p, e))?;
        Ok(self.manifest)
    }
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
