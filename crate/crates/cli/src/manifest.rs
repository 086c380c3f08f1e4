use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use absa_core::dataio::DatasetSplit;
use anyhow::{Context as _, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetEntry {
    pub split: String,
    pub path: PathBuf,
    pub version: String,
    pub sentences: usize,
}

impl DatasetEntry {
    pub fn new(path: &Path, split: &DatasetSplit) -> Self {
        DatasetEntry {
            split: split.name.to_string(),
            path: path.to_path_buf(),
            version: split.source_version.clone(),
            sentences: split.len(),
        }
    }
}

/// Record of one command invocation, written before any work starts and
/// completed when the command finishes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// The full command line; rerunning it reproduces the run.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub datasets: Vec<DatasetEntry>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(
        path: PathBuf,
        command: &str,
        args: &[String],
        config: serde_json::Value,
        datasets: Vec<DatasetEntry>,
        seed: Option<u64>,
        output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let manifest = RunManifest {
            command: command.to_owned(),
            args: args.to_vec(),
            config,
            datasets,
            seed,
            output_dir,
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            path,
        };
        manifest.write()?;
        Ok(manifest)
    }

    fn write(&self) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&self.path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing manifest {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = "ok".into();
        self.write()
    }
}
