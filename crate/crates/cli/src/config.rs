//! The JSON run configuration accepted by `lr-find`, `train`, `ablate` and
//! `eval`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use radtrain::pipeline::artifacts::read_text;
use radtrain::pipeline::PipelineConfig;
use radtrain::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "RADTRAIN_OUT";
/// Output root when neither the flag, the config file nor [`OUT_ENV`] says.
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Directory holding `manifest.csv` and `images/`.
    pub dataset: PathBuf,
    /// `patient_id,split` file.
    pub splits: PathBuf,
    /// Run directory; defaults to `$RADTRAIN_OUT/<variant>`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl RunConfigFile {
    /// Reads a config file; relative paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg: RunConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = absolute(&cwd()?, path.parent().unwrap_or(Path::new("")));
        cfg.dataset = absolute(&base, &cfg.dataset);
        cfg.splits = absolute(&base, &cfg.splits);
        cfg.out_dir = cfg.out_dir.map(|d| absolute(&base, &d));
        Ok(cfg)
    }

    /// Applies the seed precedence (flag over file) and materializes every
    /// default, so the echo reproduces the run on its own.
    pub fn materialized(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.pipeline.seed = s;
        }
        self.pipeline.validate()?;
        self.pipeline = self.pipeline.resolved();
        Ok(self)
    }

    pub fn run_dir(&self, flag: Option<&Path>, leaf: &str) -> PathBuf {
        if let Some(d) = flag {
            return d.to_path_buf();
        }
        if let Some(d) = &self.out_dir {
            return d.clone();
        }
        out_root().join(leaf)
    }

    /// The echo for a run of `pipeline` written into `dir`.
    pub fn echo(&self, pipeline: &PipelineConfig, dir: &Path) -> Result<serde_json::Value> {
        let echo = RunConfigFile {
            dataset: self.dataset.clone(),
            splits: self.splits.clone(),
            out_dir: Some(absolute(&cwd()?, dir)),
            pipeline: pipeline.resolved(),
        };
        Ok(serde_json::to_value(echo)?)
    }
}

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

fn cwd() -> Result<PathBuf> {
    std::env::current_dir().map_err(|e| Error::io(".", e))
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
