use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stmamba::data::{import_csv, read_archive, synth_generate, Dataset, EEGTrialSet, SplitSpec, SynthConfig};
use stmamba::model::ModelConfig;
use stmamba::training::TrainConfig;
use stmamba::Error;

use crate::{Failure, Precision, SynthShape};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "stmamba-run";
pub const VERSION: u32 = 1;

/// Session labels of generated archives.
pub const TRAIN_SESSION: &str = "T";
pub const TEST_SESSION: &str = "E";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Archive { path: PathBuf, sha256: String },
    Csv { path: PathBuf },
    Synth { train: SynthConfig, test: SynthConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: String,
    pub history: String,
    pub standardization: String,
    pub test_set: String,
    pub report: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self {
            checkpoint: "model.ckpt".into(),
            history: "history.jsonl".into(),
            standardization: "standardization.json".into(),
            test_set: "test.eta".into(),
            report: "report.json".into(),
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub dataset: Dataset,
    pub subject: Option<String>,
    pub source: DataSource,
    /// Trials are cropped to their first `crop` samples.
    pub crop: usize,
    pub precision: Precision,
    pub model_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Manifest(format!("{} is not a version {VERSION} run manifest", path.display())).into());
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Loads the data exactly as recorded.
    pub fn load_data(&self) -> Result<EEGTrialSet, Failure> {
        match &self.source {
            DataSource::Archive { path, sha256 } => {
                let found = sha256_file(path)?;
                if &found != sha256 {
                    return Err(Error::Manifest(format!(
                        "{} changed since the run (sha256 {found}, recorded {sha256})",
                        path.display()
                    ))
                    .into());
                }
                Ok(read_archive(path)?)
            }
            DataSource::Csv { path } => Ok(import_csv(path)?),
            DataSource::Synth { train, test } => Ok(synth_sessions(train, test)?),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Resolves a `--data` argument into a recorded source.
pub fn source_for(path: &Path) -> Result<DataSource, Failure> {
    let path = fs::canonicalize(path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
    if path.is_dir() {
        Ok(DataSource::Csv { path })
    } else {
        let sha256 = sha256_file(&path)?;
        Ok(DataSource::Archive { path, sha256 })
    }
}

pub fn synth_configs(shape: &SynthShape, seed: u64) -> (SynthConfig, SynthConfig) {
    let make = |n, seed, session: &str| SynthConfig {
        session: session.into(),
        ..SynthConfig::new(n, shape.classes, shape.channels, shape.samples, shape.snr, seed)
    };
    (
        make(shape.trials_per_class, seed, TRAIN_SESSION),
        make(shape.test_per_class, seed.wrapping_add(1_000), TEST_SESSION),
    )
}

/// A training session followed by an independently drawn test session.
pub fn synth_sessions(train: &SynthConfig, test: &SynthConfig) -> stmamba::Result<EEGTrialSet> {
    synth_generate(train)?.concat(&synth_generate(test)?)
}
