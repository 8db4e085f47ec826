//! Run configuration: one versioned JSON document covering every stage.

use std::path::{Path, PathBuf};

use foreseer_core::dataset::DatasetConfig;
use foreseer_core::env::{ModeId, TaskId};
use foreseer_core::policy::PolicyConfig;
use foreseer_core::steering::SteeringConfig;
use foreseer_core::verifier::{ClassifierConfig, TaskSpec};
use foreseer_core::worldmodel::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::client::ClientConfig;
use crate::error::{Error, Result};
use crate::io;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub policy: u64,
    pub worldmodel: u64,
    pub env: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 0,
            policy: 0,
            worldmodel: 0,
            env: 7,
        }
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            data: seed,
            policy: seed,
            worldmodel: seed,
            env: seed,
        }
    }
}

/// Reweights the fitted policy toward one mode at steering time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skew {
    pub mode: ModeId,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSettings {
    pub backend: BackendKind,
    pub client: ClientConfig,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            backend: BackendKind::Oracle,
            client: ClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub per_category: usize,
    /// Also write the raw pairwise scores as CSV.
    pub csv: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            per_category: 16,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Object family: `cup` or `bag`.
    pub family: TaskId,
    /// Built-in task id the run is judged against.
    pub task: String,
    pub seeds: Seeds,
    pub dataset: DatasetConfig,
    pub policy: PolicyConfig,
    pub skew: Option<Skew>,
    pub worldmodel: TrainConfig,
    pub classifier: ClassifierConfig,
    pub steering: SteeringConfig,
    pub verifier: VerifierSettings,
    pub ablation: AblationSettings,
    pub episodes: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            family: TaskId::Cup,
            task: "cup-serve".to_string(),
            seeds: Seeds::default(),
            dataset: DatasetConfig::default(),
            policy: PolicyConfig::default(),
            skew: Some(Skew {
                mode: ModeId::Rim,
                mass: 0.7,
            }),
            worldmodel: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            steering: SteeringConfig::default(),
            verifier: VerifierSettings::default(),
            ablation: AblationSettings::default(),
            episodes: 20,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Parse without validating, so overrides can be applied first.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read and parse; call [`RunConfig::validate`] before use.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: foreseer_core::Error| Error::Config(e.to_string());
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let task = self.task_spec()?;
        if task.family() != Some(self.family) {
            return Err(Error::Config(format!(
                "task {} does not belong to family {}",
                self.task, self.family
            )));
        }
        if let Some(modes) = &self.dataset.modes {
            if modes.is_empty() {
                return Err(Error::Config("dataset.modes is empty".into()));
            }
        }
        if let Some(s) = &self.skew {
            if !(0.0..=1.0).contains(&s.mass) {
                return Err(Error::Config("skew.mass must be in [0, 1]".into()));
            }
        }
        self.worldmodel.validate().map_err(cfg)?;
        self.steering.validate().map_err(cfg)?;
        if self.steering.plan_horizon != self.policy.horizon {
            return Err(Error::Config("steering.plan_horizon must equal policy.horizon".into()));
        }
        if self.verifier.backend == BackendKind::Client && self.verifier.client.endpoint.is_none() {
            return Err(Error::Config(
                "client backend needs verifier.client.endpoint or VERIFIER_ENDPOINT".into(),
            ));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::builtin(&self.task).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
