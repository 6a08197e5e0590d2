use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mixcomp::curation::CurationConfig;
use mixcomp::diffusion::{make_schedule, ModelConfig, NoiseSchedule, TrainConfig};
use mixcomp::synthbench::{AugmentationConfig, SceneConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directory; when absent a dataset is generated from `scene`.
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    /// Apply the augmentation scheme once per training sample.
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            count: 500,
            seed: 0,
            augment: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub steps: usize,
    pub seed: u64,
    pub count: usize,
    /// Drop the reference stream at sampling time.
    pub reference_free: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            seed: 0,
            count: 8,
            reference_free: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub draws: usize,
    pub seed: u64,
    /// Held-out samples generated with seeds from `sample_seed`.
    pub samples: usize,
    pub sample_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            draws: 200,
            seed: 7,
            samples: 50,
            sample_seed: 100_000,
        }
    }
}

/// Everything a command reads. The effective value is echoed into every run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub scene: SceneConfig,
    pub augmentation: AugmentationConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    pub curation: CurationConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| mixcomp::Error::Config(format!("parsing config {}: {e}", p.display())).into())
            }
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(make_schedule(
            self.model.timesteps(),
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?)
    }

    /// Cross-field checks beyond each section's own validation.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scene.validate()?;
        self.augmentation.validate()?;
        if self.scene.size != self.model.image_size() {
            return Err(mixcomp::Error::Config(format!(
                "scene size {} differs from model image size {}",
                self.scene.size,
                self.model.image_size()
            ))
            .into());
        }
        Ok(())
    }
}
