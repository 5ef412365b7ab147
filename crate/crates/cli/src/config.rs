//! Run configuration: a preset, optionally overridden by a TOML file.
//!
//! A config file names its base preset and overrides any subset of fields:
//!
//! ```toml
//! preset = "desk"
//! seed = 7
//!
//! [fit]
//! iterations = 500
//!
//! [diffusion.train]
//! epochs = 100
//! ```
//!
//! A top-level `seed` becomes the default for every stage seed; a seed set
//! inside a section still wins.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wsd_avatar::{DatasetConfig, FitConfig, TemplateConfig};
use wsd_diffusion::{DenoiserConfig, ScheduleConfig, TrainConfig, DEFAULT_DDIM_STEPS};
use wsd_weights::TokenMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSection {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub tokens: TokenMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSection {
    pub ddim_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub poses: usize,
    pub cameras: usize,
    pub resolution: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output: PathBuf,
    pub data: DatasetConfig,
    pub fit: FitConfig,
    pub diffusion: DiffusionSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                preset,
                seed: 0,
                output: PathBuf::from("runs/desk"),
                data: DatasetConfig {
                    identities: 8,
                    frames: 8,
                    cameras: 4,
                    resolution: 64,
                    uv_resolution: 32,
                    seed: 0,
                    template: TemplateConfig::default(),
                },
                fit: FitConfig::desk(),
                diffusion: DiffusionSection {
                    denoiser: DenoiserConfig::desk(),
                    schedule: ScheduleConfig::default(),
                    train: TrainConfig::desk(),
                    tokens: TokenMode::Layerwise,
                },
                sample: SampleSection { ddim_steps: DEFAULT_DDIM_STEPS, eta: 0.0, seed: 0 },
                eval: EvalSection { poses: 4, cameras: 4, resolution: 64, seed: 0 },
            },
            Preset::Paper => Self {
                preset,
                seed: 0,
                output: PathBuf::from("runs/paper"),
                data: DatasetConfig {
                    identities: 500,
                    frames: 60,
                    cameras: 16,
                    resolution: 1024,
                    uv_resolution: 256,
                    seed: 0,
                    template: TemplateConfig::default(),
                },
                fit: FitConfig::paper(),
                diffusion: DiffusionSection {
                    denoiser: DenoiserConfig::paper(),
                    schedule: ScheduleConfig::default(),
                    train: TrainConfig { epochs: 6000, ..TrainConfig::paper() },
                    tokens: TokenMode::Layerwise,
                },
                sample: SampleSection { ddim_steps: DEFAULT_DDIM_STEPS, eta: 0.0, seed: 0 },
                eval: EvalSection { poses: 4, cameras: 4, resolution: 512, seed: 0 },
            },
        }
    }

    /// Sets the global seed and every stage seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.fit.seed = seed;
        self.diffusion.train.seed = seed;
        self.sample.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).context("parsing config")?;
        let preset = match file.get("preset") {
            None => Preset::Desk,
            Some(v) => v.clone().try_into().context("unknown preset")?,
        };
        let mut base = Self::preset(preset);
        if let Some(seed) = file.get("seed") {
            let seed = seed.as_integer().filter(|s| *s >= 0).context("seed must be a non-negative integer")?;
            base = base.with_seed(seed as u64);
        }
        let mut merged = toml::Table::try_from(&base).context("serializing preset")?;
        merge(&mut merged, file);
        let config: Self = toml::Value::Table(merged).try_into().context("invalid config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// The named preset when no file is given.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::preset(Preset::Desk)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.diffusion.denoiser.validate()?;
        self.diffusion.train.validate()?;
        wsd_diffusion::Schedule::new(self.diffusion.schedule)?;
        if self.data.uv_resolution != self.fit.network.resolution {
            bail!(
                "data.uv_resolution ({}) must equal fit.network.resolution ({})",
                self.data.uv_resolution,
                self.fit.network.resolution
            );
        }
        if self.sample.ddim_steps == 0 || self.sample.ddim_steps > self.diffusion.schedule.steps {
            bail!("sample.ddim_steps must be in 1..={}", self.diffusion.schedule.steps);
        }
        if !(0.0..=1.0).contains(&self.sample.eta) {
            bail!("sample.eta must be in [0, 1]");
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
