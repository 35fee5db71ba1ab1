//! Run configuration: named profiles, TOML round-trip and fingerprints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamConfig, LrSchedule};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::scene::{EpisodeConfig, RenderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// CPU-sized default.
    Desk,
    /// Desk data and widths with a shorter schedule, for multi-seed ablations.
    Ablation,
    /// Full-size context sizes and network widths.
    Paper,
    /// Seconds-scale shapes for tests and quick checks.
    Smoke,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "ablation" => Ok(Profile::Ablation),
            "paper" => Ok(Profile::Paper),
            "smoke" => Ok(Profile::Smoke),
            _ => Err(Error::InvalidArgument(format!(
                "unknown profile {s:?} (desk, ablation, paper, smoke)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Ablation => "ablation",
            Profile::Paper => "paper",
            Profile::Smoke => "smoke",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train_scenes: usize,
    /// Held-out query sets in training rooms.
    pub seen_eval_episodes: usize,
    /// Episodes in rooms never used for training.
    pub unseen_eval_episodes: usize,
    pub episode: EpisodeConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub size: usize,
    pub resolution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Episodes per optimizer step.
    pub batch: usize,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub data: DataConfig,
    pub stft: StftConfig,
    pub map: MapConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..16])
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(format!("config serialization: {e}")))
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Ablation => Self {
                profile,
                data: DataConfig {
                    train_scenes: 48,
                    ..Self::desk().data
                },
                train: TrainConfig {
                    steps: 1000,
                    batch: 2,
                    ..Self::desk().train
                },
                ..Self::desk()
            },
            Profile::Paper => Self::paper(),
            Profile::Smoke => Self::smoke(),
        }
    }

    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 0,
            data: DataConfig {
                train_scenes: 64,
                seen_eval_episodes: 16,
                unseen_eval_episodes: 16,
                episode: EpisodeConfig::default(),
            },
            stft: StftConfig::default(),
            map: MapConfig {
                size: 32,
                resolution: 0.25,
            },
            model: ModelConfig::desk(),
            train: TrainConfig {
                steps: 1500,
                batch: 4,
                base_lr: 1e-3,
                schedule: LrSchedule::WarmupCooldown {
                    warmup_frac: 0.05,
                    cooldown_factor: 1.0,
                },
                adam: AdamConfig::default(),
                checkpoint_every: 500,
            },
            ablation: Ablation::default(),
        }
    }

    /// Context of 20, 50 queries, 64-cell maps at unit resolution, paper
    /// widths and the fixed 1e-4 learning rate.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            data: DataConfig {
                train_scenes: 56,
                seen_eval_episodes: 56,
                unseen_eval_episodes: 18,
                episode: EpisodeConfig {
                    context: 20,
                    queries: 50,
                    extent_max: 12.0,
                    ..desk.data.episode
                },
            },
            map: MapConfig {
                size: 64,
                resolution: 1.0,
            },
            model: ModelConfig::paper(),
            train: TrainConfig {
                steps: 56 * 210,
                batch: 1,
                base_lr: 1e-4,
                schedule: LrSchedule::Constant,
                ..desk.train
            },
            ..desk
        }
    }

    /// Tiny network, 8×8 spectrograms and short responses.
    pub fn smoke() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Smoke,
            data: DataConfig {
                train_scenes: 4,
                seen_eval_episodes: 2,
                unseen_eval_episodes: 2,
                episode: EpisodeConfig {
                    context: 3,
                    queries: 4,
                    rays: 8,
                    extent_max: 4.0,
                    render: RenderConfig {
                        length: 512,
                        max_order: 4,
                        ..desk.data.episode.render
                    },
                    ..desk.data.episode
                },
            },
            stft: StftConfig {
                window_len: 16,
                hop: 64,
                frames: 8,
                ..desk.stft
            },
            map: MapConfig {
                size: 8,
                resolution: 0.5,
            },
            model: ModelConfig::tiny(),
            train: TrainConfig {
                steps: 10,
                batch: 2,
                checkpoint_every: 5,
                ..desk.train
            },
            ..desk
        }
    }

    /// Checks that every shape-bearing field agrees across components.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("run config: {msg}")));
        self.model.validate()?;
        self.stft.validate()?;
        let ep = &self.data.episode;
        let render = &ep.render;
        if self.model.rays != ep.rays {
            return bad(format!("model expects {} rays, episodes have {}", self.model.rays, ep.rays));
        }
        if self.model.freq_bins != self.stft.bins() || self.model.frames != self.stft.frames {
            return bad(format!(
                "model spectrogram {}x{} vs analysis {}x{}",
                self.model.freq_bins,
                self.model.frames,
                self.stft.bins(),
                self.stft.frames
            ));
        }
        if self.model.map_size != self.map.size || !(self.map.resolution > 0.0) {
            return bad(format!("map {} cells vs model {}", self.map.size, self.model.map_size));
        }
        if render.sample_rate != self.stft.sample_rate {
            return bad(format!("render rate {} vs analysis rate {}", render.sample_rate, self.stft.sample_rate));
        }
        if render.length < self.stft.window_len {
            return bad(format!("RIR length {} shorter than one window", render.length));
        }
        if ep.context == 0 || ep.queries == 0 {
            return bad("episodes need context and queries".into());
        }
        if self.data.train_scenes == 0 {
            return bad("no training scenes".into());
        }
        if self.data.seen_eval_episodes > self.data.train_scenes {
            return bad(format!(
                "{} seen episodes but only {} training scenes",
                self.data.seen_eval_episodes, self.data.train_scenes
            ));
        }
        if self.train.batch == 0 || !(self.train.base_lr >= 0.0) {
            return bad("batch must be positive and learning rate non-negative".into());
        }
        if self.seed >= 1 << 53 {
            return bad(format!("seed {} must be below 2^53", self.seed));
        }
        Ok(())
    }

    /// Identifies everything the dataset depends on.
    pub fn data_fingerprint(&self) -> Result<String> {
        Ok(digest(&[self.seed.to_string(), to_toml(&self.data)?]))
    }

    /// Identifies everything a checkpoint depends on.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(digest(&[self.data_fingerprint()?, to_toml(self)?]))
    }

    pub fn to_toml(&self) -> Result<String> {
        to_toml(self)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Short directory-safe name: profile, seed and ablation.
    pub fn run_name(&self) -> String {
        format!("{}-seed{}-{}", self.profile.name(), self.seed, self.ablation.label())
    }

    pub fn data_name(&self) -> String {
        format!("{}-seed{}", self.profile.name(), self.seed)
    }
}
