use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::optim::AdamConfig;
use crate::error::{Error, Result};
use crate::measurement::{CodecBackend, CodecId};
use crate::reconstruction::NetworkConfig;
use crate::sampling::{SamplingConfig, DEFAULT_BLOCK_SIZE, DEFAULT_WINDOW_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    /// The learning rate is divided by this every `decay_every_epochs`.
    pub decay_factor: f64,
    pub decay_every_epochs: u64,
    pub epochs: u64,
    pub iterations_per_epoch: u64,
    pub crop_size: usize,
    pub augment: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            learning_rate: 1e-4,
            decay_factor: 2.0,
            decay_every_epochs: 30,
            epochs: 200,
            iterations_per_epoch: 1000,
            crop_size: 128,
            augment: true,
        }
    }
}

impl TrainSchedule {
    /// Epoch that the 0-based `step` falls in.
    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.iterations_per_epoch
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let halvings = self.epoch_of(step) / self.decay_every_epochs;
        self.learning_rate / self.decay_factor.powi(halvings as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub channels: usize,
    pub tail_blocks: usize,
    pub blocks_per_level: usize,
    pub single_scale: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::new(0.1, DEFAULT_BLOCK_SIZE, 0, 0);
        NetworkSection {
            channels: d.channels,
            tail_blocks: d.tail_blocks,
            blocks_per_level: d.blocks_per_level,
            single_scale: false,
        }
    }
}

/// Codec used inside the training loop. `None` bypasses coding entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InLoopSection {
    pub codec: Option<CodecId>,
    pub quality: Option<f64>,
}

impl Default for InLoopSection {
    fn default() -> Self {
        InLoopSection {
            codec: Some(CodecId::Quant8Raw),
            quality: None,
        }
    }
}

impl InLoopSection {
    pub fn backend(&self) -> Result<Option<CodecBackend>> {
        self.codec
            .map(|c| CodecBackend::new(c, self.quality.unwrap_or_else(|| CodecBackend::default_quality(c))))
            .transpose()
    }
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_window_size() -> usize {
    DEFAULT_WINDOW_SIZE
}
fn default_true() -> bool {
    true
}

/// Everything needed to start a training run; deserializable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ratio: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_window_size")]
    pub window_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub in_loop: InLoopSection,
    /// When false the sampling weights stay at their random initialization.
    #[serde(default = "default_true")]
    pub train_sampling: bool,
    #[serde(default)]
    pub corpus: Vec<PathBuf>,
}

impl TrainConfig {
    pub fn new(ratio: f64) -> Self {
        TrainConfig {
            ratio,
            block_size: DEFAULT_BLOCK_SIZE,
            window_size: DEFAULT_WINDOW_SIZE,
            seed: 0,
            network: NetworkSection::default(),
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            schedule: TrainSchedule::default(),
            in_loop: InLoopSection::default(),
            train_sampling: true,
            corpus: Vec::new(),
        }
    }

    pub fn sampling_config(&self) -> Result<SamplingConfig> {
        SamplingConfig::new(self.ratio, self.block_size, self.window_size, self.seed)
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            channels: self.network.channels,
            tail_blocks: self.network.tail_blocks,
            blocks_per_level: self.network.blocks_per_level,
            ratio: self.ratio,
            block_size: self.block_size,
            width: self.schedule.crop_size,
            height: self.schedule.crop_size,
            single_scale: self.network.single_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling_config()?;
        self.network_config().validate()?;
        self.loss.validate()?;
        self.in_loop.backend()?;
        let s = &self.schedule;
        if !(s.learning_rate > 0.0)
            || !(s.decay_factor > 0.0)
            || s.decay_every_epochs == 0
            || s.epochs == 0
            || s.iterations_per_epoch == 0
        {
            return Err(Error::InvalidConfig("schedule fields must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_halves_every_thirty_epochs() {
        let s = TrainSchedule::default();
        assert_eq!(s.learning_rate_at(0), 1e-4);
        assert_eq!(s.learning_rate_at(29_999), 1e-4);
        assert_eq!(s.learning_rate_at(30_000), 5e-5);
        assert_eq!(s.learning_rate_at(60_000), 2.5e-5);
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::new(0.25).validate().unwrap();
        let mut bad = TrainConfig::new(0.25);
        bad.schedule.crop_size = 100;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = TrainConfig::new(0.1);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
