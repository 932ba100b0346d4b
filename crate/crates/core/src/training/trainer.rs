use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::TrainConfig;
use super::optim::AdamMoments;
use super::pipeline::{loss_and_gradients, CsModel, InLoopCodec, LossParts};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::measurement::CodecRegistry;

/// Window of the running loss average.
pub const RUNNING_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub learning_rate: f64,
    pub loss: LossParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub step: u64,
    pub learning_rate: f64,
    pub loss: f64,
    pub reconstruction_loss: f64,
    pub rate_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub value: Vec<f64>,
    pub moments: AdamMoments,
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    pub recent_losses: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub raw_weights: Vec<f64>,
    pub raw_moments: AdamMoments,
    pub params: Vec<SavedParam>,
}

/// Owns a model, its optimizer state and the data RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: CsModel,
    registry: CodecRegistry,
    rng: ChaCha8Rng,
    step: u64,
    recent: VecDeque<f64>,
    raw_moments: AdamMoments,
    param_moments: Vec<AdamMoments>,
}

impl Trainer {
    pub fn new(config: TrainConfig, registry: CodecRegistry) -> Result<Self> {
        config.validate()?;
        let model = CsModel::new(config.sampling_config()?, &config.network_config())?;
        let raw_moments = AdamMoments::new(model.sampling.raw_weights().len());
        let param_moments = model
            .network
            .params()
            .iter()
            .map(|p| AdamMoments::new(p.len()))
            .collect();
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            config,
            model,
            registry,
            step: 0,
            recent: VecDeque::with_capacity(RUNNING_WINDOW),
            raw_moments,
            param_moments,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &CsModel {
        &self.model
    }

    pub fn into_model(self) -> CsModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.schedule.learning_rate_at(self.step)
    }

    /// Mean loss over the last [`RUNNING_WINDOW`] steps.
    pub fn running_loss(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent.iter().sum::<f64>() / self.recent.len() as f64)
        }
    }

    /// Draws `K` random crops (augmented if enabled) from the corpus.
    pub fn next_batch(&mut self, corpus: &[GrayImage]) -> Result<Vec<GrayImage>> {
        if corpus.is_empty() {
            return Err(Error::InvalidConfig("empty training corpus".into()));
        }
        let crop = self.config.schedule.crop_size;
        (0..self.config.loss.batch_size)
            .map(|_| {
                let img = &corpus[self.rng.gen_range(0..corpus.len())];
                if img.width() < crop || img.height() < crop {
                    return Err(Error::TooSmall {
                        width: img.width(),
                        height: img.height(),
                    });
                }
                let x0 = self.rng.gen_range(0..=img.width() - crop);
                let y0 = self.rng.gen_range(0..=img.height() - crop);
                let patch = img.crop(x0, y0, crop, crop)?;
                Ok(if self.config.schedule.augment {
                    augment(&patch, &mut self.rng)
                } else {
                    patch
                })
            })
            .collect()
    }

    /// One optimizer step on `batch`. On a non-finite loss nothing is updated.
    pub fn train_step(&mut self, batch: &[GrayImage]) -> Result<StepStats> {
        let backend = self.config.in_loop.backend()?;
        let codec = match backend {
            Some(backend) => InLoopCodec::StraightThrough {
                backend,
                registry: &self.registry,
            },
            None => InLoopCodec::Bypass,
        };
        let (loss, raw_grad) = loss_and_gradients(&mut self.model, batch, &self.config.loss, &codec)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                detail: format!(
                    "reconstruction {} rate {} total {}",
                    loss.reconstruction, loss.rate, loss.total
                ),
            });
        }
        let lr = self.learning_rate();
        let t = self.step + 1;
        let adam = self.config.optimizer;
        for (p, m) in self.model.network.params_mut().into_iter().zip(&mut self.param_moments) {
            m.step(&adam, lr, t, &mut p.value, &p.grad, p.decay);
        }
        if self.config.train_sampling {
            self.raw_moments
                .step(&adam, lr, t, self.model.sampling.raw_weights_mut(), &raw_grad, false);
            self.model.sampling.refresh()?;
        }
        self.step = t;
        if self.recent.len() == RUNNING_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(loss.total);
        Ok(StepStats {
            step: t,
            learning_rate: lr,
            loss,
        })
    }

    /// Draws a batch and steps once.
    pub fn step_on(&mut self, corpus: &[GrayImage]) -> Result<StepStats> {
        let batch = self.next_batch(corpus)?;
        self.train_step(&batch)
    }

    /// Runs one epoch of `iterations_per_epoch` steps.
    pub fn run_epoch(&mut self, corpus: &[GrayImage]) -> Result<EpochSummary> {
        let epoch = self.config.schedule.epoch_of(self.step);
        let n = self.config.schedule.iterations_per_epoch;
        let mut sum = LossParts::default();
        let mut lr = self.learning_rate();
        for _ in 0..n {
            let s = self.step_on(corpus)?;
            lr = s.learning_rate;
            sum.total += s.loss.total;
            sum.reconstruction += s.loss.reconstruction;
            sum.rate += s.loss.rate;
        }
        let n = n as f64;
        Ok(EpochSummary {
            epoch,
            step: self.step,
            learning_rate: lr,
            loss: sum.total / n,
            reconstruction_loss: sum.reconstruction / n,
            rate_loss: sum.rate / n,
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            step: self.step,
            epoch: self.config.schedule.epoch_of(self.step),
            learning_rate: self.learning_rate(),
            recent_losses: self.recent.iter().copied().collect(),
            rng: self.rng.clone(),
            raw_weights: self.model.sampling.raw_weights().to_vec(),
            raw_moments: self.raw_moments.clone(),
            params: self
                .model
                .network
                .params()
                .into_iter()
                .zip(&self.param_moments)
                .map(|(p, m)| SavedParam {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    moments: m.clone(),
                })
                .collect(),
        }
    }

    pub fn from_state(state: TrainState, registry: CodecRegistry) -> Result<Self> {
        let mut t = Trainer::new(state.config, registry)?;
        t.step = state.step;
        t.rng = state.rng;
        t.recent = state.recent_losses.into_iter().collect();
        if state.raw_weights.len() != t.model.sampling.raw_weights().len() {
            return Err(Error::Checkpoint("sampling weight count mismatch".into()));
        }
        t.model.sampling.raw_weights_mut().copy_from_slice(&state.raw_weights);
        t.model.sampling.refresh()?;
        t.raw_moments = state.raw_moments;
        let params = t.model.network.params_mut();
        if params.len() != state.params.len() {
            return Err(Error::Checkpoint("parameter count mismatch".into()));
        }
        let mut moments = Vec::with_capacity(params.len());
        for (p, saved) in params.into_iter().zip(state.params) {
            if p.name != saved.name || p.value.len() != saved.value.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} does not match saved {}",
                    p.name, saved.name
                )));
            }
            p.value = saved.value;
            moments.push(saved.moments);
        }
        t.param_moments = moments;
        Ok(t)
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(&self.state())?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_state(path: &Path, registry: CodecRegistry) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Trainer::from_state(serde_json::from_slice(&bytes)?, registry)
    }
}
