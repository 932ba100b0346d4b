//! End-to-end optimization of the sampling weights and the network.

pub mod augment;
pub mod config;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod trainer;

pub use augment::{augment, augment_with};
pub use config::{InLoopSection, NetworkSection, TrainConfig, TrainSchedule};
pub use loss::{rate_loss, rate_loss_grad, reconstruction_loss, total_loss, LossConfig};
pub use optim::{AdamConfig, AdamMoments};
pub use pipeline::{evaluate_loss, loss_and_gradients, CsModel, InLoopCodec, LossParts};
pub use trainer::{EpochSummary, StepStats, TrainState, Trainer};
