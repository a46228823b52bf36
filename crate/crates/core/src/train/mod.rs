//! Autoencoder pretraining, alternating GAN training, checkpoints,
//! tiled inference and evaluation.

mod bench;
mod checkpoint;
mod infer;
mod trainer;

pub use bench::{bench_superpixel, BenchReport};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerRecord, RngState, CHECKPOINT_VERSION,
};
pub use infer::{evaluate, infer};
pub use trainer::{
    autoencoder_from, checkpoint_config, epoch_order, generator_from, train_autoencoder, train_gan,
    AeTrainer, CheckpointHook, GanTrainer, Hooks, StepLosses,
};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::objectives::LossWeights;
use crate::tensor::{AdamConfig, TensorError};

/// Which generator loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    L2,
    L2Feature,
    L2FeatureAdv,
}

impl Mode {
    pub fn uses_feature(self) -> bool {
        matches!(self, Mode::L2Feature | Mode::L2FeatureAdv)
    }

    pub fn uses_adversary(self) -> bool {
        self == Mode::L2FeatureAdv
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::L2 => "l2",
            Mode::L2Feature => "l2+f",
            Mode::L2FeatureAdv => "l2+f+adv",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l2" => Ok(Mode::L2),
            "l2+f" => Ok(Mode::L2Feature),
            "l2+f+adv" => Ok(Mode::L2FeatureAdv),
            other => Err(format!(
                "unknown mode {other:?}, expected l2, l2+f or l2+f+adv"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// GAN epochs.
    pub epochs: u64,
    /// Autoencoder pretraining epochs.
    pub ae_epochs: u64,
    /// Caps on optimizer steps; 0 means no cap.
    pub max_steps: u64,
    pub ae_max_steps: u64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::L2FeatureAdv,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 150,
            ae_epochs: 400,
            max_steps: 0,
            ae_max_steps: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        let a = self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "lr must be positive, got {}",
                a.lr
            )));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(TrainError::Config(
                "beta1 and beta2 must lie in [0, 1)".into(),
            ));
        }
        if !(a.eps > 0.0) {
            return Err(TrainError::Config("eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    Diverged { step: u64, what: String },
    #[error("feature loss requires a pretrained autoencoder checkpoint")]
    MissingAutoencoder,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}
