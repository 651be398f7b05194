//! Training schedule, checkpoints and inference.

mod adam;
mod checkpoint;
mod infer;
mod loader;
mod train;

use std::path::PathBuf;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Progress, CHECKPOINT_FORMAT};
pub use infer::{crop_frame, infer, infer_image, write_inference, InferConfig, Inference};
pub use loader::{Batch, Dataset, EpochLoader};
pub use train::{evaluate_loss, train, windows_nonincreasing, StepRecord, StopReason, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::networks::{AblationMode, ModelConfig};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("dataset has no training samples")]
    DatasetEmpty,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad image: {0}")]
    BadImage(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("data loader: {0}")]
    Loader(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Datagen(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
}

/// Training hyperparameters. Schedule defaults follow the reference setup: Adam at 1e-4,
/// decayed by 0.95 per epoch, batches of 10, 50 epochs at 512x256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate of epoch `e` is `lr * lr_decay_per_epoch^e`.
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Expected sample `[height, width]`.
    pub resolution: [usize; 2],
    pub ablation_mode: AblationMode,
    pub seed: u64,
    /// U-Net levels of every network.
    pub unet_depth: usize,
    /// Channels at the first level; doubled per level.
    pub base_width: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Stop once a training step's depth L1 falls below this.
    pub early_stop_depth_l1: Option<f64>,
    /// Run a validation pass after every epoch.
    pub validate: bool,
    pub loader_workers: usize,
    /// Batches buffered per loader worker.
    pub prefetch: usize,
    /// Per-epoch checkpoints are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Pretrained VGG16 safetensors for the perceptual loss; random features otherwise.
    pub extractor_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            epochs: 50,
            lr: 1e-4,
            lr_decay_per_epoch: 0.95,
            batch_size: 10,
            weights: LossWeights::default(),
            resolution: [512, 256],
            ablation_mode: AblationMode::Full,
            seed: 0,
            unet_depth: model.depth,
            base_width: model.base_width,
            max_steps: None,
            early_stop_depth_l1: None,
            validate: false,
            loader_workers: 1,
            prefetch: 2,
            checkpoint_dir: None,
            extractor_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { depth: self.unet_depth, base_width: self.base_width, mode: self.ablation_mode, seed: self.seed }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_per_epoch.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay_per_epoch > 0.0) {
            return bad(format!("lr {} and decay {} must be positive", self.lr, self.lr_decay_per_epoch));
        }
        self.weights.validate().map_err(RuntimeError::Loss)?;
        let m = self.model_config().multiple();
        let [h, w] = self.resolution;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return bad(format!("resolution {h}x{w} must be a positive multiple of {m}"));
        }
        Ok(())
    }
}
