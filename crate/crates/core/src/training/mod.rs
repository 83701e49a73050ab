//! Adversarial training loop, learning-rate schedule, batch sampling,
//! checkpointing, inference helpers and the standalone estimator trainer.

pub mod estimator;
pub mod redirect;
pub mod sampler;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use estimator::{
    load_estimator, save_estimator, train_estimator, untrained_estimator, EstimatorConfig, TrainedEstimator,
    ESTIMATOR_CHECKPOINT_KIND,
};
pub use redirect::{grid_axes, load_patch, redirect, redirect_grid, GanRedirector};
pub use sampler::{assemble_batch, epoch_order, sample_training_batch, TrainingBatch};
pub use trainer::{group_hash, StepRecord, TrainSummary, Trainer};

use crate::config::FlatConfig;
use crate::dataio::{Dataset, EyeSide, Split};
use crate::error::{Error, Result};
use crate::geometry::GazeScale;
use crate::losses::LossWeights;
use crate::models::{DiscriminatorConfig, GeneratorConfig, PerceptualBackbone};

/// The only supported epoch definition: one pass over the training source
/// patches, each paired with one random target direction.
pub const EPOCH_SOURCE_PASS: &str = "source_pass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gen_channels: usize,
    pub res_blocks: usize,
    pub disc_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gen_channels: 64,
            res_blocks: 6,
            disc_channels: 64,
        }
    }
}

impl ModelConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.gen_channels,
            res_blocks: self.res_blocks,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.disc_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    /// `random`, or a safetensors file with torchvision VGG-16 weights.
    pub weights: String,
    /// Channel divisor; pretrained weights need 1.
    pub width_div: usize,
    /// Seed of the random-weight fallback.
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            weights: "random".into(),
            width_div: 1,
            seed: 0,
        }
    }
}

impl PerceptualConfig {
    pub fn build(&self) -> Result<PerceptualBackbone> {
        if self.weights == "random" {
            return Ok(PerceptualBackbone::random(self.width_div, self.seed));
        }
        if self.width_div != 1 {
            return Err(Error::Config("pretrained perceptual weights require perceptual.width_div = 1".into()));
        }
        PerceptualBackbone::from_safetensors(std::path::Path::new(&self.weights))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Manifest CSV; empty means `$GAZELAB_DATA_DIR/manifest.csv` in the CLI.
    pub manifest: String,
    pub head_poses: Vec<i32>,
    pub yaw_max: f64,
    pub pitch_max: f64,
    /// Both eyes of a frame enter as independent samples.
    pub both_eyes: bool,
    pub epoch_definition: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: String::new(),
            head_poses: vec![0],
            yaw_max: crate::geometry::DEFAULT_YAW_MAX,
            pitch_max: crate::geometry::DEFAULT_PITCH_MAX,
            both_eyes: true,
            epoch_definition: EPOCH_SOURCE_PASS.into(),
        }
    }
}

impl DataConfig {
    pub fn scale(&self) -> GazeScale {
        GazeScale {
            yaw_max: self.yaw_max,
            pitch_max: self.pitch_max,
        }
    }

    /// Samples of `split` passing the head-pose and eye filters.
    pub fn select(&self, data: &Dataset, split: Split) -> Dataset {
        data.subset(|r, s| {
            r.split == split
                && self.head_poses.contains(&s.head_pose)
                && (self.both_eyes || s.eye_side == EyeSide::Left)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Epoch after which the learning rate decays linearly to 0 at `epochs`.
    pub lr_decay_start: u64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub seed: u64,
    /// Epochs between checkpoints.
    pub checkpoint_every: u64,
    /// Stop after this many generator updates; 0 means no limit.
    pub max_steps: u64,
    pub loss: LossWeights,
    pub model: ModelConfig,
    pub perceptual: PerceptualConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lr_decay_start: 150,
            n_critic: 5,
            seed: 0,
            checkpoint_every: 10,
            max_steps: 0,
            loss: LossWeights::default(),
            model: ModelConfig::default(),
            perceptual: PerceptualConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl FlatConfig for TrainConfig {}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_critic < 1 {
            return fail("n_critic must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.lr_decay_start > self.epochs {
            return fail(format!(
                "lr_decay_start ({}) exceeds epochs ({})",
                self.lr_decay_start, self.epochs
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be a non-negative number, got {}", self.lr));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if self.checkpoint_every < 1 {
            return fail("checkpoint_every must be at least 1".into());
        }
        if self.model.gen_channels < 1 || self.model.disc_channels < 1 || self.perceptual.width_div < 1 {
            return fail("channel widths must be positive".into());
        }
        if self.data.epoch_definition != EPOCH_SOURCE_PASS {
            return fail(format!(
                "data.epoch_definition {:?} unsupported (only {EPOCH_SOURCE_PASS:?})",
                self.data.epoch_definition
            ));
        }
        if !(self.data.yaw_max > 0.0 && self.data.pitch_max > 0.0) {
            return fail("data.yaw_max and data.pitch_max must be positive".into());
        }
        self.loss.validate()
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn learning_rate(&self, epoch: u64) -> f64 {
        learning_rate(self.lr, epoch, self.lr_decay_start, self.epochs)
    }
}

/// Constant `base` up to `decay_start`, then linear to 0 at `end`.
pub fn learning_rate(base: f64, epoch: u64, decay_start: u64, end: u64) -> f64 {
    if epoch <= decay_start || end <= decay_start {
        return base;
    }
    let left = end.saturating_sub(epoch) as f64;
    base * left / (end - decay_start) as f64
}

/// Mixes a seed with stream identifiers (SplitMix64 finalizer per part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C909;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
