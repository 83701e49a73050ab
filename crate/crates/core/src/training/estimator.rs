//! Supervised training of standalone gaze estimators on eye patches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::sampler::epoch_order;
use crate::autograd::{self, Var};
use crate::config::FlatConfig;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{GazeDirection, GazeScale, NormalizedGaze};
use crate::losses::{gaze_mse, gaze_targets};
use crate::models::{regressor_from_kind, Checkpoint, GazeRegressor};
use crate::nn::Adam;
use crate::tensor::Tensor;

pub const ESTIMATOR_CHECKPOINT_KIND: &str = "gazelab.estimator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// `vgg16` (perceptual-backbone layout) or `backbone` (critic layout).
    pub architecture: String,
    /// Channel divisor for `vgg16`, base width for `backbone`.
    pub width: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 5e-5,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            architecture: "vgg16".into(),
            width: 1,
        }
    }
}

impl FlatConfig for EstimatorConfig {}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.width < 1 {
            return Err(Error::Config("estimator batch_size and width must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("estimator lr must be positive, got {}", self.lr)));
        }
        regressor_from_kind(&self.architecture, 1, 0).map(|_| ())
    }
}

/// A regressor paired with the scale that maps its outputs to degrees.
pub struct TrainedEstimator {
    pub model: Box<dyn GazeRegressor>,
    pub scale: GazeScale,
    /// Mean training MSE per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainedEstimator {
    /// Gaze in degrees for a `[N, 3, 64, 64]` batch.
    pub fn estimate(&self, x: &Tensor) -> Result<Vec<GazeDirection>> {
        let out = self.model.predict(x)?;
        Ok(out
            .data()
            .chunks(2)
            .map(|c| self.scale.denormalize_unchecked(NormalizedGaze::new(c[0], c[1])))
            .collect())
    }

    /// Mean squared error in normalized units over `data`.
    pub fn mse(&self, data: &Dataset) -> Result<f64> {
        let x = Tensor::stack(&data.samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let out = self.model.predict(&x)?;
        let target = gaze_targets(&data.samples.iter().map(|s| s.gaze_n).collect::<Vec<_>>());
        Ok(out.sub(&target).map(|v| v * v).mean())
    }
}

/// An untrained estimator for `config`.
pub fn untrained_estimator(config: &EstimatorConfig, scale: GazeScale) -> Result<TrainedEstimator> {
    config.validate()?;
    Ok(TrainedEstimator {
        model: regressor_from_kind(&config.architecture, config.width, config.seed)?,
        scale,
        epoch_losses: Vec::new(),
    })
}

/// Minimizes the normalized-gaze MSE on `data` with Adam. Each epoch is a
/// seeded permutation of `data`; the last partial batch is kept.
pub fn train_estimator(config: &EstimatorConfig, data: &Dataset, scale: GazeScale) -> Result<TrainedEstimator> {
    let mut est = untrained_estimator(config, scale)?;
    if data.is_empty() {
        return Err(Error::Data("estimator training set is empty".into()));
    }
    let mut opt = Adam::new(est.model.params(), config.lr, config.beta1, config.beta2);
    for epoch in 0..config.epochs {
        let order = epoch_order(data.len(), derive_seed(config.seed, &[epoch]));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = Tensor::stack(&chunk.iter().map(|&i| data.samples[i].image.clone()).collect::<Vec<_>>())?;
            let target = gaze_targets(&chunk.iter().map(|&i| data.samples[i].gaze_n).collect::<Vec<_>>());
            let (loss, grads) = {
                let p = est.model.params().bind(true);
                let loss = gaze_mse(&target, &est.model.regress(&p, &Var::constant(x)))?;
                let grads = autograd::backward(&loss, &p.refs());
                (loss.item(), grads)
            };
            if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(Error::Numeric(format!("non-finite estimator loss at epoch {epoch}")));
            }
            opt.step(est.model.params_mut(), &grads);
            sum += loss * chunk.len() as f64;
        }
        est.epoch_losses.push(sum / data.len() as f64);
    }
    Ok(est)
}

pub fn save_estimator(path: &Path, est: &TrainedEstimator, seed: u64) -> Result<()> {
    let m = &est.model;
    let mut ck = Checkpoint::new(ESTIMATOR_CHECKPOINT_KIND, m.architecture_hash(), seed);
    ck.epoch = est.epoch_losses.len() as u64;
    ck.meta = serde_json::json!({
        "architecture": m.kind(),
        "width": m.width(),
        "gaze_scale": est.scale,
        "epoch_losses": est.epoch_losses,
    });
    ck.push_group("estimator", m.params().entries().to_vec());
    ck.save(path)
}

pub fn load_estimator(path: &Path) -> Result<TrainedEstimator> {
    let ck = Checkpoint::load(path)?;
    let bad = |r: String| Error::checkpoint(path, r);
    if ck.kind != ESTIMATOR_CHECKPOINT_KIND {
        return Err(bad(format!("kind {:?} is not an estimator", ck.kind)));
    }
    let kind = ck.meta["architecture"].as_str().ok_or_else(|| bad("architecture missing".into()))?;
    let width = ck.meta["width"].as_u64().ok_or_else(|| bad("width missing".into()))? as usize;
    let scale: GazeScale =
        serde_json::from_value(ck.meta["gaze_scale"].clone()).map_err(|e| bad(format!("gaze scale: {e}")))?;
    let mut model = regressor_from_kind(kind, width, 0)?;
    if model.architecture_hash() != ck.architecture_hash {
        return Err(bad("estimator architecture hash mismatch".into()));
    }
    model.params_mut().assign(ck.group("estimator")).map_err(|e| bad(e.to_string()))?;
    let epoch_losses = serde_json::from_value(ck.meta["epoch_losses"].clone()).unwrap_or_default();
    Ok(TrainedEstimator {
        model,
        scale,
        epoch_losses,
    })
}
