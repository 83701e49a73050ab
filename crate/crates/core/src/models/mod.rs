//! Generator, dual-headed discriminator, perceptual backbone and the
//! standalone gaze regressors.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod vgg;

use std::path::Path;

pub use checkpoint::Checkpoint;
pub use discriminator::{critic_scalar, BackboneEstimator, Discriminator, DiscriminatorConfig, DualCriticOutput};
pub use generator::{condition_planes, Generator, GeneratorConfig};
pub use vgg::{PerceptualBackbone, VggRegressor, WeightSource};

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamSet};
use crate::tensor::Tensor;

/// Side length of every eye patch.
pub const PATCH_SIZE: usize = 64;

/// Checkpoint kind written by the GAN trainer.
pub const GAN_CHECKPOINT_KIND: &str = "gazelab.gan";

/// Output shapes recorded layer by layer during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerTrace {
    pub layers: Vec<(String, Vec<usize>)>,
}

impl LayerTrace {
    pub fn push(&mut self, name: &str, shape: &[usize]) {
        self.layers.push((name.to_string(), shape.to_vec()));
    }

    /// Shape of `name` as (H, W, C), dropping the batch axis.
    pub fn hwc(&self, name: &str) -> Option<(usize, usize, usize)> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| (s[2], s[3], s[1]))
    }
}

/// A trainable network mapping eye patches to normalized gaze `[N, 2]`.
pub trait GazeRegressor {
    /// Short architecture tag stored in checkpoints.
    fn kind(&self) -> &'static str;
    /// Width parameter of the architecture (channel divisor or base width).
    fn width(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn regress(&self, p: &Bound, x: &Var) -> Var;

    fn architecture_hash(&self) -> String {
        self.params().layout_hash(&format!("{}:{}", self.kind(), self.width()))
    }

    /// Inference on a `[N, 3, 64, 64]` batch, in chunks of 32.
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        generator::check_patch_batch(x)?;
        let _g = no_grad();
        let p = self.params().bind(false);
        let n = x.shape()[0];
        let mut parts = Vec::new();
        for start in (0..n).step_by(32) {
            let chunk = x.narrow_batch(start, 32.min(n - start));
            parts.push(self.regress(&p, &Var::constant(chunk)).value().clone());
        }
        Tensor::concat_batch(&parts)
    }
}

impl GazeRegressor for VggRegressor {
    fn kind(&self) -> &'static str {
        "vgg16"
    }

    fn width(&self) -> usize {
        self.width_div
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn regress(&self, p: &Bound, x: &Var) -> Var {
        self.forward(p, x)
    }
}

impl GazeRegressor for BackboneEstimator {
    fn kind(&self) -> &'static str {
        "backbone"
    }

    fn width(&self) -> usize {
        self.base_channels
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn regress(&self, p: &Bound, x: &Var) -> Var {
        self.forward(p, x)
    }
}

/// Builds an untrained regressor from its checkpoint tag.
pub fn regressor_from_kind(kind: &str, width: usize, seed: u64) -> Result<Box<dyn GazeRegressor>> {
    match kind {
        "vgg16" => Ok(Box::new(VggRegressor::new(width, seed))),
        "backbone" => Ok(Box::new(BackboneEstimator::new(width, seed))),
        other => Err(Error::Config(format!("unknown estimator architecture {other:?} (vgg16|backbone)"))),
    }
}

/// Restores the generator stored in a GAN checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let ck = Checkpoint::load(path)?;
    generator_from_checkpoint(&ck, path)
}

pub fn generator_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Generator> {
    if ck.kind != GAN_CHECKPOINT_KIND {
        return Err(Error::checkpoint(path, format!("kind {:?} holds no generator", ck.kind)));
    }
    let cfg: GeneratorConfig = serde_json::from_value(ck.meta["generator"].clone())
        .map_err(|e| Error::checkpoint(path, format!("generator config: {e}")))?;
    let mut g = Generator::new(cfg, 0);
    let expected = ck.meta["generator_hash"].as_str().unwrap_or_default();
    if expected != g.architecture_hash() {
        return Err(Error::checkpoint(path, "generator architecture hash mismatch"));
    }
    g.params
        .assign(ck.group("generator"))
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok(g)
}
