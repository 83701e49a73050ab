//! VGG-16 convolutional stack: the frozen perceptual feature extractor and a
//! trainable regression variant used by the augmentation study.

use std::path::{Path, PathBuf};

use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, InitScheme, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

/// Convolutions per block and their full-width channel counts.
pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// Indices of the convolutions inside torchvision's `vgg16().features`.
const TORCHVISION_CONV_INDICES: [usize; 13] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Where the extractor's weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    /// Seeded random weights; features are deterministic but not pretrained.
    Random { seed: u64 },
    File(PathBuf),
}

fn build_stack(b: &mut ParamBuilder, width_div: usize) -> Vec<Vec<Conv>> {
    let mut cin = 3;
    VGG16_BLOCKS
        .iter()
        .enumerate()
        .map(|(bi, &(n, c))| {
            let cout = (c / width_div).max(1);
            (0..n)
                .map(|ci| {
                    let conv = b.conv(&format!("block{}.conv{}", bi + 1, ci + 1), cin, cout, 3, 1, 1, true);
                    cin = cout;
                    conv
                })
                .collect()
        })
        .collect()
}

/// Maps [−1, 1] RGB to ImageNet-standardized input.
fn standardize(x: &Var) -> Var {
    let shape = x.shape().to_vec();
    let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 0.5 / s).collect();
    let shift: Vec<f64> = IMAGENET_MEAN
        .iter()
        .zip(&IMAGENET_STD)
        .map(|(m, s)| (0.5 - m) / s)
        .collect();
    let scale = Var::constant(Tensor::from_vec(vec![1, 3, 1, 1], scale)).broadcast_to(&shape);
    let shift = Var::constant(Tensor::from_vec(vec![1, 3, 1, 1], shift)).broadcast_to(&shape);
    x.mul(&scale).add(&shift)
}

/// Runs blocks 1..=`upto`, returning the post-activation output of each.
fn run_stack(blocks: &[Vec<Conv>], p: &Bound, x: &Var, upto: usize) -> Vec<Var> {
    let mut taps = Vec::with_capacity(upto);
    let mut y = standardize(x);
    for (bi, block) in blocks.iter().take(upto).enumerate() {
        if bi > 0 {
            y = y.max_pool2d(2, 2);
        }
        for conv in block {
            y = conv.forward(p, &y).relu();
        }
        taps.push(y.clone());
    }
    taps
}

/// Frozen VGG-16 feature extractor with taps at the five block outputs.
#[derive(Debug, Clone)]
pub struct PerceptualBackbone {
    pub width_div: usize,
    pub source: WeightSource,
    params: ParamSet,
    blocks: Vec<Vec<Conv>>,
}

impl PerceptualBackbone {
    pub fn random(width_div: usize, seed: u64) -> Self {
        let mut b = ParamBuilder::new(seed, InitScheme::KaimingNormal);
        let blocks = build_stack(&mut b, width_div.max(1));
        Self {
            width_div: width_div.max(1),
            source: WeightSource::Random { seed },
            params: b.finish(),
            blocks,
        }
    }

    /// Loads a safetensors file with torchvision `features.{i}.weight/bias`
    /// names (full width only).
    pub fn from_safetensors(path: &Path) -> Result<Self> {
        let mut net = Self::random(1, 0);
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Config(format!("{}: not a safetensors file: {e}", path.display())))?;
        let mut loaded = Vec::with_capacity(net.params.len());
        let order: Vec<(usize, &str)> = TORCHVISION_CONV_INDICES
            .iter()
            .flat_map(|&i| [(i, "weight"), (i, "bias")])
            .collect();
        for ((own_name, own), (idx, kind)) in net.params.iter().zip(order) {
            let key = format!("features.{idx}.{kind}");
            let view = st
                .tensor(&key)
                .map_err(|_| Error::Config(format!("{}: missing tensor {key}", path.display())))?;
            let values = decode_floats(view.dtype(), view.data())
                .ok_or_else(|| Error::Config(format!("{key}: unsupported dtype {:?}", view.dtype())))?;
            if view.shape() != own.shape() {
                return Err(Error::Config(format!(
                    "{key}: shape {:?}, expected {:?}",
                    view.shape(),
                    own.shape()
                )));
            }
            loaded.push((own_name.to_string(), Tensor::from_vec(own.shape().to_vec(), values)));
        }
        net.params.assign(loaded)?;
        net.source = WeightSource::File(path.to_path_buf());
        Ok(net)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Block outputs 1..=`upto` for a [N,3,H,W] batch in [−1, 1]. The
    /// parameters are bound as constants; gradients flow only to `x`.
    pub fn taps(&self, x: &Var, upto: usize) -> Vec<Var> {
        let p = self.params.bind(false);
        run_stack(&self.blocks, &p, x, upto.min(5))
    }

    /// Activations at the requested 1-based taps.
    pub fn perceptual_features(&self, x: &Tensor, taps: &[usize]) -> Result<Vec<Tensor>> {
        if let Some(&bad) = taps.iter().find(|&&t| !(1..=5).contains(&t)) {
            return Err(Error::invalid(format!("tap {bad} unavailable; taps are 1..=5")));
        }
        let _g = no_grad();
        let upto = taps.iter().copied().max().unwrap_or(0);
        let all = self.taps(&Var::constant(x.clone()), upto);
        Ok(taps.iter().map(|&t| all[t - 1].value().clone()).collect())
    }

    pub fn channels(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for (o, &(_, c)) in out.iter_mut().zip(&VGG16_BLOCKS) {
            *o = (c / self.width_div).max(1);
        }
        out
    }
}

pub(crate) fn decode_floats(dtype: Dtype, bytes: &[u8]) -> Option<Vec<f64>> {
    match dtype {
        Dtype::F32 => Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        ),
        Dtype::F64 => Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
        _ => None,
    }
}

/// Trainable VGG-16 stack with a 2-output regression head on the pooled
/// block-5 features.
#[derive(Debug, Clone)]
pub struct VggRegressor {
    pub width_div: usize,
    pub params: ParamSet,
    blocks: Vec<Vec<Conv>>,
    head: Conv,
}

impl VggRegressor {
    pub fn new(width_div: usize, seed: u64) -> Self {
        let width_div = width_div.max(1);
        let mut b = ParamBuilder::new(seed, InitScheme::KaimingNormal);
        let blocks = build_stack(&mut b, width_div);
        let top = (VGG16_BLOCKS[4].1 / width_div).max(1);
        let head = b.conv("regression_head", top, 2, 2, 1, 0, true);
        Self {
            width_div,
            params: b.finish(),
            blocks,
            head,
        }
    }

    /// [N,3,64,64] → [N,2].
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let feat = run_stack(&self.blocks, p, x, 5).pop().expect("five blocks");
        let pooled = feat.max_pool2d(2, 2);
        self.head.forward(p, &pooled).reshape(&[x.shape()[0], 2])
    }
}
