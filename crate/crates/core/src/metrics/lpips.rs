//! Learned perceptual distance between two images: squared differences of
//! channel-normalized deep features, weighted per channel and averaged
//! over positions, summed over taps.

use std::path::Path;

use safetensors::SafeTensors;

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::models::vgg::decode_floats;
use crate::models::PerceptualBackbone;
use crate::nn::{Conv, InitScheme, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

/// Norm floor of the channel normalization.
pub const UNIT_EPS: f64 = 1e-10;

/// A fixed feature extractor exposing a list of activation taps.
pub trait LpipsBackbone {
    fn name(&self) -> String;
    /// Channels of each tap.
    fn channels(&self) -> Vec<usize>;
    /// Activations `[N, C_l, H_l, W_l]` for a `[N, 3, H, W]` batch in [−1, 1].
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// The input image itself as the single tap.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures {
    pub channels: usize,
}

impl LpipsBackbone for IdentityFeatures {
    fn name(&self) -> String {
        "identity".into()
    }

    fn channels(&self) -> Vec<usize> {
        vec![self.channels]
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.ndim() != 4 || x.shape()[1] != self.channels {
            return Err(Error::invalid(format!(
                "identity features expect [N, {}, H, W], got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(vec![x.clone()])
    }
}

impl LpipsBackbone for PerceptualBackbone {
    fn name(&self) -> String {
        format!("vgg16/{}", self.width_div)
    }

    fn channels(&self) -> Vec<usize> {
        PerceptualBackbone::channels(self).to_vec()
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.perceptual_features(x, &[1, 2, 3, 4, 5])
    }
}

/// AlexNet convolutions: (kernel, stride, pad, channels), max pooling
/// after the first two.
const ALEX_LAYERS: [(usize, usize, usize, usize); 5] =
    [(11, 4, 2, 64), (5, 1, 2, 192), (3, 1, 1, 384), (3, 1, 1, 256), (3, 1, 1, 256)];
const ALEX_TORCHVISION_INDICES: [usize; 5] = [0, 3, 6, 8, 10];

/// AlexNet feature stack with taps after each of the five ReLUs.
#[derive(Debug, Clone)]
pub struct AlexFeatures {
    pub width_div: usize,
    pub params: ParamSet,
    convs: Vec<Conv>,
    file: Option<String>,
}

impl AlexFeatures {
    /// Seeded random weights at `1/width_div` of every width.
    pub fn random(width_div: usize, seed: u64) -> Self {
        let width_div = width_div.max(1);
        let mut b = ParamBuilder::new(seed, InitScheme::KaimingNormal);
        let mut cin = 3;
        let convs = ALEX_LAYERS
            .iter()
            .enumerate()
            .map(|(i, &(k, s, p, c))| {
                let cout = (c / width_div).max(1);
                let conv = b.conv(&format!("conv{}", i + 1), cin, cout, k, s, p, true);
                cin = cout;
                conv
            })
            .collect();
        Self {
            width_div,
            params: b.finish(),
            convs,
            file: None,
        }
    }

    /// Loads torchvision `features.{i}.weight/bias` tensors.
    pub fn from_safetensors(path: &Path) -> Result<Self> {
        let mut net = Self::random(1, 0);
        let st = read_safetensors(path)?;
        let names: Vec<String> = ALEX_TORCHVISION_INDICES
            .iter()
            .flat_map(|i| [format!("features.{i}.weight"), format!("features.{i}.bias")])
            .collect();
        let loaded = net
            .params
            .iter()
            .zip(&names)
            .map(|((own, t), key)| Ok((own.to_string(), load_tensor(&st, key, t.shape(), path)?)))
            .collect::<Result<Vec<_>>>()?;
        net.params.assign(loaded)?;
        net.file = Some(path.display().to_string());
        Ok(net)
    }
}

impl LpipsBackbone for AlexFeatures {
    fn name(&self) -> String {
        match &self.file {
            Some(f) => format!("alexnet:{f}"),
            None => format!("alexnet/{}", self.width_div),
        }
    }

    fn channels(&self) -> Vec<usize> {
        ALEX_LAYERS.iter().map(|l| (l.3 / self.width_div).max(1)).collect()
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.ndim() != 4 || x.shape()[1] != 3 || x.shape()[2] < 32 || x.shape()[3] < 32 {
            return Err(Error::invalid(format!(
                "alexnet features need [N, 3, H≥32, W≥32], got {:?}",
                x.shape()
            )));
        }
        let _g = no_grad();
        let p = self.params.bind(false);
        let mut y = Var::constant(x.clone());
        let mut taps = Vec::with_capacity(5);
        for (i, conv) in self.convs.iter().enumerate() {
            if i == 1 || i == 2 {
                y = y.max_pool2d(3, 2);
            }
            y = conv.forward(&p, &y).relu();
            taps.push(y.value().clone());
        }
        Ok(taps)
    }
}

fn read_safetensors(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Config(format!("{}: not a safetensors file: {e}", path.display())))?;
    st.tensors()
        .into_iter()
        .map(|(name, view)| {
            let values = decode_floats(view.dtype(), view.data())
                .ok_or_else(|| Error::Config(format!("{name}: unsupported dtype {:?}", view.dtype())))?;
            Ok((name, view.shape().to_vec(), values))
        })
        .collect()
}

fn load_tensor(st: &[(String, Vec<usize>, Vec<f64>)], key: &str, shape: &[usize], path: &Path) -> Result<Tensor> {
    let (_, s, v) = st
        .iter()
        .find(|(n, _, _)| n == key)
        .ok_or_else(|| Error::Config(format!("{}: missing tensor {key}", path.display())))?;
    if s.as_slice() != shape {
        return Err(Error::Config(format!("{key}: shape {s:?}, expected {shape:?}")));
    }
    Ok(Tensor::from_vec(shape.to_vec(), v.clone()))
}

/// A backbone with non-negative per-channel weights for each tap.
pub struct LpipsModel {
    pub backbone: Box<dyn LpipsBackbone>,
    pub weights: Vec<Vec<f64>>,
    /// Human-readable description of the weight provenance.
    pub source: String,
}

impl std::fmt::Debug for LpipsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LpipsModel").field("source", &self.source).finish()
    }
}

impl LpipsModel {
    pub fn new(backbone: Box<dyn LpipsBackbone>, weights: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        let chans = backbone.channels();
        if chans.is_empty() {
            return Err(Error::Config("LPIPS backbone declares no taps".into()));
        }
        if weights.len() != chans.len() || weights.iter().zip(&chans).any(|(w, &c)| w.len() != c) {
            return Err(Error::Config(format!(
                "LPIPS weights do not match tap channels {chans:?}"
            )));
        }
        if weights.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("LPIPS channel weights must be finite and non-negative".into()));
        }
        Ok(Self {
            backbone,
            weights,
            source: source.into(),
        })
    }

    /// All channel weights 1.
    pub fn unit(backbone: Box<dyn LpipsBackbone>) -> Self {
        let weights = backbone.channels().iter().map(|&c| vec![1.0; c]).collect();
        let source = format!("{} with unit weights", backbone.name());
        Self {
            backbone,
            weights,
            source,
        }
    }

    /// Identity features with unit weights: the toy model.
    pub fn identity() -> Self {
        Self::unit(Box::new(IdentityFeatures { channels: 3 }))
    }

    /// Linear layers stored as `lin{l}.model.1.weight` `[1, C, 1, 1]`, the
    /// layout of the published calibration files.
    pub fn with_linear_file(backbone: Box<dyn LpipsBackbone>, path: &Path) -> Result<Self> {
        let st = read_safetensors(path)?;
        let weights = backbone
            .channels()
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let key = format!("lin{l}.model.1.weight");
                Ok(load_tensor(&st, &key, &[1, c, 1, 1], path)?.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let source = format!("{} with weights {}", backbone.name(), path.display());
        Self::new(backbone, weights, source)
    }

    /// Distances between aligned images of two `[N, 3, H, W]` batches.
    pub fn distances(&self, x: &Tensor, x0: &Tensor) -> Result<Vec<f64>> {
        if x.shape() != x0.shape() {
            return Err(Error::invalid(format!(
                "LPIPS inputs differ in shape: {:?} vs {:?}",
                x.shape(),
                x0.shape()
            )));
        }
        let f = self.backbone.features(x)?;
        let f0 = self.backbone.features(x0)?;
        let n = x.shape()[0];
        let mut d = vec![0.0; n];
        for ((a, b), w) in f.iter().zip(&f0).zip(&self.weights) {
            for (i, di) in d.iter_mut().enumerate() {
                *di += tap_distance(a, b, w, i);
            }
        }
        Ok(d)
    }
}

/// `(1/HW) Σ_hw Σ_c w_c² (ŷ_chw − ŷ0_chw)²` for sample `i`, where ŷ is the
/// activation divided by its channel norm at each position.
fn tap_distance(a: &Tensor, b: &Tensor, w: &[f64], i: usize) -> f64 {
    let (c, h, wd) = (a.shape()[1], a.shape()[2], a.shape()[3]);
    let hw = h * wd;
    let pa = &a.data()[i * c * hw..(i + 1) * c * hw];
    let pb = &b.data()[i * c * hw..(i + 1) * c * hw];
    let mut total = 0.0;
    for pos in 0..hw {
        let na = (0..c).map(|k| pa[k * hw + pos].powi(2)).sum::<f64>().sqrt() + UNIT_EPS;
        let nb = (0..c).map(|k| pb[k * hw + pos].powi(2)).sum::<f64>().sqrt() + UNIT_EPS;
        for k in 0..c {
            let diff = w[k] * (pa[k * hw + pos] / na - pb[k * hw + pos] / nb);
            total += diff * diff;
        }
    }
    total / hw as f64
}

/// Per-position channel normalization `[N, C, H, W]`, exposed for checks.
pub fn unit_normalize(a: &Tensor) -> Tensor {
    let (n, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let hw = h * w;
    let mut out = a.data().to_vec();
    for i in 0..n {
        let p = &mut out[i * c * hw..(i + 1) * c * hw];
        for pos in 0..hw {
            let norm = (0..c).map(|k| p[k * hw + pos].powi(2)).sum::<f64>().sqrt() + UNIT_EPS;
            for k in 0..c {
                p[k * hw + pos] /= norm;
            }
        }
    }
    Tensor::from_vec(a.shape().to_vec(), out)
}

/// Distance between two `[3, H, W]` images.
pub fn lpips(x: &Tensor, x0: &Tensor, model: &LpipsModel) -> Result<f64> {
    let lift = |t: &Tensor| match t.ndim() {
        3 => Ok(t.reshape(&[1, t.shape()[0], t.shape()[1], t.shape()[2]])),
        4 if t.shape()[0] == 1 => Ok(t.clone()),
        _ => Err(Error::invalid(format!("expected a single image, got {:?}", t.shape()))),
    };
    Ok(model.distances(&lift(x)?, &lift(x0)?)?[0])
}
