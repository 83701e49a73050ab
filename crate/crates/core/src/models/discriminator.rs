use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::error::Result;
use crate::geometry::NormalizedGaze;
use crate::nn::{Bound, Conv, InitScheme, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

use super::generator::check_patch_batch;
use super::LayerTrace;

/// Negative-side slope of the backbone activations.
pub const LRELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Width of the first backbone block; doubled by each further block.
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

/// Per-image outputs of the two discriminator branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCriticOutput {
    pub critic_map: [[f64; 3]; 3],
    pub critic_scalar: f64,
    pub gaze_estimate: NormalizedGaze,
}

fn build_backbone(b: &mut ParamBuilder, base: usize) -> Vec<Conv> {
    let mut cin = 3;
    (0..5)
        .map(|i| {
            let cout = base << i;
            let conv = b.conv(&format!("backbone{}", i + 1), cin, cout, 4, 2, 1, true);
            cin = cout;
            conv
        })
        .collect()
}

fn run_backbone(convs: &[Conv], p: &Bound, x: &Var, mut trace: Option<&mut LayerTrace>) -> Var {
    let mut y = x.clone();
    for (i, conv) in convs.iter().enumerate() {
        y = conv.forward(p, &y).leaky_relu(LRELU_SLOPE);
        if let Some(t) = trace.as_deref_mut() {
            t.push(&format!("backbone{}", i + 1), y.shape());
        }
    }
    y
}

/// Shared five-block backbone with a 3×3 critic map head and a 2-vector
/// gaze head.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    backbone: Vec<Conv>,
    critic_head: Conv,
    gaze_head: Conv,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let mut b = ParamBuilder::new(seed, InitScheme::Normal002);
        let backbone = build_backbone(&mut b, config.base_channels);
        let top = config.base_channels << 4;
        let critic_head = b.conv("critic_head", top, 1, 2, 1, 1, true);
        let gaze_head = b.conv("gaze_head", top, 2, 2, 1, 0, true);
        Self {
            config,
            params: b.finish(),
            backbone,
            critic_head,
            gaze_head,
        }
    }

    pub fn architecture_hash(&self) -> String {
        self.params.layout_hash(&format!("discriminator:{:?}", self.config))
    }

    /// Returns (critic map [N,1,3,3], gaze [N,2]).
    pub fn forward(&self, p: &Bound, x: &Var) -> (Var, Var) {
        self.forward_traced(p, x, None)
    }

    pub fn forward_traced(&self, p: &Bound, x: &Var, mut trace: Option<&mut LayerTrace>) -> (Var, Var) {
        let feat = run_backbone(&self.backbone, p, x, trace.as_deref_mut());
        let map = self.critic_head.forward(p, &feat);
        let gaze = self.gaze_head.forward(p, &feat);
        if let Some(t) = trace {
            t.push("critic_head", map.shape());
            t.push("gaze_head", gaze.shape());
        }
        let n = x.shape()[0];
        (map, gaze.reshape(&[n, 2]))
    }

    /// Critic branch only: per-sample mean of the score map, [N].
    pub fn critic(&self, p: &Bound, x: &Var) -> Var {
        let feat = run_backbone(&self.backbone, p, x, None);
        critic_scalar(&self.critic_head.forward(p, &feat))
    }

    /// Gaze branch only: [N, 2] in normalized units.
    pub fn gaze(&self, p: &Bound, x: &Var) -> Var {
        let feat = run_backbone(&self.backbone, p, x, None);
        let n = x.shape()[0];
        self.gaze_head.forward(p, &feat).reshape(&[n, 2])
    }

    /// Validated inference.
    pub fn discriminate(&self, x: &Tensor) -> Result<Vec<DualCriticOutput>> {
        check_patch_batch(x)?;
        let _g = no_grad();
        let p = self.params.bind(false);
        let (map, gaze) = self.forward(&p, &Var::constant(x.clone()));
        let (m, g) = (map.value().data(), gaze.value().data());
        let hw = map.shape()[2] * map.shape()[3];
        Ok((0..x.shape()[0])
            .map(|i| {
                let cells = &m[i * hw..(i + 1) * hw];
                let mut critic_map = [[0.0; 3]; 3];
                for (k, v) in cells.iter().take(9).enumerate() {
                    critic_map[k / 3][k % 3] = *v;
                }
                DualCriticOutput {
                    critic_map,
                    critic_scalar: cells.iter().sum::<f64>() / hw as f64,
                    gaze_estimate: NormalizedGaze::new(g[2 * i], g[2 * i + 1]),
                }
            })
            .collect())
    }
}

/// Mean over each sample's score map: [N,1,h,w] → [N].
pub fn critic_scalar(map: &Var) -> Var {
    let n = map.shape()[0];
    let cells = map.value().numel() / n;
    map.sum_per_sample().scale(1.0 / cells as f64).reshape(&[n])
}

/// The discriminator backbone with only the gaze head, trained as a
/// standalone evaluation estimator.
#[derive(Debug, Clone)]
pub struct BackboneEstimator {
    pub base_channels: usize,
    pub params: ParamSet,
    backbone: Vec<Conv>,
    head: Conv,
}

impl BackboneEstimator {
    pub fn new(base_channels: usize, seed: u64) -> Self {
        let mut b = ParamBuilder::new(seed, InitScheme::KaimingNormal);
        let backbone = build_backbone(&mut b, base_channels);
        let head = b.conv("gaze_head", base_channels << 4, 2, 2, 1, 0, true);
        Self {
            base_channels,
            params: b.finish(),
            backbone,
            head,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let feat = run_backbone(&self.backbone, p, x, None);
        self.head.forward(p, &feat).reshape(&[x.shape()[0], 2])
    }
}
