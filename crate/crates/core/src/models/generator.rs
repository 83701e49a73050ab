use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::geometry::NormalizedGaze;
use crate::nn::{Bound, Conv, ConvTranspose, InitScheme, InstanceNorm, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

use super::{LayerTrace, PATCH_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Width of the first block; doubled by each downsampling block.
    pub base_channels: usize,
    pub res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            res_blocks: 6,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    norm1: InstanceNorm,
    conv2: Conv,
    norm2: InstanceNorm,
}

/// Encoder / residual / decoder generator conditioned on a gaze direction
/// broadcast to two constant input planes.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    stem: (Conv, InstanceNorm),
    down: Vec<(Conv, InstanceNorm)>,
    res: Vec<ResBlock>,
    up: Vec<(ConvTranspose, InstanceNorm)>,
    head: Conv,
}

/// Two constant planes holding (yaw_n, pitch_n) per sample: [N, 2, H, W].
pub fn condition_planes(cond: &[NormalizedGaze], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(cond.len() * 2 * h * w);
    for c in cond {
        data.extend(std::iter::repeat_n(c.yaw_n, h * w));
        data.extend(std::iter::repeat_n(c.pitch_n, h * w));
    }
    Tensor::from_vec(vec![cond.len(), 2, h, w], data)
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut b = ParamBuilder::new(seed, InitScheme::Normal002);
        let c = config.base_channels;
        let stem = (b.conv("stem", 5, c, 7, 1, 3, false), b.instance_norm("stem.in", c));
        let down = vec![
            (b.conv("down1", c, 2 * c, 4, 2, 1, false), b.instance_norm("down1.in", 2 * c)),
            (b.conv("down2", 2 * c, 4 * c, 4, 2, 1, false), b.instance_norm("down2.in", 4 * c)),
        ];
        let res = (0..config.res_blocks)
            .map(|i| ResBlock {
                conv1: b.conv(&format!("res{i}.conv1"), 4 * c, 4 * c, 3, 1, 1, false),
                norm1: b.instance_norm(&format!("res{i}.in1"), 4 * c),
                conv2: b.conv(&format!("res{i}.conv2"), 4 * c, 4 * c, 3, 1, 1, false),
                norm2: b.instance_norm(&format!("res{i}.in2"), 4 * c),
            })
            .collect();
        let up = vec![
            (b.conv_transpose("up1", 4 * c, 2 * c, 4, 2, 1, false), b.instance_norm("up1.in", 2 * c)),
            (b.conv_transpose("up2", 2 * c, c, 4, 2, 1, false), b.instance_norm("up2.in", c)),
        ];
        let head = b.conv("head", c, 3, 7, 1, 3, true);
        Self {
            config,
            params: b.finish(),
            stem,
            down,
            res,
            up,
            head,
        }
    }

    pub fn architecture_hash(&self) -> String {
        self.params.layout_hash(&format!("generator:{:?}", self.config))
    }

    /// Forward pass on bound parameters. `x` is [N, 3, H, W] with H, W
    /// divisible by 4.
    pub fn forward(&self, p: &Bound, x: &Var, cond: &[NormalizedGaze]) -> Var {
        self.forward_traced(p, x, cond, None)
    }

    pub fn forward_traced(
        &self,
        p: &Bound,
        x: &Var,
        cond: &[NormalizedGaze],
        mut trace: Option<&mut LayerTrace>,
    ) -> Var {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        assert_eq!(cond.len(), n, "one condition per sample");
        let mut record = |name: &str, v: &Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(name, v.shape());
            }
        };
        let planes = Var::constant(condition_planes(cond, h, w));
        let input = Var::cat(&[x, &planes], 1);
        let mut y = self.stem.1.forward(p, &self.stem.0.forward(p, &input)).relu();
        record("stem", &y);
        for (i, (conv, norm)) in self.down.iter().enumerate() {
            y = norm.forward(p, &conv.forward(p, &y)).relu();
            record(&format!("down{}", i + 1), &y);
        }
        for (i, r) in self.res.iter().enumerate() {
            let inner = r.norm1.forward(p, &r.conv1.forward(p, &y)).relu();
            let inner = r.norm2.forward(p, &r.conv2.forward(p, &inner));
            y = y.add(&inner);
            record(&format!("res{}", i + 1), &y);
        }
        for (i, (deconv, norm)) in self.up.iter().enumerate() {
            y = norm.forward(p, &deconv.forward(p, &y)).relu();
            record(&format!("up{}", i + 1), &y);
        }
        let out = self.head.forward(p, &y).tanh();
        record("head", &out);
        out
    }

    /// Validated inference on a batch of 64×64 patches in [−1, 1].
    pub fn generate(&self, x: &Tensor, cond: &[NormalizedGaze]) -> Result<Tensor> {
        check_patch_batch(x)?;
        if cond.len() != x.shape()[0] {
            return Err(Error::invalid(format!(
                "{} conditions for a batch of {}",
                cond.len(),
                x.shape()[0]
            )));
        }
        let _g = no_grad();
        let p = self.params.bind(false);
        Ok(self.forward(&p, &Var::constant(x.clone()), cond).value().clone())
    }
}

/// Requires a [N, 3, 64, 64] batch.
pub fn check_patch_batch(x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != PATCH_SIZE || s[3] != PATCH_SIZE || s[0] == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty [N, 3, {PATCH_SIZE}, {PATCH_SIZE}] batch, got {s:?}"
        )));
    }
    Ok(())
}
