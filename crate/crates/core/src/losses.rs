//! Training objectives for the generator and the dual-headed critic.
//!
//! Critic polarity follows the usual WGAN-GP form: scores are high on real
//! images, the critic minimizes `E[D(x_g)] − E[D(x_r)] + λ_gp·GP` and the
//! generator minimizes `−E[D(x_g)]`. Expectations are batch means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Var};
use crate::error::{Error, Result};
use crate::geometry::NormalizedGaze;
use crate::models::PerceptualBackbone;
use crate::tensor::Tensor;

/// Added under the square root of the penalty's gradient norm.
const NORM_EPS: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_p: f64,
    pub lambda_gaze: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_p: 100.0,
            lambda_gaze: 5.0,
            lambda_rec: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_gp", self.lambda_gp),
            ("lambda_p", self.lambda_p),
            ("lambda_gaze", self.lambda_gaze),
            ("lambda_rec", self.lambda_rec),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar values of every loss term at one step. `adv_d` is the bare
/// Wasserstein term; the penalty is reported separately in `gp`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub gp: f64,
    pub gaze_d: f64,
    pub gaze_g: f64,
    pub rec: f64,
    pub content: f64,
    pub style: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub fn generator_total(&self, w: &LossWeights) -> f64 {
        self.adv_g + w.lambda_p * (self.content + self.style) + w.lambda_gaze * self.gaze_g + w.lambda_rec * self.rec
    }

    pub fn discriminator_total(&self, w: &LossWeights) -> f64 {
        self.adv_d + w.lambda_gp * self.gp + w.lambda_gaze * self.gaze_d
    }

    pub fn is_finite(&self) -> bool {
        [
            self.adv_d, self.adv_g, self.gp, self.gaze_d, self.gaze_g, self.rec, self.content, self.style,
            self.total_g, self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// Per-sample interpolation weights for the penalty, drawn from `seed`.
pub fn penalty_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// `E[(‖∇D(x̂)‖₂ − 1)²]` at `x̂ = ε·x_r + (1−ε)·x_g`, one ε per sample.
///
/// The result stays differentiable with respect to the critic's
/// parameters. `critic` maps a batch to its per-sample scores `[N]`.
pub fn gradient_penalty(critic: &dyn Fn(&Var) -> Var, x_r: &Tensor, x_g: &Tensor, eps: &[f64]) -> Result<Var> {
    same_shape(x_r.shape(), x_g.shape(), "gradient penalty batches")?;
    let n = x_r.shape()[0];
    if eps.len() != n {
        return Err(Error::invalid(format!("{} interpolation weights for a batch of {n}", eps.len())));
    }
    let inner = x_r.numel() / n.max(1);
    let mut mixed = Vec::with_capacity(x_r.numel());
    for (i, e) in eps.iter().enumerate() {
        let r = &x_r.data()[i * inner..(i + 1) * inner];
        let g = &x_g.data()[i * inner..(i + 1) * inner];
        mixed.extend(r.iter().zip(g).map(|(a, b)| e * a + (1.0 - e) * b));
    }
    let x_hat = Var::leaf(Tensor::from_vec(x_r.shape().to_vec(), mixed), true);
    let scores = critic(&x_hat);
    let grad = autograd::grad(&scores.sum(), &[&x_hat], true)
        .remove(0)
        .unwrap_or_else(|| Var::constant(Tensor::zeros(x_hat.shape())));
    let norms = grad.square().sum_per_sample().add_scalar(NORM_EPS).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Wasserstein term minimized by the critic: `E[D(x_g)] − E[D(x_r)]`.
pub fn critic_loss(critic: &dyn Fn(&Var) -> Var, x_r: &Var, x_g: &Var) -> Result<Var> {
    same_shape(x_r.shape(), x_g.shape(), "critic batches")?;
    Ok(critic(x_g).mean().sub(&critic(x_r).mean()))
}

/// Adversarial term minimized by the generator: `−E[D(x_g)]`.
pub fn generator_adv_loss(critic: &dyn Fn(&Var) -> Var, x_g: &Var) -> Var {
    critic(x_g).mean().neg()
}

/// Gaze labels as a constant `[N, 2]` tensor.
pub fn gaze_targets(gaze: &[NormalizedGaze]) -> Tensor {
    Tensor::from_vec(vec![gaze.len(), 2], gaze.iter().flat_map(|g| g.as_array()).collect())
}

/// Batch mean of the squared L2 distance between 2-vectors.
pub fn gaze_mse(target: &Tensor, est: &Var) -> Result<Var> {
    same_shape(target.shape(), est.shape(), "gaze estimates")?;
    if target.ndim() != 2 || target.shape()[1] != 2 {
        return Err(Error::invalid(format!("gaze batch must be [N, 2], got {:?}", target.shape())));
    }
    let diff = est.sub(&Var::constant(target.clone()));
    Ok(diff.square().sum_per_sample().mean())
}

/// Gaze-head loss on real images against their own labels.
pub fn gaze_loss_d(d_r: &[NormalizedGaze], est_real: &Var) -> Result<Var> {
    gaze_mse(&gaze_targets(d_r), est_real)
}

/// Generator gaze loss. `est_generated` must come from a gaze head whose
/// parameters were bound without gradients, so only the generator learns.
pub fn gaze_loss_g(d_g: &[NormalizedGaze], est_generated: &Var) -> Result<Var> {
    gaze_mse(&gaze_targets(d_g), est_generated)
}

/// Mean absolute difference.
pub fn l1_loss(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a.shape(), b.shape(), "L1 operands")?;
    Ok(a.sub(b).abs().mean())
}

/// Cycle reconstruction `mean |x_r − G(G(x_r, d_g), d_r)|`.
pub fn reconstruction_loss(
    generator: &dyn Fn(&Var, &[NormalizedGaze]) -> Var,
    x_r: &Var,
    d_r: &[NormalizedGaze],
    d_g: &[NormalizedGaze],
) -> Result<Var> {
    let x_g = generator(x_r, d_g);
    l1_loss(x_r, &generator(&x_g, d_r))
}

/// `[N, C, H, W]` → `[N, C, C]` with entries `Σ_hw ψ_c ψ_c' / (C·H·W)`.
pub fn gram_matrix(act: &Var) -> Var {
    let s = act.shape();
    assert_eq!(s.len(), 4, "gram_matrix expects NCHW activations");
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let flat = act.reshape(&[n, c, hw]);
    flat.bmm(&flat, false, true).scale(1.0 / (c * hw) as f64)
}

/// Source of the five block activations used by the perceptual loss.
pub trait FeatureTaps {
    /// Activations of taps 1..=`upto` as `[N, C_j, H_j, W_j]`.
    fn taps(&self, x: &Var, upto: usize) -> Vec<Var>;
}

impl FeatureTaps for PerceptualBackbone {
    fn taps(&self, x: &Var, upto: usize) -> Vec<Var> {
        PerceptualBackbone::taps(self, x, upto)
    }
}

/// Tap used by the content term.
pub const CONTENT_TAP: usize = 5;
/// Taps summed by the style term.
pub const STYLE_TAPS: usize = 4;

fn tap_pair(features: &dyn FeatureTaps, x_g: &Var, x_t: &Var, upto: usize) -> Result<(Vec<Var>, Vec<Var>)> {
    same_shape(x_g.shape(), x_t.shape(), "perceptual inputs")?;
    let a = features.taps(x_g, upto);
    let b = features.taps(&x_t.detach(), upto);
    if a.len() < upto {
        return Err(Error::Config(format!("feature extractor exposes {} taps, {upto} needed", a.len())));
    }
    Ok((a, b))
}

/// Mean squared difference of the tap-5 activations, i.e. the squared
/// distance normalized by `C·H·W` and averaged over the batch.
pub fn content_loss(features: &dyn FeatureTaps, x_g: &Var, x_t: &Var) -> Result<Var> {
    let (a, b) = tap_pair(features, x_g, x_t, CONTENT_TAP)?;
    Ok(content_from_taps(&a, &b))
}

/// Sum over taps 1..=4 of squared Frobenius Gram differences, batch mean.
pub fn style_loss(features: &dyn FeatureTaps, x_g: &Var, x_t: &Var) -> Result<Var> {
    let (a, b) = tap_pair(features, x_g, x_t, STYLE_TAPS)?;
    Ok(style_from_taps(&a, &b))
}

/// Content and style terms sharing a single pass per image.
pub fn perceptual_loss(features: &dyn FeatureTaps, x_g: &Var, x_t: &Var) -> Result<(Var, Var)> {
    let (a, b) = tap_pair(features, x_g, x_t, CONTENT_TAP)?;
    Ok((content_from_taps(&a, &b), style_from_taps(&a, &b)))
}

fn content_from_taps(a: &[Var], b: &[Var]) -> Var {
    let i = CONTENT_TAP - 1;
    a[i].sub(&b[i]).square().mean()
}

fn style_from_taps(a: &[Var], b: &[Var]) -> Var {
    let n = a[0].shape()[0] as f64;
    let mut total: Option<Var> = None;
    for (fa, fb) in a.iter().zip(b).take(STYLE_TAPS) {
        let term = gram_matrix(fa).sub(&gram_matrix(fb)).square().sum();
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    total.expect("at least one style tap").scale(1.0 / n)
}

/// Terms of the generator objective as differentiable scalars.
pub struct GeneratorTerms {
    pub adv_g: Var,
    pub content: Var,
    pub style: Var,
    pub gaze_g: Var,
    pub rec: Var,
}

impl GeneratorTerms {
    /// `adv_g + λ_p (content + style) + λ_gaze gaze_g + λ_rec rec`.
    pub fn total(&self, w: &LossWeights) -> Var {
        self.adv_g
            .add(&self.content.add(&self.style).scale(w.lambda_p))
            .add(&self.gaze_g.scale(w.lambda_gaze))
            .add(&self.rec.scale(w.lambda_rec))
    }

    pub fn fill(&self, report: &mut LossReport, total: &Var) {
        report.adv_g = self.adv_g.item();
        report.content = self.content.item();
        report.style = self.style.item();
        report.gaze_g = self.gaze_g.item();
        report.rec = self.rec.item();
        report.total_g = total.item();
    }
}

/// Terms of the critic objective as differentiable scalars.
pub struct DiscriminatorTerms {
    pub adv_d: Var,
    pub gp: Var,
    pub gaze_d: Var,
}

impl DiscriminatorTerms {
    /// `adv_d + λ_gp gp + λ_gaze gaze_d`.
    pub fn total(&self, w: &LossWeights) -> Var {
        self.adv_d
            .add(&self.gp.scale(w.lambda_gp))
            .add(&self.gaze_d.scale(w.lambda_gaze))
    }

    pub fn fill(&self, report: &mut LossReport, total: &Var) {
        report.adv_d = self.adv_d.item();
        report.gp = self.gp.item();
        report.gaze_d = self.gaze_d.item();
        report.total_d = total.item();
    }
}

#[cfg(test)]
mod tests;
