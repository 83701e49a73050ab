//! Evaluation: perceptual distance, blurriness, gaze redirection error and
//! the correction-angle-binned protocol over a test split.

pub mod blur;
pub mod eval;
pub mod lpips;

pub use blur::{blurriness, blurriness_gray, blurriness_tensor, GrayImage, LaplacianKernel};
pub use eval::{
    evaluate_model, evaluate_sources, gaze_grid, BinSummary, EvalOptions, EvaluationReport, MetricSummary, PairRecord, METRIC_NAMES,
};
pub use lpips::{lpips, AlexFeatures, IdentityFeatures, LpipsBackbone, LpipsModel};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{angular_error, GazeDirection};
use crate::tensor::Tensor;
use crate::training::{GanRedirector, TrainedEstimator};

/// Estimates gaze (degrees, patch frame) from `[N, 3, 64, 64]` patches.
pub trait GazeEstimator {
    fn estimate(&self, x: &Tensor) -> Result<Vec<GazeDirection>>;
}

impl GazeEstimator for TrainedEstimator {
    fn estimate(&self, x: &Tensor) -> Result<Vec<GazeDirection>> {
        TrainedEstimator::estimate(self, x)
    }
}

/// Returns the same direction for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEstimator(pub GazeDirection);

impl GazeEstimator for ConstantEstimator {
    fn estimate(&self, x: &Tensor) -> Result<Vec<GazeDirection>> {
        Ok(vec![self.0; x.shape().first().copied().unwrap_or(0)])
    }
}

/// Angular error between the target and the estimate for each image of a
/// `[N, 3, 64, 64]` batch.
pub fn gaze_redirection_errors(
    generated: &Tensor,
    d_g: &[GazeDirection],
    estimator: &dyn GazeEstimator,
) -> Result<Vec<f64>> {
    let est = estimator.estimate(generated)?;
    if est.len() != d_g.len() {
        return Err(Error::invalid(format!("{} estimates for {} targets", est.len(), d_g.len())));
    }
    est.iter().zip(d_g).map(|(e, g)| angular_error(*g, *e)).collect()
}

/// Angular error for one generated `[3, 64, 64]` patch.
pub fn gaze_redirection_error(generated: &Tensor, d_g: GazeDirection, estimator: &dyn GazeEstimator) -> Result<f64> {
    let s = generated.shape();
    let batch = if s.len() == 3 { generated.reshape(&[1, s[0], s[1], s[2]]) } else { generated.clone() };
    Ok(gaze_redirection_errors(&batch, &[d_g], estimator)?[0])
}

/// Produces redirected patches for one source sample of a dataset.
pub trait Redirector {
    fn name(&self) -> String;
    /// `[targets.len(), 3, 64, 64]` images of `data.samples[source]` looking
    /// at each target (patch frame, degrees).
    fn redirect(&self, data: &Dataset, source: usize, targets: &[GazeDirection]) -> Result<Tensor>;
}

impl Redirector for GanRedirector {
    fn name(&self) -> String {
        "generator".into()
    }

    fn redirect(&self, data: &Dataset, source: usize, targets: &[GazeDirection]) -> Result<Tensor> {
        let x = data.samples[source].image.reshape(&[1, 3, 64, 64]);
        let batch = Tensor::concat_batch(&vec![x; targets.len()])?;
        self.redirect_batch(&batch, targets)
    }
}

/// Returns the ground-truth image for every target: the metric ceiling.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthRedirector;

impl Redirector for GroundTruthRedirector {
    fn name(&self) -> String {
        "ground_truth".into()
    }

    fn redirect(&self, data: &Dataset, source: usize, targets: &[GazeDirection]) -> Result<Tensor> {
        let s = &data.samples[source];
        let imgs = targets
            .iter()
            .map(|d| Ok(data.samples[data.find_ground_truth(&s.subject, s.head_pose, s.eye_side, *d)?].image.clone()))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&imgs)
    }
}

/// Returns the source unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRedirector;

impl Redirector for IdentityRedirector {
    fn name(&self) -> String {
        "identity".into()
    }

    fn redirect(&self, data: &Dataset, source: usize, targets: &[GazeDirection]) -> Result<Tensor> {
        let x = data.samples[source].image.reshape(&[1, 3, 64, 64]);
        Tensor::concat_batch(&vec![x; targets.len()])
    }
}

/// Correction-angle bins `(e_0, e_1], (e_1, e_2], …`; the first bin also
/// takes its lower edge and values outside the range go to the nearest
/// outer bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBins {
    pub edges: Vec<f64>,
}

impl Default for CorrectionBins {
    fn default() -> Self {
        Self {
            edges: vec![4.9, 15.0, 25.0, 35.9],
        }
    }
}

impl CorrectionBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config(format!("bin edges {edges:?} must be ≥ 2 increasing finite values")));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_of(&self, gamma: f64) -> usize {
        self.edges[1..self.edges.len() - 1]
            .iter()
            .position(|&e| gamma <= e)
            .unwrap_or(self.len() - 1)
    }

    pub fn label(&self, bin: usize) -> String {
        let open = if bin == 0 { '[' } else { '(' };
        format!("{open}{}, {}]", self.edges[bin], self.edges[bin + 1])
    }
}

impl FromStr for CorrectionBins {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    input: s.into(),
                    expected: "comma-separated bin edges such as 4.9,15,25,35.9".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges)
    }
}

#[cfg(test)]
mod tests;
