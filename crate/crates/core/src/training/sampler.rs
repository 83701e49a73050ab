//! Deterministic batch assembly: sources, random target directions and
//! their ground-truth images.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{GazeDirection, NormalizedGaze};
use crate::tensor::Tensor;

/// One training batch; all arrays are aligned by position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// Dataset indices of the sources.
    pub indices: Vec<usize>,
    /// Dataset indices of the ground-truth targets.
    pub target_indices: Vec<usize>,
    /// Sources `[N, 3, 64, 64]`.
    pub x_r: Tensor,
    /// Ground truth at the target direction `[N, 3, 64, 64]`.
    pub x_t: Tensor,
    pub d_r: Vec<NormalizedGaze>,
    pub d_g: Vec<NormalizedGaze>,
    /// Target directions in degrees (patch frame).
    pub d_g_deg: Vec<GazeDirection>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Pairs each source in `indices` with a target drawn uniformly from its
/// group's other gaze directions, and fetches the matching ground truth.
pub fn assemble_batch(data: &Dataset, indices: &[usize], seed: u64) -> Result<TrainingBatch> {
    if indices.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target_indices = Vec::with_capacity(indices.len());
    let mut d_g_deg = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = data
            .samples
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
        let candidates = data.target_candidates(i);
        if candidates.is_empty() {
            return Err(Error::Data(format!(
                "subject {} pose {} {} has fewer than two gaze directions",
                s.subject, s.head_pose, s.eye_side
            )));
        }
        let d_g = candidates[rng.gen_range(0..candidates.len())];
        target_indices.push(data.find_ground_truth(&s.subject, s.head_pose, s.eye_side, d_g)?);
        d_g_deg.push(d_g);
    }
    let gather = |idx: &[usize]| Tensor::stack(&idx.iter().map(|&j| data.samples[j].image.clone()).collect::<Vec<_>>());
    Ok(TrainingBatch {
        x_r: gather(indices)?,
        x_t: gather(&target_indices)?,
        d_r: indices.iter().map(|&i| data.samples[i].gaze_n).collect(),
        d_g: target_indices.iter().map(|&j| data.samples[j].gaze_n).collect(),
        indices: indices.to_vec(),
        target_indices,
        d_g_deg,
    })
}

/// A batch of `batch_size` distinct sources drawn uniformly, with targets;
/// a pure function of `(data, seed)`.
pub fn sample_training_batch(data: &Dataset, seed: u64, batch_size: usize) -> Result<TrainingBatch> {
    if data.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if batch_size > data.len() {
        return Err(Error::Data(format!(
            "batch size {batch_size} exceeds the {} training samples",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, data.len(), batch_size).into_vec();
    assemble_batch(data, &indices, rng.gen())
}
