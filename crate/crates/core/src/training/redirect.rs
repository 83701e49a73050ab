//! Inference with a trained generator: single redirections and tiled grids.

use std::path::Path;

use image::RgbImage;

use crate::dataio::crop::{image_to_tensor, tensor_to_image};
use crate::error::{Error, Result};
use crate::geometry::{GazeDirection, GazeScale};
use crate::models::{generator_from_checkpoint, Checkpoint, Generator, PATCH_SIZE};
use crate::tensor::Tensor;

/// A generator together with the gaze scale it was trained with.
pub struct GanRedirector {
    pub generator: Generator,
    pub scale: GazeScale,
}

impl GanRedirector {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let generator = generator_from_checkpoint(&ck, checkpoint)?;
        let scale = match ck.meta.get("gaze_scale") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::checkpoint(checkpoint, format!("gaze scale: {e}")))?,
            None => GazeScale::default(),
        };
        Ok(Self { generator, scale })
    }

    /// Redirects a batch `[N, 3, 64, 64]`, one target per sample (patch frame).
    pub fn redirect_batch(&self, x: &Tensor, d_g: &[GazeDirection]) -> Result<Tensor> {
        let cond = d_g.iter().map(|d| self.scale.normalize(*d)).collect::<Result<Vec<_>>>()?;
        self.generator.generate(x, &cond)
    }

    pub fn redirect(&self, patch: &RgbImage, d_g: GazeDirection) -> Result<RgbImage> {
        let x = patch_tensor(patch)?;
        tensor_to_image(&self.redirect_batch(&x, &[d_g])?)
    }

    /// Tiles one redirection per direction, rows ordered by pitch and
    /// columns by yaw (both ascending). The directions must form a full
    /// pitch × yaw grid.
    pub fn redirect_grid(&self, patch: &RgbImage, dirs: &[GazeDirection]) -> Result<RgbImage> {
        let (pitches, yaws) = grid_axes(dirs)?;
        let x = patch_tensor(patch)?;
        let mut ordered = Vec::with_capacity(dirs.len());
        for &p in &pitches {
            for &y in &yaws {
                ordered.push(GazeDirection::new(y, p));
            }
        }
        let batch = Tensor::concat_batch(&vec![x; ordered.len()])?;
        let out = self.redirect_batch(&batch, &ordered)?;
        let s = PATCH_SIZE as u32;
        let mut grid = RgbImage::new(s * yaws.len() as u32, s * pitches.len() as u32);
        for (k, _) in ordered.iter().enumerate() {
            let tile = tensor_to_image(&out.narrow_batch(k, 1))?;
            let (row, col) = ((k / yaws.len()) as u32, (k % yaws.len()) as u32);
            image::imageops::replace(&mut grid, &tile, (col * s) as i64, (row * s) as i64);
        }
        Ok(grid)
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Distinct pitches and yaws of `dirs`, checking that they cover the full
/// product exactly once.
pub fn grid_axes(dirs: &[GazeDirection]) -> Result<(Vec<f64>, Vec<f64>)> {
    if dirs.is_empty() {
        return Err(Error::invalid("empty direction grid"));
    }
    let pitches = sorted_unique(dirs.iter().map(|d| d.pitch).collect());
    let yaws = sorted_unique(dirs.iter().map(|d| d.yaw).collect());
    let mut keys: Vec<(u64, u64)> = dirs.iter().map(|d| (d.pitch.to_bits(), d.yaw.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.len() != dirs.len() || dirs.len() != pitches.len() * yaws.len() {
        return Err(Error::invalid(format!(
            "{} directions do not form a full {}×{} pitch/yaw grid",
            dirs.len(),
            pitches.len(),
            yaws.len()
        )));
    }
    Ok((pitches, yaws))
}

fn patch_tensor(patch: &RgbImage) -> Result<Tensor> {
    let s = PATCH_SIZE as u32;
    if patch.dimensions() != (s, s) {
        return Err(Error::invalid(format!(
            "expected a {s}×{s} eye patch, got {}×{}",
            patch.width(),
            patch.height()
        )));
    }
    let t = image_to_tensor(patch);
    Ok(t.reshape(&[1, 3, PATCH_SIZE, PATCH_SIZE]))
}

/// Reads an eye patch image from disk.
pub fn load_patch(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8())
}

/// Loads `checkpoint` and redirects one patch to `d_g`.
pub fn redirect(checkpoint: &Path, patch: &RgbImage, d_g: GazeDirection) -> Result<RgbImage> {
    GanRedirector::load(checkpoint)?.redirect(patch, d_g)
}

/// Loads `checkpoint` and renders the tiled grid for `dirs`.
pub fn redirect_grid(checkpoint: &Path, patch: &RgbImage, dirs: &[GazeDirection]) -> Result<RgbImage> {
    GanRedirector::load(checkpoint)?.redirect_grid(patch, dirs)
}
