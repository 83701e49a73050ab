//! Image blurriness: reciprocal variance of the Laplacian response.

use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 3×3 filter used by [`blurriness`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKernel {
    /// `[[0,1,0],[1,−4,1],[0,1,0]]`.
    #[default]
    Standard,
    /// The variant with a bottom-right 1: `[[0,1,0],[1,−4,1],[0,1,1]]`.
    Corner,
}

impl LaplacianKernel {
    pub fn weights(&self) -> [[f64; 3]; 3] {
        match self {
            Self::Standard => [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
            Self::Corner => [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 1.0]],
        }
    }
}

impl FromStr for LaplacianKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "corner" => Ok(Self::Corner),
            other => Err(Error::Parse {
                input: other.into(),
                expected: "standard|corner".into(),
            }),
        }
    }
}

/// Single-channel image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{} values for a {width}×{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Luma of an 8-bit RGB image, in 0..=255 intensity units.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Luma of a `[3, H, W]` (or `[1, 3, H, W]`) tensor in [−1, 1], mapped
    /// to 0..=255 intensity units without rounding.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s {
            [3, h, w] | [1, 3, h, w] => (*h, *w),
            _ => return Err(Error::invalid(format!("expected a [3, H, W] image tensor, got {s:?}"))),
        };
        let d = t.data();
        let plane = h * w;
        let data = (0..plane)
            .map(|i| (0..3).map(|c| LUMA[c] * (d[c * plane + i] + 1.0) * 127.5).sum())
            .collect();
        Ok(Self { width: w, height: h, data })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Valid-region (unpadded) 3×3 cross-correlation.
pub fn filter_valid(img: &GrayImage, k: &[[f64; 3]; 3]) -> Vec<f64> {
    if img.width < 3 || img.height < 3 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((img.width - 2) * (img.height - 2));
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, kv) in row.iter().enumerate() {
                    if *kv != 0.0 {
                        acc += kv * img.at(x + dx - 1, y + dy - 1);
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// `1 / Var[k ∗ x]` over the valid region (population variance).
pub fn blurriness_gray(img: &GrayImage, kernel: LaplacianKernel) -> Result<f64> {
    let r = filter_valid(img, &kernel.weights());
    if r.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "{}×{} image is too small for a 3×3 filter",
            img.width, img.height
        )));
    }
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateInput(
            "filtered image has zero variance (constant or affine image)".into(),
        ));
    }
    Ok(1.0 / var)
}

/// Blurriness of an 8-bit RGB image.
pub fn blurriness(img: &RgbImage, kernel: LaplacianKernel) -> Result<f64> {
    blurriness_gray(&GrayImage::from_rgb(img), kernel)
}

/// Blurriness of a `[3, H, W]` tensor in [−1, 1].
pub fn blurriness_tensor(t: &Tensor, kernel: LaplacianKernel) -> Result<f64> {
    blurriness_gray(&GrayImage::from_tensor(t)?, kernel)
}
