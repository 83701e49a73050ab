//! Square eye-region crops around the enclosing circle of the eye
//! landmarks, resampled to the network patch size.

use image::{Rgb, RgbImage};

use super::circle::{min_enclosing_circle, Circle, Point};
use crate::error::{Error, Result};
use crate::models::PATCH_SIZE;
use crate::tensor::Tensor;

/// Side length of the crop as a multiple of the enclosing-circle radius.
pub const CROP_SCALE: f64 = 3.4;

/// Axis-aligned square `[x0, x0 + side] × [y0, y0 + side]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

pub fn crop_box(circle: &Circle) -> CropBox {
    let side = CROP_SCALE * circle.radius;
    CropBox {
        x0: circle.center[0] - side / 2.0,
        y0: circle.center[1] - side / 2.0,
        side,
    }
}

/// Bilinear sample at continuous pixel-center coordinates; zero outside.
fn sample(frame: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let mut out = [0.0; 3];
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let (px, py) = (ix + dx, iy + dy);
            let weight = wx * wy;
            if weight == 0.0 || px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let p = frame.get_pixel(px as u32, py as u32);
            for c in 0..3 {
                out[c] += weight * p[c] as f64;
            }
        }
    }
    out
}

/// Resamples `bx` into a `size × size` patch. Large boxes are averaged
/// over a k×k grid of bilinear samples per output pixel.
pub fn resample_box(frame: &RgbImage, bx: &CropBox, size: usize) -> RgbImage {
    let step = bx.side / size as f64;
    let k = step.round().max(1.0) as usize;
    let (cx, cy) = (bx.x0 + bx.side / 2.0, bx.y0 + bx.side / 2.0);
    let half = size as f64 / 2.0;
    let mut out = RgbImage::new(size as u32, size as u32);
    for v in 0..size {
        for u in 0..size {
            let mut acc = [0.0; 3];
            for b in 0..k {
                for a in 0..k {
                    let x = cx + (u as f64 + (a as f64 + 0.5) / k as f64 - half) * step;
                    let y = cy + (v as f64 + (b as f64 + 0.5) / k as f64 - half) * step;
                    let s = sample(frame, x, y);
                    for c in 0..3 {
                        acc[c] += s[c];
                    }
                }
            }
            let n = (k * k) as f64;
            let px = acc.map(|s| (s / n).round().clamp(0.0, 255.0) as u8);
            out.put_pixel(u as u32, v as u32, Rgb(px));
        }
    }
    out
}

/// Crops the square of side 3.4·R centred on the six eye landmarks'
/// enclosing circle and resamples it to 64×64. Out-of-frame area is black.
pub fn crop_eye_patch(frame: &RgbImage, eye: &[Point]) -> Result<RgbImage> {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if eye.iter().any(|p| !(0.0..=w).contains(&p[0]) || !(0.0..=h).contains(&p[1])) {
        return Err(Error::Extraction(format!("eye landmarks {eye:?} fall outside the {w}×{h} frame")));
    }
    let circle = min_enclosing_circle(eye).map_err(|e| Error::Extraction(e.to_string()))?;
    if circle.radius < 1e-6 {
        return Err(Error::Extraction("eye landmarks are degenerate (zero radius)".into()));
    }
    Ok(resample_box(frame, &crop_box(&circle), PATCH_SIZE))
}

/// 8-bit level to the unit range: `v / 127.5 − 1`.
pub fn pixel_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn unit_to_pixel(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// RGB image → `[3, H, W]` tensor in [−1, 1].
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = pixel_to_unit(p[c]);
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

/// `[3, H, W]` (or `[1, 3, H, W]`) tensor in [−1, 1] → 8-bit RGB.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    let (h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        _ => return Err(Error::invalid(format!("expected a [3, H, W] image, got {s:?}"))),
    };
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| unit_to_pixel(d[(c * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    }))
}
