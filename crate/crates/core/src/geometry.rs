//! Gaze angle representations and the angular distances used for
//! conditioning, loss targets and evaluation.
//!
//! Angles cross the API in degrees; trigonometry runs in radians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Yaw range of the Columbia gaze grid, in degrees.
pub const DEFAULT_YAW_MAX: f64 = 15.0;
/// Pitch range of the Columbia gaze grid, in degrees.
pub const DEFAULT_PITCH_MAX: f64 = 10.0;

/// The seven yaw values of the Columbia grid.
pub const COLUMBIA_YAWS: [f64; 7] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0];
/// The three pitch values of the Columbia grid.
pub const COLUMBIA_PITCHES: [f64; 3] = [-10.0, 0.0, 10.0];

/// A gaze direction as (yaw, pitch) in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeDirection {
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeDirection {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    /// Constructor that also enforces the Columbia angle ranges.
    pub fn checked(yaw: f64, pitch: f64) -> Result<Self> {
        let d = Self::new(yaw, pitch);
        d.ensure_finite()?;
        if yaw.abs() > DEFAULT_YAW_MAX || pitch.abs() > DEFAULT_PITCH_MAX {
            return Err(Error::Range(format!(
                "gaze ({yaw}°, {pitch}°) outside yaw ±{DEFAULT_YAW_MAX}° / pitch ±{DEFAULT_PITCH_MAX}°"
            )));
        }
        Ok(d)
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.yaw.is_finite() && self.pitch.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "non-finite gaze angles ({}, {})",
                self.yaw, self.pitch
            )))
        }
    }

    /// Label of the horizontally mirrored image.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.yaw, self.pitch)
    }
}

/// A 3-D gaze direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn dot(&self, o: &GazeVector) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Gaze scaled componentwise into [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGaze {
    pub yaw_n: f64,
    pub pitch_n: f64,
}

impl NormalizedGaze {
    pub fn new(yaw_n: f64, pitch_n: f64) -> Self {
        Self { yaw_n, pitch_n }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.yaw_n, self.pitch_n]
    }
}

/// Per-axis maxima used to scale gaze into [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeScale {
    pub yaw_max: f64,
    pub pitch_max: f64,
}

impl Default for GazeScale {
    fn default() -> Self {
        Self {
            yaw_max: DEFAULT_YAW_MAX,
            pitch_max: DEFAULT_PITCH_MAX,
        }
    }
}

impl GazeScale {
    pub fn normalize(&self, d: GazeDirection) -> Result<NormalizedGaze> {
        normalize_gaze(d, self.yaw_max, self.pitch_max)
    }

    pub fn denormalize(&self, n: NormalizedGaze) -> Result<GazeDirection> {
        denormalize_gaze(n, self.yaw_max, self.pitch_max)
    }

    /// Denormalization without range checks, for network outputs that may
    /// leave the unit box.
    pub fn denormalize_unchecked(&self, n: NormalizedGaze) -> GazeDirection {
        GazeDirection::new(n.yaw_n * self.yaw_max, n.pitch_n * self.pitch_max)
    }
}

/// Maps (yaw φ, pitch θ) to `[cos φ cos θ, −sin φ, cos φ sin θ]`.
pub fn to_cartesian(d: GazeDirection) -> Result<GazeVector> {
    d.ensure_finite()?;
    let (phi, theta) = (d.yaw.to_radians(), d.pitch.to_radians());
    Ok(GazeVector {
        x: phi.cos() * theta.cos(),
        y: -phi.sin(),
        z: phi.cos() * theta.sin(),
    })
}

/// Angle between two 3-D vectors in degrees, with the cosine clamped to
/// [−1, 1].
pub fn vector_angle(a: &GazeVector, b: &GazeVector) -> f64 {
    let cos = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Angular error between a target gaze and an estimate, in degrees.
pub fn angular_error(d_g: GazeDirection, d_hat: GazeDirection) -> Result<f64> {
    Ok(vector_angle(&to_cartesian(d_g)?, &to_cartesian(d_hat)?))
}

/// Correction angle between target and source gaze, in degrees.
pub fn correction_angle(d_g: GazeDirection, d_r: GazeDirection) -> Result<f64> {
    angular_error(d_g, d_r)
}

pub fn normalize_gaze(d: GazeDirection, yaw_max: f64, pitch_max: f64) -> Result<NormalizedGaze> {
    d.ensure_finite()?;
    check_maxima(yaw_max, pitch_max)?;
    if d.yaw.abs() > yaw_max || d.pitch.abs() > pitch_max {
        return Err(Error::Range(format!(
            "gaze ({}°, {}°) exceeds normalization maxima ({yaw_max}°, {pitch_max}°)",
            d.yaw, d.pitch
        )));
    }
    Ok(NormalizedGaze::new(d.yaw / yaw_max, d.pitch / pitch_max))
}

pub fn denormalize_gaze(n: NormalizedGaze, yaw_max: f64, pitch_max: f64) -> Result<GazeDirection> {
    check_maxima(yaw_max, pitch_max)?;
    if !(n.yaw_n.abs() <= 1.0 && n.pitch_n.abs() <= 1.0) {
        return Err(Error::Range(format!(
            "normalized gaze ({}, {}) outside [-1, 1]",
            n.yaw_n, n.pitch_n
        )));
    }
    Ok(GazeDirection::new(n.yaw_n * yaw_max, n.pitch_n * pitch_max))
}

fn check_maxima(yaw_max: f64, pitch_max: f64) -> Result<()> {
    if yaw_max > 0.0 && pitch_max > 0.0 && yaw_max.is_finite() && pitch_max.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "normalization maxima must be positive, got ({yaw_max}, {pitch_max})"
        )))
    }
}

/// The 21 Columbia directions, ordered row-major by pitch then yaw.
pub fn columbia_grid() -> Vec<GazeDirection> {
    COLUMBIA_PITCHES
        .iter()
        .flat_map(|&p| COLUMBIA_YAWS.iter().map(move |&y| GazeDirection::new(y, p)))
        .collect()
}
