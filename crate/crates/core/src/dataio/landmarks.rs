//! Facial landmark acquisition. The 68-point layout follows the common
//! iBUG/dlib ordering.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::circle::Point;
use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;
/// Eye whose patch is used as-is (image right side).
pub const LEFT_EYE: Range<usize> = 42..48;
/// Eye whose patch is mirrored horizontally (image left side).
pub const RIGHT_EYE: Range<usize> = 36..42;

/// Supplies landmarks for a frame; `None` when no face was found.
pub trait LandmarkProvider {
    fn landmarks(&self, image: &Path) -> Result<Option<Vec<Point>>>;
}

/// `<dir>/<stem>.landmarks.json` next to each image.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("landmarks.json")
}

pub fn validate_landmarks(points: &[Point], origin: &str) -> Result<()> {
    if points.len() != LANDMARK_COUNT {
        return Err(Error::Data(format!(
            "{origin}: expected {LANDMARK_COUNT} landmarks, found {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{origin}: non-finite landmark coordinate")));
    }
    Ok(())
}

pub fn write_sidecar(path: &Path, points: &[Point]) -> Result<()> {
    validate_landmarks(points, &path.display().to_string())?;
    let rows: Vec<String> = points
        .iter()
        .map(|p| format!("  [{}, {}]", p[0], p[1]))
        .collect();
    let text = format!("[\n{}\n]\n", rows.join(",\n"));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<Point>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points: Vec<Point> = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad landmark file: {e}", path.display())))?;
    validate_landmarks(&points, &path.display().to_string())?;
    Ok(points)
}

/// Reads precomputed sidecar files; a missing sidecar means "no face".
#[derive(Debug, Clone, Copy, Default)]
pub struct SidecarLandmarks;

impl LandmarkProvider for SidecarLandmarks {
    fn landmarks(&self, image: &Path) -> Result<Option<Vec<Point>>> {
        let path = sidecar_path(image);
        if !path.exists() {
            return Ok(None);
        }
        read_sidecar(&path).map(Some)
    }
}

/// Runs an external detector as `program [args..] <image>`; it must print a
/// JSON array of 68 `[x, y]` pairs, or `null` when no face is found.
#[derive(Debug, Clone)]
pub struct CommandLandmarks {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl LandmarkProvider for CommandLandmarks {
    fn landmarks(&self, image: &Path) -> Result<Option<Vec<Point>>> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(image)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Data(format!(
                "landmark detector failed on {}: {}",
                image.display(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let points: Option<Vec<Point>> = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::Data(format!("landmark detector output for {}: {e}", image.display())))?;
        if let Some(p) = &points {
            validate_landmarks(p, &image.display().to_string())?;
        }
        Ok(points)
    }
}
