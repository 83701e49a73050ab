//! Dataset ingestion: eye-patch extraction, normalization, manifests,
//! subject splits and ground-truth pairing.

pub mod circle;
pub mod columbia;
pub mod crop;
pub mod landmarks;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use circle::{min_enclosing_circle, Circle, Point};
pub use columbia::{parse_columbia_filename, ColumbiaName};
pub use crop::{crop_box, crop_eye_patch, image_to_tensor, pixel_to_unit, tensor_to_image, unit_to_pixel, CropBox};
pub use landmarks::{CommandLandmarks, LandmarkProvider, SidecarLandmarks};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, GazeDirection, GazeScale, NormalizedGaze};
use crate::tensor::Tensor;

/// Header of the manifest CSV; `synthetic` is appended when any row is synthetic.
pub const MANIFEST_HEADER: [&str; 7] = ["path", "subject", "head_pose", "pitch", "yaw", "eye_side", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyeSide {
    /// Used unflipped.
    Left,
    /// Mirrored horizontally, with the yaw label negated.
    Right,
}

impl EyeSide {
    pub const BOTH: [EyeSide; 2] = [EyeSide::Left, EyeSide::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            EyeSide::Left => "left",
            EyeSide::Right => "right",
        }
    }

    pub fn landmark_range(&self) -> std::ops::Range<usize> {
        match self {
            EyeSide::Left => landmarks::LEFT_EYE,
            EyeSide::Right => landmarks::RIGHT_EYE,
        }
    }

    /// Raw annotation → label in the stored (possibly mirrored) patch frame.
    pub fn to_patch_frame(&self, raw: GazeDirection) -> GazeDirection {
        match self {
            EyeSide::Left => raw,
            EyeSide::Right => raw.mirrored(),
        }
    }
}

impl fmt::Display for EyeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EyeSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(EyeSide::Left),
            "right" => Ok(EyeSide::Right),
            _ => Err(Error::Parse {
                input: s.into(),
                expected: "left|right".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One raw frame with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub path: PathBuf,
    pub subject: String,
    pub distance: String,
    pub head_pose: i32,
    pub gaze: GazeDirection,
    /// Empty when no landmarks are known, otherwise exactly 68 points.
    pub landmarks: Vec<Point>,
}

impl FaceRecord {
    /// Builds a record from a dataset-style file name and its landmarks.
    pub fn from_path(path: &Path, provider: &dyn LandmarkProvider) -> Result<Self> {
        let name = parse_columbia_filename(&path.to_string_lossy())?;
        let landmarks = provider.landmarks(path)?.unwrap_or_default();
        Ok(Self {
            path: path.to_path_buf(),
            subject: name.subject_id(),
            distance: name.distance,
            head_pose: name.head_pose,
            gaze: GazeDirection::new(name.yaw as f64, name.pitch as f64),
            landmarks,
        })
    }
}

/// A normalized 64×64 eye patch with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeSample {
    /// `[3, 64, 64]` in [−1, 1].
    pub image: Tensor,
    /// Label in the patch frame (yaw negated for mirrored right eyes).
    pub gaze: GazeDirection,
    pub gaze_n: NormalizedGaze,
    pub subject: String,
    pub head_pose: i32,
    pub eye_side: EyeSide,
    pub synthetic: bool,
}

/// Crops one eye of a frame to a 64×64 patch, mirrored for the right eye.
pub fn extract_patch(frame: &RgbImage, record: &FaceRecord, side: EyeSide) -> Result<RgbImage> {
    if record.landmarks.len() != landmarks::LANDMARK_COUNT {
        return Err(Error::Extraction(format!("{}: no landmarks available", record.path.display())));
    }
    let patch = crop_eye_patch(frame, &record.landmarks[side.landmark_range()])?;
    Ok(match side {
        EyeSide::Left => patch,
        EyeSide::Right => image::imageops::flip_horizontal(&patch),
    })
}

/// Crop, mirror when right, scale pixels into [−1, 1] and normalize the
/// patch-frame gaze label.
pub fn prepare_sample(frame: &RgbImage, record: &FaceRecord, side: EyeSide, scale: &GazeScale) -> Result<EyeSample> {
    let patch = extract_patch(frame, record, side)?;
    sample_from_patch(&patch, &record.subject, record.head_pose, side, side.to_patch_frame(record.gaze), scale)
}

pub fn sample_from_patch(
    patch: &RgbImage,
    subject: &str,
    head_pose: i32,
    side: EyeSide,
    gaze: GazeDirection,
    scale: &GazeScale,
) -> Result<EyeSample> {
    if patch.dimensions() != (crate::models::PATCH_SIZE as u32, crate::models::PATCH_SIZE as u32) {
        return Err(Error::Data(format!("patch is {:?}, expected 64×64", patch.dimensions())));
    }
    Ok(EyeSample {
        image: image_to_tensor(patch),
        gaze,
        gaze_n: scale.normalize(gaze)?,
        subject: subject.to_string(),
        head_pose,
        eye_side: side,
        synthetic: false,
    })
}

/// One manifest row. `pitch`/`yaw` are raw annotations; the patch at
/// `path` (relative to the manifest's directory) is already mirrored for
/// right eyes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub subject: String,
    pub head_pose: i32,
    pub pitch: f64,
    pub yaw: f64,
    pub eye_side: EyeSide,
    pub split: Split,
    #[serde(default)]
    pub synthetic: bool,
}

impl ManifestRow {
    pub fn raw_gaze(&self) -> GazeDirection {
        GazeDirection::new(self.yaw, self.pitch)
    }

    pub fn patch_gaze(&self) -> GazeDirection {
        self.eye_side.to_patch_frame(self.raw_gaze())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Self {
        Self { rows }
    }

    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.subject.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn subjects_in(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .rows
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.subject.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn filter(&self, keep: impl Fn(&ManifestRow) -> bool) -> Self {
        Self::new(self.rows.iter().filter(|r| keep(r)).cloned().collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let with_flag = self.rows.iter().any(|r| r.synthetic);
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = MANIFEST_HEADER.to_vec();
        if with_flag {
            header.push("synthetic");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.path.clone(),
                r.subject.clone(),
                r.head_pose.to_string(),
                r.pitch.to_string(),
                r.yaw.to_string(),
                r.eye_side.to_string(),
                r.split.as_str().to_string(),
            ];
            if with_flag {
                rec.push(r.synthetic.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Data(format!("cannot open manifest {}: {e}", path.display())),
            _ => Error::Csv(e),
        })?;
        let headers = r.headers()?.clone();
        for col in MANIFEST_HEADER {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Data(format!("{}: manifest lacks column {col:?}", path.display())));
            }
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(Self { rows })
    }
}

/// Assigns `n_test` subjects (chosen by `seed`) to the test split and
/// every other subject to train.
pub fn split_subjects(manifest: &DatasetManifest, n_test: usize, seed: u64) -> Result<DatasetManifest> {
    let mut subjects = manifest.subjects();
    if n_test > 0 && n_test >= subjects.len() {
        return Err(Error::invalid(format!(
            "cannot hold out {n_test} test subjects out of {}",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test: BTreeSet<String> = subjects.into_iter().take(n_test).collect();
    let mut out = manifest.clone();
    for r in &mut out.rows {
        r.split = if test.contains(&r.subject) { Split::Test } else { Split::Train };
    }
    Ok(out)
}

/// Samples sharing subject, head pose and eye side.
pub type GroupKey = (String, i32, EyeSide);

fn label_key(g: GazeDirection) -> (i64, i64) {
    ((g.yaw * 1e6).round() as i64, (g.pitch * 1e6).round() as i64)
}

/// Patches of a manifest held in memory, indexed for ground-truth lookup.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub rows: Vec<ManifestRow>,
    pub samples: Vec<EyeSample>,
    groups: BTreeMap<GroupKey, Vec<usize>>,
}

impl Dataset {
    pub fn from_parts(rows: Vec<ManifestRow>, samples: Vec<EyeSample>) -> Self {
        assert_eq!(rows.len(), samples.len(), "one sample per manifest row");
        let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            groups
                .entry((s.subject.clone(), s.head_pose, s.eye_side))
                .or_default()
                .push(i);
        }
        Self { rows, samples, groups }
    }

    /// Loads every patch of `manifest`, resolving paths against `root`.
    pub fn load(manifest: &DatasetManifest, root: &Path, scale: &GazeScale) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.rows.len());
        for r in &manifest.rows {
            let path = root.join(&r.path);
            let img = image::open(&path)
                .map_err(|e| Error::Data(format!("cannot read patch {}: {e}", path.display())))?
                .to_rgb8();
            let mut s = sample_from_patch(&img, &r.subject, r.head_pose, r.eye_side, r.patch_gaze(), scale)?;
            s.synthetic = r.synthetic;
            samples.push(s);
        }
        Ok(Self::from_parts(manifest.rows.clone(), samples))
    }

    /// Reads a manifest CSV and its patches (paths relative to the CSV).
    pub fn open(manifest_path: &Path, scale: &GazeScale) -> Result<Self> {
        let manifest = DatasetManifest::read_csv(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        Self::load(&manifest, root, scale)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::new(self.rows.clone())
    }

    pub fn subset(&self, keep: impl Fn(&ManifestRow, &EyeSample) -> bool) -> Self {
        let (rows, samples) = self
            .rows
            .iter()
            .zip(&self.samples)
            .filter(|(r, s)| keep(r, s))
            .map(|(r, s)| (r.clone(), s.clone()))
            .unzip();
        Self::from_parts(rows, samples)
    }

    pub fn group_key(&self, i: usize) -> GroupKey {
        let s = &self.samples[i];
        (s.subject.clone(), s.head_pose, s.eye_side)
    }

    /// Indices of the samples sharing sample `i`'s subject, pose and side.
    pub fn group_of(&self, i: usize) -> &[usize] {
        self.groups.get(&self.group_key(i)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Gaze labels (patch frame) available in sample `i`'s group, other
    /// than its own.
    pub fn target_candidates(&self, i: usize) -> Vec<GazeDirection> {
        let own = label_key(self.samples[i].gaze);
        let mut seen = BTreeSet::new();
        self.group_of(i)
            .iter()
            .map(|&j| self.samples[j].gaze)
            .filter(|g| label_key(*g) != own && seen.insert(label_key(*g)))
            .collect()
    }

    pub fn find_ground_truth(&self, subject: &str, head_pose: i32, side: EyeSide, d_g: GazeDirection) -> Result<usize> {
        find_ground_truth(self, subject, head_pose, side, d_g)
    }
}

/// The first sample of (subject, pose, side) whose patch-frame label equals
/// `d_g`; otherwise a not-found error naming the nearest available gaze.
pub fn find_ground_truth(
    data: &Dataset,
    subject: &str,
    head_pose: i32,
    side: EyeSide,
    d_g: GazeDirection,
) -> Result<usize> {
    let key = (subject.to_string(), head_pose, side);
    let group = data.groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
    let want = label_key(d_g);
    if let Some(&i) = group.iter().find(|&&i| label_key(data.samples[i].gaze) == want) {
        return Ok(i);
    }
    let nearest = group
        .iter()
        .map(|&i| data.samples[i].gaze)
        .filter_map(|g| angular_error(g, d_g).ok().map(|e| (e, g)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let hint = match nearest {
        Some((_, g)) => format!("nearest available gaze is yaw {} pitch {}", g.yaw, g.pitch),
        None => "no images for that subject/pose/side".into(),
    };
    Err(Error::NotFound(format!(
        "subject {subject} pose {head_pose} {side} has no image at yaw {} pitch {}; {hint}",
        d_g.yaw, d_g.pitch
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOptions {
    pub n_test: usize,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self { n_test: 6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub manifest: DatasetManifest,
    pub frames: usize,
    /// Files or eyes that were skipped, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Scans `input_dir` recursively for dataset-named frames, extracts both
/// eyes, writes the patches under `<manifest dir>/patches/` and the
/// manifest CSV to `manifest_out`.
pub fn prepare_dataset(
    input_dir: &Path,
    manifest_out: &Path,
    provider: &dyn LandmarkProvider,
    opts: PrepareOptions,
) -> Result<PrepareSummary> {
    if !input_dir.is_dir() {
        return Err(Error::Data(format!("input directory {} does not exist", input_dir.display())));
    }
    let root = manifest_out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let patch_dir = root.join("patches");
    std::fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(input_dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && is_image(e.path()))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut frames = 0;
    for path in files {
        let record = match FaceRecord::from_path(&path, provider) {
            Ok(r) => r,
            Err(e) => {
                skipped.push((path, e.to_string()));
                continue;
            }
        };
        if record.landmarks.is_empty() {
            skipped.push((path, "no landmarks".into()));
            continue;
        }
        let frame = match image::open(&path) {
            Ok(f) => f.to_rgb8(),
            Err(e) => {
                skipped.push((path, e.to_string()));
                continue;
            }
        };
        frames += 1;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string();
        for side in EyeSide::BOTH {
            let patch = match extract_patch(&frame, &record, side) {
                Ok(p) => p,
                Err(e) => {
                    skipped.push((path.clone(), format!("{side} eye: {e}")));
                    continue;
                }
            };
            let rel = format!("patches/{stem}_{side}.png");
            patch.save(root.join(&rel))?;
            rows.push(ManifestRow {
                path: rel,
                subject: record.subject.clone(),
                head_pose: record.head_pose,
                pitch: record.gaze.pitch,
                yaw: record.gaze.yaw,
                eye_side: side,
                split: Split::Train,
                synthetic: false,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no usable frames under {} ({} files skipped)",
            input_dir.display(),
            skipped.len()
        )));
    }
    let manifest = split_subjects(&DatasetManifest::new(rows), opts.n_test, opts.seed)?;
    manifest.write_csv(manifest_out)?;
    Ok(PrepareSummary {
        manifest,
        frames,
        skipped,
    })
}
