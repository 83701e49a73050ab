//! Estimator training-set augmentation with redirected images.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::dataio::crop::tensor_to_image;
use crate::dataio::{Dataset, EyeSample, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::geometry::{angular_error, GazeDirection, GazeScale, COLUMBIA_YAWS};
use crate::metrics::{MetricSummary, Redirector};
use crate::tensor::Tensor;
use crate::training::{train_estimator, EstimatorConfig, TrainedEstimator};

pub const RAW_MANIFEST: &str = "manifest_raw.csv";
pub const AUGMENTED_MANIFEST: &str = "manifest_augmented.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    /// Raw training images are the real images at this pitch.
    pub raw_pitch: f64,
    /// Head poses admitted to the raw and evaluation sets.
    pub head_poses: Vec<i32>,
    /// Pitches synthesized for the source subjects; also the held-out
    /// evaluation pitches.
    pub synth_pitches: Vec<f64>,
    pub synth_yaws: Vec<f64>,
    /// Subjects whose raw images are redirected; empty means every test-split
    /// subject.
    pub synth_subjects: Vec<String>,
    pub raw_estimator: EstimatorConfig,
    pub augmented_estimator: EstimatorConfig,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            raw_pitch: 10.0,
            head_poses: vec![0],
            synth_pitches: vec![-10.0, 0.0],
            synth_yaws: COLUMBIA_YAWS.to_vec(),
            synth_subjects: Vec::new(),
            raw_estimator: EstimatorConfig {
                epochs: 200,
                ..EstimatorConfig::default()
            },
            augmented_estimator: EstimatorConfig {
                epochs: 100,
                ..EstimatorConfig::default()
            },
        }
    }
}

impl FlatConfig for AugmentationSpec {}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.synth_pitches.is_empty() || self.synth_yaws.is_empty() {
            return Err(Error::Config("augmentation needs at least one synthesis pitch and yaw".into()));
        }
        if self.synth_pitches.contains(&self.raw_pitch) {
            return Err(Error::Config(format!("synthesis pitches {:?} include the raw pitch", self.synth_pitches)));
        }
        self.raw_estimator.validate()?;
        self.augmented_estimator.validate()
    }

    /// Raw-frame synthesis targets, pitch-major.
    pub fn targets(&self) -> Vec<GazeDirection> {
        self.synth_pitches
            .iter()
            .flat_map(|&p| self.synth_yaws.iter().map(move |&y| GazeDirection::new(y, p)))
            .collect()
    }

    pub fn source_subjects(&self, data: &Dataset) -> Vec<String> {
        if self.synth_subjects.is_empty() {
            data.manifest().subjects_in(Split::Test)
        } else {
            self.synth_subjects.clone()
        }
    }
}

pub struct AugmentedSets {
    pub raw: Dataset,
    pub augmented: Dataset,
}

impl AugmentedSets {
    pub fn synthetic_count(&self) -> usize {
        self.augmented.rows.iter().filter(|r| r.synthetic).count()
    }

    /// Writes every patch as PNG under `dir` with both manifests alongside.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        for (row, s) in self.augmented.rows.iter().zip(&self.augmented.samples) {
            let p = dir.join(&row.path);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            tensor_to_image(&s.image)?.save(&p)?;
        }
        let raw = dir.join(RAW_MANIFEST);
        let aug = dir.join(AUGMENTED_MANIFEST);
        self.raw.manifest().write_csv(&raw)?;
        self.augmented.manifest().write_csv(&aug)?;
        Ok((raw, aug))
    }
}

fn is_raw(row: &ManifestRow, spec: &AugmentationSpec) -> bool {
    !row.synthetic && row.pitch == spec.raw_pitch && spec.head_poses.contains(&row.head_pose)
}

fn label(v: f64) -> String {
    format!("{v}").replace('-', "m")
}

/// The raw set (real images at the raw pitch) and the raw set extended with
/// one redirected image per source image of the synthesis subjects and per
/// target direction other than the source's own.
pub fn build_augmented_dataset(
    redirector: &dyn Redirector,
    data: &Dataset,
    spec: &AugmentationSpec,
    scale: &GazeScale,
) -> Result<AugmentedSets> {
    spec.validate()?;
    let raw = data.subset(|r, _| is_raw(r, spec));
    if raw.is_empty() {
        return Err(Error::Data(format!("no real images at pitch {}", spec.raw_pitch)));
    }
    let subjects: BTreeSet<String> = spec.source_subjects(data).into_iter().collect();
    let targets = spec.targets();
    let mut rows = raw.rows.clone();
    let mut samples = raw.samples.clone();
    for (row, s) in raw.rows.iter().zip(&raw.samples) {
        if !subjects.contains(&row.subject) {
            continue;
        }
        let wanted: Vec<GazeDirection> = targets.iter().copied().filter(|t| *t != row.raw_gaze()).collect();
        let patch_targets: Vec<GazeDirection> = wanted.iter().map(|t| row.eye_side.to_patch_frame(*t)).collect();
        let source = data
            .rows
            .iter()
            .position(|r| r == row)
            .ok_or_else(|| Error::Data(format!("raw row {} missing from the dataset", row.path)))?;
        let images = redirector.redirect(data, source, &patch_targets)?;
        let stem = Path::new(&row.path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("patch")
            .to_string();
        for (k, (t, pt)) in wanted.iter().zip(&patch_targets).enumerate() {
            rows.push(ManifestRow {
                path: format!("synthetic/{stem}_p{}_y{}.png", label(t.pitch), label(t.yaw)),
                subject: row.subject.clone(),
                head_pose: row.head_pose,
                pitch: t.pitch,
                yaw: t.yaw,
                eye_side: row.eye_side,
                split: row.split,
                synthetic: true,
            });
            samples.push(EyeSample {
                image: images.narrow_batch(k, 1).reshape(&[3, 64, 64]),
                gaze: *pt,
                gaze_n: scale.normalize(*pt)?,
                subject: s.subject.clone(),
                head_pose: s.head_pose,
                eye_side: s.eye_side,
                synthetic: true,
            });
        }
    }
    Ok(AugmentedSets {
        raw,
        augmented: Dataset::from_parts(rows, samples),
    })
}

/// Real images of training-split subjects at the held-out pitches.
pub fn evaluation_set(data: &Dataset, spec: &AugmentationSpec) -> Dataset {
    data.subset(|r, _| {
        !r.synthetic
            && r.split == Split::Train
            && spec.head_poses.contains(&r.head_pose)
            && spec.synth_pitches.contains(&r.pitch)
    })
}

/// Neither training set holds a real image at a held-out pitch, and the raw
/// set holds no synthetic image.
pub fn check_no_leakage(sets: &AugmentedSets, spec: &AugmentationSpec) -> Result<()> {
    for (name, d) in [("raw", &sets.raw), ("augmented", &sets.augmented)] {
        if let Some(r) = d.rows.iter().find(|r| !r.synthetic && spec.synth_pitches.contains(&r.pitch)) {
            return Err(Error::Data(format!("{name} set holds real held-out image {}", r.path)));
        }
    }
    if sets.raw.rows.iter().any(|r| r.synthetic) {
        return Err(Error::Data("raw set holds synthetic images".into()));
    }
    Ok(())
}

/// Angular errors (degrees) of `est` on every sample of `data`.
pub fn estimator_errors(est: &TrainedEstimator, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(32) {
        let x = Tensor::stack(&chunk.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        for (s, e) in chunk.iter().zip(est.estimate(&x)?) {
            out.push(angular_error(s.gaze, e)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRow {
    pub dataset: String,
    pub train_images: usize,
    pub synthetic_images: usize,
    /// One summary per evaluation set, in table column order.
    pub errors: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationTable {
    pub eval_sets: Vec<String>,
    pub rows: Vec<AugmentationRow>,
}

impl AugmentationTable {
    pub fn row(&self, dataset: &str) -> Option<&AugmentationRow> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }

    /// Mean error of `dataset` on the first evaluation set.
    pub fn mean_error(&self, dataset: &str) -> Option<f64> {
        self.row(dataset).and_then(|r| r.errors.first()).map(|m| m.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,train_images,synthetic_images");
        for e in &self.eval_sets {
            out.push_str(&format!(",{e}_error_deg,{e}_error_std,{e}_n"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.dataset, r.train_images, r.synthetic_images));
            for m in &r.errors {
                out.push_str(&format!(",{},{},{}", m.mean, m.std, m.n));
            }
            out.push('\n');
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12} {:>8} {:>8}", "dataset", "images", "synth");
        for e in &self.eval_sets {
            out.push_str(&format!(" {:>14}", format!("{e} (deg)")));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<12} {:>8} {:>8}", r.dataset, r.train_images, r.synthetic_images));
            for m in &r.errors {
                out.push_str(&format!(" {:>14}", format!("{:.2} ± {:.2}", m.mean, m.std)));
            }
            out.push('\n');
        }
        out
    }
}

pub struct AugmentationOutcome {
    pub table: AugmentationTable,
    pub raw_estimator: TrainedEstimator,
    pub augmented_estimator: TrainedEstimator,
}

/// Trains one estimator per training set and scores both on every named
/// evaluation set. The first set is the primary held-out-pitch protocol.
pub fn run_augmentation_study(
    sets: &AugmentedSets,
    eval_sets: &[(&str, &Dataset)],
    spec: &AugmentationSpec,
    scale: GazeScale,
) -> Result<AugmentationOutcome> {
    spec.validate()?;
    check_no_leakage(sets, spec)?;
    if eval_sets.is_empty() || eval_sets.iter().any(|(_, d)| d.is_empty()) {
        return Err(Error::Data("augmentation study needs non-empty evaluation sets".into()));
    }
    let raw_estimator = train_estimator(&spec.raw_estimator, &sets.raw, scale)?;
    let augmented_estimator = train_estimator(&spec.augmented_estimator, &sets.augmented, scale)?;
    let mut rows = Vec::new();
    for (name, train, est) in [
        ("raw", &sets.raw, &raw_estimator),
        ("augmented", &sets.augmented, &augmented_estimator),
    ] {
        let errors = eval_sets
            .iter()
            .map(|(_, d)| Ok(MetricSummary::of(&estimator_errors(est, d)?)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AugmentationRow {
            dataset: name.into(),
            train_images: train.len(),
            synthetic_images: train.rows.iter().filter(|r| r.synthetic).count(),
            errors,
        });
    }
    Ok(AugmentationOutcome {
        table: AugmentationTable {
            eval_sets: eval_sets.iter().map(|(n, _)| n.to_string()).collect(),
            rows,
        },
        raw_estimator,
        augmented_estimator,
    })
}

/// Opens a preprocessed external evaluation manifest (for example MPIIGaze
/// patches prepared elsewhere) laid out like a gazelab manifest.
pub fn open_external_eval_set(manifest: &Path, scale: &GazeScale) -> Result<Dataset> {
    let d = Dataset::open(manifest, scale)?;
    if d.is_empty() {
        return Err(Error::Data(format!("{} lists no images", manifest.display())));
    }
    Ok(d)
}
