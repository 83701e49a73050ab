//! The redirection protocol: every test patch is redirected to each other
//! direction of its grid and compared with the real image at that
//! direction; results are grouped by correction angle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blur::{blurriness_tensor, LaplacianKernel};
use super::lpips::LpipsModel;
use super::{gaze_redirection_errors, CorrectionBins, GazeEstimator, Redirector};
use crate::dataio::{Dataset, EyeSide};
use crate::error::{Error, Result};
use crate::geometry::{correction_angle, GazeDirection};
use crate::tensor::Tensor;

pub const METRIC_NAMES: [&str; 4] = ["lpips", "blurriness", "angular_error", "mse"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bins: CorrectionBins,
    pub laplacian: LaplacianKernel,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: CorrectionBins::default(),
            laplacian: LaplacianKernel::Standard,
        }
    }
}

/// Metrics of one (source, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source: usize,
    pub subject: String,
    pub eye_side: EyeSide,
    pub d_r: GazeDirection,
    pub d_g: GazeDirection,
    /// Correction angle between source and target, degrees.
    pub gamma: f64,
    pub bin: usize,
    pub lpips: f64,
    /// `None` when the generated image has zero Laplacian variance.
    pub blurriness: Option<f64>,
    pub angular_error: f64,
    /// Mean squared pixel error against the ground truth, [−1, 1] units.
    pub mse: f64,
}

impl PairRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "lpips" => Some(self.lpips),
            "blurriness" => self.blurriness,
            "angular_error" => Some(self.angular_error),
            "mse" => Some(self.mse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

fn summarize<'a>(records: impl Iterator<Item = &'a PairRecord> + Clone) -> BTreeMap<String, MetricSummary> {
    METRIC_NAMES
        .iter()
        .map(|m| {
            let v: Vec<f64> = records.clone().filter_map(|r| r.metric(m)).collect();
            (m.to_string(), MetricSummary::of(&v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub redirector: String,
    pub lpips_model: String,
    pub options: EvalOptions,
    pub sources: usize,
    pub total_pairs: usize,
    /// Targets skipped because no ground-truth image exists.
    pub missing_ground_truth: usize,
    pub bins: Vec<BinSummary>,
    pub overall: BTreeMap<String, MetricSummary>,
    #[serde(skip)]
    pub pairs: Vec<PairRecord>,
}

impl EvaluationReport {
    fn assemble(
        redirector: String,
        lpips_model: String,
        options: EvalOptions,
        sources: usize,
        missing_ground_truth: usize,
        pairs: Vec<PairRecord>,
    ) -> Self {
        let b = &options.bins;
        let bins = (0..b.len())
            .map(|k| {
                let members = pairs.iter().filter(move |r| r.bin == k);
                BinSummary {
                    label: b.label(k),
                    lo: b.edges[k],
                    hi: b.edges[k + 1],
                    n: members.clone().count(),
                    metrics: summarize(members),
                }
            })
            .collect();
        Self {
            redirector,
            lpips_model,
            sources,
            total_pairs: pairs.len(),
            missing_ground_truth,
            overall: summarize(pairs.iter()),
            bins,
            options,
            pairs,
        }
    }

    /// `bin,metric,mean,std,n` rows, bins first and then `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,metric,mean,std,n\n");
        let rows = self
            .bins
            .iter()
            .map(|b| (b.label.as_str(), &b.metrics))
            .chain(std::iter::once(("all", &self.overall)));
        for (label, metrics) in rows {
            for m in METRIC_NAMES {
                let s = &metrics[m];
                let _ = writeln!(out, "\"{label}\",{m},{},{},{}", s.mean, s.std, s.n);
            }
        }
        out
    }

    /// Aligned text table of bin means.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<16}{:>7}", "gamma", "pairs");
        for m in METRIC_NAMES {
            let _ = write!(out, "{m:>15}");
        }
        out.push('\n');
        let rows = self
            .bins
            .iter()
            .map(|b| (b.label.clone(), b.n, &b.metrics))
            .chain(std::iter::once(("all".to_string(), self.total_pairs, &self.overall)));
        for (label, n, metrics) in rows {
            let _ = write!(out, "{label:<16}{n:>7}");
            for m in METRIC_NAMES {
                let _ = write!(out, "{:>15.5}", metrics[m].mean);
            }
            out.push('\n');
        }
        out
    }

    /// Per-γ means of one metric: `gamma,mean,std,n`, γ ascending.
    pub fn curve(&self, metric: &str) -> String {
        let mut groups: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
        for r in &self.pairs {
            if let Some(v) = r.metric(metric) {
                groups.entry((r.gamma * 1e6).round() as i64).or_insert((r.gamma, Vec::new())).1.push(v);
            }
        }
        let mut out = String::from("gamma,mean,std,n\n");
        for (gamma, values) in groups.values() {
            let s = MetricSummary::of(values);
            let _ = writeln!(out, "{gamma},{},{},{}", s.mean, s.std, s.n);
        }
        out
    }

    pub fn pairs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "source", "subject", "eye_side", "yaw_r", "pitch_r", "yaw_g", "pitch_g", "gamma", "bin", "lpips",
            "blurriness", "angular_error", "mse",
        ])?;
        for r in &self.pairs {
            w.write_record([
                r.source.to_string(),
                r.subject.clone(),
                r.eye_side.to_string(),
                r.d_r.yaw.to_string(),
                r.d_r.pitch.to_string(),
                r.d_g.yaw.to_string(),
                r.d_g.pitch.to_string(),
                r.gamma.to_string(),
                r.bin.to_string(),
                r.lpips.to_string(),
                r.blurriness.map(|b| b.to_string()).unwrap_or_default(),
                r.angular_error.to_string(),
                r.mse.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.csv`, `report.json`, `pairs.csv` and one
    /// `curve_<metric>.csv` per metric into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("report.csv", self.to_csv())?;
        put("report.json", serde_json::to_string_pretty(self)?)?;
        put("pairs.csv", self.pairs_csv()?)?;
        for m in METRIC_NAMES {
            put(&format!("curve_{m}.csv"), self.curve(m))?;
        }
        Ok(())
    }
}

fn per_sample_mse(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = a.shape()[0];
    let inner = a.numel() / n;
    (0..n)
        .map(|i| {
            let (x, y) = (&a.data()[i * inner..(i + 1) * inner], &b.data()[i * inner..(i + 1) * inner]);
            x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / inner as f64
        })
        .collect()
}

/// Distinct patch-frame directions present in `data`, sorted by pitch
/// then yaw.
pub fn gaze_grid(data: &Dataset) -> Vec<GazeDirection> {
    let mut g: Vec<GazeDirection> = data.samples.iter().map(|s| s.gaze).collect();
    g.sort_by(|a, b| a.pitch.total_cmp(&b.pitch).then(a.yaw.total_cmp(&b.yaw)));
    g.dedup();
    g
}

/// Redirects every sample of `data` to each other direction of the
/// dataset's gaze grid and scores the result against the real image of the
/// same subject, pose and eye at that direction. Targets without such an
/// image are counted in `missing_ground_truth` and skipped.
pub fn evaluate_model(
    redirector: &dyn Redirector,
    data: &Dataset,
    lpips: &LpipsModel,
    estimator: &dyn GazeEstimator,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    let all: Vec<usize> = (0..data.len()).collect();
    evaluate_sources(redirector, data, &all, lpips, estimator, options)
}

/// [`evaluate_model`] restricted to the given source indices; targets and
/// ground truth still come from all of `data`.
pub fn evaluate_sources(
    redirector: &dyn Redirector,
    data: &Dataset,
    sources: &[usize],
    lpips: &LpipsModel,
    estimator: &dyn GazeEstimator,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    if data.is_empty() || sources.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!("source index {bad} out of range")));
    }
    let grid = gaze_grid(data);
    let mut pairs = Vec::new();
    let mut missing = 0;
    for &i in sources {
        let s = &data.samples[i];
        let mut targets = Vec::new();
        let mut truth = Vec::new();
        for &d_g in grid.iter().filter(|g| **g != s.gaze) {
            match data.find_ground_truth(&s.subject, s.head_pose, s.eye_side, d_g) {
                Ok(j) => {
                    targets.push(d_g);
                    truth.push(data.samples[j].image.clone());
                }
                Err(Error::NotFound(_)) => missing += 1,
                Err(e) => return Err(e),
            }
        }
        if targets.is_empty() {
            continue;
        }
        let generated = redirector.redirect(data, i, &targets)?;
        let truth = Tensor::stack(&truth)?;
        if generated.shape() != truth.shape() {
            return Err(Error::invalid(format!(
                "redirector returned {:?} for {} targets",
                generated.shape(),
                targets.len()
            )));
        }
        let lp = lpips.distances(&generated, &truth)?;
        let ang = gaze_redirection_errors(&generated, &targets, estimator)?;
        let mse = per_sample_mse(&generated, &truth);
        for (k, d_g) in targets.iter().enumerate() {
            let blur = match blurriness_tensor(&generated.narrow_batch(k, 1), options.laplacian) {
                Ok(v) => Some(v),
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => return Err(e),
            };
            let gamma = correction_angle(*d_g, s.gaze)?;
            pairs.push(PairRecord {
                source: i,
                subject: s.subject.clone(),
                eye_side: s.eye_side,
                d_r: s.gaze,
                d_g: *d_g,
                gamma,
                bin: options.bins.bin_of(gamma),
                lpips: lp[k],
                blurriness: blur,
                angular_error: ang[k],
                mse: mse[k],
            });
        }
    }
    Ok(EvaluationReport::assemble(
        redirector.name(),
        lpips.source.clone(),
        options.clone(),
        sources.len(),
        missing,
        pairs,
    ))
}
