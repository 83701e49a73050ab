//! Loss-term ablation: identical runs that each drop one generator term.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{evaluate_sources, EvalOptions, EvaluationReport, GazeEstimator, LpipsModel};
use crate::training::{derive_seed, group_hash, GanRedirector, TrainConfig, TrainSummary, Trainer, TrainingBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoRec,
    NoGaze,
    NoP,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoRec,
        AblationVariant::NoGaze,
        AblationVariant::NoP,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoRec => "no_rec",
            AblationVariant::NoGaze => "no_gaze",
            AblationVariant::NoP => "no_p",
        }
    }

    /// `w` with this variant's term weight set to zero.
    pub fn apply(&self, w: &LossWeights) -> LossWeights {
        let mut w = *w;
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoRec => w.lambda_rec = 0.0,
            AblationVariant::NoGaze => w.lambda_gaze = 0.0,
            AblationVariant::NoP => w.lambda_p = 0.0,
        }
        w
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| Error::Parse {
            input: s.into(),
            expected: "full|no_rec|no_gaze|no_p".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub variant: AblationVariant,
    pub base: TrainConfig,
}

impl AblationSpec {
    pub fn config(&self) -> TrainConfig {
        let mut c = self.base.clone();
        c.loss = self.variant.apply(&self.base.loss);
        c
    }
}

/// The metric backends shared by every arm.
pub struct AblationEval<'a> {
    pub lpips: &'a LpipsModel,
    pub estimator: &'a dyn GazeEstimator,
    pub options: &'a EvalOptions,
}

pub struct AblationArm {
    pub variant: AblationVariant,
    pub config: TrainConfig,
    /// Hash of the generator and discriminator parameters before training.
    pub initial_params_hash: String,
    /// Hash of the first generator and critic batches.
    pub first_batch_hash: String,
    pub summary: TrainSummary,
    pub report: EvaluationReport,
    /// Mean L1 between each test source and its round trip through a target.
    pub cycle_l1: f64,
}

pub struct AblationOutcome {
    pub arms: Vec<AblationArm>,
}

impl AblationOutcome {
    pub fn arm(&self, v: AblationVariant) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.variant == v)
    }

    pub fn reports(&self) -> Vec<(AblationVariant, &EvaluationReport)> {
        self.arms.iter().map(|a| (a.variant, &a.report)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,lpips,blurriness,angular_error,mse,cycle_l1\n");
        for a in &self.arms {
            let m = |k: &str| a.report.overall.get(k).map(|s| s.mean).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.variant,
                m("lpips"),
                m("blurriness"),
                m("angular_error"),
                m("mse"),
                a.cycle_l1
            ));
        }
        out
    }
}

pub fn batch_hash(batches: &[&TrainingBatch]) -> String {
    let mut h = Sha256::new();
    for b in batches {
        for (&i, &t) in b.indices.iter().zip(&b.target_indices) {
            h.update((i as u64).to_le_bytes());
            h.update((t as u64).to_le_bytes());
        }
        h.update(b"|");
    }
    hex::encode(h.finalize())
}

/// Mean `|x - G(G(x, d_g), d_r)|` over `sources`, with one seeded target per
/// source drawn from its group's other directions.
pub fn cycle_l1(redirector: &GanRedirector, data: &Dataset, sources: &[usize], seed: u64) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Data("no cycle sources".into()));
    }
    let mut total = 0.0;
    for &i in sources {
        let cands = data.target_candidates(i);
        if cands.is_empty() {
            return Err(Error::Data(format!("sample {i} has no other gaze direction")));
        }
        let d_g = cands[(derive_seed(seed, &[i as u64]) % cands.len() as u64) as usize];
        let s = &data.samples[i];
        let x = s.image.reshape(&[1, 3, 64, 64]);
        let there = redirector.redirect_batch(&x, &[d_g])?;
        let back = redirector.redirect_batch(&there, &[s.gaze])?;
        total += back.sub(&x).map(f64::abs).mean();
    }
    Ok(total / sources.len() as f64)
}

/// Trains one run per variant from the same seed and data order, then
/// evaluates each on `test`. Arms whose initial parameters or first
/// batches differ abort the study.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[AblationVariant],
    train: &Dataset,
    test: &Dataset,
    eval: &AblationEval<'_>,
    out_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants selected".into()));
    }
    let sources: Vec<usize> = (0..test.len()).collect();
    let mut arms: Vec<AblationArm> = Vec::new();
    for &variant in variants {
        let config = AblationSpec { variant, base: base.clone() }.config();
        let mut trainer = Trainer::new(config.clone(), train.clone())?;
        let initial_params_hash = format!(
            "{}:{}",
            group_hash(&trainer.generator.params, ""),
            group_hash(&trainer.discriminator.params, "")
        );
        let first_batch_hash = batch_hash(&[&trainer.generator_batch()?, &trainer.critic_batch(0)?]);
        if let Some(first) = arms.first() {
            if first.initial_params_hash != initial_params_hash || first.first_batch_hash != first_batch_hash {
                return Err(Error::Config(format!(
                    "ablation arm {variant} does not share initialization and data order with {}",
                    first.variant
                )));
            }
        }
        let arm_dir = out_dir.map(|d| d.join(variant.as_str()));
        if let Some(d) = &arm_dir {
            trainer.attach_run_dir(d)?;
        }
        let summary = trainer.run()?;
        let redirector = GanRedirector {
            generator: trainer.generator,
            scale: config.data.scale(),
        };
        let report = evaluate_sources(&redirector, test, &sources, eval.lpips, eval.estimator, eval.options)?;
        let cycle = cycle_l1(&redirector, test, &sources, config.seed)?;
        if let Some(d) = &arm_dir {
            report.write(&d.join("eval"))?;
        }
        log::info!("ablation {variant}: cycle L1 {cycle:.4}");
        arms.push(AblationArm {
            variant,
            config,
            initial_params_hash,
            first_batch_hash,
            summary,
            report,
            cycle_l1: cycle,
        });
    }
    let outcome = AblationOutcome { arms };
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let p = d.join("ablation.csv");
        fs::write(&p, outcome.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(outcome)
}
