//! The alternating critic/generator optimization loop.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sampler::{assemble_batch, epoch_order, sample_training_batch, TrainingBatch};
use super::{derive_seed, TrainConfig};
use crate::autograd::{self, Var};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    gaze_loss_d, gaze_loss_g, gradient_penalty, l1_loss, penalty_weights, perceptual_loss, DiscriminatorTerms,
    GeneratorTerms, LossReport,
};
use crate::models::{critic_scalar, Checkpoint, Discriminator, Generator, PerceptualBackbone, GAN_CHECKPOINT_KIND};
use crate::nn::{Adam, ParamSet};
use crate::tensor::Tensor;

const STREAM_CRITIC: u64 = 1;
const STREAM_PENALTY: u64 = 2;
const STREAM_ORDER: u64 = 3;
const STREAM_TARGET: u64 = 4;
const STREAM_GEN_INIT: u64 = 5;
const STREAM_DISC_INIT: u64 = 6;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const NAN_SNAPSHOT: &str = "nan_snapshot.ckpt";

/// One line of the training log, written after each generator update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Generator updates completed, counting this one.
    pub step: u64,
    /// 0-based epoch the update belongs to.
    pub epoch: u64,
    pub lr: f64,
    pub critic_updates: u64,
    /// Critic terms averaged over this step's critic updates.
    #[serde(flatten)]
    pub losses: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub global_step: u64,
    pub critic_updates: u64,
    pub epochs_completed: u64,
    pub final_checkpoint: Option<PathBuf>,
}

/// Training state: networks, optimizer moments and counters. Every random
/// draw is derived from `(seed, counters)`, so this is all a resume needs.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub perceptual: PerceptualBackbone,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub data: Dataset,
    pub global_step: u64,
    pub critic_updates: u64,
    pub log: Vec<StepRecord>,
    run_dir: Option<PathBuf>,
}

fn finite_grads(grads: &[Tensor]) -> bool {
    grads.iter().all(Tensor::all_finite)
}

impl Trainer {
    /// Fresh networks for `config`, training on every sample of `data`.
    pub fn new(config: TrainConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        let steps = data.len() / config.batch_size;
        if steps == 0 {
            return Err(Error::Data(format!(
                "{} training samples cannot fill one batch of {}",
                data.len(),
                config.batch_size
            )));
        }
        let generator = Generator::new(config.model.generator(), derive_seed(config.seed, &[STREAM_GEN_INIT]));
        let discriminator =
            Discriminator::new(config.model.discriminator(), derive_seed(config.seed, &[STREAM_DISC_INIT]));
        let perceptual = config.perceptual.build()?;
        let opt_g = Adam::new(&generator.params, config.lr, config.beta1, config.beta2);
        let opt_d = Adam::new(&discriminator.params, config.lr, config.beta1, config.beta2);
        Ok(Self {
            config,
            generator,
            discriminator,
            perceptual,
            opt_g,
            opt_d,
            data,
            global_step: 0,
            critic_updates: 0,
            log: Vec::new(),
            run_dir: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    /// The architecture and seed of `config` must match the checkpoint;
    /// schedule keys such as `epochs` or `max_steps` may differ.
    pub fn resume(config: TrainConfig, data: Dataset, path: &Path) -> Result<Self> {
        let mut t = Self::new(config, data)?;
        let ck = Checkpoint::load_expecting(path, GAN_CHECKPOINT_KIND, &t.generator.architecture_hash())?;
        let bad = |r: String| Error::checkpoint(path, r);
        if ck.meta["discriminator_hash"].as_str() != Some(&t.discriminator.architecture_hash()) {
            return Err(bad("discriminator architecture hash mismatch".into()));
        }
        if ck.seed != t.config.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {}, config has {}",
                ck.seed, t.config.seed
            )));
        }
        t.generator.params.assign(ck.group("generator")).map_err(|e| bad(e.to_string()))?;
        t.discriminator.params.assign(ck.group("discriminator")).map_err(|e| bad(e.to_string()))?;
        t.opt_g.load_state("adam_g", |n| ck.find(n)).map_err(|e| bad(e.to_string()))?;
        t.opt_d.load_state("adam_d", |n| ck.find(n)).map_err(|e| bad(e.to_string()))?;
        t.global_step = ck.global_step;
        t.critic_updates = ck.meta["critic_updates"].as_u64().ok_or_else(|| bad("critic_updates missing".into()))?;
        Ok(t)
    }

    /// Directory receiving the log and checkpoints. An existing log is cut
    /// back to the current step so a resumed run continues it seamlessly.
    pub fn attach_run_dir(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join(LOG_FILE);
        let mut kept = Vec::new();
        if log_path.exists() {
            let f = File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&log_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StepRecord = serde_json::from_str(&line)?;
                if rec.step <= self.global_step {
                    kept.push(rec);
                }
            }
        }
        let mut f = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        for rec in &kept {
            writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&log_path, e))?;
        }
        self.log = kept;
        self.run_dir = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    /// Generator updates per epoch; the tail batch is dropped.
    pub fn steps_per_epoch(&self) -> u64 {
        (self.data.len() / self.config.batch_size) as u64
    }

    pub fn epoch(&self) -> u64 {
        self.global_step / self.steps_per_epoch()
    }

    /// Generator updates of the full schedule, capped by `max_steps`.
    pub fn total_steps(&self) -> u64 {
        let full = self.config.epochs * self.steps_per_epoch();
        match self.config.max_steps {
            0 => full,
            m => m.min(full),
        }
    }

    /// Critic batch `k` of the current step.
    pub fn critic_batch(&self, k: usize) -> Result<TrainingBatch> {
        let seed = derive_seed(self.config.seed, &[STREAM_CRITIC, self.global_step, k as u64]);
        sample_training_batch(&self.data, seed, self.config.batch_size)
    }

    /// Generator batch of the current step: the next slice of this epoch's
    /// permutation of the sources.
    pub fn generator_batch(&self) -> Result<TrainingBatch> {
        let spe = self.steps_per_epoch();
        let order = epoch_order(self.data.len(), derive_seed(self.config.seed, &[STREAM_ORDER, self.epoch()]));
        let b = self.config.batch_size;
        let pos = (self.global_step % spe) as usize;
        let seed = derive_seed(self.config.seed, &[STREAM_TARGET, self.global_step]);
        assemble_batch(&self.data, &order[pos * b..(pos + 1) * b], seed)
    }

    /// One critic update on `batch`. Fakes reach only the critic head;
    /// the gaze head sees real images exclusively.
    pub fn critic_update(&mut self, batch: &TrainingBatch, penalty_seed: u64) -> Result<LossReport> {
        let x_g = self.generator.generate(&batch.x_r, &batch.d_g)?;
        let w = self.config.loss;
        let p = self.discriminator.params.bind(true);
        let disc = &self.discriminator;
        let (map_r, gaze_r) = disc.forward(&p, &Var::constant(batch.x_r.clone()));
        let critic_g = disc.critic(&p, &Var::constant(x_g.clone()));
        let eps = penalty_weights(batch.len(), penalty_seed);
        let terms = DiscriminatorTerms {
            adv_d: critic_g.mean().sub(&critic_scalar(&map_r).mean()),
            gp: gradient_penalty(&|x: &Var| disc.critic(&p, x), &batch.x_r, &x_g, &eps)?,
            gaze_d: gaze_loss_d(&batch.d_r, &gaze_r)?,
        };
        let total = terms.total(&w);
        let mut report = LossReport::default();
        terms.fill(&mut report, &total);
        let grads = autograd::backward(&total, &p.refs());
        self.guard("critic", &report, &grads)?;
        self.opt_d.step(&mut self.discriminator.params, &grads);
        self.critic_updates += 1;
        Ok(report)
    }

    /// One generator update on `batch`, with the critic frozen.
    pub fn generator_update(&mut self, batch: &TrainingBatch) -> Result<LossReport> {
        let w = self.config.loss;
        let gp = self.generator.params.bind(true);
        let dp = self.discriminator.params.bind(false);
        let gen = &self.generator;
        let x_r = Var::constant(batch.x_r.clone());
        let x_g = gen.forward(&gp, &x_r, &batch.d_g);
        let (map_g, gaze_g) = self.discriminator.forward(&dp, &x_g);
        let (content, style) = perceptual_loss(&self.perceptual, &x_g, &Var::constant(batch.x_t.clone()))?;
        let terms = GeneratorTerms {
            adv_g: critic_scalar(&map_g).mean().scale(-1.0),
            content,
            style,
            gaze_g: gaze_loss_g(&batch.d_g, &gaze_g)?,
            rec: l1_loss(&x_r, &gen.forward(&gp, &x_g, &batch.d_r))?,
        };
        let total = terms.total(&w);
        let mut report = LossReport::default();
        terms.fill(&mut report, &total);
        let grads = autograd::backward(&total, &gp.refs());
        self.guard("generator", &report, &grads)?;
        self.opt_g.step(&mut self.generator.params, &grads);
        Ok(report)
    }

    fn guard(&self, which: &str, report: &LossReport, grads: &[Tensor]) -> Result<()> {
        if report.is_finite() && finite_grads(grads) {
            return Ok(());
        }
        let mut msg = format!(
            "non-finite {which} loss or gradient at step {} (losses {:?})",
            self.global_step, report
        );
        if let Some(dir) = &self.run_dir {
            let path = dir.join(NAN_SNAPSHOT);
            match self.save_checkpoint(&path) {
                Ok(()) => msg.push_str(&format!("; snapshot written to {}", path.display())),
                Err(e) => msg.push_str(&format!("; snapshot failed: {e}")),
            }
        }
        Err(Error::Numeric(msg))
    }

    /// `n_critic` critic updates on fresh batches, then one generator update.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let epoch = self.epoch();
        let lr = self.config.learning_rate(epoch);
        self.opt_g.lr = lr;
        self.opt_d.lr = lr;
        let n_critic = self.config.n_critic;
        let mut d_sum = LossReport::default();
        for k in 0..n_critic {
            let batch = self.critic_batch(k)?;
            let seed = derive_seed(self.config.seed, &[STREAM_PENALTY, self.global_step, k as u64]);
            let r = self.critic_update(&batch, seed)?;
            d_sum.adv_d += r.adv_d;
            d_sum.gp += r.gp;
            d_sum.gaze_d += r.gaze_d;
            d_sum.total_d += r.total_d;
        }
        let batch = self.generator_batch()?;
        let mut losses = self.generator_update(&batch)?;
        let k = n_critic as f64;
        losses.adv_d = d_sum.adv_d / k;
        losses.gp = d_sum.gp / k;
        losses.gaze_d = d_sum.gaze_d / k;
        losses.total_d = d_sum.total_d / k;
        self.global_step += 1;
        let rec = StepRecord {
            step: self.global_step,
            epoch,
            lr,
            critic_updates: self.critic_updates,
            losses,
        };
        self.append_log(&rec)?;
        Ok(rec)
    }

    fn append_log(&mut self, rec: &StepRecord) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(LOG_FILE);
            let mut f = OpenOptions::new()
                .append(true)
                .create(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&path, e))?;
        }
        self.log.push(*rec);
        Ok(())
    }

    /// Runs the remainder of the current epoch (or up to `max_steps`).
    pub fn train_epoch(&mut self) -> Result<Vec<StepRecord>> {
        let end = ((self.epoch() + 1) * self.steps_per_epoch()).min(self.total_steps());
        let mut out = Vec::new();
        while self.global_step < end {
            out.push(self.train_step()?);
        }
        if self.global_step % self.steps_per_epoch() == 0 {
            self.epoch_checkpoints()?;
        }
        Ok(out)
    }

    fn epoch_checkpoints(&self) -> Result<()> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        let done = self.epoch();
        if done % self.config.checkpoint_every == 0 {
            self.save_checkpoint(&dir.join(CHECKPOINT_DIR).join(format!("epoch_{done:04}.ckpt")))?;
        }
        self.save_checkpoint(&dir.join(CHECKPOINT_DIR).join("latest.ckpt"))
    }

    /// Trains until the schedule (or `max_steps`) is exhausted and writes
    /// `final.ckpt` when a run directory is attached.
    pub fn run(&mut self) -> Result<TrainSummary> {
        while self.global_step < self.total_steps() {
            let recs = self.train_epoch()?;
            if let Some(r) = recs.last() {
                log::info!(
                    "step {} epoch {} lr {:.3e} rec {:.4} content {:.4} gaze_g {:.4} adv_d {:.4}",
                    r.step, r.epoch, r.lr, r.losses.rec, r.losses.content, r.losses.gaze_g, r.losses.adv_d
                );
            }
        }
        let final_checkpoint = match &self.run_dir {
            Some(dir) => {
                let p = dir.join(CHECKPOINT_DIR).join("final.ckpt");
                self.save_checkpoint(&p)?;
                self.save_checkpoint(&dir.join(CHECKPOINT_DIR).join("latest.ckpt"))?;
                Some(p)
            }
            None => None,
        };
        Ok(TrainSummary {
            global_step: self.global_step,
            critic_updates: self.critic_updates,
            epochs_completed: self.epoch(),
            final_checkpoint,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(GAN_CHECKPOINT_KIND, self.generator.architecture_hash(), self.config.seed);
        ck.epoch = self.epoch();
        ck.global_step = self.global_step;
        ck.meta = serde_json::json!({
            "generator": self.generator.config,
            "generator_hash": self.generator.architecture_hash(),
            "discriminator": self.discriminator.config,
            "discriminator_hash": self.discriminator.architecture_hash(),
            "gaze_scale": self.config.data.scale(),
            "critic_updates": self.critic_updates,
            "config": self.config,
        });
        ck.push_group("generator", self.generator.params.entries().to_vec());
        ck.push_group("discriminator", self.discriminator.params.entries().to_vec());
        ck.tensors.extend(self.opt_g.state_tensors("adam_g"));
        ck.tensors.extend(self.opt_d.state_tensors("adam_d"));
        ck
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }
}

/// Hash of the parameters in `params` whose names start with `prefix`.
pub fn group_hash(params: &ParamSet, prefix: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, t) in params.iter().filter(|(n, _)| n.starts_with(prefix)) {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
