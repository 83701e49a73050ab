//! Command-line workflows. Every command takes a flat `key = value` config
//! file (`--config`) and dotted overrides (`--set key=value`); convenience
//! flags are translated into overrides. The effective config is echoed to
//! the run directory so a run can be repeated from it alone.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::dataio::landmarks::{CommandLandmarks, LandmarkProvider, SidecarLandmarks};
use crate::dataio::synth::{write_synthetic_dataset, SynthSpec};
use crate::dataio::{prepare_dataset, Dataset, PrepareOptions, Split};
use crate::error::{Error, Result};
use crate::experiments::{
    build_augmented_dataset, evaluation_set, open_external_eval_set, run_ablation, run_augmentation_study,
    AblationEval, AblationVariant, AugmentationSpec,
};
use crate::geometry::{columbia_grid, GazeDirection, GazeScale};
use crate::metrics::{
    evaluate_model, AlexFeatures, CorrectionBins, EvalOptions, GroundTruthRedirector, IdentityFeatures,
    IdentityRedirector, LaplacianKernel, LpipsBackbone, LpipsModel, Redirector,
};
use crate::models::PerceptualBackbone;
use crate::training::{
    load_estimator, load_patch, save_estimator, train_estimator, EstimatorConfig, GanRedirector, TrainConfig, Trainer,
};

pub const DATA_DIR_ENV: &str = "GAZELAB_DATA_DIR";
pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";

#[derive(Debug, Parser)]
#[command(name = "gazelab", version, about = "Gaze redirection training, evaluation and experiments")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset in the Columbia file layout.
    SynthData(SynthArgs),
    /// Extract eye patches and write a manifest with a subject split.
    PrepareData(PrepareArgs),
    /// Train the redirection GAN.
    Train(TrainArgs),
    /// Train a gaze estimator on real patches.
    TrainEstimator(EstimatorArgs),
    /// Redirect one patch, or render a gaze grid.
    Redirect(RedirectArgs),
    /// Run the binned evaluation protocol on a test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate loss-term ablations.
    Ablate(AblateArgs),
    /// Compare estimators trained with and without redirected images.
    Augment(AugmentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent of the timestamped run directory [default: $GAZELAB_DATA_DIR/runs or ./runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub subjects: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated head poses.
    #[arg(long, default_value = "0", value_delimiter = ',', allow_hyphen_values = true)]
    pub head_poses: Vec<i32>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Frames directory [default: $GAZELAB_DATA_DIR/raw].
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    /// Manifest CSV; patches go to `patches/` beside it [default: $GAZELAB_DATA_DIR/manifest.csv].
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// External landmark detector; sidecar `.landmarks.json` files otherwise.
    #[arg(long)]
    pub landmarks_cmd: Option<PathBuf>,
    #[arg(long = "landmarks-arg", allow_hyphen_values = true)]
    pub landmarks_args: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Sets `data.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Continue from a checkpoint written by an identical config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RedirectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 64×64 patch in the stored (left-eye) frame.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, allow_hyphen_values = true, required_unless_present = "grid")]
    pub yaw: Option<f64>,
    #[arg(long, allow_hyphen_values = true, required_unless_present = "grid")]
    pub pitch: Option<f64>,
    /// Render the 3×7 grid instead of one target.
    #[arg(long, conflicts_with_all = ["yaw", "pitch"])]
    pub grid: bool,
    /// Output PNG [default: <run dir>/redirect.png].
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Comma-separated bin edges, e.g. 4.9,15,25,35.9.
    #[arg(long)]
    pub bins: Option<String>,
    /// `standard` or `corner`.
    #[arg(long)]
    pub laplacian: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Comma-separated variants (full, no_rec, no_gaze, no_p).
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Augmentation spec file; applied before `--config`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpipsConfig {
    /// `identity`, `alex` or `vgg`.
    pub backbone: String,
    /// Width divisor for random backbones.
    pub width_div: usize,
    pub seed: u64,
    /// Pretrained backbone weights (safetensors); random when empty.
    pub backbone_weights: String,
    /// Calibrated linear weights (safetensors); unit weights when empty.
    pub linear_weights: String,
}

impl Default for LpipsConfig {
    fn default() -> Self {
        Self {
            backbone: "identity".into(),
            width_div: 1,
            seed: 0,
            backbone_weights: String::new(),
            linear_weights: String::new(),
        }
    }
}

impl LpipsConfig {
    pub fn build(&self) -> Result<LpipsModel> {
        let pretrained = (!self.backbone_weights.is_empty()).then(|| PathBuf::from(&self.backbone_weights));
        let backbone: Box<dyn LpipsBackbone> = match (self.backbone.as_str(), &pretrained) {
            ("identity", _) => Box::new(IdentityFeatures { channels: 3 }),
            ("alex", Some(p)) => Box::new(AlexFeatures::from_safetensors(p)?),
            ("alex", None) => Box::new(AlexFeatures::random(self.width_div, self.seed)),
            ("vgg", Some(p)) => Box::new(PerceptualBackbone::from_safetensors(p)?),
            ("vgg", None) => Box::new(PerceptualBackbone::random(self.width_div, self.seed)),
            (other, _) => return Err(Error::Config(format!("unknown lpips.backbone {other:?}"))),
        };
        if self.linear_weights.is_empty() {
            Ok(LpipsModel::unit(backbone))
        } else {
            LpipsModel::with_linear_file(backbone, Path::new(&self.linear_weights))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub estimator: String,
    pub bins: Vec<f64>,
    /// `standard` or `corner`.
    pub laplacian: String,
    pub lpips: LpipsConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            estimator: String::new(),
            bins: CorrectionBins::default().edges,
            laplacian: "standard".into(),
            lpips: LpipsConfig::default(),
        }
    }
}

impl EvalSettings {
    pub fn options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            bins: CorrectionBins::new(self.bins.clone())?,
            laplacian: self.laplacian.parse::<LaplacianKernel>().map_err(as_config)?,
        })
    }

    fn apply_flags(&mut self, estimator: &Option<PathBuf>, bins: &Option<String>, laplacian: &Option<String>) -> Result<()> {
        if let Some(e) = estimator {
            self.estimator = path_str(e);
        }
        if let Some(b) = bins {
            self.bins = b.parse::<CorrectionBins>().map_err(as_config)?.edges;
        }
        if let Some(l) = laplacian {
            self.laplacian = l.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// `generator`, `ground_truth` or `identity`.
    pub redirector: String,
    pub checkpoint: String,
    pub manifest: String,
    /// `test`, `train` or `all`.
    pub split: String,
    pub eval: EvalSettings,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            redirector: "generator".into(),
            checkpoint: String::new(),
            manifest: String::new(),
            split: "test".into(),
            eval: EvalSettings::default(),
        }
    }
}

impl FlatConfig for EvaluateConfig {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorRunConfig {
    pub manifest: String,
    pub split: String,
    pub head_poses: Vec<i32>,
    pub yaw_max: f64,
    pub pitch_max: f64,
    pub estimator: EstimatorConfig,
}

impl Default for EstimatorRunConfig {
    fn default() -> Self {
        let s = GazeScale::default();
        Self {
            manifest: String::new(),
            split: "all".into(),
            head_poses: vec![0],
            yaw_max: s.yaw_max,
            pitch_max: s.pitch_max,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl FlatConfig for EstimatorRunConfig {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub variants: Vec<String>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.iter().map(|v| v.as_str().to_string()).collect(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl FlatConfig for AblateConfig {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub checkpoint: String,
    pub manifest: String,
    /// Optional preprocessed external evaluation manifest (e.g. MPIIGaze).
    pub external_manifest: String,
    pub external_name: String,
    pub study: AugmentationSpec,
}

impl FlatConfig for AugmentConfig {}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parse { input, expected } => Error::Config(format!("cannot read {input:?}: expected {expected}")),
        other => other,
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// `configured`, else `$GAZELAB_DATA_DIR/manifest.csv`.
pub fn resolve_manifest(configured: &str) -> Result<PathBuf> {
    if !configured.is_empty() {
        return Ok(PathBuf::from(configured));
    }
    data_dir()
        .map(|d| d.join("manifest.csv"))
        .ok_or_else(|| Error::Config(format!("no manifest given and {DATA_DIR_ENV} is not set")))
}

fn load_config<C: FlatConfig + Default>(args: &ConfigArgs, pre: Option<&Path>) -> Result<C> {
    let mut c = C::default();
    if let Some(p) = pre {
        c.apply_file(p)?;
    }
    if let Some(p) = &args.config {
        c.apply_file(p)?;
    }
    for o in &args.overrides {
        c.apply_override(o)?;
    }
    Ok(c)
}

/// Creates `<parent>/<command>-<timestamp>[-k]` and returns it.
pub fn create_run_dir(out: Option<&Path>, command: &str) -> Result<PathBuf> {
    let parent = match out {
        Some(p) => p.to_path_buf(),
        None => data_dir().map(|d| d.join("runs")).unwrap_or_else(|| PathBuf::from("runs")),
    };
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let mut dir = parent.join(format!("{command}-{stamp}"));
    let mut k = 1;
    while dir.exists() {
        dir = parent.join(format!("{command}-{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    println!("run directory: {}", dir.display());
    Ok(dir)
}

fn echo(dir: &Path, config: &impl FlatConfig) -> Result<()> {
    let p = dir.join(EFFECTIVE_CONFIG);
    std::fs::write(&p, config.to_flat_text()).map_err(|e| Error::io(&p, e))
}

fn split_filter(data: &Dataset, split: &str) -> Result<Dataset> {
    Ok(match split {
        "all" => data.clone(),
        "train" => data.subset(|r, _| r.split == Split::Train),
        "test" => data.subset(|r, _| r.split == Split::Test),
        other => return Err(Error::Config(format!("split must be train, test or all, got {other:?}"))),
    })
}

fn require_estimator(path: &str) -> Result<crate::training::TrainedEstimator> {
    if path.is_empty() {
        return Err(Error::Config(
            "an estimator checkpoint is required (eval.estimator or --estimator; see train-estimator)".into(),
        ));
    }
    load_estimator(Path::new(path))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::PrepareData(a) => prepare_data(a),
        Command::Train(a) => train(a),
        Command::TrainEstimator(a) => train_estimator_cmd(a),
        Command::Redirect(a) => redirect(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Augment(a) => augment(a),
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::columbia(a.subjects, a.seed);
    spec.head_poses = a.head_poses;
    let n = write_synthetic_dataset(&a.out_dir, &spec)?;
    println!("wrote {n} frames to {}", a.out_dir.display());
    Ok(())
}

fn prepare_data(a: PrepareArgs) -> Result<()> {
    let input = a
        .input_dir
        .or_else(|| data_dir().map(|d| d.join("raw")))
        .ok_or_else(|| Error::Config(format!("--input-dir not given and {DATA_DIR_ENV} is not set")))?;
    let manifest = match a.manifest_out {
        Some(m) => m,
        None => resolve_manifest("")?,
    };
    let provider: Box<dyn LandmarkProvider> = match a.landmarks_cmd {
        Some(program) => Box::new(CommandLandmarks {
            program,
            args: a.landmarks_args,
        }),
        None => Box::new(SidecarLandmarks),
    };
    let summary = prepare_dataset(
        &input,
        &manifest,
        provider.as_ref(),
        PrepareOptions {
            n_test: a.n_test,
            seed: a.seed,
        },
    )?;
    let m = &summary.manifest;
    println!(
        "{} frames, {} patches, {} train / {} test subjects -> {}",
        summary.frames,
        m.rows.len(),
        m.subjects_in(Split::Train).len(),
        m.subjects_in(Split::Test).len(),
        manifest.display()
    );
    if !summary.skipped.is_empty() {
        println!("skipped {}:", summary.skipped.len());
        for (p, why) in &summary.skipped {
            println!("  {}: {why}", p.display());
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = load_config(&a.cfg, None)?;
    if let Some(m) = &a.manifest {
        config.data.manifest = path_str(m);
    }
    config.validate()?;
    let data = Dataset::open(&resolve_manifest(&config.data.manifest)?, &config.data.scale())?;
    let train = config.data.select(&data, Split::Train);
    let dir = create_run_dir(a.cfg.out.as_deref(), "train")?;
    echo(&dir, &config)?;
    let mut trainer = match &a.resume {
        Some(ck) => Trainer::resume(config, train, ck)?,
        None => Trainer::new(config, train)?,
    };
    trainer.attach_run_dir(&dir)?;
    let s = trainer.run()?;
    println!(
        "trained {} steps ({} critic updates, {} epochs); checkpoint {}",
        s.global_step,
        s.critic_updates,
        s.epochs_completed,
        s.final_checkpoint.map(|p| path_str(&p)).unwrap_or_default()
    );
    Ok(())
}

fn train_estimator_cmd(a: EstimatorArgs) -> Result<()> {
    let mut config: EstimatorRunConfig = load_config(&a.cfg, None)?;
    if let Some(m) = &a.manifest {
        config.manifest = path_str(m);
    }
    config.estimator.validate()?;
    let scale = GazeScale {
        yaw_max: config.yaw_max,
        pitch_max: config.pitch_max,
    };
    let data = Dataset::open(&resolve_manifest(&config.manifest)?, &scale)?;
    let data = split_filter(&data, &config.split)?.subset(|r, _| !r.synthetic && config.head_poses.contains(&r.head_pose));
    let dir = create_run_dir(a.cfg.out.as_deref(), "estimator")?;
    echo(&dir, &config)?;
    let est = train_estimator(&config.estimator, &data, scale)?;
    let path = dir.join("estimator.ckpt");
    save_estimator(&path, &est, config.estimator.seed)?;
    println!(
        "estimator trained on {} patches, final mse {:.5}; checkpoint {}",
        data.len(),
        est.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn redirect(a: RedirectArgs) -> Result<()> {
    let r = GanRedirector::load(&a.checkpoint)?;
    let patch = load_patch(&a.image)?;
    let out = match a.output {
        Some(p) => p,
        None => create_run_dir(a.out.as_deref(), "redirect")?.join("redirect.png"),
    };
    let img = if a.grid {
        r.redirect_grid(&patch, &columbia_grid())?
    } else {
        let (yaw, pitch) = (a.yaw.unwrap_or_default(), a.pitch.unwrap_or_default());
        r.redirect(&patch, GazeDirection::checked(yaw, pitch)?)?
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(&out)?;
    println!("wrote {}×{} image to {}", img.width(), img.height(), out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut config: EvaluateConfig = load_config(&a.cfg, None)?;
    if let Some(c) = &a.checkpoint {
        config.checkpoint = path_str(c);
    }
    if let Some(m) = &a.manifest {
        config.manifest = path_str(m);
    }
    config.eval.apply_flags(&a.estimator, &a.bins, &a.laplacian)?;
    let options = config.eval.options()?;
    let lpips = config.eval.lpips.build()?;
    let estimator = require_estimator(&config.eval.estimator)?;
    let (redirector, scale): (Box<dyn Redirector>, GazeScale) = match config.redirector.as_str() {
        "generator" => {
            if config.checkpoint.is_empty() {
                return Err(Error::Config("the generator redirector needs --checkpoint".into()));
            }
            let g = GanRedirector::load(Path::new(&config.checkpoint))?;
            let scale = g.scale;
            (Box::new(g), scale)
        }
        "ground_truth" => (Box::new(GroundTruthRedirector), estimator.scale),
        "identity" => (Box::new(IdentityRedirector), estimator.scale),
        other => return Err(Error::Config(format!("unknown redirector {other:?}"))),
    };
    let data = split_filter(&Dataset::open(&resolve_manifest(&config.manifest)?, &scale)?, &config.split)?;
    let dir = create_run_dir(a.cfg.out.as_deref(), "evaluate")?;
    echo(&dir, &config)?;
    let report = evaluate_model(redirector.as_ref(), &data, &lpips, &estimator, &options)?;
    report.write(&dir)?;
    print!("{}", report.render_table());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut config: AblateConfig = load_config(&a.cfg, None)?;
    if let Some(m) = &a.manifest {
        config.train.data.manifest = path_str(m);
    }
    if let Some(v) = &a.variant {
        config.variants = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    config.eval.apply_flags(&a.estimator, &None, &None)?;
    config.train.validate()?;
    let variants = config
        .variants
        .iter()
        .map(|v| v.parse::<AblationVariant>().map_err(as_config))
        .collect::<Result<Vec<_>>>()?;
    let options = config.eval.options()?;
    let lpips = config.eval.lpips.build()?;
    let estimator = require_estimator(&config.eval.estimator)?;
    let data = Dataset::open(&resolve_manifest(&config.train.data.manifest)?, &config.train.data.scale())?;
    let train = config.train.data.select(&data, Split::Train);
    let test = config.train.data.select(&data, Split::Test);
    let dir = create_run_dir(a.cfg.out.as_deref(), "ablate")?;
    echo(&dir, &config)?;
    let eval = AblationEval {
        lpips: &lpips,
        estimator: &estimator,
        options: &options,
    };
    let outcome = run_ablation(&config.train, &variants, &train, &test, &eval, Some(&dir))?;
    print!("{}", outcome.to_csv());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let mut config = AugmentConfig::default();
    if let Some(spec) = &a.spec {
        config.study.apply_file(spec)?;
    }
    if let Some(p) = &a.cfg.config {
        config.apply_file(p)?;
    }
    for o in &a.cfg.overrides {
        config.apply_override(o)?;
    }
    if let Some(c) = &a.checkpoint {
        config.checkpoint = path_str(c);
    }
    if let Some(m) = &a.manifest {
        config.manifest = path_str(m);
    }
    config.study.validate()?;
    if config.checkpoint.is_empty() {
        return Err(Error::Config("augment needs a generator --checkpoint".into()));
    }
    let redirector = GanRedirector::load(Path::new(&config.checkpoint))?;
    let scale = redirector.scale;
    let data = Dataset::open(&resolve_manifest(&config.manifest)?, &scale)?;
    let dir = create_run_dir(a.cfg.out.as_deref(), "augment")?;
    echo(&dir, &config)?;
    let sets = build_augmented_dataset(&redirector, &data, &config.study, &scale)?;
    sets.write(&dir.join("augmented"))?;
    let held_out = evaluation_set(&data, &config.study);
    let external = if config.external_manifest.is_empty() {
        None
    } else {
        Some(open_external_eval_set(Path::new(&config.external_manifest), &scale)?)
    };
    let name = if config.external_name.is_empty() { "external" } else { &config.external_name };
    let mut eval_sets: Vec<(&str, &Dataset)> = vec![("columbia", &held_out)];
    if let Some(e) = &external {
        eval_sets.push((name, e));
    }
    let out = run_augmentation_study(&sets, &eval_sets, &config.study, scale)?;
    let table = dir.join("augmentation.csv");
    std::fs::write(&table, out.table.to_csv()).map_err(|e| Error::io(&table, e))?;
    save_estimator(&dir.join("estimator_raw.ckpt"), &out.raw_estimator, config.study.raw_estimator.seed)?;
    save_estimator(
        &dir.join("estimator_augmented.ckpt"),
        &out.augmented_estimator,
        config.study.augmented_estimator.seed,
    )?;
    print!("{}", out.table.render_table());
    Ok(())
}
