//! File formats, run configuration and the `gen`/`train`/`eval`/`infer`
//! commands behind the `sim2real` binary.

mod bytes;
mod checkpoint_file;
mod container;

pub use checkpoint_file::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use container::{decode_dataset, encode_dataset, DATASET_MAGIC, DATASET_VERSION};

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{acceptance_gates, emit_report, run_experiment, ExperimentSpec, MatrixKind, ModelBank, TrainedModels};
use crate::models::{CnnRegressor, NetKind};
use crate::ndtensor::LayerHyper;
use crate::pipeline::{
    infer_batch, train_baseline, train_cnn, train_vae1, train_vae2, Checkpoint, Recipe, Stage, TrainConfig,
};
use crate::scenegen::{
    generate_dataset_with, lookup, Background, DomainPolicy, LabeledDataset, Lighting, ObjectSpec,
    PairedDataset, ScenePolicy,
};

/// Writes `bytes` to a sibling temporary file, then renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(&tmp, e)
    })?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&read(path)?)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

/// Layer hyperparameters a checkpoint of `kind` must carry under `cfg`.
pub fn expected_hypers(kind: NetKind, cfg: &TrainConfig) -> Result<Vec<LayerHyper>> {
    match kind {
        NetKind::Vae => cfg.vae_arch().hypers(),
        NetKind::Cnn => CnnRegressor::hypers(cfg.resolution),
    }
}

/// Loads a checkpoint of `stage` for the architecture implied by `cfg`.
pub fn load_checkpoint(path: &Path, stage: Stage, cfg: &TrainConfig) -> Result<Checkpoint> {
    let ck = decode_checkpoint(&read(path)?, stage.kind(), &expected_hypers(stage.kind(), cfg)?)?;
    if ck.stage != stage {
        return Err(Error::InvalidArgument(format!(
            "{} holds a {} checkpoint, expected {}",
            path.display(),
            ck.stage.as_str(),
            stage.as_str()
        )));
    }
    Ok(ck)
}

/// Where commands read and write when `--out` and friends are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        Self {
            data_dir: "sim2real-out/data".into(),
            checkpoint_dir: "sim2real-out/checkpoints".into(),
            report_dir: "sim2real-out/reports".into(),
        }
    }
}

/// Contents of a `--config` JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: RunPaths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sim2real", version, about = "Object position detection trained in simulation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; unknown fields are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Require bit-reproducible output.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled dataset.
    Gen(GenArgs),
    /// Train one stage, or every stage of a recipe.
    Train(TrainArgs),
    /// Run experiments and check the acceptance gates.
    Eval(EvalArgs),
    /// Predict positions for every image of a dataset file.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Canonical,
    RealProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    White,
    Black,
    Checkered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LightingArg {
    Nominal,
    Room,
    Table,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Catalog object to place; mutually exclusive with --recipe.
    #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
    pub object: Option<String>,
    /// Write the synthetic, real and canonical training sets of a recipe
    /// into the `--out` directory.
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long, value_enum, default_value = "canonical")]
    pub domain: DomainArg,
    /// Grid spacing in mm; defaults to the configured small grid.
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long, value_enum, default_value = "white")]
    pub background: BackgroundArg,
    /// Defaults to nominal for canonical images and room for real-proxy.
    #[arg(long, value_enum)]
    pub lighting: Option<LightingArg>,
    /// Comma-separated catalog objects placed around the target.
    #[arg(long, value_delimiter = ',')]
    pub distractors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Vae1,
    Vae2,
    Cnn,
    Baseline,
    /// Every stage from a `gen --recipe` directory.
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub stage: StageArg,
    /// Training set: canonical images for vae1 and cnn, real-proxy images
    /// for baseline, a `gen --recipe` directory for all.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained VAE1 checkpoint; required by vae2 and cnn.
    #[arg(long)]
    pub vae1: Option<PathBuf>,
    /// Real-proxy half of the VAE2 pairs.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Canonical half of the VAE2 pairs.
    #[arg(long)]
    pub canonical: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixArg {
    Simple,
    Textured,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub matrix: MatrixArg,
    /// Comma-separated experiment ids to keep, or `none`.
    #[arg(long, value_delimiter = ',')]
    pub experiments: Vec<String>,
    /// Extra experiment spec JSON files.
    #[arg(long)]
    pub spec: Vec<PathBuf>,
    /// Directory holding `<recipe>/{vae2,cnn,baseline}.s2pc`.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset file holding the images.
    #[arg(long)]
    pub image: PathBuf,
    /// Omit to run the CNN directly, as for a baseline checkpoint.
    #[arg(long)]
    pub vae2: Option<PathBuf>,
    #[arg(long)]
    pub cnn: PathBuf,
}

/// What a command printed and whether it succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub success: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, success: true }
    }
}

/// The resolved configuration a command runs under.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn from_args(common: &CommonArgs) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.train.seed = seed;
        }
        Ok(Self {
            config,
            deterministic: common.deterministic,
            out: common.out.clone(),
        })
    }

    fn train(&self) -> &TrainConfig {
        &self.config.train
    }

    fn out_or(&self, default: impl FnOnce() -> PathBuf) -> PathBuf {
        self.out.clone().unwrap_or_else(default)
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let ctx = Context::from_args(&cli.common)?;
    let mut outcome = match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
    }?;
    if ctx.deterministic {
        outcome.stdout.push_str("deterministic: single-threaded, seeded run\n");
    }
    Ok(outcome)
}

fn object(name: &str) -> Result<ObjectSpec> {
    lookup(name).ok_or_else(|| Error::InvalidArgument(format!("unknown object `{name}`")))
}

fn describe(path: &Path, ds: &LabeledDataset) -> String {
    let (w, h) = ds.resolution();
    format!("wrote {} images ({w}x{h}, {:?}) to {}\n", ds.len(), ds.domain_tag, path.display())
}

fn gen(ctx: &Context, a: &GenArgs) -> Result<Outcome> {
    let cfg = ctx.train();
    cfg.validate()?;
    if let Some(name) = &a.recipe {
        let recipe = Recipe::by_name(name)?;
        let dir = ctx.out_or(|| ctx.config.paths.data_dir.join(&recipe.name));
        let data = recipe.training_data(cfg)?;
        let mut text = String::new();
        for (file, ds) in [
            ("synthetic.s2pd", &data.synthetic),
            ("real.s2pd", &data.pairs.real),
            ("canonical.s2pd", &data.pairs.canonical),
        ] {
            let path = dir.join(file);
            save_dataset(&path, ds)?;
            text.push_str(&describe(&path, ds));
        }
        return Ok(Outcome::ok(text));
    }
    let name = a.object.as_deref().expect("clap requires --object or --recipe");
    let target = object(name)?;
    let (domain, default_light) = match a.domain {
        DomainArg::Canonical => (DomainPolicy::Canonical, Lighting::nominal()),
        DomainArg::RealProxy => (DomainPolicy::real_proxy(), Lighting::room_light()),
    };
    let lighting = match a.lighting {
        None => default_light,
        Some(LightingArg::Nominal) => Lighting::nominal(),
        Some(LightingArg::Room) => Lighting::room_light(),
        Some(LightingArg::Table) => Lighting::table_light(),
    };
    let background = match a.background {
        BackgroundArg::White => Background::White,
        BackgroundArg::Black => Background::Black,
        BackgroundArg::Checkered => Background::colorful_checker(),
    };
    let scene = ScenePolicy {
        background,
        lighting,
        distractors: a.distractors.iter().map(|d| object(d)).collect::<Result<_>>()?,
    };
    let mut grid = cfg.small_grid();
    if let Some(spacing) = a.grid {
        grid.spacing_mm = spacing;
    }
    let ds = generate_dataset_with(&target, &grid, domain, &scene, cfg.resolution, cfg.seed, &cfg.workspace())?;
    let path = ctx.out_or(|| ctx.config.paths.data_dir.join(format!("{name}.s2pd")));
    save_dataset(&path, &ds)?;
    Ok(Outcome::ok(describe(&path, &ds)))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, stage: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("train {stage} requires --{flag}")))
}

fn trained(path: &Path, ck: &Checkpoint) -> Result<String> {
    save_checkpoint(path, ck)?;
    let last = ck.losses.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained {} for {} epochs (final loss {last:.6}) -> {}\n",
        ck.stage.as_str(),
        ck.losses.len(),
        path.display()
    ))
}

fn train(ctx: &Context, a: &TrainArgs) -> Result<Outcome> {
    let cfg = ctx.train();
    cfg.validate()?;
    let ck_dir = &ctx.config.paths.checkpoint_dir;
    let text = match a.stage {
        StageArg::Vae1 => {
            let data = load_dataset(required(&a.data, "data", "vae1")?)?;
            trained(&ctx.out_or(|| ck_dir.join("vae1.s2pc")), &train_vae1(&data, cfg)?)?
        }
        StageArg::Vae2 => {
            let vae1 = load_checkpoint(required(&a.vae1, "vae1", "vae2")?, Stage::Vae1, cfg)?;
            let pairs = PairedDataset::new(
                load_dataset(required(&a.real, "real", "vae2")?)?,
                load_dataset(required(&a.canonical, "canonical", "vae2")?)?,
            )?;
            trained(&ctx.out_or(|| ck_dir.join("vae2.s2pc")), &train_vae2(&pairs, &vae1, cfg)?)?
        }
        StageArg::Cnn => {
            let vae1 = load_checkpoint(required(&a.vae1, "vae1", "cnn")?, Stage::Vae1, cfg)?;
            let data = load_dataset(required(&a.data, "data", "cnn")?)?;
            trained(&ctx.out_or(|| ck_dir.join("cnn.s2pc")), &train_cnn(&vae1, &data, cfg)?)?
        }
        StageArg::Baseline => {
            let data = load_dataset(required(&a.data, "data", "baseline")?)?;
            trained(&ctx.out_or(|| ck_dir.join("baseline.s2pc")), &train_baseline(&data, cfg)?)?
        }
        StageArg::All => {
            let data_dir = required(&a.data, "data", "all")?;
            let name = data_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
            let out = ctx.out_or(|| ck_dir.join(&name));
            let synthetic = load_dataset(&data_dir.join("synthetic.s2pd"))?;
            let pairs = PairedDataset::new(
                load_dataset(&data_dir.join("real.s2pd"))?,
                load_dataset(&data_dir.join("canonical.s2pd"))?,
            )?;
            let vae1 = train_vae1(&synthetic, cfg)?;
            let mut text = trained(&out.join("vae1.s2pc"), &vae1)?;
            text += &trained(&out.join("vae2.s2pc"), &train_vae2(&pairs, &vae1, cfg)?)?;
            text += &trained(&out.join("cnn.s2pc"), &train_cnn(&vae1, &synthetic, cfg)?)?;
            text += &trained(&out.join("baseline.s2pc"), &train_baseline(&pairs.real, cfg)?)?;
            text
        }
    };
    Ok(Outcome::ok(text))
}

/// Loads whichever of `vae2`, `cnn` and `baseline` exist under `dir`.
pub fn load_trained(dir: &Path, cfg: &TrainConfig) -> Result<TrainedModels> {
    let get = |stage: Stage| -> Result<Option<Checkpoint>> {
        let path = dir.join(format!("{}.s2pc", stage.as_str()));
        if path.exists() {
            load_checkpoint(&path, stage, cfg).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(TrainedModels {
        vae2: get(Stage::Vae2)?,
        cnn: get(Stage::Cnn)?,
        baseline: get(Stage::Baseline)?,
    })
}

fn select_specs(ctx: &Context, a: &EvalArgs) -> Result<Vec<ExperimentSpec>> {
    let cfg = ctx.train();
    let mut specs = match a.matrix {
        MatrixArg::Simple => MatrixKind::Simple.specs(cfg)?,
        MatrixArg::Textured => MatrixKind::Textured.specs(cfg)?,
        MatrixArg::All => {
            let mut s = MatrixKind::Simple.specs(cfg)?;
            s.extend(MatrixKind::Textured.specs(cfg)?);
            s
        }
    };
    for path in &a.spec {
        let spec: ExperimentSpec = serde_json::from_slice(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        specs.push(spec);
    }
    if a.experiments.iter().any(|e| e == "none") {
        specs.clear();
    } else if !a.experiments.is_empty() {
        for id in &a.experiments {
            if !specs.iter().any(|s| &s.id == id) {
                return Err(Error::InvalidArgument(format!("unknown experiment `{id}`")));
            }
        }
        specs.retain(|s| a.experiments.contains(&s.id));
    }
    Ok(specs)
}

fn eval(ctx: &Context, a: &EvalArgs) -> Result<Outcome> {
    let cfg = ctx.train();
    cfg.validate()?;
    let specs = select_specs(ctx, a)?;
    let ck_dir = a.checkpoints.clone().unwrap_or_else(|| ctx.config.paths.checkpoint_dir.clone());
    let mut bank = ModelBank::new(cfg.clone());
    for spec in &specs {
        if !bank.pipelines.contains_key(&spec.recipe) {
            let models = load_trained(&ck_dir.join(&spec.recipe), cfg)?;
            bank.pipelines.insert(spec.recipe.clone(), models);
        }
    }
    let reports = specs.iter().map(|s| run_experiment(s, &bank)).collect::<Result<Vec<_>>>()?;
    let out = ctx.out_or(|| ctx.config.paths.report_dir.clone());
    emit_report(&reports, &out)?;

    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(
            text,
            "({}) {:<55} mean {:>7.2} mm  p95 {:>7.2} mm  max {:>7.2} mm",
            r.spec.id, r.spec.description, r.summary.mean_mm, r.summary.p95_mm, r.summary.max_mm
        );
    }
    let gates = acceptance_gates(&reports, cfg.placement_region_mm.0);
    for g in &gates {
        let _ = writeln!(text, "{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    let _ = writeln!(text, "reports written to {}", out.display());
    Ok(Outcome {
        stdout: text,
        success: gates.iter().all(|g| g.passed),
    })
}

fn infer(ctx: &Context, a: &InferArgs) -> Result<Outcome> {
    let cfg = ctx.train();
    let data = load_dataset(&a.image)?;
    let want = cfg.resolution;
    if data.resolution() != want {
        return Err(Error::shape(
            "infer",
            &[4, want.1, want.0],
            &[4, data.resolution().1, data.resolution().0],
        ));
    }
    let vae = a
        .vae2
        .as_deref()
        .map(|p| load_checkpoint(p, Stage::Vae2, cfg)?.vae(cfg.vae_arch()))
        .transpose()?;
    let cnn_stage = if vae.is_some() { Stage::Cnn } else { Stage::Baseline };
    let cnn_ck = decode_checkpoint(&read(&a.cnn)?, NetKind::Cnn, &expected_hypers(NetKind::Cnn, cfg)?)?;
    if vae.is_some() && cnn_ck.stage != cnn_stage {
        return Err(Error::InvalidArgument(format!(
            "--vae2 needs the CNN trained on VAE1 outputs, got a {} checkpoint",
            cnn_ck.stage.as_str()
        )));
    }
    let cnn = cnn_ck.cnn(cfg.resolution)?;
    let preds = infer_batch(vae.as_ref(), &cnn, &data.images, cfg.placement_region_mm)?;
    let mut text = String::new();
    for (x, y) in preds {
        let _ = writeln!(text, "{x:.1} {y:.1}");
    }
    if let Some(path) = &ctx.out {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(Outcome::ok(text))
}
