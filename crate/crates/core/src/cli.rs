//! The `tuni` command line tool.
//!
//! Each subcommand is a thin wrapper over one library operation with
//! file-based inputs and outputs. Every command prints its effective config
//! and seed to stderr before doing any work.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::protocol;
use crate::config::{open_backend, resolve_seed, RunConfig, SeedSource};
use crate::ensemble::{fit_ensemble, infer, read_votes, write_votes, EnsembleModel};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, ablation_sweep, compute_metrics, read_truth, run_experiment, write_sweep_table,
    AblationSpec, Benchmark, ExperimentConfig, GibberishKind, SweepParam, ToyBenchmarkConfig,
};
use crate::features::{batch_extract, read_features, write_features, FeatureStore, GradientMode};
use crate::gibberish;
use crate::photo::{
    enhanced_infer, load_photo_sets, FaceExtractor, PhotoContext, ProjectionFaceExtractor,
};
use crate::pipeline::{self, PipelineInputs, PipelineSettings, TargetDir};
use crate::seed;
use crate::trainer::{ContrastiveTrainConfig, DatasetConfig};

#[derive(Debug, Parser)]
#[command(
    name = "tuni",
    version,
    about = "Text-only identity inference against text-image embedding models"
)]
pub struct Cli {
    /// TOML run config; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Master seed [default: $TUNI_SEED, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; results do not depend on this [default: available cores]
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a toy target with known membership and write a target directory
    TrainTarget(TrainTargetArgs),
    /// Generate gibberish texts, one per line
    GenGibberish(GenGibberishArgs),
    /// Extract S, D (and optionally R) features for a list of texts
    Extract(ExtractArgs),
    /// Fit the detector ensemble on gibberish features
    Fit(FitArgs),
    /// Vote on features with a fitted ensemble
    Infer(InferArgs),
    /// Score a votes file against ground truth
    Evaluate(EvaluateArgs),
    /// Repeated experiment on a target with known membership
    Experiment(ExperimentArgs),
    /// Ablation sweep over one parameter
    Sweep(SweepArgs),
    /// gibberish → extract → fit → infer → enhance → evaluate, persisting every stage
    FullPipeline(FullPipelineArgs),
    /// Serve a synthetic backend over the bridge protocol on stdin/stdout
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Spsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Random,
    Covert,
}

impl From<KindArg> for GibberishKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Random => GibberishKind::Random,
            KindArg::Covert => GibberishKind::Covert,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimizationArgs {
    /// Optimization epochs per text, n [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Ascent iterations per epoch, m [default: 1000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Ascent learning rate [default: 0.02]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gradient source [default: exact]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Rademacher directions per SPSA estimate [default: 8]
    #[arg(long)]
    pub spsa_samples: Option<usize>,
    /// SPSA perturbation size [default: 0.001]
    #[arg(long)]
    pub spsa_perturbation: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EnsembleArgs {
    /// Detector votes needed for a member decision, N [default: 3]
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Votes out of five needed with the cluster vote, N′ [default: 4]
    #[arg(long)]
    pub enhanced_threshold: Option<usize>,
    /// Isolation forest trees [default: 100]
    #[arg(long)]
    pub iforest_trees: Option<usize>,
    /// One-class SVM ν [default: 0.1]
    #[arg(long)]
    pub ocsvm_nu: Option<f64>,
    /// Autoencoder training epochs [default: 5000]
    #[arg(long)]
    pub ae_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GibberishArgs {
    /// Gibberish texts, ℓ [default: 50]
    #[arg(long = "gibberish")]
    pub count: Option<usize>,
    /// Gibberish generator [default: random]
    #[arg(long = "gibberish-kind", value_enum)]
    pub kind: Option<KindArg>,
    /// Characters per random gibberish text [default: 10]
    #[arg(long = "gibberish-length")]
    pub length: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PhotoArgs {
    /// Real photos per identity for enhancement, c; 0 disables it [default: 0]
    #[arg(long)]
    pub photos: Option<usize>,
    /// Optimized images compared with the photos, k [default: all epochs]
    #[arg(long)]
    pub photo_images: Option<usize>,
    /// Photo directory (index.csv plus photo files)
    #[arg(long, value_name = "DIR")]
    pub photo_dir: Option<PathBuf>,
    /// Face extractor file
    #[arg(long, value_name = "FILE")]
    pub face: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainTargetArgs {
    /// Identities, half of them members; must be even [default: 80]
    #[arg(long)]
    pub identities: Option<usize>,
    /// Training photos per member identity [default: 1]
    #[arg(long)]
    pub photos: Option<usize>,
    /// Pixels per synthetic image [default: 12]
    #[arg(long)]
    pub image_len: Option<usize>,
    /// Distractor caption/image pairs [default: 10 per member photo]
    #[arg(long)]
    pub distractors: Option<usize>,
    /// Embedding dimension [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Contrastive training epochs [default: 200]
    #[arg(long)]
    pub train_epochs: Option<usize>,
    /// Contrastive learning rate [default: 0.5]
    #[arg(long)]
    pub train_lr: Option<f64>,
    /// Contrastive batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Softmax temperature [default: 0.15]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Reference photos generated per identity [default: 5]
    #[arg(long)]
    pub photo_pool: Option<usize>,
    /// Face embedding dimension [default: 16]
    #[arg(long)]
    pub face_dim: Option<usize>,
    /// Output target directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenGibberishArgs {
    /// Texts to generate, ℓ [default: 50]
    #[arg(long)]
    pub count: Option<usize>,
    /// Characters per random text [default: 10]
    #[arg(long)]
    pub length: Option<usize>,
    /// Generator [default: random]
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Alphabet for random texts [default: printable ASCII]
    #[arg(long)]
    pub charset: Option<String>,
    /// Syllable lexicon for covert names [default: embedded]
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Extra real names covert names must avoid
    #[arg(long, value_name = "FILE")]
    pub names: Option<PathBuf>,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Backend: synthetic:PATH, bridge:COMMAND, or a backend file
    #[arg(long)]
    pub backend: Option<String>,
    /// Texts, one per line
    #[arg(long, value_name = "FILE")]
    pub texts: PathBuf,
    /// Feature file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Keep rows already in the output file and extract only the rest
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub optimization: OptimizationArgs,
    #[command(flatten)]
    pub photos: PhotoArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Gibberish feature file
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Ensemble file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Fitted ensemble file
    #[arg(long, value_name = "FILE")]
    pub ensemble: PathBuf,
    /// Feature file of the texts to classify
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Votes file to write
    #[arg(long, value_name = "FILE", default_value = "votes.csv")]
    pub out: PathBuf,
    /// Add the cluster vote; needs R in every feature row
    #[arg(long)]
    pub enhanced: bool,
    /// Override N stored in the ensemble
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Override N′ stored in the ensemble
    #[arg(long)]
    pub enhanced_threshold: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Votes file
    #[arg(long, value_name = "FILE")]
    pub votes: PathBuf,
    /// Ground truth (text_id,is_member)
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    /// Metrics JSON to write; printed to stdout either way
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Target directory from train-target [default: build the toy target in memory]
    #[arg(long, value_name = "DIR")]
    pub target: Option<PathBuf>,
    /// Repeats per experiment [default: 10]
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub optimization: OptimizationArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub gibberish: GibberishArgs,
    /// Real photos per identity for enhancement, c; 0 disables it [default: 0]
    #[arg(long)]
    pub photos: Option<usize>,
    /// Optimized images compared with the photos, k [default: all epochs]
    #[arg(long)]
    pub photo_images: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub bench: BenchmarkArgs,
    /// Report JSON to write
    #[arg(long, value_name = "FILE", default_value = "experiment.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Parameter: m, n, l, N, N', photos (or iterations, epochs, gibberish, threshold, enhanced-threshold)
    #[arg(long)]
    pub param: String,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    #[command(flatten)]
    pub bench: BenchmarkArgs,
    /// Sweep table to write
    #[arg(long, value_name = "FILE", default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FullPipelineArgs {
    /// Target directory from train-target; supplies backend, texts, truth and photos
    #[arg(long, value_name = "DIR")]
    pub target: Option<PathBuf>,
    /// Backend: synthetic:PATH, bridge:COMMAND, or a backend file
    #[arg(long)]
    pub backend: Option<String>,
    /// Texts to classify, one per line
    #[arg(long, value_name = "FILE")]
    pub texts: Option<PathBuf>,
    /// Ground truth (text_id,is_member); metrics are skipped without it
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Output directory for all stages [default: tuni-run]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Reuse feature rows already in the output directory
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub optimization: OptimizationArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub gibberish: GibberishArgs,
    #[command(flatten)]
    pub photos: PhotoArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Synthetic backend file
    #[arg(long, value_name = "FILE")]
    pub backend: Option<PathBuf>,
    /// Target directory; serves its backend and face extractor
    #[arg(long, value_name = "DIR")]
    pub target: Option<PathBuf>,
    /// Face extractor file answering face_embed
    #[arg(long, value_name = "FILE")]
    pub face: Option<PathBuf>,
}

impl OptimizationArgs {
    fn apply(&self, c: &mut RunConfig) {
        let o = &mut c.optimization;
        set(&mut o.epochs, self.epochs);
        set(&mut o.iterations, self.iterations);
        set(&mut o.learning_rate, self.lr);
        set(
            &mut o.mode,
            self.mode.map(|m| match m {
                ModeArg::Exact => GradientMode::Exact,
                ModeArg::Spsa => GradientMode::Spsa,
            }),
        );
        set(&mut o.spsa_samples, self.spsa_samples);
        set(&mut o.spsa_perturbation, self.spsa_perturbation);
    }
}

impl EnsembleArgs {
    fn apply(&self, c: &mut RunConfig) {
        let e = &mut c.ensemble;
        set(&mut e.threshold, self.threshold);
        set(&mut e.enhanced_threshold, self.enhanced_threshold);
        set(&mut e.iforest_trees, self.iforest_trees);
        set(&mut e.ocsvm_nu, self.ocsvm_nu);
        set(&mut e.ae_epochs, self.ae_epochs);
    }
}

impl GibberishArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.gibberish.count, self.count);
        set(&mut c.gibberish.kind, self.kind.map(Into::into));
        set(&mut c.gibberish.length, self.length);
    }
}

impl PhotoArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.photos.count, self.photos);
        if self.photo_images.is_some() {
            c.photos.images = self.photo_images;
        }
        if self.photo_dir.is_some() {
            c.photos.dir = self.photo_dir.clone();
        }
        if self.face.is_some() {
            c.photos.face = self.face.clone();
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Prints the effective configuration and seed to stderr.
fn echo(command: &str, seed: u64, source: SeedSource, config: &impl Serialize) {
    let body = toml::to_string(config).unwrap_or_else(|e| format!("# unprintable config: {e}\n"));
    eprintln!(
        "# tuni {command}\n# seed = {seed} (from {})\n{body}",
        source.describe()
    );
}

struct Context {
    run: RunConfig,
    seed: u64,
    source: SeedSource,
}

impl Context {
    fn echo(&self, command: &str, config: &impl Serialize) {
        echo(command, self.seed, self.source, config)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    let mut run = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let (seed, source) = resolve_seed(cli.seed, run.seed)?;
    run.seed = Some(seed);
    if cli.workers.is_some() {
        run.workers = cli.workers;
    }
    let workers = match run.workers {
        Some(0) => return Err(Error::invalid("--workers must be at least 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    let ctx = Context { run, seed, source };
    pool.install(|| dispatch(cli.command, ctx))
}

fn dispatch(command: Command, mut ctx: Context) -> Result<()> {
    match command {
        Command::TrainTarget(a) => train_target(a, &ctx),
        Command::GenGibberish(a) => gen_gibberish(a, &mut ctx),
        Command::Extract(a) => extract(a, &mut ctx),
        Command::Fit(a) => fit(a, &mut ctx),
        Command::Infer(a) => infer_cmd(a, &ctx),
        Command::Evaluate(a) => evaluate(a, &ctx),
        Command::Experiment(a) => experiment(a, &mut ctx),
        Command::Sweep(a) => sweep(a, &mut ctx),
        Command::FullPipeline(a) => full_pipeline(a, &mut ctx),
        Command::Serve(a) => serve(a),
    }
}

fn train_target(a: TrainTargetArgs, ctx: &Context) -> Result<()> {
    let defaults = ToyBenchmarkConfig::default();
    let identities = a.identities.unwrap_or(defaults.dataset.identities);
    if identities < 2 || !identities.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "--identities must be a positive even number, got {identities}"
        )));
    }
    let mut config = ToyBenchmarkConfig {
        dataset: DatasetConfig {
            identities,
            photos_per_identity: a.photos.unwrap_or(defaults.dataset.photos_per_identity),
            distractors: a.distractors.or(defaults.dataset.distractors),
            ..defaults.dataset.clone()
        },
        training: ContrastiveTrainConfig {
            embedding_dim: a.dim.unwrap_or(defaults.training.embedding_dim),
            ..defaults.training.clone()
        },
        photo_pool: a.photo_pool.unwrap_or(defaults.photo_pool),
        face_dim: a.face_dim.unwrap_or(defaults.face_dim),
        seed: ctx.seed,
    };
    if a.photos == Some(0) {
        return Err(Error::invalid("--photos must be at least 1"));
    }
    if let Some(p) = a.image_len {
        config.dataset.image_shape = vec![p];
    }
    let t = &mut config.training;
    set(&mut t.epochs, a.train_epochs);
    set(&mut t.learning_rate, a.train_lr);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.temperature, a.temperature);
    ctx.echo("train-target", &config);
    let toy = config.build()?;
    let target = pipeline::save_target(&toy, &a.out)?;
    eprintln!(
        "trained {} identities: margin {:.4}, final loss {:.4}; wrote {}",
        toy.dataset.identities.len(),
        toy.training.margin,
        toy.training
            .loss_history
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        target.0.display()
    );
    Ok(())
}

fn gen_gibberish(a: GenGibberishArgs, ctx: &mut Context) -> Result<()> {
    let g = &mut ctx.run.gibberish;
    set(&mut g.count, a.count);
    set(&mut g.length, a.length);
    set(&mut g.kind, a.kind.map(Into::into));
    if a.charset.is_some() {
        g.charset = a.charset;
    }
    if a.lexicon.is_some() {
        g.lexicon = a.lexicon;
    }
    if a.names.is_some() {
        g.names = a.names;
    }
    ctx.echo("gen-gibberish", &ctx.run.gibberish);
    let texts = ctx.run.gibberish.generate(ctx.seed)?;
    gibberish::export(&a.out, &texts)?;
    eprintln!("wrote {} texts to {}", texts.len(), a.out.display());
    Ok(())
}

fn backend_spec(flag: Option<String>, run: &RunConfig) -> Result<String> {
    flag.or_else(|| run.backend.clone()).ok_or_else(|| {
        Error::invalid("no backend given; pass --backend or set `backend` in the config")
    })
}

fn load_face(path: &Path) -> Result<ProjectionFaceExtractor> {
    ProjectionFaceExtractor::load(path).map_err(|e| {
        Error::invalid(format!(
            "cannot load face extractor {}: {e}",
            path.display()
        ))
    })
}

fn extract(a: ExtractArgs, ctx: &mut Context) -> Result<()> {
    a.optimization.apply(&mut ctx.run);
    a.photos.apply(&mut ctx.run);
    let spec = backend_spec(a.backend, &ctx.run)?;
    ctx.run.backend = Some(spec.clone());
    ctx.run.optimization.seed = ctx.seed;
    ctx.run.validate()?;
    ctx.echo("extract", &ctx.run);
    let backend = open_backend(&spec)?;
    let texts = pipeline::queries(&pipeline::read_texts(&a.texts)?)?;
    let photos = &ctx.run.photos;
    let (face, sets) = if photos.count > 0 {
        let dir = photos
            .dir
            .as_ref()
            .ok_or_else(|| Error::invalid("--photos needs --photo-dir"))?;
        let face = photos
            .face
            .as_ref()
            .ok_or_else(|| Error::invalid("--photos needs --face"))?;
        (
            Some(load_face(face)?),
            pipeline::take_photos(&load_photo_sets(dir)?, photos.count),
        )
    } else {
        (None, Default::default())
    };
    let photo_ctx = face.as_ref().map(|f| PhotoContext {
        extractor: f as &dyn FaceExtractor,
        photos: &sets,
        k: photos.images,
    });
    let config = &ctx.run.optimization;
    if a.resume {
        let mut store = FeatureStore::open(&a.out)?;
        let before = store.len();
        let set = batch_extract(
            backend.as_ref(),
            &texts,
            config,
            photo_ctx.as_ref(),
            Some(&mut store),
        )?;
        eprintln!(
            "extracted {} rows ({} reused) into {}",
            set.len(),
            before,
            a.out.display()
        );
    } else {
        let set = batch_extract(backend.as_ref(), &texts, config, photo_ctx.as_ref(), None)?;
        write_features(&a.out, &set, &config.config_hash())?;
        eprintln!("extracted {} rows into {}", set.len(), a.out.display());
    }
    Ok(())
}

fn fit(a: FitArgs, ctx: &mut Context) -> Result<()> {
    a.ensemble.apply(&mut ctx.run);
    ctx.run.ensemble.seed = ctx.seed;
    ctx.echo("fit", &ctx.run.ensemble);
    let features = read_features(&a.features)?;
    let model = fit_ensemble(&features, &ctx.run.ensemble)?;
    model.save(&a.out)?;
    eprintln!(
        "fitted 4 detectors on {} rows; wrote {}",
        features.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct InferEcho<'a> {
    ensemble: &'a Path,
    features: &'a Path,
    out: &'a Path,
    enhanced: bool,
    threshold: usize,
    enhanced_threshold: usize,
}

fn infer_cmd(a: InferArgs, ctx: &Context) -> Result<()> {
    let mut model = EnsembleModel::load(&a.ensemble)?;
    if a.threshold.is_some() || a.enhanced_threshold.is_some() {
        let n = a.threshold.unwrap_or(model.threshold);
        let n_prime = a.enhanced_threshold.unwrap_or(model.enhanced_threshold);
        model = model.with_thresholds(n, n_prime)?;
    }
    ctx.echo(
        "infer",
        &InferEcho {
            ensemble: &a.ensemble,
            features: &a.features,
            out: &a.out,
            enhanced: a.enhanced,
            threshold: model.threshold,
            enhanced_threshold: model.enhanced_threshold,
        },
    );
    let features = read_features(&a.features)?;
    let results = if a.enhanced {
        enhanced_infer(
            &model,
            &features,
            seed::derive_seed(ctx.seed, &["cluster".into()]),
        )?
    } else {
        features
            .rows
            .iter()
            .map(|f| infer(&model, f))
            .collect::<Result<Vec<_>>>()?
    };
    write_votes(&a.out, &results)?;
    let members = results
        .iter()
        .filter(|r| r.decision == crate::ensemble::Decision::Member)
        .count();
    eprintln!(
        "{members} of {} texts voted member; wrote {}",
        results.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateEcho<'a> {
    votes: &'a Path,
    truth: &'a Path,
}

fn evaluate(a: EvaluateArgs, ctx: &Context) -> Result<()> {
    ctx.echo(
        "evaluate",
        &EvaluateEcho {
            votes: &a.votes,
            truth: &a.truth,
        },
    );
    let metrics = compute_metrics(&read_votes(&a.votes)?, &read_truth(&a.truth)?)?;
    let json = serde_json::to_string_pretty(&metrics)? + "\n";
    if let Some(out) = &a.out {
        fs::write(out, &json)?;
    }
    print!("{json}");
    Ok(())
}

/// A benchmark whose parts are owned, from a target directory or built in memory.
struct OwnedBenchmark {
    backend: Box<dyn crate::backend::EmbeddingBackend>,
    truth: evaluation::GroundTruth,
    face: ProjectionFaceExtractor,
    photo_pool: std::collections::BTreeMap<String, crate::photo::PhotoSet>,
}

impl OwnedBenchmark {
    fn open(target: Option<&Path>, seed: u64) -> Result<Self> {
        match target {
            Some(dir) => {
                let t = TargetDir(dir.to_path_buf());
                Ok(Self {
                    backend: open_backend(&t.backend().to_string_lossy())?,
                    truth: read_truth(t.truth())?,
                    face: load_face(&t.face())?,
                    photo_pool: load_photo_sets(t.photos())?,
                })
            }
            None => {
                let toy = ToyBenchmarkConfig {
                    seed,
                    ..Default::default()
                }
                .build()?;
                Ok(Self {
                    truth: toy.dataset.ground_truth(),
                    backend: Box::new(toy.backend),
                    face: toy.face_extractor,
                    photo_pool: toy.photo_pool,
                })
            }
        }
    }

    fn benchmark(&self) -> Benchmark<'_> {
        Benchmark {
            backend: self.backend.as_ref(),
            truth: self.truth.clone(),
            face_extractor: Some(&self.face),
            photo_pool: self.photo_pool.clone(),
        }
    }
}

fn experiment_config(a: &BenchmarkArgs, ctx: &mut Context) -> Result<ExperimentConfig> {
    a.optimization.apply(&mut ctx.run);
    a.ensemble.apply(&mut ctx.run);
    a.gibberish.apply(&mut ctx.run);
    set(&mut ctx.run.photos.count, a.photos);
    if a.photo_images.is_some() {
        ctx.run.photos.images = a.photo_images;
    }
    ctx.run.validate()?;
    let run = &ctx.run;
    let config = ExperimentConfig {
        repeats: a.repeats.unwrap_or(ExperimentConfig::default().repeats),
        seed: ctx.seed,
        gibberish_count: run.gibberish.count,
        gibberish_kind: run.gibberish.kind,
        gibberish_length: run.gibberish.length,
        optimization: run.optimization.clone(),
        ensemble: run.ensemble.clone(),
        photos: run.photos.count,
        photo_images: run.photos.images,
    };
    config.validate()?;
    Ok(config)
}

fn experiment(a: ExperimentArgs, ctx: &mut Context) -> Result<()> {
    let config = experiment_config(&a.bench, ctx)?;
    ctx.echo("experiment", &config);
    let bench = OwnedBenchmark::open(a.bench.target.as_deref(), ctx.seed)?;
    let report = run_experiment(&bench.benchmark(), &config)?;
    report.save(&a.out)?;
    eprintln!(
        "text-only accuracy {} precision {} recall {}",
        report.text_only.accuracy.display(),
        report.text_only.precision.display(),
        report.text_only.recall.display()
    );
    if let Some(e) = &report.enhanced {
        eprintln!(
            "enhanced  accuracy {} precision {} recall {}",
            e.accuracy.display(),
            e.precision.display(),
            e.recall.display()
        );
    }
    Ok(())
}

fn sweep(a: SweepArgs, ctx: &mut Context) -> Result<()> {
    let param = SweepParam::parse(&a.param)?;
    let base = experiment_config(&a.bench, ctx)?;
    let spec = AblationSpec {
        param,
        values: a.grid.clone(),
        base,
    };
    ctx.echo("sweep", &spec);
    let bench = OwnedBenchmark::open(a.bench.target.as_deref(), ctx.seed)?;
    let points = ablation_sweep(&bench.benchmark(), &spec)?;
    write_sweep_table(&a.out, param, &points)?;
    print!("{}", fs::read_to_string(&a.out)?);
    Ok(())
}

fn full_pipeline(a: FullPipelineArgs, ctx: &mut Context) -> Result<()> {
    a.optimization.apply(&mut ctx.run);
    a.ensemble.apply(&mut ctx.run);
    a.gibberish.apply(&mut ctx.run);
    a.photos.apply(&mut ctx.run);
    let target = a.target.clone().map(TargetDir);
    if a.backend.is_some() {
        ctx.run.backend = a.backend.clone();
    }
    if a.out.is_some() {
        ctx.run.output = a.out.clone();
    }
    let out = ctx
        .run
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("tuni-run"));
    let spec = match (&ctx.run.backend, &target) {
        (Some(s), _) => s.clone(),
        (None, Some(t)) => t.backend().to_string_lossy().into_owned(),
        (None, None) => return Err(Error::invalid("pass --target or --backend")),
    };
    let texts_path = match (&a.texts, &target) {
        (Some(p), _) => p.clone(),
        (None, Some(t)) => t.texts(),
        (None, None) => return Err(Error::invalid("pass --target or --texts")),
    };
    let truth_path = a
        .truth
        .clone()
        .or_else(|| target.as_ref().map(TargetDir::truth));
    if ctx.run.photos.count > 0 {
        if ctx.run.photos.dir.is_none() {
            ctx.run.photos.dir = target.as_ref().map(TargetDir::photos);
        }
        if ctx.run.photos.face.is_none() {
            ctx.run.photos.face = target.as_ref().map(TargetDir::face);
        }
    }
    ctx.run.validate()?;
    let settings = PipelineSettings::from_run(&ctx.run, ctx.seed);
    ctx.echo("full-pipeline", &ctx.run);

    let backend = open_backend(&spec)?;
    let texts = pipeline::read_texts(&texts_path)?;
    let truth = truth_path.map(read_truth).transpose()?;
    let (face, photo_pool) = if settings.photos > 0 {
        let dir = ctx
            .run
            .photos
            .dir
            .as_ref()
            .ok_or_else(|| Error::invalid("--photos needs --photo-dir"))?;
        let face = ctx
            .run
            .photos
            .face
            .as_ref()
            .ok_or_else(|| Error::invalid("--photos needs --face"))?;
        (Some(load_face(face)?), load_photo_sets(dir)?)
    } else {
        (None, Default::default())
    };
    let inputs = PipelineInputs {
        backend: backend.as_ref(),
        texts,
        truth,
        face: face.as_ref().map(|f| f as &dyn FaceExtractor),
        photo_pool,
    };
    let report = pipeline::run_pipeline(&inputs, &settings, &out, a.resume)?;
    if let Some(m) = &report.text_only {
        eprintln!(
            "text-only: accuracy {:.4} recall {:.4} precision {}",
            m.accuracy,
            m.recall,
            m.precision
                .map_or("undefined".into(), |p| format!("{p:.4}"))
        );
    }
    if let Some(m) = &report.enhanced {
        eprintln!(
            "enhanced:  accuracy {:.4} recall {:.4} precision {}",
            m.accuracy,
            m.recall,
            m.precision
                .map_or("undefined".into(), |p| format!("{p:.4}"))
        );
    }
    eprintln!("wrote {}", out.join(pipeline::STAGE_REPORT).display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let target = a.target.map(TargetDir);
    let backend_path = a
        .backend
        .or_else(|| target.as_ref().map(TargetDir::backend))
        .ok_or_else(|| Error::invalid("pass --backend or --target"))?;
    let face_path = a.face.or_else(|| target.as_ref().map(TargetDir::face));
    let backend = open_backend(&backend_path.to_string_lossy())?;
    let face = face_path.as_deref().map(load_face).transpose()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    protocol::serve(
        backend.as_ref(),
        face.as_ref().map(|f| f as &dyn FaceExtractor),
        stdin.lock(),
        stdout.lock(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let mut run = RunConfig::parse("[optimization]\nepochs = 5\niterations = 7\n").unwrap();
        OptimizationArgs {
            epochs: Some(9),
            ..Default::default()
        }
        .apply(&mut run);
        assert_eq!(run.optimization.epochs, 9);
        assert_eq!(run.optimization.iterations, 7);
    }

    #[test]
    fn help_defaults_match_library_defaults() {
        let run = RunConfig::default();
        assert_eq!(run.optimization.epochs, 100);
        assert_eq!(run.optimization.iterations, 1000);
        assert_eq!(run.optimization.learning_rate, 0.02);
        assert_eq!(run.gibberish.count, 50);
        assert_eq!(run.ensemble.threshold, 3);
        assert_eq!(run.ensemble.enhanced_threshold, 4);
        let toy = ToyBenchmarkConfig::default();
        assert_eq!(toy.training.temperature, 0.15);
        assert_eq!(toy.dataset.identities, 80);
    }
}
