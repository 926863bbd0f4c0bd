//! Metrics, repeated experiments and parameter sweeps.
//!
//! An experiment runs the whole pipeline (gibberish → features → ensemble →
//! inference, optionally photo-enhanced) once per repeat with a
//! repeat-derived seed, against a fixed set of evaluation identities.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{EmbeddingBackend, SyntheticBackend, TextQuery};
use crate::ensemble::{fit_ensemble, infer, Decision, DetectionResult, EnsembleConfig};
use crate::error::{Error, Result};
use crate::features::{batch_extract, OptimizationConfig};
use crate::gibberish::{self, GibberishConfig, SyllableLexicon};
use crate::photo::{
    enhanced_infer, FaceExtractor, PhotoContext, PhotoSet, ProjectionFaceExtractor,
};
use crate::seed;
use crate::stats;
use crate::trainer::{
    generate_identity_dataset, train_contrastive, ContrastiveTrainConfig, DatasetConfig,
    IdentityDataset, TrainReport,
};

/// text id → is the identity in the training data.
pub type GroundTruth = BTreeMap<String, bool>;

pub const TRUTH_HEADER: [&str; 2] = ["text_id", "is_member"];

pub fn write_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRUTH_HEADER)?;
    for (id, member) in truth {
        w.write_record([id.as_str(), if *member { "true" } else { "false" }])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().ne(TRUTH_HEADER) {
        return Err(Error::format(
            "truth file header must be `text_id,is_member`",
        ));
    }
    let mut truth = GroundTruth::new();
    for rec in reader.records() {
        let rec = rec?;
        let member = match &rec[1] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::format(format!("bad membership flag `{other}`"))),
        };
        if truth.insert(rec[0].to_owned(), member).is_some() {
            return Err(Error::format(format!("duplicate truth row {:?}", &rec[0])));
        }
    }
    Ok(truth)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    pub recall: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Member is the positive class.
pub fn compute_metrics(results: &[DetectionResult], truth: &GroundTruth) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::invalid("no detection results to score"));
    }
    let mut c = Confusion::default();
    for r in results {
        let actual = *truth
            .get(&r.text_id)
            .ok_or_else(|| Error::invalid(format!("{:?} has no ground truth", r.text_id)))?;
        match (r.decision == Decision::Member, actual) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let predicted = c.tp + c.fp;
    let positives = c.tp + c.fn_;
    Ok(Metrics {
        precision: (predicted > 0).then(|| c.tp as f64 / predicted as f64),
        recall: if positives > 0 {
            c.tp as f64 / positives as f64
        } else {
            0.0
        },
        accuracy: (c.tp + c.tn) as f64 / results.len() as f64,
        confusion: c,
    })
}

/// Mean and population standard deviation over the repeats where the metric
/// was defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        if defined.is_empty() {
            return Self {
                mean: None,
                std: None,
                undefined,
            };
        }
        Self {
            mean: Some(stats::mean(&defined)),
            std: Some(stats::std_dev(&defined)),
            undefined,
        }
    }

    /// `"0.8634 ± 0.0031"`, or `"n/a"`.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "n/a".to_owned(),
        }
    }

    pub fn mean_or_zero(&self) -> f64 {
        self.mean.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub repeats: usize,
    pub successful: usize,
    pub precision: Summary,
    pub recall: Summary,
    pub accuracy: Summary,
}

impl MetricsReport {
    pub fn from_metrics(repeats: usize, metrics: &[Metrics]) -> Self {
        Self {
            repeats,
            successful: metrics.len(),
            precision: Summary::of(metrics.iter().map(|m| m.precision)),
            recall: Summary::of(metrics.iter().map(|m| Some(m.recall))),
            accuracy: Summary::of(metrics.iter().map(|m| Some(m.accuracy))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GibberishKind {
    /// Random printable symbols.
    Random,
    /// Syllable-pair pseudo-names.
    Covert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub repeats: usize,
    pub seed: u64,
    /// Number of gibberish texts (ℓ).
    pub gibberish_count: usize,
    pub gibberish_kind: GibberishKind,
    pub gibberish_length: usize,
    pub optimization: OptimizationConfig,
    pub ensemble: EnsembleConfig,
    /// Real photos per identity for the enhanced run; `0` disables it.
    pub photos: usize,
    /// Optimized images compared against the photos; all epochs when `None`.
    pub photo_images: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            seed: 0,
            gibberish_count: 50,
            gibberish_kind: GibberishKind::Random,
            gibberish_length: 10,
            optimization: OptimizationConfig::default(),
            ensemble: EnsembleConfig::default(),
            photos: 0,
            photo_images: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.gibberish_count < 2 {
            return Err(Error::invalid("at least two gibberish texts are needed"));
        }
        self.optimization.validate()?;
        self.ensemble.validate()
    }

    pub fn config_hash(&self) -> String {
        seed::short_hash(&serde_json::to_string(self).expect("config serializes"))
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        seed::derive_seed(self.seed, &["repeat".into(), repeat.into()])
    }
}

/// What an experiment is run against.
pub struct Benchmark<'a> {
    pub backend: &'a dyn EmbeddingBackend,
    /// Evaluation texts with their membership, in a fixed order.
    pub truth: GroundTruth,
    pub face_extractor: Option<&'a dyn FaceExtractor>,
    /// Real photo pool per text; the first `photos` are used.
    pub photo_pool: BTreeMap<String, PhotoSet>,
}

/// Gibberish texts for one run; rejects any overlap with the evaluation texts.
pub fn generate_gibberish(
    kind: GibberishKind,
    count: usize,
    length: usize,
    seed: u64,
    forbidden: &GroundTruth,
) -> Result<Vec<String>> {
    let texts = match kind {
        GibberishKind::Random => gibberish::generate_random_gibberish(&GibberishConfig {
            count,
            length,
            seed,
            ..Default::default()
        })?,
        GibberishKind::Covert => {
            gibberish::generate_covert_names(count, &SyllableLexicon::default(), seed)?
        }
    };
    let lowered: std::collections::HashSet<String> =
        forbidden.keys().map(|k| k.to_lowercase()).collect();
    if let Some(hit) = texts.iter().find(|t| lowered.contains(&t.to_lowercase())) {
        return Err(Error::invalid(format!(
            "gibberish {hit:?} equals an evaluation identity"
        )));
    }
    Ok(texts)
}

fn queries(texts: impl IntoIterator<Item = impl Into<String>>) -> Result<Vec<TextQuery>> {
    texts.into_iter().map(TextQuery::new).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub text_only: Vec<DetectionResult>,
    pub enhanced: Option<Vec<DetectionResult>>,
}

/// One full pipeline pass with the given seed.
pub fn run_once(
    benchmark: &Benchmark<'_>,
    config: &ExperimentConfig,
    repeat: usize,
) -> Result<RepeatOutcome> {
    let seed = config.repeat_seed(repeat);
    let gib = generate_gibberish(
        config.gibberish_kind,
        config.gibberish_count,
        config.gibberish_length,
        seed,
        &benchmark.truth,
    )
    .map_err(|e| e.in_stage("gibberish", seed))?;
    let optimization = OptimizationConfig {
        seed,
        ..config.optimization.clone()
    };
    let gib_features = batch_extract(benchmark.backend, &queries(gib)?, &optimization, None, None)
        .map_err(|e| e.in_stage("extract-gibberish", seed))?;
    let ensemble_config = EnsembleConfig {
        seed,
        ..config.ensemble.clone()
    };
    let model =
        fit_ensemble(&gib_features, &ensemble_config).map_err(|e| e.in_stage("fit", seed))?;

    let photo_sets: BTreeMap<String, PhotoSet> = benchmark
        .photo_pool
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                PhotoSet {
                    photos: v.photos.iter().take(config.photos).cloned().collect(),
                },
            )
        })
        .collect();
    let ctx = match (config.photos, benchmark.face_extractor) {
        (0, _) => None,
        (_, None) => {
            return Err(Error::invalid(
                "photo enhancement requested without a face extractor",
            ))
        }
        (_, Some(extractor)) => Some(PhotoContext {
            extractor,
            photos: &photo_sets,
            k: config.photo_images,
        }),
    };
    let test = queries(benchmark.truth.keys().cloned())?;
    let features = batch_extract(benchmark.backend, &test, &optimization, ctx.as_ref(), None)
        .map_err(|e| e.in_stage("extract", seed))?;
    let text_only = features
        .rows
        .iter()
        .map(|f| infer(&model, f))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("infer", seed))?;
    let enhanced = match ctx {
        Some(_) => Some(
            enhanced_infer(
                &model,
                &features,
                seed::derive_seed(seed, &["cluster".into()]),
            )
            .map_err(|e| e.in_stage("enhance", seed))?,
        ),
        None => None,
    };
    Ok(RepeatOutcome {
        repeat,
        seed,
        text_only,
        enhanced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub repeat: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub text_only: MetricsReport,
    pub enhanced: Option<MetricsReport>,
    pub runs: Vec<RepeatOutcome>,
    pub failures: Vec<RepeatFailure>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Runs all repeats in parallel; fewer than half succeeding fails the experiment.
pub fn run_experiment(
    benchmark: &Benchmark<'_>,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<Result<RepeatOutcome>> = (0..config.repeats)
        .into_par_iter()
        .map(|r| run_once(benchmark, config, r))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (repeat, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::warn!("repeat {repeat} failed: {e}");
                failures.push(RepeatFailure {
                    repeat,
                    seed: config.repeat_seed(repeat),
                    error: e.to_string(),
                });
            }
        }
    }
    if runs.len() * 2 < config.repeats {
        return Err(Error::Numerical(format!(
            "only {} of {} repeats succeeded; first failure: {}",
            runs.len(),
            config.repeats,
            failures.first().map(|f| f.error.as_str()).unwrap_or("")
        )));
    }
    let text_metrics = runs
        .iter()
        .map(|r| compute_metrics(&r.text_only, &benchmark.truth))
        .collect::<Result<Vec<_>>>()?;
    let enhanced_metrics = runs
        .iter()
        .filter_map(|r| r.enhanced.as_ref())
        .map(|e| compute_metrics(e, &benchmark.truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config_hash: config.config_hash(),
        config: config.clone(),
        text_only: MetricsReport::from_metrics(config.repeats, &text_metrics),
        enhanced: (!enhanced_metrics.is_empty())
            .then(|| MetricsReport::from_metrics(config.repeats, &enhanced_metrics)),
        runs,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Ascent iterations per epoch.
    Iterations,
    /// Epochs per text.
    Epochs,
    /// Gibberish count.
    Gibberish,
    /// Text-only vote threshold.
    Threshold,
    /// Photo-enhanced vote threshold.
    EnhancedThreshold,
    /// Real photos per identity.
    Photos,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Iterations => "m",
            SweepParam::Epochs => "n",
            SweepParam::Gibberish => "l",
            SweepParam::Threshold => "N",
            SweepParam::EnhancedThreshold => "N'",
            SweepParam::Photos => "photos",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "m" | "iterations" => SweepParam::Iterations,
            "n" | "epochs" => SweepParam::Epochs,
            "l" | "gibberish" => SweepParam::Gibberish,
            "N" | "threshold" => SweepParam::Threshold,
            "N'" | "enhanced-threshold" => SweepParam::EnhancedThreshold,
            "photos" => SweepParam::Photos,
            other => return Err(Error::invalid(format!("unknown sweep parameter `{other}`"))),
        })
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Iterations => c.optimization.iterations = value,
            SweepParam::Epochs => c.optimization.epochs = value,
            SweepParam::Gibberish => c.gibberish_count = value,
            SweepParam::Threshold => c.ensemble.threshold = value,
            SweepParam::EnhancedThreshold => c.ensemble.enhanced_threshold = value,
            SweepParam::Photos => c.photos = value,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub base: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub report: std::result::Result<ExperimentReport, String>,
}

/// One experiment per grid value; failed points are recorded and the sweep continues.
pub fn ablation_sweep(benchmark: &Benchmark<'_>, spec: &AblationSpec) -> Result<Vec<SweepPoint>> {
    if spec.values.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    Ok(spec
        .values
        .iter()
        .map(|&value| {
            let config = spec.param.apply(&spec.base, value);
            let report = run_experiment(benchmark, &config).map_err(|e| {
                log::warn!("sweep point {}={value} failed: {e}", spec.param.name());
                e.to_string()
            });
            SweepPoint { value, report }
        })
        .collect())
}

pub const SWEEP_HEADER: [&str; 8] = [
    "param",
    "value",
    "accuracy_mean",
    "accuracy_std",
    "precision_mean",
    "precision_std",
    "recall_mean",
    "recall_std",
];

/// Plot-ready table; photo sweeps use the enhanced metrics, failed points have empty cells.
pub fn write_sweep_table(
    path: impl AsRef<Path>,
    param: SweepParam,
    points: &[SweepPoint],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        let metrics = p.report.as_ref().ok().map(|r| match (param, &r.enhanced) {
            (SweepParam::Photos | SweepParam::EnhancedThreshold, Some(e)) => e,
            _ => &r.text_only,
        });
        let mut row = vec![param.name().to_owned(), p.value.to_string()];
        match metrics {
            Some(m) => {
                for s in [m.accuracy, m.precision, m.recall] {
                    row.push(cell(s.mean));
                    row.push(cell(s.std));
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Settings for the built-in toy benchmark: a trained synthetic target with
/// known membership, reference photos and a face extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBenchmarkConfig {
    pub dataset: DatasetConfig,
    pub training: ContrastiveTrainConfig,
    /// Reference photos generated per identity for enhancement.
    pub photo_pool: usize,
    pub face_dim: usize,
    pub seed: u64,
}

impl Default for ToyBenchmarkConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            // a softer temperature than the trainer default aligns member
            // names closely enough with their photos at this scale
            training: ContrastiveTrainConfig {
                temperature: 0.15,
                ..ContrastiveTrainConfig::default()
            },
            photo_pool: 5,
            face_dim: 16,
            seed: 0,
        }
    }
}

pub struct ToyBenchmark {
    pub dataset: IdentityDataset,
    pub backend: SyntheticBackend,
    pub training: TrainReport,
    pub face_extractor: ProjectionFaceExtractor,
    pub photo_pool: BTreeMap<String, PhotoSet>,
}

impl ToyBenchmarkConfig {
    /// Dataset and training seeds are derived from `seed`.
    pub fn build(&self) -> Result<ToyBenchmark> {
        let dataset = generate_identity_dataset(&DatasetConfig {
            seed: seed::derive_seed(self.seed, &["dataset".into()]),
            ..self.dataset.clone()
        })?;
        let (backend, training) = train_contrastive(
            &dataset,
            &ContrastiveTrainConfig {
                seed: seed::derive_seed(self.seed, &["training".into()]),
                ..self.training.clone()
            },
        )?;
        let shape = backend.info().image_shape.clone();
        let face_extractor = ProjectionFaceExtractor::random(
            shape,
            self.face_dim,
            seed::derive_seed(self.seed, &["face".into()]),
        )?;
        let photo_pool = dataset.reference_photo_sets(
            self.photo_pool,
            seed::derive_seed(self.seed, &["photos".into()]),
        )?;
        Ok(ToyBenchmark {
            dataset,
            backend,
            training,
            face_extractor,
            photo_pool,
        })
    }
}

impl ToyBenchmark {
    pub fn benchmark(&self) -> Benchmark<'_> {
        Benchmark {
            backend: &self.backend,
            truth: self.dataset.ground_truth(),
            face_extractor: Some(&self.face_extractor),
            photo_pool: self.photo_pool.clone(),
        }
    }
}
