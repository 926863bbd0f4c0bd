//! File-staged pipeline runs.
//!
//! A *target directory* bundles what `train-target` produces: the trained
//! backend, its dataset, ground truth, reference photos and a face
//! extractor. [`run_pipeline`] takes a backend plus evaluation texts through
//! gibberish, extraction, fitting, inference and (optionally) enhancement,
//! writing every intermediate into an output directory so an interrupted run
//! can pick up where it stopped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{EmbeddingBackend, TextQuery};
use crate::config::RunConfig;
use crate::ensemble::{fit_ensemble, infer, write_votes, DetectionResult, EnsembleConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, compute_metrics, GroundTruth, Metrics, ToyBenchmark};
use crate::features::{batch_extract, FeatureStore, OptimizationConfig};
use crate::gibberish;
use crate::photo::{enhanced_infer, save_photo_sets, FaceExtractor, PhotoContext, PhotoSet};
use crate::seed;

pub const TARGET_BACKEND: &str = "backend.bin";
pub const TARGET_DATASET: &str = "dataset";
pub const TARGET_TRUTH: &str = "truth.csv";
pub const TARGET_TEXTS: &str = "texts.txt";
pub const TARGET_FACE: &str = "face.bin";
pub const TARGET_PHOTOS: &str = "photos";
pub const TARGET_TRAINING: &str = "training.json";

/// Paths inside a target directory.
#[derive(Debug, Clone)]
pub struct TargetDir(pub PathBuf);

impl TargetDir {
    pub fn backend(&self) -> PathBuf {
        self.0.join(TARGET_BACKEND)
    }

    pub fn truth(&self) -> PathBuf {
        self.0.join(TARGET_TRUTH)
    }

    pub fn texts(&self) -> PathBuf {
        self.0.join(TARGET_TEXTS)
    }

    pub fn face(&self) -> PathBuf {
        self.0.join(TARGET_FACE)
    }

    pub fn photos(&self) -> PathBuf {
        self.0.join(TARGET_PHOTOS)
    }

    pub fn dataset(&self) -> PathBuf {
        self.0.join(TARGET_DATASET)
    }

    pub fn training(&self) -> PathBuf {
        self.0.join(TARGET_TRAINING)
    }
}

/// Writes a built toy benchmark as a target directory.
pub fn save_target(toy: &ToyBenchmark, dir: impl AsRef<Path>) -> Result<TargetDir> {
    let target = TargetDir(dir.as_ref().to_path_buf());
    fs::create_dir_all(&target.0)?;
    toy.backend.save(target.backend())?;
    toy.dataset.save(target.dataset())?;
    let truth = toy.dataset.ground_truth();
    evaluation::write_truth(target.truth(), &truth)?;
    let texts: Vec<String> = toy.dataset.names().into_iter().map(str::to_owned).collect();
    gibberish::export(target.texts(), &texts)?;
    toy.face_extractor.save(target.face())?;
    save_photo_sets(target.photos(), &toy.photo_pool)?;
    fs::write(
        target.training(),
        serde_json::to_string_pretty(&toy.training)? + "\n",
    )?;
    Ok(target)
}

/// One text per line, blank lines skipped.
pub fn read_texts(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read texts {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn queries(texts: &[String]) -> Result<Vec<TextQuery>> {
    texts.iter().map(|t| TextQuery::new(t.as_str())).collect()
}

/// The first `count` photos of each set.
pub fn take_photos(pool: &BTreeMap<String, PhotoSet>, count: usize) -> BTreeMap<String, PhotoSet> {
    pool.iter()
        .map(|(k, v)| {
            (
                k.clone(),
                PhotoSet {
                    photos: v.photos.iter().take(count).cloned().collect(),
                },
            )
        })
        .collect()
}

pub const STAGE_GIBBERISH: &str = "gibberish.txt";
pub const STAGE_GIBBERISH_FEATURES: &str = "gibberish_features.csv";
pub const STAGE_ENSEMBLE: &str = "ensemble.bin";
pub const STAGE_FEATURES: &str = "features.csv";
pub const STAGE_VOTES: &str = "votes.csv";
pub const STAGE_ENHANCED_VOTES: &str = "votes_enhanced.csv";
pub const STAGE_CONFIG: &str = "run.toml";
pub const STAGE_REPORT: &str = "report.json";

/// Inputs for one pipeline run.
pub struct PipelineInputs<'a> {
    pub backend: &'a dyn EmbeddingBackend,
    pub texts: Vec<String>,
    pub truth: Option<GroundTruth>,
    pub face: Option<&'a dyn FaceExtractor>,
    pub photo_pool: BTreeMap<String, PhotoSet>,
}

/// The settings that determine a run's results. Paths and worker counts are
/// left out so that reports do not depend on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub seed: u64,
    pub optimization: OptimizationConfig,
    pub gibberish: crate::config::GibberishOptions,
    pub ensemble: EnsembleConfig,
    pub photos: usize,
    pub photo_images: Option<usize>,
}

impl PipelineSettings {
    pub fn from_run(run: &RunConfig, seed: u64) -> Self {
        Self {
            seed,
            optimization: OptimizationConfig {
                seed,
                ..run.optimization.clone()
            },
            gibberish: run.gibberish.clone(),
            ensemble: EnsembleConfig {
                seed,
                ..run.ensemble.clone()
            },
            photos: run.photos.count,
            photo_images: run.photos.images,
        }
    }

    pub fn config_hash(&self) -> String {
        seed::short_hash(&serde_json::to_string(self).expect("settings serialize"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub settings: PipelineSettings,
    pub backend_id: String,
    pub gibberish: usize,
    pub texts: usize,
    pub text_only: Option<Metrics>,
    pub enhanced: Option<Metrics>,
    pub results: Vec<DetectionResult>,
    pub enhanced_results: Option<Vec<DetectionResult>>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn open_store(path: &Path, resume: bool) -> Result<FeatureStore> {
    if !resume && path.exists() {
        fs::remove_file(path)?;
    }
    FeatureStore::open(path)
}

/// Runs every stage, persisting intermediates in `out`.
///
/// With `resume`, feature rows already in `out` are reused; the run's
/// settings must match those recorded when the directory was first used.
pub fn run_pipeline(
    inputs: &PipelineInputs<'_>,
    settings: &PipelineSettings,
    out: impl AsRef<Path>,
    resume: bool,
) -> Result<PipelineReport> {
    let out = out.as_ref();
    let seed = settings.seed;
    settings.optimization.validate()?;
    settings.ensemble.validate()?;
    if inputs.texts.is_empty() {
        return Err(Error::invalid("no evaluation texts"));
    }
    fs::create_dir_all(out)?;
    let settings_text = toml::to_string(settings).expect("settings serialize");
    let config_path = out.join(STAGE_CONFIG);
    if resume && config_path.exists() && fs::read_to_string(&config_path)? != settings_text {
        return Err(Error::invalid(format!(
            "--resume: settings differ from those recorded in {}",
            config_path.display()
        )));
    }
    fs::write(&config_path, &settings_text)?;

    let gib = settings
        .gibberish
        .generate(seed)
        .map_err(|e| e.in_stage("gibberish", seed))?;
    if let Some(hit) = gib
        .iter()
        .find(|g| inputs.texts.iter().any(|t| t.eq_ignore_ascii_case(g)))
    {
        return Err(
            Error::invalid(format!("gibberish {hit:?} equals an evaluation text"))
                .in_stage("gibberish", seed),
        );
    }
    gibberish::export(out.join(STAGE_GIBBERISH), &gib)?;

    let mut gib_store = open_store(&out.join(STAGE_GIBBERISH_FEATURES), resume)?;
    let gib_features = batch_extract(
        inputs.backend,
        &queries(&gib)?,
        &settings.optimization,
        None,
        Some(&mut gib_store),
    )
    .map_err(|e| e.in_stage("extract-gibberish", seed))?;

    let model =
        fit_ensemble(&gib_features, &settings.ensemble).map_err(|e| e.in_stage("fit", seed))?;
    model.save(out.join(STAGE_ENSEMBLE))?;

    let photo_sets = take_photos(&inputs.photo_pool, settings.photos);
    let ctx = match (settings.photos, inputs.face) {
        (0, _) => None,
        (_, None) => return Err(Error::invalid("photo enhancement needs a face extractor")),
        (_, Some(extractor)) => Some(PhotoContext {
            extractor,
            photos: &photo_sets,
            k: settings.photo_images,
        }),
    };
    let mut store = open_store(&out.join(STAGE_FEATURES), resume)?;
    let features = batch_extract(
        inputs.backend,
        &queries(&inputs.texts)?,
        &settings.optimization,
        ctx.as_ref(),
        Some(&mut store),
    )
    .map_err(|e| e.in_stage("extract", seed))?;

    let results = features
        .rows
        .iter()
        .map(|f| infer(&model, f))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("infer", seed))?;
    write_votes(out.join(STAGE_VOTES), &results)?;
    let enhanced_results = match ctx {
        Some(_) => {
            let e = enhanced_infer(
                &model,
                &features,
                seed::derive_seed(seed, &["cluster".into()]),
            )
            .map_err(|e| e.in_stage("enhance", seed))?;
            write_votes(out.join(STAGE_ENHANCED_VOTES), &e)?;
            Some(e)
        }
        None => None,
    };

    let metrics = |r: &[DetectionResult]| -> Result<Option<Metrics>> {
        inputs
            .truth
            .as_ref()
            .map(|t| compute_metrics(r, t))
            .transpose()
            .map_err(|e| e.in_stage("evaluate", seed))
    };
    let report = PipelineReport {
        config_hash: settings.config_hash(),
        settings: settings.clone(),
        backend_id: inputs.backend.info().backend_id.clone(),
        gibberish: gib.len(),
        texts: inputs.texts.len(),
        text_only: metrics(&results)?,
        enhanced: enhanced_results
            .as_deref()
            .map(metrics)
            .transpose()?
            .flatten(),
        results,
        enhanced_results,
    };
    fs::write(out.join(STAGE_REPORT), report.to_json()?)?;
    Ok(report)
}
