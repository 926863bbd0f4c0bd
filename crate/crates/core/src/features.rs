//! Model-guided image optimization and the per-text features it yields.
//!
//! For a text `t`, each of `n` epochs starts from a uniform random image and
//! runs `m` projected gradient-ascent steps on `cos(embed(t), embed(x))`. The
//! features are the mean optimized similarity `S` and the root-mean-squared
//! distance `D` of the per-epoch optimized image embeddings from their mean.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    cosine_similarity, spsa_gradient_estimate, Embedding, EmbeddingBackend, ImageTensor, TextQuery,
};
use crate::ensemble::{FeatureDim, FeatureSet};
use crate::error::{Error, Result};
use crate::photo::{compute_r_feature, PhotoContext};
use crate::seed::{self, SeedPart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Backend-provided analytic gradients.
    Exact,
    /// Zeroth-order estimates from embedding queries only.
    Spsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    /// Independent optimizations per text (`n`).
    pub epochs: usize,
    /// Ascent steps per epoch (`m`).
    pub iterations: usize,
    pub learning_rate: f64,
    pub mode: GradientMode,
    pub spsa_samples: usize,
    pub spsa_perturbation: f64,
    pub seed: u64,
    /// Keep the per-iteration similarity curve in the trace.
    #[serde(skip)]
    pub record_curve: bool,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            iterations: 1000,
            learning_rate: 0.02,
            mode: GradientMode::Exact,
            spsa_samples: 8,
            spsa_perturbation: 1e-3,
            seed: 0,
            record_curve: false,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.mode == GradientMode::Spsa {
            if self.spsa_samples == 0 {
                return Err(Error::invalid("spsa_samples must be at least 1"));
            }
            if !(self.spsa_perturbation > 0.0) {
                return Err(Error::invalid("spsa_perturbation must be positive"));
            }
        }
        Ok(())
    }

    /// Short digest of every setting that affects extracted features.
    pub fn config_hash(&self) -> String {
        let canonical = format!(
            "n={};m={};lr={:e};mode={:?};spsa_samples={};spsa_perturbation={:e};seed={}",
            self.epochs,
            self.iterations,
            self.learning_rate,
            self.mode,
            self.spsa_samples,
            self.spsa_perturbation,
            self.seed
        );
        seed::short_hash(&canonical)
    }
}

/// Per-text features. `r` is present only when photo enhancement ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub text_id: String,
    pub s: f64,
    pub d: f64,
    pub r: Option<f64>,
    pub n_effective: usize,
}

impl FeatureVector {
    pub fn columns(&self, dims: &[FeatureDim]) -> Result<Vec<f64>> {
        dims.iter()
            .map(|d| match d {
                FeatureDim::S => Ok(self.s),
                FeatureDim::D => Ok(self.d),
                FeatureDim::R => self.r.ok_or_else(|| {
                    Error::invalid(format!("feature row `{}` has no R value", self.text_id))
                }),
            })
            .map(|v| {
                v.and_then(|x| {
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(Error::Numerical(format!(
                            "non-finite feature in row `{}`",
                            self.text_id
                        )))
                    }
                })
            })
            .collect()
    }
}

/// Outcome of one optimization epoch.
#[derive(Debug, Clone)]
pub struct OptimizedImage {
    pub image: ImageTensor,
    pub similarity: f64,
    pub embedding: Embedding,
    /// Similarity before each step plus the final value, when recorded.
    pub curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct EpochTrace {
    pub epochs: Vec<OptimizedImage>,
    pub failed: usize,
}

impl EpochTrace {
    pub fn similarities(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.similarity).collect()
    }

    pub fn images(&self) -> Vec<&ImageTensor> {
        self.epochs.iter().map(|e| &e.image).collect()
    }
}

fn check_finite(sim: f64, grad: &[f64]) -> Result<()> {
    if !sim.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite similarity or gradient (similarity {sim})"
        )));
    }
    Ok(())
}

/// Runs one epoch of projected gradient ascent from a seeded uniform image.
pub fn optimize_image(
    backend: &dyn EmbeddingBackend,
    target: &Embedding,
    config: &OptimizationConfig,
    epoch_seed: u64,
) -> Result<OptimizedImage> {
    config.validate()?;
    let info = backend.info();
    if config.mode == GradientMode::Exact && !info.grad_support {
        return Err(Error::Unsupported {
            backend: info.backend_id.clone(),
            op: "similarity_gradient",
        });
    }
    let mut rng = seed::rng(epoch_seed);
    let mut image = ImageTensor::random_uniform(info.image_shape.clone(), &mut rng);
    let mut curve = config
        .record_curve
        .then(|| Vec::with_capacity(config.iterations + 1));

    for step in 0..config.iterations {
        let grad = match config.mode {
            GradientMode::Exact => {
                let g = backend.similarity_gradient(target, &image)?;
                check_finite(g.similarity, &g.grad)?;
                if let Some(c) = curve.as_mut() {
                    c.push(g.similarity);
                }
                g.grad
            }
            GradientMode::Spsa => {
                if let Some(c) = curve.as_mut() {
                    c.push(cosine_similarity(target, &backend.embed_image(&image)?)?);
                }
                let g = spsa_gradient_estimate(
                    backend,
                    target,
                    &image,
                    config.spsa_perturbation,
                    config.spsa_samples,
                    seed::derive_seed(epoch_seed, &["spsa".into(), step.into()]),
                )?;
                check_finite(0.0, &g)?;
                g
            }
        };
        image.ascend(&grad, config.learning_rate);
    }

    let embedding = backend.embed_image(&image)?;
    let similarity = cosine_similarity(target, &embedding)?;
    check_finite(similarity, &[])?;
    if let Some(c) = curve.as_mut() {
        c.push(similarity);
    }
    Ok(OptimizedImage {
        image,
        similarity,
        embedding,
        curve,
    })
}

/// `S = mean(S_i)` and `D = sqrt(mean ‖v_i − v̄‖²)` over the epochs.
pub fn features_from_epochs(similarities: &[f64], embeddings: &[&[f64]]) -> Result<(f64, f64)> {
    let n = similarities.len();
    if n == 0 || embeddings.len() != n {
        return Err(Error::invalid(
            "need one embedding per similarity and at least one epoch",
        ));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::invalid("epoch embeddings differ in dimension"));
    }
    let s = similarities.iter().sum::<f64>() / n as f64;
    // shifted by the first embedding so identical epochs give exactly D = 0
    let origin = embeddings[0];
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for ((m, x), o) in mean.iter_mut().zip(e.iter()).zip(origin) {
            *m += x - o;
        }
    }
    for (m, o) in mean.iter_mut().zip(origin) {
        *m = o + *m / n as f64;
    }
    let spread = embeddings
        .iter()
        .map(|e| {
            e.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    Ok((s, spread.sqrt()))
}

pub fn epoch_seed(master: u64, text: &str, epoch: usize) -> u64 {
    seed::derive_seed(
        master,
        &[SeedPart::Label("epoch"), text.into(), epoch.into()],
    )
}

/// Extracts `(S, D)` for one text. Epochs with non-finite values are dropped;
/// more than 10% dropped fails the extraction.
pub fn extract_features(
    backend: &dyn EmbeddingBackend,
    text: &TextQuery,
    config: &OptimizationConfig,
) -> Result<(FeatureVector, EpochTrace)> {
    config.validate()?;
    let target = backend.embed_text(text)?;
    let outcomes: Vec<Result<OptimizedImage>> = (0..config.epochs)
        .into_par_iter()
        .map(|i| {
            optimize_image(
                backend,
                &target,
                config,
                epoch_seed(config.seed, text.as_str(), i),
            )
        })
        .collect();
    let mut trace = EpochTrace::default();
    for outcome in outcomes {
        match outcome {
            Ok(epoch) => trace.epochs.push(epoch),
            Err(Error::Numerical(msg)) => {
                log::warn!("dropping epoch for {text:?}: {msg}");
                trace.failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if trace.failed * 10 > config.epochs || trace.epochs.is_empty() {
        return Err(Error::Numerical(format!(
            "{} of {} epochs failed for {text:?}",
            trace.failed, config.epochs
        )));
    }
    let embeddings: Vec<&[f64]> = trace.epochs.iter().map(|e| e.embedding.values()).collect();
    let (s, d) = features_from_epochs(&trace.similarities(), &embeddings)?;
    Ok((
        FeatureVector {
            text_id: text.as_str().to_owned(),
            s,
            d,
            r: None,
            n_effective: trace.epochs.len(),
        },
        trace,
    ))
}

fn extract_one(
    backend: &dyn EmbeddingBackend,
    text: &TextQuery,
    config: &OptimizationConfig,
    photos: Option<&PhotoContext<'_>>,
) -> Result<FeatureVector> {
    let (mut fv, trace) = extract_features(backend, text, config)?;
    if let Some(ctx) = photos {
        if let Some(set) = ctx.photos.get(text.as_str()) {
            let k = ctx.k.unwrap_or(trace.epochs.len()).min(trace.epochs.len());
            let images = trace.images();
            fv.r = Some(compute_r_feature(ctx.extractor, set, &images[..k])?);
        }
    }
    Ok(fv)
}

/// Extracts features for a batch of texts, in input order.
///
/// With a store, rows already present are reused and new rows are appended
/// chunk by chunk, so an interrupted run can be resumed. Work is spread over
/// the ambient rayon pool; results do not depend on its size.
pub fn batch_extract(
    backend: &dyn EmbeddingBackend,
    texts: &[TextQuery],
    config: &OptimizationConfig,
    photos: Option<&PhotoContext<'_>>,
    mut store: Option<&mut FeatureStore>,
) -> Result<FeatureSet> {
    config.validate()?;
    if texts.is_empty() {
        return Err(Error::invalid("batch_extract needs at least one text"));
    }
    let mut seen = HashSet::new();
    for t in texts {
        if !seen.insert(t.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate text id {:?}",
                t.as_str()
            )));
        }
    }
    let hash = config.config_hash();
    let mut done: BTreeMap<String, FeatureVector> = BTreeMap::new();
    if let Some(store) = store.as_deref() {
        for (id, (row, row_hash)) in &store.rows {
            if seen.contains(id.as_str()) {
                if *row_hash != hash {
                    return Err(Error::invalid(format!(
                        "feature store row {id:?} was extracted with config {row_hash}, not {hash}"
                    )));
                }
                done.insert(id.clone(), row.clone());
            }
        }
    }
    let pending: Vec<&TextQuery> = texts
        .iter()
        .filter(|t| !done.contains_key(t.as_str()))
        .collect();
    let chunk = if store.is_some() {
        (rayon::current_num_threads() * 2).max(1)
    } else {
        pending.len().max(1)
    };
    for batch in pending.chunks(chunk) {
        let rows: Vec<FeatureVector> = batch
            .par_iter()
            .map(|t| extract_one(backend, t, config, photos))
            .collect::<Result<_>>()?;
        if let Some(store) = store.as_deref_mut() {
            store.append(&rows, &hash)?;
        }
        for row in rows {
            done.insert(row.text_id.clone(), row);
        }
    }
    Ok(FeatureSet::new(
        texts
            .iter()
            .map(|t| done.remove(t.as_str()).expect("every text extracted"))
            .collect(),
    ))
}

pub const FEATURE_HEADER: [&str; 6] = ["text_id", "S", "D", "R", "n_effective", "config_hash"];

/// Append-only feature file with header `text_id,S,D,R,n_effective,config_hash`.
#[derive(Debug)]
pub struct FeatureStore {
    path: PathBuf,
    rows: BTreeMap<String, (FeatureVector, String)>,
}

fn format_record(row: &FeatureVector, hash: &str) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        row.text_id.clone(),
        row.s.to_string(),
        row.d.to_string(),
        row.r.map(|r| r.to_string()).unwrap_or_default(),
        row.n_effective.to_string(),
        hash.to_owned(),
    ])?;
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::format(format!("bad {what} value `{s}`")))
}

fn parse_rows(bytes: &[u8]) -> Result<Vec<(FeatureVector, String)>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != FEATURE_HEADER {
        return Err(Error::format(format!(
            "unexpected feature header {header:?}"
        )));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != FEATURE_HEADER.len() {
                return Err(Error::format("feature record has wrong field count"));
            }
            Ok((
                FeatureVector {
                    text_id: rec[0].to_owned(),
                    s: parse_f64(&rec[1], "S")?,
                    d: parse_f64(&rec[2], "D")?,
                    r: match &rec[3] {
                        "" => None,
                        v => Some(parse_f64(v, "R")?),
                    },
                    n_effective: rec[4]
                        .parse()
                        .map_err(|_| Error::format("bad n_effective"))?,
                },
                rec[5].to_owned(),
            ))
        })
        .collect()
}

impl FeatureStore {
    /// Opens or creates a store. An incomplete trailing line (an interrupted
    /// write) is discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut rows = BTreeMap::new();
        if path.exists() {
            let mut bytes = fs::read(&path)?;
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            if complete < bytes.len() {
                bytes.truncate(complete);
                fs::write(&path, &bytes)?;
            }
            if !bytes.is_empty() {
                for (row, hash) in parse_rows(&bytes)? {
                    rows.insert(row.text_id.clone(), (row, hash));
                }
            }
        }
        if !path.exists() || fs::metadata(&path)?.len() == 0 {
            let mut f = File::create(&path)?;
            f.write_all(FEATURE_HEADER.join(",").as_bytes())?;
            f.write_all(b"\n")?;
        }
        Ok(Self { path, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, text_id: &str) -> Option<&FeatureVector> {
        self.rows.get(text_id).map(|(r, _)| r)
    }

    pub fn append(&mut self, rows: &[FeatureVector], config_hash: &str) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        let mut buf = Vec::new();
        for row in rows {
            buf.extend(format_record(row, config_hash)?);
        }
        f.write_all(&buf)?;
        f.flush()?;
        for row in rows {
            self.rows
                .insert(row.text_id.clone(), (row.clone(), config_hash.to_owned()));
        }
        Ok(())
    }
}

pub fn write_features(path: impl AsRef<Path>, set: &FeatureSet, config_hash: &str) -> Result<()> {
    let mut buf = FEATURE_HEADER.join(",").into_bytes();
    buf.push(b'\n');
    for row in &set.rows {
        buf.extend(format_record(row, config_hash)?);
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a feature file in file order.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let bytes = fs::read(path)?;
    Ok(FeatureSet::new(
        parse_rows(&bytes)?.into_iter().map(|(r, _)| r).collect(),
    ))
}
