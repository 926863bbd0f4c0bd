//! Miniature contrastive text–image training with known membership.
//!
//! Identities are synthetic "faces": a Gaussian prototype in pixel space plus
//! per-photo noise. Half of the identities (the members) have their
//! `(name, photo)` pairs in the training pool together with unrelated
//! caption/image distractors; the other half never reach the trainer.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::{
    cosine_similarity, Activation, EmbeddingBackend, ImageTensor, SyntheticBackend,
    SyntheticConfig, TextQuery,
};
use crate::error::{Error, Result};
use crate::gibberish;
use crate::photo::{PhotoSet, RealPhoto};
use crate::seed;

const SURNAMES: &str = include_str!("../data/surnames.txt");

const CAPTION_WORDS: &[&str] = &[
    "a", "photo", "of", "the", "red", "blue", "green", "small", "large", "old", "new", "car",
    "dog", "cat", "tree", "house", "river", "bridge", "mountain", "street", "beach", "table",
    "chair", "window", "garden", "city", "night", "morning", "sunset", "boat", "bird", "flower",
    "road", "train", "field", "lake", "market", "kitchen", "book", "lamp", "wall", "sky", "cloud",
    "snow", "forest", "with", "near", "under", "on", "in",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub name: String,
    pub prototype: Vec<f64>,
    pub images: Vec<ImageTensor>,
    pub is_member: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityDataset {
    pub identities: Vec<Identity>,
    pub photos_per_identity: usize,
    pub distractors: Vec<(String, ImageTensor)>,
    pub image_shape: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub identities: usize,
    pub photos_per_identity: usize,
    pub image_shape: Vec<usize>,
    /// Distractor pairs; `None` means ten per member pair.
    pub distractors: Option<usize>,
    /// Standard deviation of the per-pixel prototype around 0.5.
    pub prototype_spread: f64,
    /// Per-photo noise around the prototype.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            identities: 80,
            photos_per_identity: 1,
            image_shape: vec![12],
            distractors: None,
            prototype_spread: 0.25,
            noise: 0.05,
            seed: 0,
        }
    }
}

fn noisy_copy<R: Rng + ?Sized>(prototype: &[f64], noise: f64, rng: &mut R) -> Vec<f64> {
    prototype
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(rng);
            (p + noise * z).clamp(0.0, 1.0)
        })
        .collect()
}

/// Distinct "First Last" names from the shipped first-name list and a surname list.
fn identity_names<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Vec<String>> {
    let firsts = gibberish::real_names();
    let surnames = gibberish::parse_name_list(SURNAMES);
    if count > firsts.len() * surnames.len() {
        return Err(Error::invalid(format!(
            "cannot name {count} distinct identities"
        )));
    }
    let mut seen = HashSet::new();
    let mut names = Vec::with_capacity(count);
    while names.len() < count {
        let name = format!(
            "{} {}",
            firsts.choose(rng).expect("non-empty"),
            surnames.choose(rng).expect("non-empty")
        );
        if seen.insert(name.clone()) {
            names.push(name);
        }
    }
    Ok(names)
}

pub fn generate_identity_dataset(config: &DatasetConfig) -> Result<IdentityDataset> {
    if config.identities == 0 || !config.identities.is_multiple_of(2) {
        return Err(Error::invalid("identity count must be even and positive"));
    }
    if config.photos_per_identity == 0 {
        return Err(Error::invalid("photos_per_identity must be at least 1"));
    }
    let p: usize = config.image_shape.iter().product();
    if p == 0 {
        return Err(Error::invalid("image shape must be non-empty"));
    }
    if !(config.noise >= 0.0 && config.prototype_spread >= 0.0) {
        return Err(Error::invalid("noise levels must be non-negative"));
    }
    let mut rng = seed::derived_rng(config.seed, &["identity-dataset".into()]);
    let names = identity_names(config.identities, &mut rng)?;
    let mut identities: Vec<Identity> = names
        .into_iter()
        .map(|name| {
            let prototype: Vec<f64> = (0..p)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (0.5 + config.prototype_spread * z).clamp(0.0, 1.0)
                })
                .collect();
            let images = (0..config.photos_per_identity)
                .map(|_| {
                    ImageTensor::new(
                        config.image_shape.clone(),
                        noisy_copy(&prototype, config.noise, &mut rng),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Identity {
                name,
                prototype,
                images,
                is_member: false,
            })
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..identities.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..identities.len() / 2] {
        identities[i].is_member = true;
    }

    let members = config.identities / 2 * config.photos_per_identity;
    let count = config.distractors.unwrap_or(10 * members);
    let lowered: Vec<String> = identities.iter().map(|i| i.name.to_lowercase()).collect();
    let mut distractors = Vec::with_capacity(count);
    while distractors.len() < count {
        let words = rng.random_range(3..=6);
        let caption = (0..words)
            .map(|_| *CAPTION_WORDS.choose(&mut rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ");
        if lowered.iter().any(|n| caption.contains(n.as_str())) {
            continue;
        }
        let pixels: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        distractors.push((
            caption,
            ImageTensor::new(config.image_shape.clone(), pixels)?,
        ));
    }
    Ok(IdentityDataset {
        identities,
        photos_per_identity: config.photos_per_identity,
        distractors,
        image_shape: config.image_shape.clone(),
        noise: config.noise,
        seed: config.seed,
    })
}

/// One training pair. `group` identifies texts that count as the same
/// positive (all photos of one member share a group).
#[derive(Debug, Clone)]
pub struct TrainingPair<'a> {
    pub text: &'a str,
    pub image: &'a ImageTensor,
    pub group: usize,
    /// Index into `identities` for member photos; `None` for distractors.
    pub identity: Option<usize>,
}

impl IdentityDataset {
    pub fn members(&self) -> impl Iterator<Item = &Identity> {
        self.identities.iter().filter(|i| i.is_member)
    }

    pub fn non_members(&self) -> impl Iterator<Item = &Identity> {
        self.identities.iter().filter(|i| !i.is_member)
    }

    pub fn names(&self) -> Vec<&str> {
        self.identities.iter().map(|i| i.name.as_str()).collect()
    }

    pub fn ground_truth(&self) -> BTreeMap<String, bool> {
        self.identities
            .iter()
            .map(|i| (i.name.clone(), i.is_member))
            .collect()
    }

    /// Member pairs and distractors; non-member identities are never included.
    pub fn training_pool(&self) -> Vec<TrainingPair<'_>> {
        let mut pool = Vec::new();
        let mut group = 0;
        for (idx, identity) in self.identities.iter().enumerate() {
            if !identity.is_member {
                continue;
            }
            for image in &identity.images {
                pool.push(TrainingPair {
                    text: &identity.name,
                    image,
                    group,
                    identity: Some(idx),
                });
            }
            group += 1;
        }
        let mut caption_groups: BTreeMap<&str, usize> = BTreeMap::new();
        for (caption, image) in &self.distractors {
            let g = *caption_groups.entry(caption).or_insert_with(|| {
                group += 1;
                group - 1
            });
            pool.push(TrainingPair {
                text: caption,
                image,
                group: g,
                identity: None,
            });
        }
        pool
    }

    /// `count` fresh photos of an identity, as an attacker would collect them.
    /// They are drawn independently of the training images.
    pub fn reference_photos(&self, identity: usize, count: usize, seed: u64) -> Result<PhotoSet> {
        let id = self
            .identities
            .get(identity)
            .ok_or_else(|| Error::invalid(format!("no identity {identity}")))?;
        let mut rng =
            seed::derived_rng(seed, &["reference-photos".into(), id.name.as_str().into()]);
        let photos = (0..count)
            .map(|_| {
                RealPhoto::new(
                    self.image_shape.clone(),
                    noisy_copy(&id.prototype, self.noise, &mut rng),
                )
            })
            .collect::<Result<_>>()?;
        Ok(PhotoSet { photos })
    }

    /// Reference photos for every identity, keyed by name.
    pub fn reference_photo_sets(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<BTreeMap<String, PhotoSet>> {
        (0..self.identities.len())
            .map(|i| {
                Ok((
                    self.identities[i].name.clone(),
                    self.reference_photos(i, count, seed)?,
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveTrainConfig {
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub buckets: u32,
    pub ngram_min: u8,
    pub ngram_max: u8,
    pub activation: Activation,
    pub text_init_scale: f64,
    pub image_init_scale: f64,
    pub seed: u64,
}

impl Default for ContrastiveTrainConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.5,
            temperature: 0.07,
            buckets: 16384,
            ngram_min: 3,
            ngram_max: 4,
            activation: Activation::Tanh,
            text_init_scale: 0.1,
            image_init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ContrastiveTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim must be positive"));
        }
        Ok(())
    }

    pub fn backend_config(&self, image_len: usize) -> SyntheticConfig {
        let mut c = SyntheticConfig {
            embedding_dim: self.embedding_dim,
            image_len,
            activation: self.activation,
            normalize: true,
            text_init_scale: self.text_init_scale,
            image_init_scale: self.image_init_scale,
            seed: self.seed,
            ..SyntheticConfig::default()
        };
        c.tokenizer.buckets = self.buckets;
        c.tokenizer.ngram_min = self.ngram_min;
        c.tokenizer.ngram_max = self.ngram_max;
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
    /// Identity indices whose data the trainer read.
    pub accessed_identities: BTreeSet<usize>,
    pub margin: f64,
}

/// f64 working copy of the trainable parameters.
struct Params {
    text: Vec<f64>,
    image: Vec<f64>,
    bias: Vec<f64>,
}

struct Grads {
    text: BTreeMap<u32, Vec<f64>>,
    image: Vec<f64>,
    bias: Vec<f64>,
}

fn normalized(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = crate::stats::norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numerical(format!("embedding norm became {n}")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Symmetric multi-positive InfoNCE over one batch: returns the loss and
/// accumulates gradients.
#[allow(clippy::too_many_arguments)]
fn batch_step(
    params: &Params,
    tokens: &[&[(u32, f64)]],
    pixels: &[&[f64]],
    groups: &[usize],
    dim: usize,
    p: usize,
    activation: Activation,
    temperature: f64,
) -> Result<(f64, Grads)> {
    let b = tokens.len();
    let mut t = Vec::with_capacity(b);
    let mut t_norm = Vec::with_capacity(b);
    for toks in tokens {
        let mut u = vec![0.0; dim];
        for &(bucket, w) in toks.iter() {
            let col = &params.text[bucket as usize * dim..(bucket as usize + 1) * dim];
            for (o, c) in u.iter_mut().zip(col) {
                *o += w * c;
            }
        }
        let (unit, n) = normalized(&u)?;
        t.push(unit);
        t_norm.push(n);
    }
    let mut h = Vec::with_capacity(b);
    let mut v = Vec::with_capacity(b);
    let mut h_norm = Vec::with_capacity(b);
    for x in pixels {
        let hidden: Vec<f64> = (0..dim)
            .map(|r| {
                let row = &params.image[r * p..(r + 1) * p];
                activation.apply(params.bias[r] + crate::stats::dot(row, x))
            })
            .collect();
        let (unit, n) = normalized(&hidden)?;
        h.push(hidden);
        v.push(unit);
        h_norm.push(n);
    }
    let logits: Vec<Vec<f64>> = t
        .iter()
        .map(|ta| {
            v.iter()
                .map(|vb| crate::stats::dot(ta, vb) / temperature)
                .collect()
        })
        .collect();
    let same = |a: usize, c: usize| groups[a] == groups[c];

    // dLoss/dlogit, averaged over the two directions and the batch
    let mut g = vec![vec![0.0; b]; b];
    let mut loss = 0.0;
    for a in 0..b {
        let row = &logits[a];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
        let positives = (0..b).filter(|&c| same(a, c)).count() as f64;
        for c in 0..b {
            let prob = (row[c] - max).exp() / z;
            let target = if same(a, c) { 1.0 / positives } else { 0.0 };
            if target > 0.0 {
                loss -= target * (prob.ln());
            }
            g[a][c] += 0.5 * (prob - target) / b as f64;
        }
    }
    for c in 0..b {
        let max = (0..b)
            .map(|a| logits[a][c])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).map(|a| (logits[a][c] - max).exp()).sum();
        let positives = (0..b).filter(|&a| same(a, c)).count() as f64;
        for a in 0..b {
            let prob = (logits[a][c] - max).exp() / z;
            let target = if same(a, c) { 1.0 / positives } else { 0.0 };
            if target > 0.0 {
                loss -= target * (prob.ln());
            }
            g[a][c] += 0.5 * (prob - target) / b as f64;
        }
    }
    loss /= 2.0 * b as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("contrastive loss became {loss}")));
    }

    let mut grads = Grads {
        text: BTreeMap::new(),
        image: vec![0.0; dim * p],
        bias: vec![0.0; dim],
    };
    for a in 0..b {
        let mut dt = vec![0.0; dim];
        for c in 0..b {
            for (d, vc) in dt.iter_mut().zip(&v[c]) {
                *d += g[a][c] * vc / temperature;
            }
        }
        let proj = crate::stats::dot(&dt, &t[a]);
        let du: Vec<f64> = dt
            .iter()
            .zip(&t[a])
            .map(|(d, ti)| (d - ti * proj) / t_norm[a])
            .collect();
        for &(bucket, w) in tokens[a].iter() {
            let col = grads.text.entry(bucket).or_insert_with(|| vec![0.0; dim]);
            for (gc, d) in col.iter_mut().zip(&du) {
                *gc += w * d;
            }
        }
    }
    for c in 0..b {
        let mut dv = vec![0.0; dim];
        for a in 0..b {
            for (d, ta) in dv.iter_mut().zip(&t[a]) {
                *d += g[a][c] * ta / temperature;
            }
        }
        let proj = crate::stats::dot(&dv, &v[c]);
        for r in 0..dim {
            let dh = (dv[r] - v[c][r] * proj) / h_norm[c];
            let dz = dh * activation.derivative_from_output(h[c][r]);
            grads.bias[r] += dz;
            for (gi, x) in grads.image[r * p..(r + 1) * p]
                .iter_mut()
                .zip(pixels[c].iter())
            {
                *gi += dz * x;
            }
        }
    }
    Ok((loss, grads))
}

/// Trains a synthetic backend on the members' pairs and the distractors with
/// plain mini-batch gradient descent.
pub fn train_contrastive(
    dataset: &IdentityDataset,
    config: &ContrastiveTrainConfig,
) -> Result<(SyntheticBackend, TrainReport)> {
    config.validate()?;
    let p: usize = dataset.image_shape.iter().product();
    let backend_config = config.backend_config(p);
    let init = SyntheticBackend::random(&backend_config)?;
    let dim = config.embedding_dim;
    let mut params = Params {
        text: init.text_weights.iter().map(|&w| w as f64).collect(),
        image: init.image_weights(),
        bias: init.image_bias(),
    };
    let tokenizer = backend_config.tokenizer;

    let pool = dataset.training_pool();
    let mut report = TrainReport::default();
    for pair in &pool {
        if let Some(i) = pair.identity {
            report.accessed_identities.insert(i);
        }
    }
    let tokens: Vec<Vec<(u32, f64)>> = pool
        .iter()
        .map(|pair| tokenizer.tokenize(pair.text))
        .collect();
    let mut rng = seed::derived_rng(config.seed, &["contrastive-batches".into()]);
    let mut order: Vec<usize> = (0..pool.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let toks: Vec<&[(u32, f64)]> = batch.iter().map(|&i| tokens[i].as_slice()).collect();
            let px: Vec<&[f64]> = batch.iter().map(|&i| pool[i].image.pixels()).collect();
            let groups: Vec<usize> = batch.iter().map(|&i| pool[i].group).collect();
            let (loss, grads) = batch_step(
                &params,
                &toks,
                &px,
                &groups,
                dim,
                p,
                config.activation,
                config.temperature,
            )
            .map_err(|e| {
                Error::Numerical(format!(
                    "training diverged at epoch {epoch} (learning rate {}): {e}",
                    config.learning_rate
                ))
            })?;
            let lr = config.learning_rate;
            for (bucket, col) in grads.text {
                let dst = &mut params.text[bucket as usize * dim..(bucket as usize + 1) * dim];
                for (w, g) in dst.iter_mut().zip(col) {
                    *w -= lr * g;
                }
            }
            for (w, g) in params.image.iter_mut().zip(&grads.image) {
                *w -= lr * g;
            }
            for (w, g) in params.bias.iter_mut().zip(&grads.bias) {
                *w -= lr * g;
            }
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches.max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.loss_history.push(mean);
    }

    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let backend = SyntheticBackend::from_parts(
        &backend_config,
        to_f32(params.text),
        to_f32(params.image),
        to_f32(params.bias),
    )?;
    report.margin = membership_margin(&backend, dataset, config.seed)?;
    Ok((backend, report))
}

/// Mean cosine between member names and their photos minus mean cosine
/// between non-member names and random images.
pub fn membership_margin(
    backend: &dyn EmbeddingBackend,
    dataset: &IdentityDataset,
    seed: u64,
) -> Result<f64> {
    let mut member = Vec::new();
    let mut other = Vec::new();
    let mut rng = seed::derived_rng(seed, &["margin-images".into()]);
    let shape = backend.info().image_shape.clone();
    for identity in &dataset.identities {
        let text = backend.embed_text(&TextQuery::new(identity.name.clone())?)?;
        if identity.is_member {
            for image in &identity.images {
                let image = ImageTensor::new(shape.clone(), image.pixels().to_vec())?;
                member.push(cosine_similarity(&text, &backend.embed_image(&image)?)?);
            }
        } else {
            for _ in 0..dataset.photos_per_identity {
                let image = ImageTensor::random_uniform(shape.clone(), &mut rng);
                other.push(cosine_similarity(&text, &backend.embed_image(&image)?)?);
            }
        }
    }
    Ok(crate::stats::mean(&member) - crate::stats::mean(&other))
}

pub const DATASET_MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct ManifestIdentity {
    name: String,
    is_member: bool,
    prototype: String,
    images: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    image_shape: Vec<usize>,
    photos_per_identity: usize,
    noise: f64,
    seed: u64,
    identities: Vec<ManifestIdentity>,
    distractors: Vec<(String, String)>,
}

fn write_tensor(dir: &Path, file: &str, pixels: &[f64]) -> Result<String> {
    let bytes: Vec<u8> = pixels.iter().flat_map(|&x| x.to_le_bytes()).collect();
    fs::write(dir.join(file), bytes)?;
    Ok(file.to_owned())
}

fn read_tensor(dir: &Path, file: &str, len: usize) -> Result<Vec<f64>> {
    if file.contains("..") || Path::new(file).is_absolute() {
        return Err(Error::format(format!(
            "tensor path `{file}` escapes the directory"
        )));
    }
    let bytes = fs::read(dir.join(file))?;
    if bytes.len() != len * 8 {
        return Err(Error::format(format!(
            "tensor `{file}` has {} bytes, expected {}",
            bytes.len(),
            len * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl IdentityDataset {
    /// Writes `manifest.json` plus one raw little-endian `f64` file per tensor.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let identities = self
            .identities
            .iter()
            .enumerate()
            .map(|(i, id)| {
                Ok(ManifestIdentity {
                    name: id.name.clone(),
                    is_member: id.is_member,
                    prototype: write_tensor(dir, &format!("id{i:04}-proto.f64"), &id.prototype)?,
                    images: id
                        .images
                        .iter()
                        .enumerate()
                        .map(|(j, im)| {
                            write_tensor(dir, &format!("id{i:04}-img{j:04}.f64"), im.pixels())
                        })
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        let distractors = self
            .distractors
            .iter()
            .enumerate()
            .map(|(k, (c, im))| {
                Ok((
                    c.clone(),
                    write_tensor(dir, &format!("distractor{k:05}.f64"), im.pixels())?,
                ))
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            image_shape: self.image_shape.clone(),
            photos_per_identity: self.photos_per_identity,
            noise: self.noise,
            seed: self.seed,
            identities,
            distractors,
        };
        fs::write(
            dir.join(DATASET_MANIFEST),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(DATASET_MANIFEST))?)?;
        let p: usize = manifest.image_shape.iter().product();
        let image =
            |file: &str| ImageTensor::new(manifest.image_shape.clone(), read_tensor(dir, file, p)?);
        let identities = manifest
            .identities
            .iter()
            .map(|m| {
                Ok(Identity {
                    name: m.name.clone(),
                    prototype: read_tensor(dir, &m.prototype, p)?,
                    images: m.images.iter().map(|f| image(f)).collect::<Result<_>>()?,
                    is_member: m.is_member,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let members = identities.iter().filter(|i| i.is_member).count();
        if members * 2 != identities.len() {
            return Err(Error::format(
                "dataset must have as many members as non-members",
            ));
        }
        let distractors = manifest
            .distractors
            .iter()
            .map(|(c, f)| Ok((c.clone(), image(f)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            identities,
            photos_per_identity: manifest.photos_per_identity,
            distractors,
            image_shape: manifest.image_shape,
            noise: manifest.noise,
            seed: manifest.seed,
        })
    }
}
