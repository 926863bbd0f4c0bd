//! Photo-enhanced inference.
//!
//! With a few real photos of a person, a face-embedding extractor measures
//! how far the optimized images sit from those photos (feature `R`). The
//! batch of `(S, D, R)` rows is split into two clusters by k-means; texts in
//! the cluster with the higher mean `S` get one extra vote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::backend::ImageTensor;
use crate::codec::{BinReader, BinWriter};
use crate::ensemble::{
    decide, DetectionResult, EnsembleModel, FeatureDim, FeatureSet, NormalizationStats,
};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

pub const PHOTO_MAGIC: &[u8; 8] = b"TUNI-PH1";
pub const FACE_MAGIC: &[u8; 8] = b"TUNI-FX1";

/// Maps an image to a face-identity embedding.
pub trait FaceExtractor: Send + Sync {
    fn input_shape(&self) -> &[usize];

    fn embed_face(&self, pixels: &[f64]) -> Result<Vec<f64>>;
}

/// Linear projection followed by `tanh`, as a stand-in face model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFaceExtractor {
    shape: Vec<usize>,
    /// `out × in`, row-major.
    weights: Vec<f64>,
    out_dim: usize,
}

impl ProjectionFaceExtractor {
    pub fn from_matrix(shape: Vec<usize>, weights: Vec<f64>, out_dim: usize) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len == 0 || out_dim == 0 || weights.len() != len * out_dim {
            return Err(Error::invalid(format!(
                "projection needs {out_dim} x {len} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("projection weights must be finite"));
        }
        Ok(Self {
            shape,
            weights,
            out_dim,
        })
    }

    /// Gaussian weights scaled by `1/√in`.
    pub fn random(shape: Vec<usize>, out_dim: usize, seed: u64) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut rng = seed::derived_rng(seed, &["face-projection".into()]);
        let scale = 1.0 / (len.max(1) as f64).sqrt();
        let weights = (0..len * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::from_matrix(shape, weights, out_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(FACE_MAGIC);
        w.len_prefix(self.shape.len());
        for &s in &self.shape {
            w.u32(s as u32);
        }
        w.u32(self.out_dim as u32);
        w.f64_block(&self.weights);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::with_magic(bytes, FACE_MAGIC)?;
        let n = r.len_prefix()?;
        let shape = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let out_dim = r.u32()? as usize;
        let weights = r.f64_block()?;
        r.finish()?;
        Self::from_matrix(shape, weights, out_dim).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl FaceExtractor for ProjectionFaceExtractor {
    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn embed_face(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        let len = self.weights.len() / self.out_dim;
        if pixels.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: pixels.len(),
            });
        }
        Ok(self
            .weights
            .chunks(len)
            .map(|row| stats::dot(row, pixels).tanh())
            .collect())
    }
}

/// A real photo of a person. Only the face extractor ever sees these; there
/// is deliberately no way to turn one into an [`ImageTensor`] for the target.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPhoto {
    shape: Vec<usize>,
    pixels: Vec<f64>,
}

impl RealPhoto {
    pub fn new(shape: Vec<usize>, pixels: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != pixels.len() || len == 0 {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("photo pixels must be finite"));
        }
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(PHOTO_MAGIC);
        w.len_prefix(self.shape.len());
        for &s in &self.shape {
            w.u32(s as u32);
        }
        let pixels: Vec<f32> = self.pixels.iter().map(|&p| p as f32).collect();
        w.f32_block(&pixels);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::with_magic(bytes, PHOTO_MAGIC)?;
        let n = r.len_prefix()?;
        let shape = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let pixels = r.f32_block()?.into_iter().map(f64::from).collect();
        r.finish()?;
        Self::new(shape, pixels).map_err(|e| Error::format(e.to_string()))
    }
}

/// The `c` real photos available for one identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhotoSet {
    pub photos: Vec<RealPhoto>,
}

/// Everything feature extraction needs to add `R` to a row.
pub struct PhotoContext<'a> {
    pub extractor: &'a dyn FaceExtractor,
    /// Photo sets keyed by text id; texts without photos get no `R`.
    pub photos: &'a BTreeMap<String, PhotoSet>,
    /// Optimized images used per text; all of them when `None`.
    pub k: Option<usize>,
}

fn embed_checked(
    extractor: &dyn FaceExtractor,
    shape: &[usize],
    pixels: &[f64],
) -> Result<Vec<f64>> {
    if shape != extractor.input_shape() {
        return Err(Error::invalid(format!(
            "image shape {shape:?} does not match face extractor input {:?}",
            extractor.input_shape()
        )));
    }
    extractor.embed_face(pixels)
}

/// Mean pairwise L2 distance between the face embeddings of the real photos
/// and of the optimized images.
pub fn compute_r_feature(
    extractor: &dyn FaceExtractor,
    photos: &PhotoSet,
    images: &[&ImageTensor],
) -> Result<f64> {
    if photos.photos.is_empty() || images.is_empty() {
        return Err(Error::invalid(
            "R needs at least one photo and one optimized image",
        ));
    }
    let real = photos
        .photos
        .iter()
        .map(|p| embed_checked(extractor, p.shape(), p.pixels()))
        .collect::<Result<Vec<_>>>()?;
    let optimized = images
        .iter()
        .map(|im| embed_checked(extractor, im.shape(), im.pixels()))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for a in &real {
        for b in &optimized {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
            total += stats::euclidean(a, b);
        }
    }
    Ok(total / (real.len() * optimized.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            (c, d)
        })
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<KMeans> {
    if k == 0 || rows.len() < k {
        return Err(Error::invalid(format!(
            "k-means with k = {k} needs at least {k} rows, got {}",
            rows.len()
        )));
    }
    let mut rng = seed::derived_rng(seed, &["kmeans".into()]);
    let mut centroids = vec![rows[rng.random_range(0..rows.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = rows
            .iter()
            .map(|r| nearest_centroid(r, &centroids).1)
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = rows.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..rows.len())
        };
        centroids.push(rows[pick].clone());
    }

    let mut assignment: Vec<usize> = rows
        .iter()
        .map(|r| nearest_centroid(r, &centroids).0)
        .collect();
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(r, _)| r)
                .collect();
            // an empty cluster keeps its previous centroid
            if !members.is_empty() {
                for (d, v) in centroid.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let next: Vec<usize> = rows
            .iter()
            .map(|r| nearest_centroid(r, &centroids).0)
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeans {
        centroids,
        assignment,
        iterations,
    })
}

/// Cluster votes for a batch of `(S, D, R)` rows, in input order.
///
/// Rows are z-scored and split by 2-means; the cluster with the higher mean
/// raw `S` (ties: lower mean `R`) is the suspicious one. If all rows are
/// identical no split exists and every vote is `false`.
pub fn cluster_votes(features: &FeatureSet, seed: u64) -> Result<Vec<bool>> {
    let dims = [FeatureDim::S, FeatureDim::D, FeatureDim::R];
    let raw = features.matrix(&dims)?;
    if raw.len() < 2 {
        return Err(Error::invalid("clustering needs at least two rows"));
    }
    if raw.iter().all(|r| r == &raw[0]) {
        log::warn!("all feature rows identical; cluster vote disabled");
        return Ok(vec![false; raw.len()]);
    }
    let stats = NormalizationStats::fit(&raw)?;
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        raw[a]
            .iter()
            .zip(&raw[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let z: Vec<Vec<f64>> = order.iter().map(|&i| stats.apply(&raw[i])).collect();
    let km = kmeans(&z, 2, seed, 100)?;

    let cluster_mean = |c: usize, col: usize| {
        let vals: Vec<f64> = order
            .iter()
            .zip(&km.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(&i, _)| raw[i][col])
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            stats::mean(&vals)
        }
    };
    let (s0, s1) = (cluster_mean(0, 0), cluster_mean(1, 0));
    let suspicious = if s0.is_nan() {
        1
    } else if s1.is_nan() || s0 > s1 {
        0
    } else if s1 > s0 {
        1
    } else if cluster_mean(0, 2) <= cluster_mean(1, 2) {
        0
    } else {
        1
    };
    let mut votes = vec![false; raw.len()];
    for (&i, &a) in order.iter().zip(&km.assignment) {
        votes[i] = a == suspicious;
    }
    Ok(votes)
}

/// Photo-enhanced inference: four detector votes plus the cluster vote,
/// member iff at least `N′` of the five are `true`.
pub fn enhanced_infer(
    ensemble: &EnsembleModel,
    features: &FeatureSet,
    seed: u64,
) -> Result<Vec<DetectionResult>> {
    let cluster = cluster_votes(features, seed)?;
    features
        .rows
        .iter()
        .zip(cluster)
        .map(|(row, c)| {
            let votes = ensemble.votes(row)?;
            let mut all = votes.to_vec();
            all.push(c);
            let (vote_count, decision) = decide(&all, ensemble.enhanced_threshold);
            Ok(DetectionResult {
                text_id: row.text_id.clone(),
                votes,
                cluster_vote: Some(c),
                vote_count,
                decision,
            })
        })
        .collect()
}

pub const PHOTO_INDEX: &str = "index.csv";

/// Writes photo sets as `index.csv` (`text_id,file`) plus one binary per photo.
pub fn save_photo_sets(dir: impl AsRef<Path>, sets: &BTreeMap<String, PhotoSet>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = csv::Writer::from_path(dir.join(PHOTO_INDEX))?;
    index.write_record(["text_id", "file"])?;
    let mut counter = 0usize;
    for (id, set) in sets {
        for photo in &set.photos {
            let file = format!("photo-{counter:06}.bin");
            counter += 1;
            fs::write(dir.join(&file), photo.to_bytes())?;
            index.write_record([id.as_str(), file.as_str()])?;
        }
    }
    index.flush()?;
    Ok(())
}

pub fn load_photo_sets(dir: impl AsRef<Path>) -> Result<BTreeMap<String, PhotoSet>> {
    let dir = dir.as_ref();
    let mut reader = csv::Reader::from_path(dir.join(PHOTO_INDEX))?;
    let mut sets: BTreeMap<String, PhotoSet> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::format("photo index rows need text_id and file"));
        }
        let file = &rec[1];
        if file.contains("..") || Path::new(file).is_absolute() {
            return Err(Error::format(format!(
                "photo path `{file}` escapes the directory"
            )));
        }
        let photo = RealPhoto::from_bytes(&fs::read(dir.join(file))?)?;
        sets.entry(rec[0].to_owned())
            .or_default()
            .photos
            .push(photo);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    #[test]
    fn kmeans_splits_two_blobs() {
        let mut rows = Vec::new();
        for i in 0..5 {
            rows.push(vec![i as f64 * 0.01, 0.0]);
            rows.push(vec![10.0 + i as f64 * 0.01, 10.0]);
        }
        let km = kmeans(&rows, 2, 1, 100).unwrap();
        for pair in km.assignment.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert!(km
            .assignment
            .iter()
            .step_by(2)
            .all(|&a| a == km.assignment[0]));
    }

    fn row(id: &str, s: f64, d: f64, r: f64) -> FeatureVector {
        FeatureVector {
            text_id: id.into(),
            s,
            d,
            r: Some(r),
            n_effective: 1,
        }
    }

    #[test]
    fn high_similarity_cluster_gets_the_vote() {
        let set = FeatureSet::new(vec![
            row("a", 0.9, 0.1, 1.0),
            row("b", 0.2, 0.5, 3.0),
            row("c", 0.91, 0.1, 1.1),
            row("d", 0.21, 0.5, 3.1),
        ]);
        assert_eq!(
            cluster_votes(&set, 0).unwrap(),
            vec![true, false, true, false]
        );
    }

    #[test]
    fn identical_rows_disable_the_vote() {
        let set = FeatureSet::new(vec![row("a", 0.5, 0.5, 1.0), row("b", 0.5, 0.5, 1.0)]);
        assert_eq!(cluster_votes(&set, 0).unwrap(), vec![false, false]);
    }

    #[test]
    fn photo_bytes_round_trip() {
        let p = RealPhoto::new(vec![2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(RealPhoto::from_bytes(&p.to_bytes()).unwrap(), p);
    }

    #[test]
    fn r_feature_is_zero_for_matching_images() {
        let ex = ProjectionFaceExtractor::random(vec![4], 3, 9).unwrap();
        let px = vec![0.1, 0.2, 0.3, 0.4];
        let photos = PhotoSet {
            photos: vec![RealPhoto::new(vec![4], px.clone()).unwrap()],
        };
        let img = ImageTensor::new(vec![4], px).unwrap();
        assert_eq!(compute_r_feature(&ex, &photos, &[&img]).unwrap(), 0.0);
    }
}
