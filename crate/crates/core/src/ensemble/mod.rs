//! Anomaly-detection voting system.
//!
//! Four detectors are fitted on the (S, D) features of gibberish texts, which
//! are known to be absent from the target's training data and therefore form
//! the "normal" class. A probe text is declared a training-set member when at
//! least `N` detectors flag it as anomalous.

pub mod autoencoder;
pub mod iforest;
pub mod lof;
pub mod ocsvm;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autoencoder::{Autoencoder, AutoencoderParams};
pub use iforest::{IsolationForest, IsolationForestParams};
pub use lof::LocalOutlierFactor;
pub use ocsvm::{OneClassSvm, OneClassSvmParams};

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::seed;

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"TUNI-EN1";

/// Columns the detectors consume.
const DETECTOR_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureDim {
    S,
    D,
    R,
}

/// Feature rows of a batch of texts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<FeatureVector>,
}

impl FeatureSet {
    pub fn new(rows: Vec<FeatureVector>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[S, D]`, plus `R` when every row carries it.
    pub fn feature_dims_used(&self) -> Vec<FeatureDim> {
        let mut dims = vec![FeatureDim::S, FeatureDim::D];
        if !self.rows.is_empty() && self.rows.iter().all(|r| r.r.is_some()) {
            dims.push(FeatureDim::R);
        }
        dims
    }

    pub fn matrix(&self, dims: &[FeatureDim]) -> Result<Vec<Vec<f64>>> {
        self.rows.iter().map(|r| r.columns(dims)).collect()
    }
}

/// Per-dimension z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Constant columns; these pass through unscaled.
    pub degenerate: Vec<bool>,
}

impl NormalizationStats {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid("normalization needs at least two rows"));
        }
        let dims = rows[0].len();
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::invalid("ragged feature rows"));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dims)
            .map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n)
            .collect();
        let std: Vec<f64> = (0..dims)
            .map(|d| (rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let degenerate: Vec<bool> = std.iter().map(|&s| !(s > 1e-12)).collect();
        for (d, &flag) in degenerate.iter().enumerate() {
            if flag {
                log::warn!("feature column {d} is constant; passed through unscaled");
            }
        }
        Ok(Self {
            mean,
            std,
            degenerate,
        })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &x)| {
                if self.degenerate[d] {
                    x
                } else {
                    (x - self.mean[d]) / self.std[d]
                }
            })
            .collect()
    }
}

/// Z-scores the feature columns in use; returns the normalized rows and stats.
pub fn normalize(features: &FeatureSet) -> Result<(FeatureSet, NormalizationStats)> {
    let dims = features.feature_dims_used();
    let matrix = features.matrix(&dims)?;
    let stats = NormalizationStats::fit(&matrix)?;
    let rows = features
        .rows
        .iter()
        .zip(&matrix)
        .map(|(f, raw)| {
            let z = stats.apply(raw);
            FeatureVector {
                s: z[0],
                d: z[1],
                r: z.get(2).copied(),
                ..f.clone()
            }
        })
        .collect();
    Ok((FeatureSet::new(rows), stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    IsolationForest,
    LocalOutlierFactor,
    OneClassSvm,
    Autoencoder,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::IsolationForest,
        DetectorKind::LocalOutlierFactor,
        DetectorKind::OneClassSvm,
        DetectorKind::Autoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::IsolationForest => "isolation-forest",
            DetectorKind::LocalOutlierFactor => "local-outlier-factor",
            DetectorKind::OneClassSvm => "one-class-svm",
            DetectorKind::Autoencoder => "autoencoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedDetector {
    IsolationForest(IsolationForest),
    LocalOutlierFactor(LocalOutlierFactor),
    OneClassSvm(OneClassSvm),
    Autoencoder(Autoencoder),
}

impl TrainedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            TrainedDetector::IsolationForest(_) => DetectorKind::IsolationForest,
            TrainedDetector::LocalOutlierFactor(_) => DetectorKind::LocalOutlierFactor,
            TrainedDetector::OneClassSvm(_) => DetectorKind::OneClassSvm,
            TrainedDetector::Autoencoder(_) => DetectorKind::Autoencoder,
        }
    }

    /// Vote on a normalized feature row: `true` means anomalous.
    pub fn is_anomaly(&self, x: &[f64]) -> bool {
        match self {
            TrainedDetector::IsolationForest(m) => m.is_anomaly(x),
            TrainedDetector::LocalOutlierFactor(m) => m.is_anomaly(x),
            TrainedDetector::OneClassSvm(m) => m.is_anomaly(x),
            TrainedDetector::Autoencoder(m) => m.is_anomaly(x),
        }
    }

    fn write(&self, w: &mut BinWriter) {
        match self {
            TrainedDetector::IsolationForest(m) => {
                w.u8(0);
                m.write(w)
            }
            TrainedDetector::LocalOutlierFactor(m) => {
                w.u8(1);
                m.write(w)
            }
            TrainedDetector::OneClassSvm(m) => {
                w.u8(2);
                m.write(w)
            }
            TrainedDetector::Autoencoder(m) => {
                w.u8(3);
                m.write(w)
            }
        }
    }

    fn read(r: &mut BinReader<'_>) -> Result<Self> {
        Ok(match r.u8()? {
            0 => TrainedDetector::IsolationForest(IsolationForest::read(r)?),
            1 => TrainedDetector::LocalOutlierFactor(LocalOutlierFactor::read(r)?),
            2 => TrainedDetector::OneClassSvm(OneClassSvm::read(r)?),
            3 => TrainedDetector::Autoencoder(Autoencoder::read(r)?),
            t => return Err(Error::format(format!("unknown detector tag {t}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub iforest_trees: usize,
    /// `None` means `min(256, rows)`.
    pub iforest_subsample: Option<usize>,
    pub iforest_quantile: f64,
    /// `None` means `min(20, rows - 1)`.
    pub lof_k: Option<usize>,
    pub lof_threshold_factor: f64,
    pub ocsvm_nu: f64,
    /// `None` means `1 / (2 · feature dims)`.
    pub ocsvm_gamma: Option<f64>,
    pub ae_hidden: usize,
    pub ae_bottleneck: usize,
    pub ae_epochs: usize,
    pub ae_learning_rate: f64,
    pub ae_quantile: f64,
    /// Detector votes needed for a member decision (`N`).
    pub threshold: usize,
    /// Votes out of five needed when the cluster vote is present (`N′`).
    pub enhanced_threshold: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            iforest_trees: 100,
            iforest_subsample: None,
            iforest_quantile: 0.95,
            lof_k: None,
            lof_threshold_factor: 1.05,
            ocsvm_nu: 0.1,
            ocsvm_gamma: None,
            ae_hidden: 4,
            ae_bottleneck: 1,
            ae_epochs: 5000,
            ae_learning_rate: 0.05,
            ae_quantile: 0.95,
            threshold: 3,
            enhanced_threshold: 4,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        check_thresholds(self.threshold, self.enhanced_threshold)?;
        if !(0.0..=1.0).contains(&self.iforest_quantile) || !(0.0..=1.0).contains(&self.ae_quantile)
        {
            return Err(Error::invalid("quantiles must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn check_thresholds(n: usize, n_prime: usize) -> Result<()> {
    if !(1..=4).contains(&n) {
        return Err(Error::invalid(format!("threshold N = {n} outside 1..=4")));
    }
    if !(n..=5).contains(&n_prime) {
        return Err(Error::invalid(format!(
            "enhanced threshold N' = {n_prime} outside {n}..=5"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub detectors: Vec<TrainedDetector>,
    pub normalization: NormalizationStats,
    pub threshold: usize,
    pub enhanced_threshold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Member,
    NonMember,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Member => "member",
            Decision::NonMember => "non-member",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "member" => Ok(Decision::Member),
            "non-member" => Ok(Decision::NonMember),
            other => Err(Error::format(format!("unknown decision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub text_id: String,
    /// Detector votes in [`DetectorKind::ALL`] order; `true` = anomalous.
    pub votes: [bool; 4],
    pub cluster_vote: Option<bool>,
    pub vote_count: usize,
    pub decision: Decision,
}

/// Member iff at least `threshold` of the votes are `true`.
///
/// "Exceeds the threshold" is read as `>=`: with four detectors and `N = 3`
/// a strict reading would demand unanimity.
pub fn decide(votes: &[bool], threshold: usize) -> (usize, Decision) {
    let count = votes.iter().filter(|&&v| v).count();
    let decision = if count >= threshold {
        Decision::Member
    } else {
        Decision::NonMember
    };
    (count, decision)
}

/// Canonical row order so fitted detectors do not depend on input order.
fn canonical_rows(mut rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

/// Fits all four detectors on identically normalized (S, D) features.
pub fn fit_ensemble(features: &FeatureSet, config: &EnsembleConfig) -> Result<EnsembleModel> {
    config.validate()?;
    if features.len() < 2 {
        return Err(Error::invalid(
            "ensemble training needs at least two feature rows",
        ));
    }
    let raw = canonical_rows(features.matrix(&[FeatureDim::S, FeatureDim::D])?);
    let normalization = NormalizationStats::fit(&raw)?;
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| normalization.apply(r)).collect();
    let n = rows.len();

    let iforest = IsolationForestParams {
        trees: config.iforest_trees,
        subsample: Some(config.iforest_subsample.unwrap_or(256).min(n)),
        quantile: config.iforest_quantile,
        seed: seed::derive_seed(config.seed, &["isolation-forest".into()]),
    };
    let lof_k = config.lof_k.unwrap_or(20).min(n - 1);
    let ocsvm = OneClassSvmParams::new(
        config.ocsvm_nu,
        config
            .ocsvm_gamma
            .unwrap_or(1.0 / (2.0 * DETECTOR_DIMS as f64)),
    );
    let ae = AutoencoderParams {
        hidden: config.ae_hidden,
        bottleneck: config.ae_bottleneck,
        epochs: config.ae_epochs,
        learning_rate: config.ae_learning_rate,
        quantile: config.ae_quantile,
        seed: seed::derive_seed(config.seed, &["autoencoder".into()]),
    };

    let ((f, l), (s, a)) = rayon::join(
        || {
            rayon::join(
                || IsolationForest::fit(&rows, &iforest),
                || LocalOutlierFactor::fit(&rows, lof_k, config.lof_threshold_factor),
            )
        },
        || {
            rayon::join(
                || OneClassSvm::fit(&rows, &ocsvm),
                || Autoencoder::fit(&rows, &ae),
            )
        },
    );
    Ok(EnsembleModel {
        detectors: vec![
            TrainedDetector::IsolationForest(f?),
            TrainedDetector::LocalOutlierFactor(l?),
            TrainedDetector::OneClassSvm(s?),
            TrainedDetector::Autoencoder(a?),
        ],
        normalization,
        threshold: config.threshold,
        enhanced_threshold: config.enhanced_threshold,
    })
}

impl EnsembleModel {
    /// Detector votes for one feature vector.
    pub fn votes(&self, feature: &FeatureVector) -> Result<[bool; 4]> {
        let raw = feature.columns(&[FeatureDim::S, FeatureDim::D])?;
        let x = self.normalization.apply(&raw);
        let mut votes = [false; 4];
        for (v, d) in votes.iter_mut().zip(&self.detectors) {
            *v = d.is_anomaly(&x);
        }
        Ok(votes)
    }

    pub fn with_thresholds(mut self, n: usize, n_prime: usize) -> Result<Self> {
        check_thresholds(n, n_prime)?;
        self.threshold = n;
        self.enhanced_threshold = n_prime;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(ENSEMBLE_MAGIC);
        w.u32(self.threshold as u32);
        w.u32(self.enhanced_threshold as u32);
        w.f64_block(&self.normalization.mean);
        w.f64_block(&self.normalization.std);
        w.len_prefix(self.normalization.degenerate.len());
        for &d in &self.normalization.degenerate {
            w.u8(d as u8);
        }
        w.len_prefix(self.detectors.len());
        for d in &self.detectors {
            d.write(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::with_magic(bytes, ENSEMBLE_MAGIC)?;
        let threshold = r.u32()? as usize;
        let enhanced_threshold = r.u32()? as usize;
        check_thresholds(threshold, enhanced_threshold)?;
        let mean = r.f64_block()?;
        let std = r.f64_block()?;
        let n = r.len_prefix()?;
        let degenerate = (0..n)
            .map(|_| r.u8().map(|b| b != 0))
            .collect::<Result<Vec<_>>>()?;
        if mean.len() != DETECTOR_DIMS || std.len() != DETECTOR_DIMS || n != DETECTOR_DIMS {
            return Err(Error::format("normalization block has wrong dimension"));
        }
        let count = r.len_prefix()?;
        let detectors = (0..count)
            .map(|_| TrainedDetector::read(&mut r))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let kinds: Vec<DetectorKind> = detectors.iter().map(TrainedDetector::kind).collect();
        if kinds != DetectorKind::ALL {
            return Err(Error::format(format!("unexpected detector set {kinds:?}")));
        }
        Ok(Self {
            detectors,
            normalization: NormalizationStats {
                mean,
                std,
                degenerate,
            },
            threshold,
            enhanced_threshold,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Text-only inference: member iff at least `N` detector votes.
pub fn infer(ensemble: &EnsembleModel, feature: &FeatureVector) -> Result<DetectionResult> {
    let votes = ensemble.votes(feature)?;
    let (vote_count, decision) = decide(&votes, ensemble.threshold);
    Ok(DetectionResult {
        text_id: feature.text_id.clone(),
        votes,
        cluster_vote: None,
        vote_count,
        decision,
    })
}

pub const VOTES_HEADER: [&str; 8] = [
    "text_id",
    "v1",
    "v2",
    "v3",
    "v4",
    "cluster_vote",
    "count",
    "decision",
];

pub fn write_votes(path: impl AsRef<Path>, results: &[DetectionResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(VOTES_HEADER)?;
    let bit = |b: bool| if b { "1" } else { "0" };
    for r in results {
        w.write_record([
            r.text_id.as_str(),
            bit(r.votes[0]),
            bit(r.votes[1]),
            bit(r.votes[2]),
            bit(r.votes[3]),
            r.cluster_vote.map(bit).unwrap_or(""),
            &r.vote_count.to_string(),
            &r.decision.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_votes(path: impl AsRef<Path>) -> Result<Vec<DetectionResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != VOTES_HEADER {
        return Err(Error::format(format!("unexpected votes header {header:?}")));
    }
    let parse_bit = |s: &str| match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::format(format!("bad vote `{other}`"))),
    };
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let mut votes = [false; 4];
            for (k, v) in votes.iter_mut().enumerate() {
                *v = parse_bit(&rec[k + 1])?;
            }
            Ok(DetectionResult {
                text_id: rec[0].to_owned(),
                votes,
                cluster_vote: match &rec[5] {
                    "" => None,
                    s => Some(parse_bit(s)?),
                },
                vote_count: rec[6]
                    .parse()
                    .map_err(|_| Error::format("bad vote count"))?,
                decision: rec[7].parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: &str, s: f64, d: f64) -> FeatureVector {
        FeatureVector {
            text_id: id.into(),
            s,
            d,
            r: None,
            n_effective: 1,
        }
    }

    #[test]
    fn two_point_z_score() {
        let set = FeatureSet::new(vec![fv("a", 0.0, 0.0), fv("b", 2.0, 2.0)]);
        let (norm, stats) = normalize(&set).unwrap();
        assert_eq!(stats.mean, vec![1.0, 1.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
        assert_eq!((norm.rows[0].s, norm.rows[0].d), (-1.0, -1.0));
        assert_eq!((norm.rows[1].s, norm.rows[1].d), (1.0, 1.0));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let set = FeatureSet::new(vec![
            fv("a", 0.0, 0.5),
            fv("b", 2.0, 0.5),
            fv("c", 1.0, 0.5),
        ]);
        let (norm, stats) = normalize(&set).unwrap();
        assert_eq!(stats.degenerate, vec![false, true]);
        assert!(norm.rows.iter().all(|r| r.d == 0.5));
    }

    #[test]
    fn normalization_needs_two_rows() {
        assert!(normalize(&FeatureSet::new(vec![fv("a", 0.0, 0.0)])).is_err());
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(decide(&[true, true, true, false], 3).1, Decision::Member);
        assert_eq!(
            decide(&[true, true, false, false], 3).1,
            Decision::NonMember
        );
    }

    #[test]
    fn thresholds_validated() {
        assert!(check_thresholds(0, 4).is_err());
        assert!(check_thresholds(3, 2).is_err());
        assert!(check_thresholds(4, 6).is_err());
        assert!(check_thresholds(3, 4).is_ok());
    }
}
