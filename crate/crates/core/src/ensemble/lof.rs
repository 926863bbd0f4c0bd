//! Local outlier factor in novelty mode: probes are scored against the
//! training neighborhoods and never enter them.

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::stats::euclidean;

/// Added to mean reachability distances so duplicated points keep a finite density.
const DENSITY_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutlierFactor {
    points: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    threshold: f64,
}

/// `k` nearest training points to `x`, optionally skipping one index.
/// Ties are broken by index.
fn nearest(points: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| (i, euclidean(p, x)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

impl LocalOutlierFactor {
    /// Threshold is `threshold_factor ×` the largest training LOF.
    pub fn fit(points: &[Vec<f64>], k: usize, threshold_factor: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("LOF needs k >= 1"));
        }
        if k >= points.len() {
            return Err(Error::invalid(format!(
                "LOF k = {k} must be below the row count {}",
                points.len()
            )));
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..points.len())
            .map(|i| nearest(points, &points[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|n| n[k - 1].1).collect();
        let lrd: Vec<f64> = neighbors
            .iter()
            .map(|n| {
                let reach = n.iter().map(|&(o, d)| d.max(k_distance[o])).sum::<f64>() / k as f64;
                1.0 / (reach + DENSITY_EPS)
            })
            .collect();
        let max_lof = neighbors
            .iter()
            .zip(&lrd)
            .map(|(n, &own)| n.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / k as f64 / own)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            points: points.to_vec(),
            k,
            k_distance,
            lrd,
            threshold: max_lof * threshold_factor,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// LOF of a probe; ≈1 inside a uniform cluster, ≫1 for outliers.
    pub fn score(&self, x: &[f64]) -> f64 {
        let n = nearest(&self.points, x, self.k, None);
        let reach = n
            .iter()
            .map(|&(o, d)| d.max(self.k_distance[o]))
            .sum::<f64>()
            / self.k as f64;
        let own = 1.0 / (reach + DENSITY_EPS);
        n.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64 / own
    }

    pub fn is_anomaly(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.u32(self.k as u32);
        w.f64(self.threshold);
        w.len_prefix(self.points.len());
        for p in &self.points {
            w.f64_block(p);
        }
        w.f64_block(&self.k_distance);
        w.f64_block(&self.lrd);
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let k = r.u32()? as usize;
        let threshold = r.f64()?;
        let n = r.len_prefix()?;
        let points = (0..n).map(|_| r.f64_block()).collect::<Result<Vec<_>>>()?;
        let k_distance = r.f64_block()?;
        let lrd = r.f64_block()?;
        if k == 0 || k >= n || k_distance.len() != n || lrd.len() != n {
            return Err(Error::format("inconsistent LOF block"));
        }
        Ok(Self {
            points,
            k,
            k_distance,
            lrd,
            threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_must_be_below_row_count() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(LocalOutlierFactor::fit(&pts, 2, 1.05).is_err());
        assert!(LocalOutlierFactor::fit(&pts, 0, 1.05).is_err());
    }

    #[test]
    fn duplicate_probe_in_uniform_cluster_is_normal() {
        let pts: Vec<Vec<f64>> = (0..5)
            .flat_map(|i| (0..5).map(move |j| vec![i as f64, j as f64]))
            .collect();
        let lof = LocalOutlierFactor::fit(&pts, 4, 1.05).unwrap();
        let s = lof.score(&[2.0, 2.0]);
        assert!((s - 1.0).abs() < 0.1, "lof {s}");
        assert!(!lof.is_anomaly(&[2.0, 2.0]));
    }
}
