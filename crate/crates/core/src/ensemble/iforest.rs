//! Isolation forest.
//!
//! Anomalies are isolated by fewer random axis-aligned splits, so their
//! expected path length through a forest of random trees is short. The score
//! is `2^(-E[h(x)] / c(ψ))` where `ψ` is the per-tree subsample size.

use rand::seq::index;
use rand::Rng;

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForestParams {
    pub trees: usize,
    /// Defaults to `min(256, rows)`; larger values are clamped to the row count.
    pub subsample: Option<usize>,
    /// Training-score quantile used as the anomaly threshold.
    pub quantile: f64,
    pub seed: u64,
}

impl Default for IsolationForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            subsample: None,
            quantile: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// Training-row indices this tree was grown on.
    pub sample: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample: usize,
    threshold: f64,
}

/// Average unsuccessful-search path length in a binary search tree of `n` nodes.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

impl IsolationTree {
    fn grow<R: Rng>(
        &mut self,
        rows: &[Vec<f64>],
        members: Vec<usize>,
        depth: usize,
        max_depth: usize,
        rng: &mut R,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            size: members.len(),
        });
        if depth >= max_depth || members.len() <= 1 {
            return id;
        }
        let dims = rows[members[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dims)
            .filter_map(|f| {
                let (lo, hi) = members
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        (lo.min(rows[i][f]), hi.max(rows[i][f]))
                    });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (left, right): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&i| rows[i][feature] < value);
        let l = self.grow(rows, left, depth + 1, max_depth, rng);
        let r = self.grow(rows, right, depth + 1, max_depth, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left: l,
            right: r,
        };
        id
    }

    /// Depth of the leaf reached by `x` plus `c(leaf size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[node] {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
            }
        }
    }
}

impl IsolationForest {
    pub fn fit(rows: &[Vec<f64>], params: &IsolationForestParams) -> Result<Self> {
        if params.trees == 0 {
            return Err(Error::invalid("isolation forest needs at least one tree"));
        }
        if rows.len() < 2 {
            return Err(Error::invalid("isolation forest needs at least two rows"));
        }
        let subsample = params.subsample.unwrap_or(256).min(rows.len()).max(2);
        let max_depth = (subsample as f64).log2().ceil() as usize;
        let trees = (0..params.trees)
            .map(|t| {
                let mut rng = seed::derived_rng(params.seed, &["iforest-tree".into(), t.into()]);
                let mut sample = index::sample(&mut rng, rows.len(), subsample).into_vec();
                sample.sort_unstable();
                let mut tree = IsolationTree {
                    nodes: Vec::new(),
                    sample: sample.clone(),
                };
                tree.grow(rows, sample, 0, max_depth, &mut rng);
                tree
            })
            .collect();
        let mut forest = Self {
            trees,
            subsample,
            threshold: 0.0,
        };
        let scores: Vec<f64> = rows.iter().map(|r| forest.score(r)).collect();
        forest.threshold = stats::quantile(&scores, params.quantile);
        Ok(forest)
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Anomaly score in `(0, 1]`; larger is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        2f64.powf(-self.mean_path_length(x) / average_path_length(self.subsample))
    }

    pub fn is_anomaly(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.u32(self.subsample as u32);
        w.f64(self.threshold);
        w.len_prefix(self.trees.len());
        for tree in &self.trees {
            w.len_prefix(tree.sample.len());
            for &s in &tree.sample {
                w.u32(s as u32);
            }
            w.len_prefix(tree.nodes.len());
            for node in &tree.nodes {
                match *node {
                    Node::Split {
                        feature,
                        value,
                        left,
                        right,
                    } => {
                        w.u8(0);
                        w.u32(feature as u32);
                        w.f64(value);
                        w.u32(left as u32);
                        w.u32(right as u32);
                    }
                    Node::Leaf { size } => {
                        w.u8(1);
                        w.u32(size as u32);
                    }
                }
            }
        }
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let subsample = r.u32()? as usize;
        let threshold = r.f64()?;
        let n_trees = r.len_prefix()?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_sample = r.len_prefix()?;
            let sample = (0..n_sample)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let n_nodes = r.len_prefix()?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => Node::Split {
                        feature: r.u32()? as usize,
                        value: r.f64()?,
                        left: r.u32()? as usize,
                        right: r.u32()? as usize,
                    },
                    1 => Node::Leaf {
                        size: r.u32()? as usize,
                    },
                    t => return Err(Error::format(format!("bad tree node tag {t}"))),
                });
            }
            if nodes.iter().any(|n| matches!(n, Node::Split { left, right, .. } if *left >= n_nodes || *right >= n_nodes)) {
                return Err(Error::format("tree child index out of range"));
            }
            trees.push(IsolationTree { nodes, sample });
        }
        if trees.is_empty() {
            return Err(Error::format("isolation forest without trees"));
        }
        Ok(Self {
            trees,
            subsample,
            threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_of_n_small_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c3 = 2.0 * (2f64.ln() + EULER_GAMMA) - 4.0 / 3.0;
        assert!((average_path_length(3) - c3).abs() < 1e-15);
    }

    #[test]
    fn subsample_is_clamped() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.0]).collect();
        let f = IsolationForest::fit(
            &rows,
            &IsolationForestParams {
                trees: 3,
                subsample: Some(100),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(f.subsample(), 5);
    }

    #[test]
    fn rejects_zero_trees() {
        let rows = vec![vec![0.0], vec![1.0]];
        let p = IsolationForestParams {
            trees: 0,
            ..Default::default()
        };
        assert!(IsolationForest::fit(&rows, &p).is_err());
    }
}
