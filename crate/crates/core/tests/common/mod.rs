//! Independent reference implementations used by the integration tests and
//! the acceptance runner. Nothing here calls into the code it checks beyond
//! reading fitted state.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tuni::backend::{
    BackendInfo, Embedding, EmbeddingBackend, ImageTensor, SimilarityGradient, TextQuery,
};
use tuni::ensemble::autoencoder::Network;
use tuni::ensemble::iforest::{IsolationTree, Node};
use tuni::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `v = A·x` with a square, full-rank `A`. Text embeddings are looked up by
/// name so tests can choose targets with a known optimum.
pub struct LinearBackend {
    pub a: Vec<Vec<f64>>,
    pub texts: Vec<(String, Vec<f64>)>,
    info: BackendInfo,
}

impl LinearBackend {
    /// `A = I + 0.2·noise`, diagonally dominant so it stays well conditioned.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let a = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| if i == j { 1.0 } else { 0.0 } + 0.2 * r.random_range(-1.0..1.0) / dim as f64)
                    .collect()
            })
            .collect();
        Self {
            a,
            texts: Vec::new(),
            info: BackendInfo {
                embedding_dim: dim,
                image_shape: vec![dim],
                grad_support: true,
                backend_id: "linear-oracle".into(),
                single_session: false,
            },
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Registers `text` with embedding `A·x*`, so the best reachable cosine is 1.
    pub fn with_text(mut self, text: &str, x_star: &[f64]) -> Self {
        let v = self.apply(x_star);
        self.texts.push((text.into(), v));
        self
    }
}

impl EmbeddingBackend for LinearBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn embed_text(&self, text: &TextQuery) -> Result<Embedding> {
        let v = self
            .texts
            .iter()
            .find(|(t, _)| t == text.as_str())
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| vec![1.0; self.info.embedding_dim]);
        Embedding::new(v)
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<Embedding> {
        Embedding::new(self.apply(image.pixels()))
    }

    fn similarity_gradient(
        &self,
        target: &Embedding,
        image: &ImageTensor,
    ) -> Result<SimilarityGradient> {
        let v = self.apply(image.pixels());
        let t = target.values();
        let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tv: f64 = t.iter().zip(&v).map(|(a, b)| a * b).sum();
        let sim = tv / (tn * vn);
        // d cos / d v = t/(|t||v|) - cos·v/|v|²; chain through Aᵀ
        let dv: Vec<f64> = t
            .iter()
            .zip(&v)
            .map(|(ti, vi)| ti / (tn * vn) - sim * vi / (vn * vn))
            .collect();
        let n = v.len();
        let grad = (0..n)
            .map(|j| (0..n).map(|i| self.a[i][j] * dv[i]).sum())
            .collect();
        Ok(SimilarityGradient {
            grad,
            similarity: sim,
        })
    }
}

/// `S` and `D` recomputed the textbook way: two passes, plain sums.
pub fn naive_s_d(sims: &[f64], embeddings: &[Vec<f64>]) -> (f64, f64) {
    let n = sims.len() as f64;
    let s = sims.iter().sum::<f64>() / n;
    let dim = embeddings[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|k| embeddings.iter().map(|e| e[k]).sum::<f64>() / n)
        .collect();
    let var = embeddings
        .iter()
        .map(|e| {
            e.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    (s, var.sqrt())
}

/// `c(n)` for isolation trees, written out from its definition.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    if n == 2 {
        return 1.0;
    }
    let m = (n - 1) as f64;
    2.0 * (m.ln() + 0.577_215_664_901_532_9) - 2.0 * m / n as f64
}

/// `(feature, split, went_left)`: `went_left` means `x[feature] < split`.
pub type Constraint = (usize, f64, bool);

/// Every root-to-leaf path of a tree as (constraints, leaf depth, leaf size).
pub fn enumerate_paths(tree: &IsolationTree) -> Vec<(Vec<Constraint>, usize, usize)> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, Vec::new())];
    while let Some((id, constraints)) = stack.pop() {
        match tree.nodes[id] {
            Node::Leaf { size } => {
                let depth = constraints.len();
                out.push((constraints, depth, size));
            }
            Node::Split {
                feature,
                value,
                left,
                right,
            } => {
                let mut l = constraints.clone();
                l.push((feature, value, true));
                let mut r = constraints;
                r.push((feature, value, false));
                stack.push((left, l));
                stack.push((right, r));
            }
        }
    }
    out
}

fn satisfies(x: &[f64], constraints: &[(usize, f64, bool)]) -> bool {
    constraints
        .iter()
        .all(|&(f, v, below)| if below { x[f] < v } else { x[f] >= v })
}

/// Path length found by testing `x` against every leaf region; also checks
/// that exactly one region contains it.
pub fn brute_force_path_length(tree: &IsolationTree, x: &[f64]) -> f64 {
    let hits: Vec<_> = enumerate_paths(tree)
        .into_iter()
        .filter(|(c, _, _)| satisfies(x, c))
        .collect();
    assert_eq!(hits.len(), 1, "leaf regions must partition the space");
    let (_, depth, size) = &hits[0];
    *depth as f64 + c_factor(*size)
}

/// Training rows of the tree's sample that fall in each leaf region.
pub fn brute_force_leaf_sizes(tree: &IsolationTree, rows: &[Vec<f64>]) -> Vec<(usize, usize)> {
    enumerate_paths(tree)
        .into_iter()
        .map(|(c, _, size)| {
            let count = tree
                .sample
                .iter()
                .filter(|&&i| satisfies(&rows[i], &c))
                .count();
            (size, count)
        })
        .collect()
}

/// Local outlier factor of `probe` against `points`, straight from the definitions.
pub fn lof_direct(points: &[Vec<f64>], k: usize, probe: &[f64]) -> f64 {
    let knn = |x: &[f64], skip: Option<usize>| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..points.len()).filter(|&i| Some(i) != skip).collect();
        idx.sort_by(|&a, &b| {
            dist(&points[a], x)
                .partial_cmp(&dist(&points[b], x))
                .unwrap()
        });
        idx.truncate(k);
        idx
    };
    let k_dist = |o: usize| -> f64 {
        let nn = knn(&points[o], Some(o));
        dist(&points[o], &points[*nn.last().unwrap()])
    };
    let reach = |p: &[f64], o: usize| dist(p, &points[o]).max(k_dist(o));
    let lrd_point = |o: usize| -> f64 {
        let nn = knn(&points[o], Some(o));
        k as f64 / nn.iter().map(|&m| reach(&points[o], m)).sum::<f64>()
    };
    let nn = knn(probe, None);
    let lrd_probe = k as f64 / nn.iter().map(|&o| reach(probe, o)).sum::<f64>();
    nn.iter().map(|&o| lrd_point(o)).sum::<f64>() / k as f64 / lrd_probe
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
}

/// Solves `m·x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    Some(x)
}

/// Exact solution of the one-class SVM dual
/// `min ½αᵀQα, 0 ≤ α ≤ 1, Σα = ν·l` by enumerating every assignment of
/// variables to {at 0, at 1, free} and keeping the KKT point. Returns `(α, ρ)`.
pub fn ocsvm_qp_oracle(points: &[Vec<f64>], nu: f64, gamma: f64) -> (Vec<f64>, f64) {
    let l = points.len();
    let q: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| rbf(a, b, gamma)).collect())
        .collect();
    let total = nu * l as f64;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(l as u32) {
        let mut state = vec![0u8; l];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..l).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { 1.0 } else { 0.0 })
            .collect();
        let fixed_sum: f64 = alpha.iter().sum();
        let rho;
        if free.is_empty() {
            if (fixed_sum - total).abs() > 1e-12 {
                continue;
            }
            let g: Vec<f64> = (0..l)
                .map(|t| (0..l).map(|s| q[t][s] * alpha[s]).sum())
                .collect();
            let lb = (0..l)
                .filter(|&t| state[t] == 1)
                .map(|t| g[t])
                .fold(f64::NEG_INFINITY, f64::max);
            let ub = (0..l)
                .filter(|&t| state[t] == 0)
                .map(|t| g[t])
                .fold(f64::INFINITY, f64::min);
            if lb > ub + 1e-12 {
                continue;
            }
            rho = (lb + ub) / 2.0;
        } else {
            // unknowns: α_F then ρ. Rows: Q_FF α_F − ρ = −Q_F,fixed α_fixed; Σα_F = total − fixed.
            let f = free.len();
            let mut m = vec![vec![0.0; f + 1]; f + 1];
            let mut rhs = vec![0.0; f + 1];
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    m[r][c] = q[i][j];
                }
                m[r][f] = -1.0;
                rhs[r] = -(0..l)
                    .filter(|&s| state[s] == 1)
                    .map(|s| q[i][s])
                    .sum::<f64>();
            }
            for c in 0..f {
                m[f][c] = 1.0;
            }
            rhs[f] = total - fixed_sum;
            let Some(sol) = solve_linear(m, rhs) else {
                continue;
            };
            if sol[..f].iter().any(|&a| a <= 0.0 || a >= 1.0) {
                continue;
            }
            for (k, &i) in free.iter().enumerate() {
                alpha[i] = sol[k];
            }
            rho = sol[f];
            let g: Vec<f64> = (0..l)
                .map(|t| (0..l).map(|s| q[t][s] * alpha[s]).sum())
                .collect();
            let ok = (0..l).all(|t| match state[t] {
                0 => g[t] >= rho - 1e-12,
                1 => g[t] <= rho + 1e-12,
                _ => true,
            });
            if !ok {
                continue;
            }
        }
        let obj = 0.5
            * (0..l)
                .map(|i| (0..l).map(|j| alpha[i] * q[i][j] * alpha[j]).sum::<f64>())
                .sum::<f64>();
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, alpha, rho));
        }
    }
    let (_, alpha, rho) = best.expect("the dual always has a KKT point");
    (alpha, rho)
}

pub fn ocsvm_decision(points: &[Vec<f64>], alpha: &[f64], rho: f64, gamma: f64, x: &[f64]) -> f64 {
    points
        .iter()
        .zip(alpha)
        .map(|(p, a)| a * rbf(p, x, gamma))
        .sum::<f64>()
        - rho
}

/// Largest relative error between the analytic autoencoder gradient and
/// central differences with step `h`.
pub fn autoencoder_gradient_error(net: &Network, rows: &[Vec<f64>], h: f64) -> f64 {
    let (_, analytic) = net.loss_and_gradient(rows);
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let mut plus = net.clone();
        plus.params_mut()[k] += h;
        let mut minus = net.clone();
        minus.params_mut()[k] -= h;
        let fd = (plus.loss_and_gradient(rows).0 - minus.loss_and_gradient(rows).0) / (2.0 * h);
        let scale = analytic[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[k] - fd).abs() / scale);
    }
    worst
}

/// Member patterns among all `2^votes` vote vectors under a `>= threshold` rule.
pub fn count_member_patterns(votes: usize, threshold: usize) -> usize {
    (0..1usize << votes)
        .filter(|mask| {
            let pattern: Vec<bool> = (0..votes).map(|b| mask >> b & 1 == 1).collect();
            tuni::ensemble::decide(&pattern, threshold).1 == tuni::Decision::Member
        })
        .count()
}

/// Probability that a random non-member scores at least a random member
/// (ties count half): `1 − AUC`.
pub fn misorder_rate(members: &[f64], non_members: &[f64]) -> f64 {
    let mut bad = 0.0;
    for &m in members {
        for &o in non_members {
            if o > m {
                bad += 1.0;
            } else if o == m {
                bad += 0.5;
            }
        }
    }
    bad / (members.len() * non_members.len()) as f64
}

/// The `tuni` binary with a clean seed environment.
pub fn tuni() -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_tuni"));
    cmd.env_remove(tuni::config::SEED_ENV);
    cmd
}

/// Runs `tuni` and returns the output, panicking with stderr if the exit
/// code differs from `expected`.
pub fn run_tuni(args: &[&str], expected: i32) -> std::process::Output {
    let out = tuni().args(args).output().expect("spawn tuni");
    assert_eq!(
        out.status.code(),
        Some(expected),
        "tuni {args:?}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Trains a small target once per test binary: 20 identities, 60 epochs.
pub fn small_target() -> &'static std::path::Path {
    static DIR: std::sync::OnceLock<tempfile::TempDir> = std::sync::OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("target");
        run_tuni(
            &[
                "train-target",
                "--identities",
                "20",
                "--train-epochs",
                "60",
                "--out",
                target.to_str().unwrap(),
            ],
            0,
        );
        dir
    })
    .path()
    .join("target")
    .leak()
}
