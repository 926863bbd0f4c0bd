//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Runs in the default `cargo test` pass. Nothing here tunes toward a
//! threshold; measured values are printed next to each verdict.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use rand::Rng;
use tuni::backend::{EmbeddingBackend, TextQuery};
use tuni::ensemble::autoencoder::Network;
use tuni::ensemble::{
    IsolationForest, IsolationForestParams, LocalOutlierFactor, OneClassSvm, OneClassSvmParams,
};
use tuni::evaluation::{run_experiment, ExperimentConfig, ExperimentReport, ToyBenchmarkConfig};
use tuni::features::{
    batch_extract, extract_features, features_from_epochs, optimize_image, OptimizationConfig,
};

const N: usize = 20;
const M: usize = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn desk_optimization() -> OptimizationConfig {
    OptimizationConfig {
        epochs: N,
        iterations: M,
        ..OptimizationConfig::default()
    }
}

fn separation() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let toy = match (ToyBenchmarkConfig {
            seed,
            ..ToyBenchmarkConfig::default()
        })
        .build()
        {
            Ok(t) => t,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        let margin = toy.training.margin;
        let ids = &toy.dataset.identities;
        let queries: Vec<TextQuery> = ids
            .iter()
            .map(|i| TextQuery::new(i.name.clone()).unwrap())
            .collect();
        let config = OptimizationConfig {
            seed,
            ..desk_optimization()
        };
        let features = match batch_extract(&toy.backend, &queries, &config, None, None) {
            Ok(f) => f,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        let (mut member, mut other) = (Vec::new(), Vec::new());
        for (id, f) in ids.iter().zip(&features.rows) {
            if id.is_member {
                &mut member
            } else {
                &mut other
            }
            .push(f.s);
        }
        let diff = tuni::stats::mean(&member) - tuni::stats::mean(&other);
        let overlap = common::misorder_rate(&member, &other);
        let seed_ok = margin > 0.2 && diff > 0.1 && overlap < 0.25;
        ok &= seed_ok;
        rows.push(format!(
            "seed {seed}: margin {margin:.3} ΔS {diff:.3} overlap {overlap:.3}{}",
            if seed_ok { "" } else { " <- fails" }
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    verdict(
        ok,
        format!(
            "{} | {:.1}s on {cores} core(s), limit 600s",
            rows.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn experiment(
    photos: usize,
    gibberish: usize,
    iterations: usize,
) -> tuni::Result<ExperimentReport> {
    let toy = ToyBenchmarkConfig::default().build()?;
    run_experiment(
        &toy.benchmark(),
        &ExperimentConfig {
            repeats: 10,
            seed: 0,
            gibberish_count: gibberish,
            optimization: OptimizationConfig {
                iterations,
                ..desk_optimization()
            },
            photos,
            ..ExperimentConfig::default()
        },
    )
}

fn detection() -> Verdict {
    let report = match experiment(3, 50, M) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let t = &report.text_only;
    let Some(e) = &report.enhanced else {
        return verdict(false, "no enhanced run");
    };
    let gain = e.precision.mean_or_zero() - t.precision.mean_or_zero();
    let pass = t.accuracy.mean_or_zero() >= 0.80 && t.recall.mean_or_zero() >= 0.85 && gain >= 0.03;
    verdict(
        pass,
        format!(
            "accuracy {} (≥0.80), recall {} (≥0.85), precision {} -> enhanced {} gain {gain:+.4} (≥0.03)",
            t.accuracy.display(),
            t.recall.display(),
            t.precision.display(),
            e.precision.display()
        ),
    )
}

fn linear_oracle() -> Verdict {
    let x_star = [0.25, 0.7, 0.4, 0.55, 0.35, 0.6];
    let b = common::LinearBackend::new(6, 2).with_text("target", &x_star);
    let t = b.embed_text(&TextQuery::new("target").unwrap()).unwrap();
    let config = OptimizationConfig::default();
    let worst_sim = (0..5)
        .map(|seed| {
            optimize_image(&b, &t, &config, seed)
                .map(|o| o.similarity)
                .unwrap_or(f64::NAN)
        })
        .fold(f64::INFINITY, f64::min);

    let short = OptimizationConfig {
        iterations: 50,
        ..config.clone()
    };
    let runs: Vec<_> = (0..8)
        .filter_map(|_| optimize_image(&b, &t, &short, 42).ok())
        .collect();
    let sims: Vec<f64> = runs.iter().map(|r| r.similarity).collect();
    let embs: Vec<&[f64]> = runs.iter().map(|r| r.embedding.values()).collect();
    let d_same = features_from_epochs(&sims, &embs)
        .map(|(_, d)| d)
        .unwrap_or(f64::NAN);

    let mut r = common::rng(5);
    let mut worst_err: f64 = 0.0;
    for trial in 0..20 {
        let n = 2 + trial % 7;
        let sims: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let embs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = embs.iter().map(Vec::as_slice).collect();
        let (s, d) = features_from_epochs(&sims, &refs).unwrap();
        let (s0, d0) = common::naive_s_d(&sims, &embs);
        worst_err = worst_err.max((s - s0).abs()).max((d - d0).abs());
    }
    let (fv, trace) = extract_features(
        &b,
        &TextQuery::new("target").unwrap(),
        &OptimizationConfig {
            epochs: 6,
            iterations: 30,
            ..config
        },
    )
    .unwrap();
    let embs: Vec<Vec<f64>> = trace
        .epochs
        .iter()
        .map(|e| e.embedding.values().to_vec())
        .collect();
    let (s0, d0) = common::naive_s_d(&trace.similarities(), &embs);
    worst_err = worst_err.max((fv.s - s0).abs()).max((fv.d - d0).abs());

    verdict(
        runs.len() == 8 && worst_sim >= 0.99 && d_same == 0.0 && worst_err <= 1e-12,
        format!("min sim {worst_sim:.6} (≥0.99), D same seeds {d_same:e} (=0), S/D error {worst_err:.1e} (≤1e-12)"),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn detector_oracles() -> Verdict {
    let (iforest_ok, t_if) = timed(|| {
        let rows = common::random_points(5, 2, 1);
        let forest = IsolationForest::fit(
            &rows,
            &IsolationForestParams {
                trees: 3,
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let probes: Vec<Vec<f64>> = rows
            .iter()
            .cloned()
            .chain(common::random_points(20, 2, 2))
            .collect();
        forest.trees().len() == 3
            && forest.trees().iter().all(|tree| {
                common::brute_force_leaf_sizes(tree, &rows)
                    .iter()
                    .all(|(a, b)| a == b)
                    && probes
                        .iter()
                        .all(|x| tree.path_length(x) == common::brute_force_path_length(tree, x))
            })
    });
    let (lof_err, t_lof) = timed(|| {
        let mut worst: f64 = 0.0;
        for (seed, k) in [(1, 2), (2, 3), (3, 4)] {
            let points = common::random_points(10, 2, seed);
            let lof = LocalOutlierFactor::fit(&points, k, 1.0).unwrap();
            for probe in common::random_points(15, 2, seed + 100) {
                worst =
                    worst.max((lof.score(&probe) - common::lof_direct(&points, k, &probe)).abs());
            }
        }
        worst
    });
    let (svm_err, t_svm) = timed(|| {
        let mut worst: f64 = 0.0;
        for (seed, nu, gamma) in [(1, 0.3, 0.5), (2, 0.5, 1.0), (3, 0.15, 2.0)] {
            let points = common::random_points(7, 2, seed);
            let (alpha, rho) = common::ocsvm_qp_oracle(&points, nu, gamma);
            let svm = OneClassSvm::fit(&points, &OneClassSvmParams::new(nu, gamma)).unwrap();
            for x in points
                .iter()
                .cloned()
                .chain(common::random_points(10, 2, seed + 50))
            {
                worst = worst.max(
                    (svm.decision(&x) - common::ocsvm_decision(&points, &alpha, rho, gamma, &x))
                        .abs(),
                );
            }
        }
        worst
    });
    let (ae_err, t_ae) = timed(|| {
        let rows = common::random_points(8, 2, 9);
        (0..3)
            .map(|seed| {
                common::autoencoder_gradient_error(&Network::new(2, 4, 1, seed), &rows, 1e-6)
            })
            .fold(0.0, f64::max)
    });
    let fast = [t_if, t_lof, t_svm, t_ae].iter().all(|&t| t < 5.0);
    verdict(
        iforest_ok && lof_err <= 1e-9 && svm_err <= 1e-6 && ae_err <= 1e-4 && fast,
        format!(
            "iforest exact {iforest_ok} ({t_if:.3}s), lof {lof_err:.1e} ({t_lof:.3}s), \
             ocsvm {svm_err:.1e} ({t_svm:.3}s), ae rel {ae_err:.1e} ({t_ae:.3}s)"
        ),
    )
}

fn truth_tables() -> Verdict {
    let (a, b) = (
        common::count_member_patterns(4, 3),
        common::count_member_patterns(5, 4),
    );
    verdict(
        a == 5 && b == 6,
        format!("N=3: {a}/16 (5), N′=4: {b}/32 (6)"),
    )
}

fn ablation() -> Verdict {
    let acc = |gib, m| experiment(0, gib, m).map(|r| r.text_only.accuracy.mean_or_zero());
    let (base, short_gib, long_m) = match (acc(50, M), acc(10, M), acc(50, 400)) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => {
            let e = [a.err(), b.err(), c.err()]
                .into_iter()
                .flatten()
                .next()
                .unwrap();
            return verdict(false, e.to_string());
        }
    };
    let plateau = (long_m - base).abs();
    verdict(
        base >= short_gib - 0.02 && plateau <= 0.03,
        format!("acc ℓ=50 {base:.4} vs ℓ=10 {short_gib:.4} (may trail by ≤0.02); m=200 {base:.4} vs m=400 {long_m:.4}, |Δ| {plateau:.4} (≤0.03)"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("target");
    let target = target.to_str().unwrap();
    common::run_tuni(&["train-target", "--out", target], 0);
    let mut reports = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = dir.path().join(run);
        common::run_tuni(
            &[
                "full-pipeline",
                "--seed",
                "11",
                "--workers",
                workers,
                "--target",
                target,
                "--out",
                out.to_str().unwrap(),
                "--epochs",
                "20",
                "--iterations",
                "200",
                "--photos",
                "3",
            ],
            0,
        );
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    let same = reports.windows(2).all(|w| w[0] == w[1]);
    verdict(
        same,
        format!(
            "3 runs (workers 1, 1, 4), {} report bytes, identical {same}",
            reports[0].len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 7] = [
        ("separation", separation),
        ("end-to-end detection", detection),
        ("optimization oracle", linear_oracle),
        ("detector oracles", detector_oracles),
        ("voting truth tables", truth_tables),
        ("ablation trends", ablation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} {}. {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
