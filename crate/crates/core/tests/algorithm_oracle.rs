mod common;

use rand::Rng;
use tuni::backend::{EmbeddingBackend, TextQuery};
use tuni::features::{extract_features, features_from_epochs, optimize_image, OptimizationConfig};

fn x_star() -> Vec<f64> {
    vec![0.25, 0.7, 0.4, 0.55, 0.35, 0.6]
}

#[test]
fn reaches_closed_form_maximum_on_linear_backend() {
    // t = A·x* with x* inside the box, so max cos = 1 is attainable
    let b = common::LinearBackend::new(6, 2).with_text("target", &x_star());
    let t = b.embed_text(&TextQuery::new("target").unwrap()).unwrap();
    let config = OptimizationConfig::default();
    for seed in 0..5 {
        let out = optimize_image(&b, &t, &config, seed).unwrap();
        assert!(out.similarity >= 0.99, "seed {seed}: {}", out.similarity);
        assert!(out.image.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn identical_epoch_seeds_give_zero_spread() {
    let b = common::LinearBackend::new(6, 3).with_text("target", &x_star());
    let t = b.embed_text(&TextQuery::new("target").unwrap()).unwrap();
    let config = OptimizationConfig {
        iterations: 50,
        ..Default::default()
    };
    let runs: Vec<_> = (0..8)
        .map(|_| optimize_image(&b, &t, &config, 42).unwrap())
        .collect();
    let sims: Vec<f64> = runs.iter().map(|r| r.similarity).collect();
    let embs: Vec<&[f64]> = runs.iter().map(|r| r.embedding.values()).collect();
    let (s, d) = features_from_epochs(&sims, &embs).unwrap();
    assert_eq!(d, 0.0);
    assert!((s - sims[0]).abs() < 1e-15);
}

#[test]
fn s_and_d_match_naive_recomputation() {
    let mut r = common::rng(5);
    for trial in 0..20 {
        let n = 2 + trial % 7;
        let sims: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let embs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = embs.iter().map(Vec::as_slice).collect();
        let (s, d) = features_from_epochs(&sims, &refs).unwrap();
        let (s0, d0) = common::naive_s_d(&sims, &embs);
        assert!((s - s0).abs() < 1e-12 && (d - d0).abs() < 1e-12);
    }
}

#[test]
fn extracted_features_agree_with_trace() {
    let b = common::LinearBackend::new(6, 4).with_text("target", &x_star());
    let config = OptimizationConfig {
        epochs: 6,
        iterations: 30,
        ..Default::default()
    };
    let (fv, trace) = extract_features(&b, &TextQuery::new("target").unwrap(), &config).unwrap();
    let embs: Vec<Vec<f64>> = trace
        .epochs
        .iter()
        .map(|e| e.embedding.values().to_vec())
        .collect();
    let (s0, d0) = common::naive_s_d(&trace.similarities(), &embs);
    assert_eq!(fv.n_effective, 6);
    assert!((fv.s - s0).abs() < 1e-12 && (fv.d - d0).abs() < 1e-12);
}
