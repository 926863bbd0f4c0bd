mod common;

use proptest::prelude::*;
use tuni::backend::{cosine_similarity, Embedding, ImageTensor};
use tuni::ensemble::{decide, FeatureSet};
use tuni::evaluation::{compute_metrics, GroundTruth};
use tuni::features::{read_features, write_features, FeatureVector};
use tuni::gibberish::{
    generate_covert_names, generate_random_gibberish, GibberishConfig, SyllableLexicon,
};
use tuni::photo::kmeans;
use tuni::{Decision, DetectionResult};

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|x| x.abs() > 1e-3)
}

proptest! {
    #[test]
    fn cosine_is_symmetric_scale_invariant_and_bounded(
        u in vector(8), v in vector(8), scale in 0.01f64..100.0,
    ) {
        prop_assume!(nonzero(&u) && nonzero(&v));
        let e = |x: &[f64]| Embedding::new(x.to_vec()).unwrap();
        let c = cosine_similarity(&e(&u), &e(&v)).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| x * scale).collect();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - cosine_similarity(&e(&v), &e(&u)).unwrap()).abs() < 1e-12);
        prop_assert!((c - cosine_similarity(&e(&scaled), &e(&v)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn clamped_images_stay_in_the_unit_box(px in vector(12)) {
        let image = ImageTensor::clamped(vec![12], px.clone()).unwrap();
        for (got, raw) in image.pixels().iter().zip(&px) {
            prop_assert!((0.0..=1.0).contains(got));
            prop_assert_eq!(*got, raw.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn ascent_never_leaves_the_unit_box(px in prop::collection::vec(0.0f64..=1.0, 6), dir in vector(6), step in 0.0f64..5.0) {
        let mut image = ImageTensor::new(vec![6], px).unwrap();
        image.ascend(&dir, step);
        prop_assert!(image.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn adding_a_vote_never_demotes(votes in prop::collection::vec(any::<bool>(), 1..6), threshold in 1usize..6) {
        let (count, before) = decide(&votes, threshold);
        prop_assert_eq!(count, votes.iter().filter(|v| **v).count());
        if let Some(i) = votes.iter().position(|v| !v) {
            let mut more = votes.clone();
            more[i] = true;
            let (_, after) = decide(&more, threshold);
            prop_assert!(!(before == Decision::Member && after == Decision::NonMember));
        }
    }

    #[test]
    fn kmeans_partition_ignores_row_order(seed in 0u64..1000, shift in 0usize..20) {
        // two well separated blobs
        let mut rows = common::random_points(10, 2, seed);
        for r in rows.iter_mut().skip(5) {
            r[0] += 20.0;
        }
        let mut rotated = rows.clone();
        rotated.rotate_left(shift % rows.len());
        let a = kmeans(&rows, 2, 1, 100).unwrap();
        let b = kmeans(&rotated, 2, 1, 100).unwrap();
        let same_cluster = |assign: &[usize], i: usize, j: usize| assign[i] == assign[j];
        let n = rows.len();
        for i in 0..n {
            for j in 0..n {
                let (ri, rj) = ((i + n - shift % n) % n, (j + n - shift % n) % n);
                prop_assert_eq!(same_cluster(&a.assignment, i, j), same_cluster(&b.assignment, ri, rj));
            }
        }
    }

    #[test]
    fn random_gibberish_is_distinct_and_well_formed(count in 1usize..200, length in 1usize..16, seed in any::<u64>()) {
        prop_assume!(94f64.powi(length as i32) >= count as f64);
        let texts = generate_random_gibberish(&GibberishConfig { count, length, seed, ..Default::default() }).unwrap();
        let unique: std::collections::HashSet<_> = texts.iter().collect();
        prop_assert_eq!(unique.len(), count);
        prop_assert!(texts.iter().all(|t| t.chars().count() == length && t.chars().all(|c| c.is_ascii_graphic())));
    }

    #[test]
    fn covert_names_are_distinct_and_unblocked(count in 1usize..100, seed in any::<u64>()) {
        let lexicon = SyllableLexicon::default();
        let names = generate_covert_names(count, &lexicon, seed).unwrap();
        let unique: std::collections::HashSet<_> = names.iter().map(|n| n.to_lowercase()).collect();
        prop_assert_eq!(unique.len(), count);
        prop_assert!(names.iter().all(|n| !lexicon.is_blocked(n)));
    }

    #[test]
    fn metrics_are_bounded_and_consistent(cases in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let mut truth = GroundTruth::new();
        let results: Vec<DetectionResult> = cases
            .iter()
            .enumerate()
            .map(|(i, &(actual, predicted))| {
                truth.insert(format!("t{i}"), actual);
                DetectionResult {
                    text_id: format!("t{i}"),
                    votes: [predicted; 4],
                    cluster_vote: None,
                    vote_count: if predicted { 4 } else { 0 },
                    decision: if predicted { Decision::Member } else { Decision::NonMember },
                }
            })
            .collect();
        let m = compute_metrics(&results, &truth).unwrap();
        let c = m.confusion;
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, cases.len());
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
        prop_assert!((0.0..=1.0).contains(&m.recall));
        prop_assert_eq!(m.precision.is_none(), c.tp + c.fp == 0);
        if let Some(p) = m.precision {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn feature_files_round_trip(
        rows in prop::collection::vec((-1e6f64..1e6, 0.0f64..1e3, prop::option::of(-1.0f64..1.0), 1usize..500), 0..20),
    ) {
        let set = FeatureSet::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(s, d, r, n))| FeatureVector { text_id: format!("id,\"{i}\""), s, d, r, n_effective: n })
                .collect(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_features(&path, &set, "abc").unwrap();
        prop_assert_eq!(read_features(&path).unwrap(), set);
    }
}
