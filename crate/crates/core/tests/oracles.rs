mod common;

use std::collections::BTreeSet;

use common::oracles;
use proptest::prelude::*;
use tooladapt_core::analysis::{diversity_score, dispersion_score, entropy_bits, pair_dissimilarity, CooccurrenceGraph, SolutionApiSets};
use tooladapt_core::bank::{final_selection, sample_records, TrialRecord};

const APIS: [&str; 6] = ["np.clip", "np.where", "filters.gaussian", "feature.peak_local_max", "ndi.label", "exposure.equalize_hist"];

/// Objectives come from a small grid so ties are common.
fn corpus() -> impl Strategy<Value = Vec<TrialRecord>> {
    prop::collection::vec((0usize..3, prop::option::weighted(0.85, 0u8..6), 0u8..10), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(seq, (run, val, test))| {
                oracles::record(
                    &format!("base-r{run:02}"),
                    seq as u64,
                    val.map(|v| v as f64 / 5.0),
                    Some(test as f64 / 9.0),
                    &[],
                    &[],
                )
            })
            .collect()
    })
}

fn api_set() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0usize..APIS.len(), 0..5).prop_map(|ix| ix.into_iter().map(|i| APIS[i].to_owned()).collect())
}

fn ids(records: &[&TrialRecord]) -> Vec<String> {
    records.iter().map(|r| r.trial_id.clone()).collect()
}

fn sets(pre: &[String], post: &[String]) -> SolutionApiSets {
    SolutionApiSets {
        pre: pre.iter().cloned().collect(),
        post: post.iter().cloned().collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sampling_matches_oracle(records in corpus(), k_top in 0usize..5, k_bottom in 0usize..5) {
        let (top, bottom) = sample_records(&records, k_top, k_bottom);
        let (o_top, o_bottom) = oracles::sample(&records, k_top, k_bottom);
        prop_assert_eq!(ids(&top), o_top);
        prop_assert_eq!(ids(&bottom), o_bottom);
    }

    #[test]
    fn selection_matches_oracle(records in corpus(), k in 1usize..20) {
        let report = final_selection(&records, k);
        let (o_ids, o_best) = oracles::selection(&records, k);
        prop_assert_eq!(report.selected.iter().map(|s| s.trial_id.clone()).collect::<Vec<_>>(), o_ids);
        prop_assert_eq!(report.best_test, o_best);
    }

    #[test]
    fn graph_matches_counting_oracle(solutions in prop::collection::vec(api_set(), 1..20)) {
        let mut graph = CooccurrenceGraph::default();
        for s in &solutions {
            graph.add_solution(&s.iter().cloned().collect::<BTreeSet<_>>());
        }
        let (nodes, edges) = oracles::graph(&solutions);
        prop_assert_eq!(graph.nodes, nodes);
        prop_assert_eq!(graph.edges, edges);
    }

    #[test]
    fn dispersion_invariances(weights in prop::collection::vec(1u64..50, 1..30), scale in 1u64..20, rot in 0usize..30) {
        let as_f: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
        let h = entropy_bits(&as_f).unwrap();
        prop_assert!((h - oracles::entropy(&as_f)).abs() < 1e-9);
        let scaled: Vec<f64> = as_f.iter().map(|w| w * scale as f64).collect();
        prop_assert!((entropy_bits(&scaled).unwrap() - h).abs() < 1e-9);
        let mut rotated = as_f.clone();
        rotated.rotate_left(rot % as_f.len());
        rotated.reverse();
        prop_assert!((entropy_bits(&rotated).unwrap() - h).abs() < 1e-9);
        prop_assert!(h >= 0.0 && h <= (as_f.len() as f64).log2() + 1e-9);
    }

    #[test]
    fn graph_dispersion_matches_oracle(solutions in prop::collection::vec(api_set(), 1..20)) {
        let mut graph = CooccurrenceGraph::default();
        for s in &solutions {
            graph.add_solution(&s.iter().cloned().collect::<BTreeSet<_>>());
        }
        let (_, edges) = oracles::graph(&solutions);
        let weights: Vec<f64> = edges.values().map(|&w| w as f64).collect();
        match dispersion_score(&graph) {
            Ok(h) => prop_assert!((h - oracles::entropy(&weights)).abs() < 1e-9),
            Err(_) => prop_assert!(weights.is_empty()),
        }
    }

    #[test]
    fn dissimilarity_properties(a in (api_set(), api_set()), b in (api_set(), api_set())) {
        let (x, y) = (sets(&a.0, &a.1), sets(&b.0, &b.1));
        let d = pair_dissimilarity(&x, &y);
        prop_assert_eq!(d, pair_dissimilarity(&y, &x));
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d == 0.0, x == y);
        prop_assert!((d - oracles::jaccard(&a.0, &b.0) - oracles::jaccard(&a.1, &b.1)).abs() < 1e-12);
    }

    #[test]
    fn diversity_matches_double_loop(solutions in prop::collection::vec((api_set(), api_set()), 2..15)) {
        let lib: Vec<SolutionApiSets> = solutions.iter().map(|(p, q)| sets(p, q)).collect();
        let d = diversity_score(&lib).unwrap();
        prop_assert!((d - oracles::diversity(&solutions)).abs() < 1e-12);
    }
}
