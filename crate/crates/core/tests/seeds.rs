use tooladapt_core::seed::derive_run_seed;

#[derive(serde::Deserialize)]
struct Golden {
    master_seed: u64,
    seeds: Vec<u64>,
}

#[test]
fn run_seeds_match_golden_table() {
    let text = include_str!("golden/run_seeds_42.json");
    let golden: Golden = serde_json::from_str(text).unwrap();
    let derived: Vec<u64> = (0..20).map(|i| derive_run_seed(golden.master_seed, i)).collect();
    assert_eq!(derived, golden.seeds);
}

#[test]
fn run_seeds_distinct_across_masters() {
    let mut all = std::collections::BTreeSet::new();
    for master in 0..50 {
        for run in 0..20 {
            assert!(all.insert(derive_run_seed(master, run)));
        }
    }
}
