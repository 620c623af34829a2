//! Solution-space statistics over completed banks: API co-occurrence and
//! its edge-weight entropy, pairwise Jaccard diversity, solution length,
//! literal parameter distributions and off-list API usage.
//!
//! Everything here is a pure function of trial records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::TrialRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("no ok records to analyse")]
    EmptyCorpus,
    #[error("co-occurrence graph has no edges")]
    NoEdges,
    #[error("diversity needs at least 2 solutions, found {found}")]
    TooFewSolutions { found: usize },
    #[error("no literal values recorded for {api}:{param}")]
    NoObservations { api: String, param: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    #[default]
    Test,
    Validation,
}

impl RankBy {
    fn objective(self, record: &TrialRecord) -> Option<f64> {
        match self {
            RankBy::Test => record.objective_test,
            RankBy::Validation => record.objective_val,
        }
    }
}

/// The best `top_n` ok records by the chosen objective. Records without
/// that objective are skipped; ties go to run id, then creation order.
pub fn top_records<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
    top_n: usize,
    rank_by: RankBy,
) -> Vec<&'a TrialRecord> {
    let mut ranked: Vec<(&TrialRecord, f64)> = records
        .into_iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| rank_by.objective(r).map(|o| (r, o)))
        .collect();
    ranked.sort_by(|(a, x), (b, y)| {
        y.total_cmp(x)
            .then_with(|| a.run_id.cmp(&b.run_id))
            .then_with(|| a.created_seq.cmp(&b.created_seq))
    });
    ranked.into_iter().take(top_n).map(|(r, _)| r).collect()
}

/// Node weights count solutions using an API; edge weights count
/// solutions using both ends. Edge keys are ordered `(lo, hi)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    pub nodes: BTreeMap<String, u64>,
    pub edges: BTreeMap<(String, String), u64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    a: String,
    b: String,
    weight: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: BTreeMap<String, u64>,
    edges: Vec<EdgeRow>,
}

impl Serialize for CooccurrenceGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GraphRepr {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|((a, b), &weight)| EdgeRow {
                    a: a.clone(),
                    b: b.clone(),
                    weight,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CooccurrenceGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(deserializer)?;
        Ok(Self {
            nodes: repr.nodes,
            edges: repr.edges.into_iter().map(|e| ((e.a, e.b), e.weight)).collect(),
        })
    }
}

impl CooccurrenceGraph {
    /// Adds one solution's API set.
    pub fn add_solution(&mut self, apis: &BTreeSet<String>) {
        for api in apis {
            *self.nodes.entry(api.clone()).or_default() += 1;
        }
        let apis: Vec<&String> = apis.iter().collect();
        for (i, a) in apis.iter().enumerate() {
            for b in &apis[i + 1..] {
                *self.edges.entry(((*a).clone(), (*b).clone())).or_default() += 1;
            }
        }
    }

    pub fn edge_weights(&self) -> Vec<f64> {
        self.edges.values().map(|&w| w as f64).collect()
    }
}

pub fn build_cooccurrence_graph(
    records: &[TrialRecord],
    top_n: usize,
    rank_by: RankBy,
) -> Result<CooccurrenceGraph, AnalysisError> {
    let top = top_records(records, top_n, rank_by);
    if top.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }
    let mut graph = CooccurrenceGraph::default();
    for record in top {
        graph.add_solution(&SolutionApiSets::of(record).union());
    }
    Ok(graph)
}

/// Entropy in bits of the normalised weights.
pub fn entropy_bits(weights: &[f64]) -> Result<f64, AnalysisError> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return Err(AnalysisError::NoEdges);
    }
    let h = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn dispersion_score(graph: &CooccurrenceGraph) -> Result<f64, AnalysisError> {
    entropy_bits(&graph.edge_weights())
}

/// Deduplicated API sets of one solution's pre and post functions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionApiSets {
    pub pre: BTreeSet<String>,
    pub post: BTreeSet<String>,
}

impl SolutionApiSets {
    pub fn of(record: &TrialRecord) -> Self {
        Self {
            pre: record.api_calls_pre.iter().cloned().collect(),
            post: record.api_calls_post.iter().cloned().collect(),
        }
    }

    pub fn union(&self) -> BTreeSet<String> {
        self.pre.union(&self.post).cloned().collect()
    }
}

/// `1 - |A∩B| / |A∪B|`, with two empty sets counting as identical.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

pub fn pair_dissimilarity(a: &SolutionApiSets, b: &SolutionApiSets) -> f64 {
    jaccard_distance(&a.pre, &b.pre) + jaccard_distance(&a.post, &b.post)
}

/// Mean dissimilarity over all unordered pairs.
pub fn diversity_score(solutions: &[SolutionApiSets]) -> Result<f64, AnalysisError> {
    let n = solutions.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSolutions { found: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += pair_dissimilarity(&solutions[i], &solutions[j]);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Total API call count, repeats included.
pub fn solution_length(record: &TrialRecord) -> usize {
    record.api_calls_pre.len() + record.api_calls_post.len()
}

/// Quartiles use linear interpolation between order statistics. An empty
/// sample reports zeros with `count` 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut xs = values.to_vec();
        xs.sort_by(f64::total_cmp);
        let quantile = |q: f64| {
            let pos = q * (xs.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        };
        Self {
            count: xs.len(),
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            min: xs[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: xs[xs.len() - 1],
        }
    }
}

pub fn solution_length_stats<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> SummaryStats {
    let lengths: Vec<f64> = records.into_iter().map(|r| solution_length(r) as f64).collect();
    SummaryStats::of(&lengths)
}

/// Literal values seen for one API parameter. Histogram keys are the
/// compact JSON rendering of each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub api: String,
    pub param: String,
    pub observations: usize,
    pub histogram: BTreeMap<String, u64>,
    /// Summary over the numeric observations only.
    pub numeric: SummaryStats,
    pub probe: f64,
    pub fraction_at_probe: f64,
}

pub const DEFAULT_PROBE: f64 = 0.5;

pub fn param_distributions<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
    api: &str,
    param: &str,
    probe: f64,
) -> Result<ParamDistribution, AnalysisError> {
    let values: Vec<&serde_json::Value> = records
        .into_iter()
        .flat_map(|r| r.param_values.iter())
        .filter(|pv| pv.api == api && pv.param == param)
        .map(|pv| &pv.value)
        .collect();
    if values.is_empty() {
        return Err(AnalysisError::NoObservations {
            api: api.to_owned(),
            param: param.to_owned(),
        });
    }
    let mut histogram = BTreeMap::new();
    for v in &values {
        *histogram.entry(v.to_string()).or_insert(0) += 1;
    }
    let numeric: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
    let at_probe = numeric.iter().filter(|&&x| (x - probe).abs() < 1e-12).count();
    Ok(ParamDistribution {
        api: api.to_owned(),
        param: param.to_owned(),
        observations: values.len(),
        histogram,
        numeric: SummaryStats::of(&numeric),
        probe,
        fraction_at_probe: at_probe as f64 / values.len() as f64,
    })
}

/// Every `(api, param)` pair with at least one literal observation.
pub fn observed_params<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> BTreeSet<(String, String)> {
    records
        .into_iter()
        .flat_map(|r| r.param_values.iter())
        .map(|pv| (pv.api.clone(), pv.param.clone()))
        .collect()
}

/// Distinct off-list APIs used by the ok records of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NovelApiCount {
    pub count: usize,
    pub apis: BTreeSet<String>,
}

pub fn novel_api_stats(records: &[TrialRecord], api_list: &BTreeSet<String>) -> BTreeMap<String, NovelApiCount> {
    let mut per_run: BTreeMap<String, NovelApiCount> = BTreeMap::new();
    for record in records {
        let entry = per_run.entry(record.run_id.clone()).or_default();
        if !record.is_ok() {
            continue;
        }
        for api in SolutionApiSets::of(record).union() {
            if !api_list.contains(&api) {
                entry.apis.insert(api);
            }
        }
    }
    for entry in per_run.values_mut() {
        entry.count = entry.apis.len();
    }
    per_run
}

/// Number of ok solutions using each API.
pub fn api_usage<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> BTreeMap<String, u64> {
    let mut usage = BTreeMap::new();
    for record in records.into_iter().filter(|r| r.is_ok()) {
        for api in SolutionApiSets::of(record).union() {
            *usage.entry(api).or_insert(0) += 1;
        }
    }
    usage
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageDifference {
    pub api: String,
    pub left: u64,
    pub right: u64,
    pub delta: i64,
}

/// Per-API usage of two settings side by side, largest absolute change first.
pub fn usage_difference(left: &BTreeMap<String, u64>, right: &BTreeMap<String, u64>) -> Vec<UsageDifference> {
    let apis: BTreeSet<&String> = left.keys().chain(right.keys()).collect();
    let mut rows: Vec<UsageDifference> = apis
        .into_iter()
        .map(|api| {
            let (l, r) = (left.get(api).copied().unwrap_or(0), right.get(api).copied().unwrap_or(0));
            UsageDifference {
                api: api.clone(),
                left: l,
                right: r,
                delta: r as i64 - l as i64,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.delta.abs().cmp(&a.delta.abs()).then_with(|| a.api.cmp(&b.api)));
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub top_n: usize,
    pub rank_by: RankBy,
    pub probe: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            top_n: 20,
            rank_by: RankBy::Test,
            probe: DEFAULT_PROBE,
        }
    }
}

/// Graph and diversity use the top-ranked corpus; length, parameter and
/// novel-API statistics use every ok record. Undefined statistics are
/// `None` with the reason in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub top_n_used: usize,
    pub rank_by: RankBy,
    pub graph: CooccurrenceGraph,
    pub dispersion: Option<f64>,
    pub diversity_mean: Option<f64>,
    pub length_stats: SummaryStats,
    /// Keyed `api:param`.
    pub param_histograms: BTreeMap<String, ParamDistribution>,
    pub novel_api_counts: BTreeMap<String, NovelApiCount>,
    pub api_usage: BTreeMap<String, u64>,
    pub notes: Vec<String>,
}

pub fn analyze(records: &[TrialRecord], api_list: &BTreeSet<String>, options: &AnalysisOptions) -> AnalysisReport {
    let mut notes = Vec::new();
    let top = top_records(records, options.top_n, options.rank_by);

    let mut graph = CooccurrenceGraph::default();
    for record in &top {
        graph.add_solution(&SolutionApiSets::of(record).union());
    }
    let dispersion = if top.is_empty() {
        notes.push(AnalysisError::EmptyCorpus.to_string());
        None
    } else {
        dispersion_score(&graph).map_err(|e| notes.push(e.to_string())).ok()
    };
    let sets: Vec<SolutionApiSets> = top.iter().map(|r| SolutionApiSets::of(r)).collect();
    let diversity_mean = diversity_score(&sets).map_err(|e| notes.push(e.to_string())).ok();

    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let param_histograms = observed_params(ok.iter().copied())
        .into_iter()
        .filter_map(|(api, param)| {
            param_distributions(ok.iter().copied(), &api, &param, options.probe)
                .ok()
                .map(|d| (format!("{api}:{param}"), d))
        })
        .collect();

    AnalysisReport {
        top_n_used: top.len(),
        rank_by: options.rank_by,
        graph,
        dispersion,
        diversity_mean,
        length_stats: solution_length_stats(ok.iter().copied()),
        param_histograms,
        novel_api_counts: novel_api_stats(records, api_list),
        api_usage: api_usage(records),
        notes,
    }
}
