//! Search-space manifest: parsing, validation and the lexical checks that
//! tie declared parameter names to the parameterized source.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bridge::BridgeError;
use crate::engine::CandidatePair;

pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Int,
    Float,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, rename = "log", skip_serializing_if = "std::ops::Not::not")]
    pub log_scale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Value>>,
}

impl ParamSpec {
    pub fn float(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.to_owned(),
            kind: ParamKind::Float,
            low: Some(low),
            high: Some(high),
            log_scale: false,
            choices: None,
        }
    }

    pub fn log_float(name: &str, low: f64, high: f64) -> Self {
        Self {
            log_scale: true,
            ..Self::float(name, low, high)
        }
    }

    pub fn int(name: &str, low: i64, high: i64) -> Self {
        Self {
            kind: ParamKind::Int,
            ..Self::float(name, low as f64, high as f64)
        }
    }

    pub fn categorical(name: &str, choices: Vec<Value>) -> Self {
        Self {
            name: name.to_owned(),
            kind: ParamKind::Categorical,
            low: None,
            high: None,
            log_scale: false,
            choices: Some(choices),
        }
    }

    /// Numeric bounds; only valid after [`ParamSpec::validate`].
    pub fn bounds(&self) -> (f64, f64) {
        (self.low.unwrap_or(0.0), self.high.unwrap_or(0.0))
    }

    pub fn choice_list(&self) -> &[Value] {
        self.choices.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if !NAME_PATTERN.is_match(&self.name) {
            return Err(ManifestError::NamePattern(self.name.clone()));
        }
        match self.kind {
            ParamKind::Categorical => {
                if self.choice_list().is_empty() {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "categorical choices must be non-empty".into()));
                }
                if self.low.is_some() || self.high.is_some() || self.log_scale {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "categorical takes only choices".into()));
                }
            }
            ParamKind::Int | ParamKind::Float => {
                let (Some(low), Some(high)) = (self.low, self.high) else {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "numeric kinds need low and high".into()));
                };
                if self.choices.is_some() {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "numeric kinds take no choices".into()));
                }
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "low must be < high".into()));
                }
                if self.kind == ParamKind::Int {
                    if low.fract() != 0.0 || high.fract() != 0.0 {
                        return Err(ManifestError::InvalidSpec(self.name.clone(), "int bounds must be integers".into()));
                    }
                    if self.log_scale {
                        return Err(ManifestError::InvalidSpec(self.name.clone(), "log scale applies to floats only".into()));
                    }
                }
                if self.log_scale && low <= 0.0 {
                    return Err(ManifestError::InvalidSpec(self.name.clone(), "log scale needs low > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether `value` is a legal value of this parameter.
    pub fn admits(&self, value: &Value) -> bool {
        match self.kind {
            ParamKind::Categorical => self.choice_list().contains(value),
            ParamKind::Float => value
                .as_f64()
                .is_some_and(|v| v >= self.bounds().0 && v <= self.bounds().1),
            ParamKind::Int => {
                let (low, high) = self.bounds();
                value.as_i64().is_some_and(|v| v as f64 >= low && v as f64 <= high)
                    || value
                        .as_f64()
                        .is_some_and(|v| v.fract() == 0.0 && v >= low && v <= high)
            }
        }
    }
}

pub static NAME_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^f([1-9][0-9]*)_(pre|post)_[A-Za-z_][A-Za-z0-9_]*$").expect("valid regex"));

static NAME_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bf[0-9]+_(?:pre|post)_[A-Za-z0-9_]*").expect("valid regex"));

/// Entry index encoded in a parameter name, e.g. 2 for `f2_post_threshold`.
pub fn entry_of(name: &str) -> Option<usize> {
    NAME_PATTERN.captures(name)?.get(1)?.as_str().parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub entry_index: usize,
    pub params: Vec<ParamSpec>,
    pub defaults: Assignment,
}

impl SearchSpace {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = BTreeSet::new();
        for spec in &self.params {
            spec.validate()?;
            if !seen.insert(spec.name.as_str()) {
                return Err(ManifestError::Duplicate(spec.name.clone()));
            }
            if entry_of(&spec.name) != Some(self.entry_index) {
                return Err(ManifestError::WrongEntry {
                    name: spec.name.clone(),
                    entry: self.entry_index,
                });
            }
            let default = self
                .defaults
                .get(&spec.name)
                .ok_or_else(|| ManifestError::DefaultMissing(spec.name.clone()))?;
            if !spec.admits(default) {
                return Err(ManifestError::DefaultOutOfBounds(spec.name.clone(), default.to_string()));
            }
        }
        if let Some(extra) = self.defaults.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(ManifestError::UndeclaredDefault(extra.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterizedPair {
    pub candidate: CandidatePair,
    pub space: SearchSpace,
}

impl ParameterizedPair {
    /// The assignment must bind exactly the declared names.
    pub fn check_assignment(&self, assignment: &Assignment) -> Result<(), BridgeError> {
        if let Some(extra) = assignment.keys().find(|k| !self.space.names().any(|n| n == k.as_str())) {
            return Err(BridgeError::UnknownParam(extra.clone()));
        }
        if let Some(missing) = self.space.names().find(|n| !assignment.contains_key(*n)) {
            return Err(BridgeError::UnknownParam(missing.to_owned()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON of the required shape: {0}")]
    Json(String),
    #[error("name pattern: `{0}` must look like f<i>_pre_<name> or f<i>_post_<name>")]
    NamePattern(String),
    #[error("invalid parameter `{0}`: {1}")]
    InvalidSpec(String, String),
    #[error("parameter `{0}` is declared twice")]
    Duplicate(String),
    #[error("parameter `{name}` is listed under entry {entry} but its prefix names another entry")]
    WrongEntry { name: String, entry: usize },
    #[error("entry key `{0}` is not an entry number between 1 and the number of entries")]
    BadEntryKey(String),
    #[error("entry {0} declares no parameters")]
    EmptyEntry(usize),
    #[error("default missing for `{0}`")]
    DefaultMissing(String),
    #[error("default out of bounds: `{0}` = {1}")]
    DefaultOutOfBounds(String, String),
    #[error("default given for undeclared parameter `{0}`")]
    UndeclaredDefault(String),
    #[error("declared parameter `{0}` is never used in the code")]
    Unreferenced(String),
    #[error("the code uses `{0}`, which is not declared in the search space")]
    Undeclared(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    default_params: BTreeMap<String, Assignment>,
    search_space: BTreeMap<String, Vec<ParamSpec>>,
}

/// Parses the JSON manifest into one validated space per entry 1..=n and
/// checks it against the parameterized source.
pub fn parse_manifest(json: &str, source: &str, n: usize) -> Result<Vec<SearchSpace>, ManifestError> {
    let raw: RawManifest = serde_json::from_str(json).map_err(|e| ManifestError::Json(e.to_string()))?;
    let key_index = |key: &String| -> Result<usize, ManifestError> {
        key.parse::<usize>()
            .ok()
            .filter(|i| (1..=n).contains(i))
            .ok_or_else(|| ManifestError::BadEntryKey(key.clone()))
    };
    let mut specs: BTreeMap<usize, Vec<ParamSpec>> = BTreeMap::new();
    for (key, params) in raw.search_space {
        specs.insert(key_index(&key)?, params);
    }
    let mut defaults: BTreeMap<usize, Assignment> = BTreeMap::new();
    for (key, values) in raw.default_params {
        defaults.insert(key_index(&key)?, values);
    }
    let mut spaces = Vec::with_capacity(n);
    for entry in 1..=n {
        let params = specs.remove(&entry).unwrap_or_default();
        if params.is_empty() {
            return Err(ManifestError::EmptyEntry(entry));
        }
        for p in &params {
            if !NAME_PATTERN.is_match(&p.name) {
                return Err(ManifestError::NamePattern(p.name.clone()));
            }
        }
        let space = SearchSpace {
            entry_index: entry,
            params,
            defaults: defaults.remove(&entry).unwrap_or_default(),
        };
        space.validate()?;
        spaces.push(space);
    }
    if let Some(extra) = defaults.values().flat_map(|d| d.keys()).next() {
        return Err(ManifestError::UndeclaredDefault(extra.clone()));
    }
    check_references(source, &spaces)?;
    Ok(spaces)
}

/// Every declared name occurs in the source and every index-prefixed
/// token in the source is declared.
pub fn check_references(source: &str, spaces: &[SearchSpace]) -> Result<(), ManifestError> {
    let used: BTreeSet<&str> = NAME_TOKEN.find_iter(source).map(|m| m.as_str()).collect();
    let declared: BTreeSet<&str> = spaces.iter().flat_map(|s| s.names()).collect();
    if let Some(name) = declared.iter().find(|d| !used.contains(*d)) {
        return Err(ManifestError::Unreferenced((*name).to_owned()));
    }
    if let Some(name) = used.iter().find(|u| !declared.contains(*u)) {
        return Err(ManifestError::Undeclared((*name).to_owned()));
    }
    Ok(())
}
