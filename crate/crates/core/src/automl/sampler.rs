//! Trial samplers behind one propose interface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::space::{Assignment, ParamKind, ParamSpec, SearchSpace};
use crate::config::SamplerKind;

/// One completed trial as the sampler sees it. `None` marks a failed trial.
pub type Observation = (Assignment, Option<f64>);

pub trait Sampler {
    fn propose(&mut self, space: &SearchSpace, history: &[Observation]) -> Assignment;
}

pub fn make_sampler(kind: SamplerKind, seed: u64) -> Box<dyn Sampler> {
    match kind {
        SamplerKind::Uniform => Box::new(UniformSampler::new(seed)),
        SamplerKind::Tpe => Box::new(TpeSampler::new(seed)),
    }
}

/// Independent draws: uniform, log-uniform, inclusive integer-uniform or
/// uniform over choices. Ignores history.
pub struct UniformSampler {
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn draw_uniform(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Value {
    match spec.kind {
        ParamKind::Categorical => {
            let choices = spec.choice_list();
            choices[rng.random_range(0..choices.len())].clone()
        }
        ParamKind::Int => {
            let (low, high) = spec.bounds();
            Value::from(rng.random_range(low as i64..=high as i64))
        }
        ParamKind::Float => {
            let (low, high) = spec.bounds();
            let u: f64 = rng.random();
            let v = if spec.log_scale {
                (low.ln() + u * (high.ln() - low.ln())).exp()
            } else {
                low + u * (high - low)
            };
            Value::from(v.clamp(low, high))
        }
    }
}

impl Sampler for UniformSampler {
    fn propose(&mut self, space: &SearchSpace, _history: &[Observation]) -> Assignment {
        space
            .params
            .iter()
            .map(|p| (p.name.clone(), draw_uniform(p, &mut self.rng)))
            .collect()
    }
}

/// Tree-structured Parzen estimator over the joint space. Good and bad
/// trials each get a mixture of product kernels plus a broad prior
/// component; the proposal is the candidate drawn from the good mixture
/// with the highest good/bad density ratio. Until `n_startup` trials have
/// completed it samples uniformly.
pub struct TpeSampler {
    rng: ChaCha8Rng,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub gamma: f64,
}

impl TpeSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_startup: 6,
            n_candidates: 24,
            gamma: 0.25,
        }
    }
}

/// Share of a categorical kernel spread uniformly over all choices.
const CATEGORICAL_SMOOTHING: f64 = 0.25;

/// Maps a numeric value into [0, 1]; integers occupy unit-wide cells.
fn to_unit(spec: &ParamSpec, v: f64) -> f64 {
    let (low, high) = numeric_range(spec);
    let x = if spec.log_scale { v.ln() } else { v };
    ((x - low) / (high - low)).clamp(0.0, 1.0)
}

fn from_unit(spec: &ParamSpec, u: f64) -> Value {
    let (low, high) = numeric_range(spec);
    let x = low + u * (high - low);
    let (lo, hi) = spec.bounds();
    match spec.kind {
        ParamKind::Int => Value::from((x.round() as i64).clamp(lo as i64, hi as i64)),
        _ => {
            let v = if spec.log_scale { x.exp() } else { x };
            Value::from(v.clamp(lo, hi))
        }
    }
}

fn numeric_range(spec: &ParamSpec) -> (f64, f64) {
    let (low, high) = spec.bounds();
    match spec.kind {
        ParamKind::Int => (low - 0.5, high + 0.5),
        _ if spec.log_scale => (low.ln(), high.ln()),
        _ => (low, high),
    }
}

/// A point in the encoded space: unit coordinates for numeric parameters,
/// choice indices for categorical ones.
#[derive(Clone, Copy)]
enum Coord {
    Unit(f64),
    Choice(usize),
}

/// Kernel centre; `None` marks the prior component.
struct Mixture<'a> {
    specs: &'a [ParamSpec],
    centres: Vec<Option<Vec<Coord>>>,
    sigma: f64,
}

impl<'a> Mixture<'a> {
    fn fit(specs: &'a [ParamSpec], points: Vec<Vec<Coord>>) -> Self {
        let dims = specs.iter().filter(|s| s.kind != ParamKind::Categorical).count().max(1);
        let n = points.len().max(1) as f64;
        let sigma = 0.2 * n.powf(-1.0 / (dims as f64 + 4.0));
        let mut centres: Vec<Option<Vec<Coord>>> = points.into_iter().map(Some).collect();
        centres.push(None);
        Self { specs, centres, sigma }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Coord> {
        let centre = &self.centres[rng.random_range(0..self.centres.len())];
        self.specs
            .iter()
            .enumerate()
            .map(|(d, spec)| match (spec.kind, centre.as_ref().map(|c| c[d])) {
                (ParamKind::Categorical, Some(Coord::Choice(c))) => {
                    let k = spec.choice_list().len();
                    if rng.random::<f64>() < CATEGORICAL_SMOOTHING {
                        Coord::Choice(rng.random_range(0..k))
                    } else {
                        Coord::Choice(c)
                    }
                }
                (ParamKind::Categorical, _) => Coord::Choice(rng.random_range(0..spec.choice_list().len())),
                (_, Some(Coord::Unit(mu))) => Coord::Unit(truncated_normal(mu, self.sigma, rng)),
                (_, _) => Coord::Unit(truncated_normal(0.5, 1.0, rng)),
            })
            .collect()
    }

    fn log_pdf(&self, x: &[Coord]) -> f64 {
        let mut total = 0.0;
        for centre in &self.centres {
            let mut p = 1.0;
            for (d, spec) in self.specs.iter().enumerate() {
                p *= match (x[d], centre.as_ref().map(|c| c[d])) {
                    (Coord::Choice(v), Some(Coord::Choice(c))) => {
                        let k = spec.choice_list().len() as f64;
                        CATEGORICAL_SMOOTHING / k + if v == c { 1.0 - CATEGORICAL_SMOOTHING } else { 0.0 }
                    }
                    (Coord::Choice(_), _) => 1.0 / spec.choice_list().len() as f64,
                    (Coord::Unit(v), Some(Coord::Unit(mu))) => truncated_normal_pdf(v, mu, self.sigma),
                    (Coord::Unit(v), _) => truncated_normal_pdf(v, 0.5, 1.0),
                };
            }
            total += p;
        }
        (total / self.centres.len() as f64).max(1e-300).ln()
    }
}

fn truncated_normal(mu: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    for _ in 0..256 {
        let x = mu + sigma * standard_normal(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    mu.clamp(0.0, 1.0)
}

fn truncated_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let mass = (phi((1.0 - mu) / sigma) - phi(-mu / sigma)).max(1e-12);
    let t = (x - mu) / sigma;
    (-0.5 * t * t).exp() / (sigma * mass * (2.0 * std::f64::consts::PI).sqrt())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Abramowitz-Stegun 7.1.26; absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

fn encode(space: &SearchSpace, assignment: &Assignment) -> Option<Vec<Coord>> {
    space
        .params
        .iter()
        .map(|spec| {
            let value = assignment.get(&spec.name)?;
            match spec.kind {
                ParamKind::Categorical => spec.choice_list().iter().position(|c| c == value).map(Coord::Choice),
                _ => value.as_f64().map(|v| Coord::Unit(to_unit(spec, v))),
            }
        })
        .collect()
}

fn decode(space: &SearchSpace, x: &[Coord]) -> Assignment {
    space
        .params
        .iter()
        .zip(x)
        .map(|(spec, coord)| {
            let value = match *coord {
                Coord::Choice(i) => spec.choice_list()[i].clone(),
                Coord::Unit(u) => from_unit(spec, u),
            };
            (spec.name.clone(), value)
        })
        .collect()
}

impl Sampler for TpeSampler {
    fn propose(&mut self, space: &SearchSpace, history: &[Observation]) -> Assignment {
        if history.len() < self.n_startup || space.params.is_empty() {
            return space
                .params
                .iter()
                .map(|p| (p.name.clone(), draw_uniform(p, &mut self.rng)))
                .collect();
        }
        // Best first; failed trials rank last; the sort is stable.
        let mut ranked: Vec<&Observation> = history.iter().collect();
        ranked.sort_by(|a, b| {
            let (x, y) = (a.1.unwrap_or(f64::NEG_INFINITY), b.1.unwrap_or(f64::NEG_INFINITY));
            y.total_cmp(&x)
        });
        let n_good = ((self.gamma * ranked.len() as f64).ceil() as usize).clamp(1, 25);
        let (good, bad) = ranked.split_at(n_good.min(ranked.len()));
        let points = |obs: &[&Observation]| obs.iter().filter_map(|o| encode(space, &o.0)).collect::<Vec<_>>();
        let l = Mixture::fit(&space.params, points(good));
        let g = Mixture::fit(&space.params, points(bad));

        let mut best: Option<(f64, Vec<Coord>)> = None;
        for _ in 0..self.n_candidates {
            let x = l.sample(&mut self.rng);
            let score = l.log_pdf(&x) - g.log_pdf(&x);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, x));
            }
        }
        decode(space, &best.expect("n_candidates > 0").1)
    }
}
