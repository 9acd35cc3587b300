//! Class-level explanations: for each predicted class, the union of the
//! features kept by instance explanations together with a typical value
//! interval per feature.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axp::{extract_with, Explanation, OrderPolicy};
use crate::encoder::EncodedModel;
use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureSpace};
use crate::oracle::{Oracle, DEFAULT_SCALE};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IntervalMethod {
    /// `[q(alpha), q(1 - alpha)]` with linearly interpolated empirical quantiles.
    Quantile { alpha: f64 },
    /// Extent of the larger group of an optimal one-dimensional 2-means split.
    Cluster,
}

impl Default for IntervalMethod {
    fn default() -> Self {
        IntervalMethod::Quantile {
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureInterval {
    pub a: f64,
    pub b: f64,
    pub support: usize,
    pub frequency: f64,
}

impl FeatureInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.a <= value && value <= self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassExplanation {
    pub class: usize,
    /// Instances predicted as `class`.
    pub population: usize,
    pub entries: BTreeMap<usize, FeatureInterval>,
}

impl ClassExplanation {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, feature: usize) -> Option<&FeatureInterval> {
        self.entries.get(&feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub method: IntervalMethod,
    pub order: OrderPolicy,
    pub scale: i64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            method: IntervalMethod::default(),
            order: OrderPolicy::default(),
            scale: DEFAULT_SCALE,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Index splitting sorted values into `[..k]` and `[k..]` with minimal
/// within-group squared error; ties resolve to the smallest `k`.
fn two_means_split(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |from: usize, to: usize| {
        let m = (to - from) as f64;
        let s = prefix[to] - prefix[from];
        prefix_sq[to] - prefix_sq[from] - s * s / m
    };
    let mut best = (f64::INFINITY, 1);
    for k in 1..n {
        let cost = sse(0, k) + sse(k, n);
        if cost < best.0 {
            best = (cost, k);
        }
    }
    best.1
}

/// Typical interval of a nonempty list of values.
pub fn interval_of(values: &[f64], method: IntervalMethod) -> (f64, f64) {
    assert!(!values.is_empty(), "interval of an empty value list");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (first, last) = (sorted[0], sorted[sorted.len() - 1]);
    if first == last {
        return (first, first);
    }
    match method {
        IntervalMethod::Quantile { alpha } => {
            let a = quantile(&sorted, alpha);
            let b = quantile(&sorted, 1.0 - alpha);
            (a.min(b), a.max(b))
        }
        IntervalMethod::Cluster => {
            let n = sorted.len();
            let k = two_means_split(&sorted);
            let lower_wins = match k.cmp(&(n - k)) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                // equal sizes: the group holding the (lower) median element
                std::cmp::Ordering::Equal => (n - 1) / 2 < k,
            };
            if lower_wins {
                (sorted[0], sorted[k - 1])
            } else {
                (sorted[k], sorted[n - 1])
            }
        }
    }
}

/// Groups explanations by predicted class and summarizes each kept feature.
/// Every one of `num_labels` classes gets an entry, possibly empty.
pub fn aggregate(explanations: &[Explanation], num_labels: usize, method: IntervalMethod) -> Vec<ClassExplanation> {
    (0..num_labels)
        .map(|class| {
            let members: Vec<&Explanation> = explanations.iter().filter(|e| e.class == class).collect();
            let mut values: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for e in &members {
                for &(f, v) in &e.kept {
                    values.entry(f).or_default().push(v);
                }
            }
            let population = members.len();
            let entries = values
                .into_iter()
                .map(|(f, vs)| {
                    let (a, b) = interval_of(&vs, method);
                    let interval = FeatureInterval {
                        a,
                        b,
                        support: vs.len(),
                        frequency: vs.len() as f64 / population as f64,
                    };
                    (f, interval)
                })
                .collect();
            ClassExplanation {
                class,
                population,
                entries,
            }
        })
        .collect()
}

/// Instance explanations for every row of `dataset`, in row order. Runs on the
/// current rayon pool with one oracle context per worker.
pub fn explain_all(encoded: &EncodedModel, dataset: &Dataset, order: OrderPolicy, scale: i64) -> Result<Vec<Explanation>> {
    dataset
        .instances()
        .par_iter()
        .enumerate()
        .map_init(
            || Oracle::with_scale(encoded, scale),
            |oracle, (i, x)| {
                let mut e = extract_with(oracle, x, order)?;
                e.instance = Some(i);
                Ok(e)
            },
        )
        .collect()
}

pub fn build_class_explanations(
    encoded: &EncodedModel,
    dataset: &Dataset,
    options: &BuildOptions,
) -> Result<Vec<ClassExplanation>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let explanations = explain_all(encoded, dataset, options.order, options.scale)?;
    Ok(aggregate(
        &explanations,
        encoded.ensemble().num_labels(),
        options.method,
    ))
}

/// Persisted form of one class explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class: usize,
    pub population: usize,
    pub features: Vec<FeatureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub support: usize,
    pub frequency: f64,
}

pub fn to_records(classes: &[ClassExplanation], features: &FeatureSpace) -> Vec<ClassRecord> {
    classes
        .iter()
        .map(|c| ClassRecord {
            class: c.class,
            population: c.population,
            features: c
                .entries
                .iter()
                .map(|(&f, iv)| FeatureRecord {
                    name: features.name(f).to_string(),
                    a: iv.a,
                    b: iv.b,
                    support: iv.support,
                    frequency: iv.frequency,
                })
                .collect(),
        })
        .collect()
}

pub fn to_json(classes: &[ClassExplanation], features: &FeatureSpace) -> String {
    serde_json::to_string_pretty(&to_records(classes, features)).expect("records serialize")
}

/// Reads an artifact back; `num_labels` classes are returned in index order,
/// missing classes as empty explanations.
pub fn from_json(text: &str, features: &FeatureSpace, num_labels: usize) -> Result<Vec<ClassExplanation>> {
    let records: Vec<ClassRecord> = serde_json::from_str(text)?;
    let mut out: Vec<ClassExplanation> = (0..num_labels)
        .map(|class| ClassExplanation {
            class,
            population: 0,
            entries: BTreeMap::new(),
        })
        .collect();
    for r in records {
        let slot = out
            .get_mut(r.class)
            .ok_or_else(|| Error::ClassArtifact(format!("class {} out of range", r.class)))?;
        slot.population = r.population;
        for fr in r.features {
            let f = features
                .index_of(&fr.name)
                .ok_or_else(|| Error::ClassArtifact(format!("unknown feature {:?}", fr.name)))?;
            if fr.a > fr.b || fr.support == 0 {
                return Err(Error::ClassArtifact(format!(
                    "class {}, feature {:?}: invalid interval or support",
                    r.class, fr.name
                )));
            }
            slot.entries.insert(
                f,
                FeatureInterval {
                    a: fr.a,
                    b: fr.b,
                    support: fr.support,
                    frequency: fr.frequency,
                },
            );
        }
    }
    Ok(out)
}
