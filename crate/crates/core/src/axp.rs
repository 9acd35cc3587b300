//! Subset-minimal abductive explanations by deletion.
//!
//! Starting from the fully fixed instance, each feature is freed in turn and
//! stays free only if the remaining fixed features still entail the
//! prediction. The result is minimal with respect to single removals.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncodedModel;
use crate::error::{Error, Result};
use crate::logic::Lit;
use crate::model::{FeatureSpace, Instance};
use crate::oracle::Oracle;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Ascending feature index.
    #[default]
    Index,
    /// Descending distance between the value and its nearest threshold.
    Margin,
}

impl FromStr for OrderPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "index" => Ok(Self::Index),
            "margin" => Ok(Self::Margin),
            other => Err(format!("unknown order policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub instance: Option<usize>,
    pub class: usize,
    /// Kept features with their values, ascending by feature index.
    pub kept: Vec<(usize, f64)>,
    pub free: Vec<usize>,
}

impl Explanation {
    pub fn kept_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.kept.iter().map(|(f, _)| *f)
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.kept.iter().any(|(f, _)| *f == feature)
    }

    pub fn record(&self, features: &FeatureSpace) -> ExplanationRecord {
        ExplanationRecord {
            instance: self.instance,
            class: self.class,
            kept: self
                .kept
                .iter()
                .map(|&(f, value)| KeptFeature {
                    feature: features.name(f).to_string(),
                    value,
                })
                .collect(),
            free: self.free.iter().map(|&f| features.name(f).to_string()).collect(),
        }
    }
}

/// Serialized form of an [`Explanation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub instance: Option<usize>,
    pub class: usize,
    pub kept: Vec<KeptFeature>,
    pub free: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptFeature {
    pub feature: String,
    pub value: f64,
}

/// Order in which the deletion loop visits features.
pub fn default_order(instance: &Instance, encoded: &EncodedModel, policy: OrderPolicy) -> Vec<usize> {
    let n = encoded.ensemble().num_features();
    let mut order: Vec<usize> = (0..n).collect();
    if policy == OrderPolicy::Margin {
        let margin = |f: usize| {
            encoded
                .thresholds()
                .thresholds(f)
                .map(|t| (instance.get(f) - t).abs())
                .fold(f64::INFINITY, f64::min)
        };
        // stable: equal margins keep index order
        order.sort_by(|&a, &b| margin(b).total_cmp(&margin(a)));
    }
    order
}

fn pins(oracle: &Oracle<'_>, instance: &Instance, fixed: &[bool]) -> Vec<Lit> {
    let map = oracle.encoded().thresholds();
    fixed
        .iter()
        .enumerate()
        .filter(|(_, on)| **on)
        .flat_map(|(f, _)| map.pin(f, instance.get(f)).collect::<Vec<_>>())
        .collect()
}

/// Deletion-based extraction using an existing oracle context.
pub fn extract_with(oracle: &mut Oracle<'_>, instance: &Instance, policy: OrderPolicy) -> Result<Explanation> {
    let encoded = oracle.encoded();
    let ensemble = encoded.ensemble();
    ensemble.check_width(instance)?;
    let class = ensemble.predict(instance);

    let mut fixed = vec![true; ensemble.num_features()];
    if !oracle.entails(&pins(oracle, instance, &fixed), class)?.is_valid() {
        return Err(Error::ScaleTooCoarse(instance.values().to_vec()));
    }
    for f in default_order(instance, encoded, policy) {
        fixed[f] = false;
        let assumptions = pins(oracle, instance, &fixed);
        if !oracle.entails(&assumptions, class)?.is_valid() {
            fixed[f] = true;
        }
    }

    let (kept, free): (Vec<usize>, Vec<usize>) = (0..fixed.len()).partition(|&f| fixed[f]);
    Ok(Explanation {
        instance: None,
        class,
        kept: kept.into_iter().map(|f| (f, instance.get(f))).collect(),
        free,
    })
}

pub fn extract_axp(encoded: &EncodedModel, instance: &Instance, policy: OrderPolicy) -> Result<Explanation> {
    extract_with(&mut Oracle::new(encoded), instance, policy)
}
