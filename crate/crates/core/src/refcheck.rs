//! Brute-force reference checks over the interval cells of small models.
//!
//! The thresholds of a model cut each feature's axis into intervals; every
//! point of a cell takes the same path through every tree. Enumerating one
//! representative per cell therefore covers the whole input space, which gives
//! exact ground truth for the encoder, the oracle and explanation extraction.
//! Evaluation here walks the trees directly and does not share code with the
//! model's own prediction routines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::axp::Explanation;
use crate::encoder::{EncodedModel, ThresholdMap};
use crate::error::{Error, Result};
use crate::model::{Ensemble, FeatureSpace, Instance, Node, Objective, Tree};
use crate::oracle::{scale_value, Oracle};

pub const DEFAULT_CELL_CAP: u128 = 1_000_000;

/// One representative value per cell and feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    representatives: Vec<Vec<f64>>,
}

/// Midpoints between thresholds, plus `t1 - 1` and `tk + 1` for the outer
/// cells. A feature without thresholds gets the single value 0.
pub fn representatives(thresholds: &[f64]) -> Vec<f64> {
    let (Some(first), Some(last)) = (thresholds.first(), thresholds.last()) else {
        return vec![0.0];
    };
    let mut out = vec![first - 1.0];
    out.extend(thresholds.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(last + 1.0);
    out
}

pub fn enumerate_cells(map: &ThresholdMap, cap: u128) -> Result<CellGrid> {
    let representatives: Vec<Vec<f64>> = (0..map.num_features())
        .map(|f| representatives(&map.thresholds(f).collect::<Vec<_>>()))
        .collect();
    let grid = CellGrid { representatives };
    let needed = grid.len();
    if needed > cap {
        return Err(Error::CellCap { needed, cap });
    }
    Ok(grid)
}

impl CellGrid {
    pub fn len(&self) -> u128 {
        self.representatives.iter().map(|r| r.len() as u128).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn representatives(&self, feature: usize) -> &[f64] {
        &self.representatives[feature]
    }

    /// Every cell's representative point, in odometer order.
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.points_with(&[])
    }

    /// Representative points of the cells that agree with `fixed`, where
    /// fixed features take their given value instead of a representative.
    pub fn points_with<'a>(&'a self, fixed: &[(usize, f64)]) -> impl Iterator<Item = Vec<f64>> + 'a {
        let axes: Vec<Vec<f64>> = self
            .representatives
            .iter()
            .enumerate()
            .map(|(f, reps)| match fixed.iter().find(|(g, _)| *g == f) {
                Some(&(_, v)) => vec![v],
                None => reps.clone(),
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total).map(move |mut k| {
            axes.iter()
                .map(|axis| {
                    let v = axis[k % axis.len()];
                    k /= axis.len();
                    v
                })
                .collect()
        })
    }
}

/// Leaf node reached by `values`, walking splits with `x <= t` to the left.
pub fn descend(tree: &Tree, values: &[f64]) -> usize {
    let mut id = tree.root();
    loop {
        match tree.nodes()[id] {
            Node::Leaf { .. } => return id,
            Node::Split { feature, threshold, left, right } => {
                id = if values[feature] <= threshold { left } else { right };
            }
        }
    }
}

fn leaf_value(tree: &Tree, id: usize) -> f64 {
    match tree.nodes()[id] {
        Node::Leaf { value } => value,
        Node::Split { .. } => unreachable!("descend stops at leaves"),
    }
}

/// Per-class scores. A binary model scores class 1 by its raw value and class 0 by zero.
pub fn class_scores(ensemble: &Ensemble, values: &[f64]) -> Vec<f64> {
    let mut raw = ensemble.base_scores().to_vec();
    for tree in ensemble.trees() {
        raw[tree.class_index()] += leaf_value(tree, descend(tree, values));
    }
    match ensemble.objective() {
        Objective::BinaryRaw => vec![0.0, raw[0]],
        Objective::MulticlassRaw => raw,
    }
}

/// Class with the highest score; the lowest index wins ties.
pub fn brute_predict(ensemble: &Ensemble, values: &[f64]) -> usize {
    let scores = class_scores(ensemble, values);
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// Scaled-integer scores, rounding every leaf and base score separately.
pub fn class_scores_scaled(ensemble: &Ensemble, values: &[f64], scale: i64) -> Result<Vec<i64>> {
    let mut raw = ensemble
        .base_scores()
        .iter()
        .map(|&b| scale_value(b, scale))
        .collect::<Result<Vec<_>>>()?;
    for tree in ensemble.trees() {
        raw[tree.class_index()] += scale_value(leaf_value(tree, descend(tree, values)), scale)?;
    }
    Ok(match ensemble.objective() {
        Objective::BinaryRaw => vec![0, raw[0]],
        Objective::MulticlassRaw => raw,
    })
}

fn grid_for(ensemble: &Ensemble, cap: u128) -> Result<CellGrid> {
    enumerate_cells(&crate::encoder::collect_thresholds(ensemble), cap)
}

/// Maximum of `score[rival] - score[winner]` over all cells consistent with `fixed`.
pub fn brute_max_gap(
    ensemble: &Ensemble,
    fixed: &[(usize, f64)],
    winner: usize,
    rival: usize,
    cap: u128,
) -> Result<f64> {
    let grid = grid_for(ensemble, cap)?;
    Ok(grid
        .points_with(fixed)
        .map(|p| {
            let s = class_scores(ensemble, &p);
            s[rival] - s[winner]
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// As [`brute_max_gap`], in the scaled integers used by the oracle.
pub fn brute_max_gap_scaled(
    ensemble: &Ensemble,
    fixed: &[(usize, f64)],
    winner: usize,
    rival: usize,
    scale: i64,
    cap: u128,
) -> Result<i64> {
    let grid = grid_for(ensemble, cap)?;
    let mut best = i64::MIN;
    for p in grid.points_with(fixed) {
        let s = class_scores_scaled(ensemble, &p, scale)?;
        best = best.max(s[rival] - s[winner]);
    }
    Ok(best)
}

/// Whether every cell consistent with the kept features predicts `class`.
pub fn brute_entails(ensemble: &Ensemble, fixed: &[(usize, f64)], class: usize, cap: u128) -> Result<bool> {
    let grid = grid_for(ensemble, cap)?;
    let mut points = grid.points_with(fixed);
    Ok(points.all(|p| brute_predict(ensemble, &p) == class))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxpCheck {
    pub declared_matches_prediction: bool,
    pub sufficient: bool,
    /// Features whose removal leaves the remaining set sufficient.
    pub redundant: usize,
}

impl AxpCheck {
    pub fn passed(&self) -> bool {
        self.declared_matches_prediction && self.sufficient && self.redundant == 0
    }
}

pub fn check_axp(ensemble: &Ensemble, instance: &Instance, explanation: &Explanation, cap: u128) -> Result<AxpCheck> {
    let class = explanation.class;
    let kept = &explanation.kept;
    let sufficient = brute_entails(ensemble, kept, class, cap)?;
    let mut redundant = 0;
    for i in 0..kept.len() {
        let mut rest = kept.clone();
        rest.remove(i);
        if brute_entails(ensemble, &rest, class, cap)? {
            redundant += 1;
        }
    }
    Ok(AxpCheck {
        declared_matches_prediction: brute_predict(ensemble, instance.values()) == class,
        sufficient,
        redundant,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellReport {
    pub cells: u128,
    pub mismatches: u128,
}

/// For every cell, pins all threshold atoms and checks that unit propagation
/// alone selects exactly the path literal of the leaf each tree reaches.
pub fn check_cell_equivalence(encoded: &EncodedModel, cap: u128) -> Result<CellReport> {
    let grid = enumerate_cells(encoded.thresholds(), cap)?;
    let all: Vec<usize> = (0..encoded.ensemble().num_features()).collect();
    let mut oracle = Oracle::new(encoded);
    let mut report = CellReport::default();
    for point in grid.points() {
        report.cells += 1;
        let instance = Instance::new(point.clone())?;
        let agrees = match oracle.implied(&encoded.assumptions(&instance, all.iter().copied())) {
            None => false,
            Some(values) => encoded.paths().iter().all(|entry| {
                let tree = &encoded.ensemble().trees()[entry.tree];
                let reached = descend(tree, &point) == entry.leaf;
                values[entry.literal.index()] == Some(reached)
            }),
        };
        if !agrees {
            report.mismatches += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_features: usize,
    pub max_trees: usize,
    pub max_depth: usize,
    pub allow_multiclass: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_features: 3,
            max_trees: 4,
            max_depth: 3,
            allow_multiclass: true,
        }
    }
}

/// Threshold grid used by generated models.
pub const THRESHOLD_GRID: [f64; 7] = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];

fn eighths(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-8..=8) as f64 / 8.0
}

fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, features: usize, depth: usize) -> usize {
    let id = nodes.len();
    if depth == 0 || rng.gen_bool(0.3) {
        nodes.push(Node::Leaf { value: eighths(rng) });
        return id;
    }
    nodes.push(Node::Leaf { value: 0.0 });
    let feature = rng.gen_range(0..features);
    let threshold = *THRESHOLD_GRID.choose(rng).unwrap();
    let left = grow(rng, nodes, features, depth - 1);
    let right = grow(rng, nodes, features, depth - 1);
    nodes[id] = Node::Split { feature, threshold, left, right };
    id
}

/// A deterministic random model within `limits`. Leaf and base values are
/// multiples of 1/8, so they scale exactly.
pub fn random_small_ensemble(seed: u64, limits: Limits) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = rng.gen_range(1..=limits.max_features.max(1));
    let multiclass = limits.allow_multiclass && limits.max_trees >= 3 && rng.gen_bool(0.3);
    let (num_classes, objective) = if multiclass {
        (3, Objective::MulticlassRaw)
    } else {
        (1, Objective::BinaryRaw)
    };
    let count = if multiclass {
        num_classes * rng.gen_range(1..=limits.max_trees / num_classes)
    } else {
        rng.gen_range(1..=limits.max_trees.max(1))
    };
    let trees = (0..count)
        .map(|i| {
            let mut nodes = Vec::new();
            let root = grow(&mut rng, &mut nodes, features, limits.max_depth);
            Tree::new(nodes, root, i % num_classes).expect("generated trees are well formed")
        })
        .collect();
    let base_scores = (0..num_classes).map(|_| eighths(&mut rng)).collect();
    Ensemble::new(FeatureSpace::numbered(features), trees, num_classes, base_scores, objective)
        .expect("generated models are valid")
}

/// Values on a quarter grid that includes every threshold of the generator.
pub fn random_instance<R: Rng>(rng: &mut R, features: usize) -> Instance {
    Instance::new((0..features).map(|_| rng.gen_range(-6..=10) as f64 / 4.0).collect()).unwrap()
}

/// A random subset of features, ascending.
pub fn random_subset<R: Rng>(rng: &mut R, features: usize) -> Vec<usize> {
    (0..features).filter(|_| rng.gen_bool(0.5)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axp::{extract_axp, OrderPolicy};
    use crate::encoder::encode_ensemble;
    use crate::model::tests::toy2f;
    use crate::oracle::DEFAULT_SCALE;

    #[test]
    fn toy_grid() {
        let enc = encode_ensemble(&toy2f());
        let grid = enumerate_cells(enc.thresholds(), DEFAULT_CELL_CAP).unwrap();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid.points().count(), 6);
        assert_eq!(grid.representatives(0), &[-0.5, 1.0, 2.5]);
    }

    #[test]
    fn representative_rules() {
        assert_eq!(representatives(&[]), vec![0.0]);
        assert_eq!(representatives(&[0.5]), vec![-0.5, 1.5]);
    }

    #[test]
    fn cap_is_enforced() {
        let enc = encode_ensemble(&toy2f());
        assert!(matches!(
            enumerate_cells(enc.thresholds(), 5),
            Err(Error::CellCap { needed: 6, cap: 5 })
        ));
    }

    #[test]
    fn toy_gaps_match_oracle_for_every_fixed_subset() {
        let m = toy2f();
        let enc = encode_ensemble(&m);
        let x = Instance::new(vec![1.0, 3.0]).unwrap();
        for subset in [vec![], vec![0], vec![1], vec![0, 1]] {
            let fixed: Vec<(usize, f64)> = subset.iter().map(|&f| (f, x.get(f))).collect();
            let brute = brute_max_gap_scaled(&m, &fixed, 1, 0, DEFAULT_SCALE, DEFAULT_CELL_CAP).unwrap();
            let got = Oracle::new(&enc)
                .max_score_gap(&enc.assumptions(&x, subset.iter().copied()), 1, 0)
                .unwrap();
            assert_eq!(got.gap.scaled, brute, "fixed {subset:?}");
        }
        assert_eq!(brute_max_gap(&m, &[], 1, 0, DEFAULT_CELL_CAP).unwrap(), 0.75);
        // fully fixed is the point difference: raw(1, 3) = 2.25
        assert_eq!(brute_max_gap(&m, &[(0, 1.0), (1, 3.0)], 1, 0, DEFAULT_CELL_CAP).unwrap(), -2.25);
    }

    #[test]
    fn constant_model_gap() {
        let m = Ensemble::new(FeatureSpace::numbered(2), vec![Tree::leaf(0.5, 0)], 1, vec![0.25], Objective::BinaryRaw)
            .unwrap();
        for fixed in [vec![], vec![(0, 3.0)]] {
            assert_eq!(brute_max_gap(&m, &fixed, 0, 1, DEFAULT_CELL_CAP).unwrap(), 0.75);
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        for seed in 0..1000 {
            let a = random_small_ensemble(seed, Limits::default());
            let b = random_small_ensemble(seed, Limits::default());
            assert_eq!(
                crate::model::emit_portable_json(&a),
                crate::model::emit_portable_json(&b)
            );
            assert!(a.num_features() <= 3 && a.trees().len() <= 4);
            assert!(a.trees().iter().all(|t| t.depth() <= 3));
        }
    }

    #[test]
    fn depth_zero_gives_constant_models() {
        let limits = Limits { max_depth: 0, ..Limits::default() };
        for seed in 0..50 {
            let m = random_small_ensemble(seed, limits);
            assert!(m.trees().iter().all(|t| t.nodes().len() == 1));
        }
    }

    #[test]
    fn cells_agree_with_encoding() {
        for seed in 0..100 {
            let enc = encode_ensemble(&random_small_ensemble(seed, Limits::default()));
            let r = check_cell_equivalence(&enc, DEFAULT_CELL_CAP).unwrap();
            assert_eq!(r.mismatches, 0, "seed {seed}");
        }
    }

    #[test]
    fn oracle_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..100 {
            let m = random_small_ensemble(seed, Limits::default());
            let enc = encode_ensemble(&m);
            let x = random_instance(&mut rng, m.num_features());
            let subset = random_subset(&mut rng, m.num_features());
            let fixed: Vec<(usize, f64)> = subset.iter().map(|&f| (f, x.get(f))).collect();
            let labels = m.num_labels();
            let (w, r) = (rng.gen_range(0..labels), rng.gen_range(0..labels));
            if w == r {
                continue;
            }
            let got = Oracle::new(&enc)
                .max_score_gap(&enc.assumptions(&x, subset.iter().copied()), w, r)
                .unwrap();
            let want = brute_max_gap_scaled(&m, &fixed, w, r, DEFAULT_SCALE, DEFAULT_CELL_CAP).unwrap();
            assert_eq!(got.gap.scaled, want, "seed {seed}");
        }
    }

    #[test]
    fn explanations_pass_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..100 {
            let m = random_small_ensemble(seed, Limits::default());
            let enc = encode_ensemble(&m);
            let x = random_instance(&mut rng, m.num_features());
            for policy in [OrderPolicy::Index, OrderPolicy::Margin] {
                let e = extract_axp(&enc, &x, policy).unwrap();
                let check = check_axp(&m, &x, &e, DEFAULT_CELL_CAP).unwrap();
                assert!(check.passed(), "seed {seed} {policy:?}: {check:?}");
            }
        }
    }

    #[test]
    fn brute_predict_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..200 {
            let m = random_small_ensemble(seed, Limits::default());
            let x = random_instance(&mut rng, m.num_features());
            assert_eq!(brute_predict(&m, x.values()), m.predict(&x));
        }
    }
}
