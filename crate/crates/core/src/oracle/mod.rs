//! Exact reasoning over an encoded ensemble.
//!
//! The central query is the score gap: the maximum of
//! `score[rival] - score[winner]` over every input consistent with a set of
//! fixed threshold atoms. Leaf values are scaled to integers (default 10^6,
//! rounding half away from zero) so the optimum and all comparisons with zero
//! are exact. The maximum is found by branch-and-bound over the leaf choice of
//! each contributing tree, with unit propagation on the hard clauses pruning
//! leaves whose paths are no longer reachable.
//!
//! Binary models expose two pseudo-classes: class 1 scores the raw output and
//! class 0 scores a constant zero.

mod engine;

use std::fmt::Write as _;

use serde::Serialize;

use crate::encoder::EncodedModel;
use crate::error::{Error, Result};
use crate::logic::{Lit, Var};
use crate::model::{Instance, Objective};

use engine::Engine;

pub const DEFAULT_SCALE: i64 = 1_000_000;

/// Scales a real value to the integer objective domain.
pub fn scale_value(value: f64, scale: i64) -> Result<i64> {
    let scaled = (value * scale as f64).round();
    // keep well inside i64 so sums over thousands of trees cannot overflow
    if !scaled.is_finite() || scaled.abs() > 2f64.powi(52) {
        return Err(Error::WeightOverflow(value));
    }
    Ok(scaled as i64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectiveTree {
    pub tree: usize,
    /// Path literal and non-negative shifted weight, in path-table order.
    pub paths: Vec<(Var, i64)>,
    /// Minimum signed weight of the tree, subtracted from every path weight.
    pub offset: i64,
}

/// Integer form of `score[rival] - score[winner]`: the sum of the shifted
/// weights of the selected paths plus `constant`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaledObjective {
    pub scale: i64,
    pub winner: usize,
    pub rival: usize,
    pub trees: Vec<ObjectiveTree>,
    pub constant: i64,
}

impl ScaledObjective {
    pub fn new(encoded: &EncodedModel, winner: usize, rival: usize, scale: i64) -> Result<Self> {
        let ensemble = encoded.ensemble();
        let labels = ensemble.num_labels();
        assert!(winner != rival, "winner and rival classes must differ");
        assert!(winner < labels && rival < labels, "class index out of range");

        // sign of each output's contribution to the gap
        let sign_of_output = |output: usize| -> i64 {
            match ensemble.objective() {
                Objective::BinaryRaw => {
                    if rival == 1 {
                        1
                    } else {
                        -1
                    }
                }
                Objective::MulticlassRaw => {
                    if output == rival {
                        1
                    } else if output == winner {
                        -1
                    } else {
                        0
                    }
                }
            }
        };

        let mut constant = 0i64;
        for (output, &b) in ensemble.base_scores().iter().enumerate() {
            constant += sign_of_output(output) * scale_value(b, scale)?;
        }
        let mut trees = Vec::new();
        for (t, tree) in ensemble.trees().iter().enumerate() {
            let sign = sign_of_output(tree.class_index());
            if sign == 0 {
                continue;
            }
            let signed = encoded
                .paths()
                .tree(t)
                .iter()
                .map(|p| Ok((p.literal, sign * scale_value(p.value, scale)?)))
                .collect::<Result<Vec<_>>>()?;
            let offset = signed.iter().map(|(_, w)| *w).min().unwrap_or(0);
            constant += offset;
            trees.push(ObjectiveTree {
                tree: t,
                paths: signed.into_iter().map(|(v, w)| (v, w - offset)).collect(),
                offset,
            });
        }
        Ok(Self {
            scale,
            winner,
            rival,
            trees,
            constant,
        })
    }

    /// Objective value of a full assignment.
    pub fn evaluate(&self, model: &[bool]) -> i64 {
        self.constant
            + self
                .trees
                .iter()
                .flat_map(|t| &t.paths)
                .filter(|(v, _)| model[v.index()])
                .map(|(_, w)| *w)
                .sum::<i64>()
    }
}

/// A satisfying assignment attaining some objective value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    /// Truth value of every variable (threshold atoms and path literals).
    pub assignment: Vec<bool>,
    /// Index into the path table of the path taken by each tree.
    pub selected: Vec<usize>,
    /// Scaled objective value.
    pub gap: i64,
}

impl Witness {
    fn from_model(encoded: &EncodedModel, assignment: Vec<bool>, gap: i64) -> Self {
        let selected = encoded
            .paths()
            .trees()
            .iter()
            .map(|paths| {
                paths
                    .iter()
                    .position(|p| assignment[p.literal.index()])
                    .expect("every tree takes a path")
            })
            .collect();
        Self {
            assignment,
            selected,
            gap,
        }
    }

    pub fn value(&self, var: Var) -> bool {
        self.assignment[var.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Gap {
    pub scaled: i64,
    pub scale: i64,
}

impl Gap {
    pub fn value(&self) -> f64 {
        self.scaled as f64 / self.scale as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub gap: Gap,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entailment {
    Valid,
    Counterexample { witness: Witness, rival: usize },
}

impl Entailment {
    pub fn is_valid(&self) -> bool {
        matches!(self, Entailment::Valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Sat(Vec<bool>),
    Unsat,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveOutcome::Sat(_))
    }
}

/// A single-threaded reasoning context over a shared encoding.
#[derive(Debug, Clone)]
pub struct Oracle<'a> {
    encoded: &'a EncodedModel,
    engine: Engine,
    scale: i64,
}

impl<'a> Oracle<'a> {
    pub fn new(encoded: &'a EncodedModel) -> Self {
        Self::with_scale(encoded, DEFAULT_SCALE)
    }

    pub fn with_scale(encoded: &'a EncodedModel, scale: i64) -> Self {
        assert!(scale > 0, "scale must be positive");
        Self {
            encoded,
            engine: Engine::new(encoded.num_vars(), encoded.clauses()),
            scale,
        }
    }

    pub fn encoded(&self) -> &'a EncodedModel {
        self.encoded
    }

    pub fn scale(&self) -> i64 {
        self.scale
    }

    /// Biases free atoms toward the cells of `reference` when completing witnesses.
    pub fn set_reference(&mut self, reference: &Instance) {
        let map = self.encoded.thresholds();
        for f in 0..map.num_features() {
            for lit in map.pin(f, reference.get(f)) {
                self.engine.set_phase(lit.var(), lit.is_positive());
            }
        }
    }

    pub fn solve(&mut self, assumptions: &[Lit]) -> SolveOutcome {
        match self.engine.solve_under(assumptions) {
            Some(model) => SolveOutcome::Sat(model),
            None => SolveOutcome::Unsat,
        }
    }

    /// Values fixed by unit propagation from `assumptions`, indexed by
    /// variable, or `None` when propagation hits a conflict.
    pub fn implied(&mut self, assumptions: &[Lit]) -> Option<Vec<Option<bool>>> {
        if self.engine.is_root_conflict() {
            return None;
        }
        let base = self.engine.level();
        self.engine.push_level();
        let consistent = assumptions.iter().all(|&lit| self.engine.assume(lit));
        let out = consistent.then(|| {
            (0..self.engine.num_vars())
                .map(|v| self.engine.value(Var(v as u32).pos()))
                .collect()
        });
        self.engine.backtrack_to(base);
        out
    }

    /// Exact maximum of `score[rival] - score[winner]` over completions of `fixed`.
    pub fn max_score_gap(&mut self, fixed: &[Lit], winner: usize, rival: usize) -> Result<GapResult> {
        let objective = ScaledObjective::new(self.encoded, winner, rival, self.scale)?;
        let (gap, model) = self
            .search(fixed, &objective, None)?
            .ok_or(Error::InconsistentFixed)?;
        Ok(GapResult {
            gap: Gap {
                scaled: gap,
                scale: self.scale,
            },
            witness: Witness::from_model(self.encoded, model, gap),
        })
    }

    /// Some completion of `fixed` whose scaled gap exceeds `floor`, if any.
    pub fn gap_exceeding(
        &mut self,
        fixed: &[Lit],
        winner: usize,
        rival: usize,
        floor: i64,
    ) -> Result<Option<Witness>> {
        let objective = ScaledObjective::new(self.encoded, winner, rival, self.scale)?;
        Ok(self
            .search(fixed, &objective, Some(floor))?
            .map(|(gap, model)| Witness::from_model(self.encoded, model, gap)))
    }

    /// Whether every completion of `fixed` is predicted `predicted`. Rivals are
    /// scanned in ascending index; a rival below `predicted` wins ties.
    pub fn entails(&mut self, fixed: &[Lit], predicted: usize) -> Result<Entailment> {
        let labels = self.encoded.ensemble().num_labels();
        assert!(predicted < labels, "class index out of range");
        for rival in (0..labels).filter(|&c| c != predicted) {
            let floor = if rival > predicted { 0 } else { -1 };
            if let Some(witness) = self.gap_exceeding(fixed, predicted, rival, floor)? {
                return Ok(Entailment::Counterexample { witness, rival });
            }
        }
        Ok(Entailment::Valid)
    }

    /// Branch-and-bound over tree leaf choices. With `floor = None` returns the
    /// optimum; otherwise returns the first assignment whose value exceeds `floor`.
    fn search(
        &mut self,
        fixed: &[Lit],
        objective: &ScaledObjective,
        floor: Option<i64>,
    ) -> Result<Option<(i64, Vec<bool>)>> {
        let base = self.engine.level();
        self.engine.push_level();
        let consistent = fixed.iter().all(|&a| self.engine.assume(a));
        if !consistent || self.engine.complete().is_none() {
            self.engine.backtrack_to(base);
            return Err(Error::InconsistentFixed);
        }

        // widest weight range first; paths by descending weight
        let mut order: Vec<Vec<(Var, i64)>> = objective
            .trees
            .iter()
            .map(|t| {
                let mut paths = t.paths.clone();
                paths.sort_by_key(|p| std::cmp::Reverse(p.1));
                paths
            })
            .collect();
        order.sort_by_key(|paths| {
            let hi = paths.first().map_or(0, |p| p.1);
            let lo = paths.last().map_or(0, |p| p.1);
            std::cmp::Reverse(hi - lo)
        });

        let mut state = Search {
            engine: &mut self.engine,
            trees: &order,
            incumbent: floor,
            stop_on_improvement: floor.is_some(),
            best: None,
            done: false,
        };
        state.branch(0, objective.constant);
        let best = state.best.take();
        self.engine.backtrack_to(base);
        Ok(best)
    }
}

struct Search<'e> {
    engine: &'e mut Engine,
    trees: &'e [Vec<(Var, i64)>],
    incumbent: Option<i64>,
    stop_on_improvement: bool,
    best: Option<(i64, Vec<bool>)>,
    done: bool,
}

impl Search<'_> {
    fn bound(&self, depth: usize) -> Option<i64> {
        let mut total = 0;
        for paths in &self.trees[depth..] {
            // paths are sorted, the first reachable one carries the maximum
            total += paths
                .iter()
                .find(|(v, _)| !self.engine.is_false(v.pos()))?
                .1;
        }
        Some(total)
    }

    fn branch(&mut self, depth: usize, acc: i64) {
        if self.done {
            return;
        }
        let Some(rest) = self.bound(depth) else {
            return;
        };
        if self.incumbent.is_some_and(|inc| acc + rest <= inc) {
            return;
        }
        if depth == self.trees.len() {
            if let Some(model) = self.engine.complete() {
                self.incumbent = Some(acc);
                self.best = Some((acc, model));
                self.done = self.stop_on_improvement;
            }
            return;
        }
        let level = self.engine.level();
        for &(var, weight) in &self.trees[depth] {
            if self.engine.is_false(var.pos()) {
                continue;
            }
            self.engine.push_level();
            if self.engine.assume(var.pos()) {
                self.branch(depth + 1, acc + weight);
            }
            self.engine.backtrack_to(level);
            if self.done {
                return;
            }
        }
    }
}

/// One-shot satisfiability check.
pub fn solve(encoded: &EncodedModel, assumptions: &[Lit]) -> SolveOutcome {
    Oracle::new(encoded).solve(assumptions)
}

/// One-shot gap query at the default scale.
pub fn max_score_gap(encoded: &EncodedModel, fixed: &[Lit], winner: usize, rival: usize) -> Result<GapResult> {
    Oracle::new(encoded).max_score_gap(fixed, winner, rival)
}

/// One-shot entailment query at the default scale.
pub fn entails(encoded: &EncodedModel, fixed: &[Lit], predicted: usize) -> Result<Entailment> {
    Oracle::new(encoded).entails(fixed, predicted)
}

/// The interval `(lo, hi]` that a witness assigns to `feature`; infinite ends
/// mean unbounded.
pub fn witness_interval(witness: &Witness, encoded: &EncodedModel, feature: usize) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &(t, var) in encoded.thresholds().atoms(feature) {
        if witness.value(var) {
            hi = hi.min(t);
        } else {
            lo = lo.max(t);
        }
    }
    (lo, hi)
}

/// Concrete instance inside the witness's cell, keeping reference values where
/// they already lie in it.
pub fn witness_to_instance(witness: &Witness, encoded: &EncodedModel, reference: &Instance) -> Instance {
    let values = (0..encoded.ensemble().num_features())
        .map(|f| {
            let (lo, hi) = witness_interval(witness, encoded, f);
            let v = reference.get(f);
            if v > lo && v <= hi {
                v
            } else if hi.is_finite() {
                hi
            } else {
                lo + (1e-6 * lo.abs()).max(1e-6)
            }
        })
        .collect();
    Instance::new(values).expect("witness cell bounds are finite")
}

/// Weighted DIMACS (WCNF) for a gap query: hard clauses and fixed atoms, plus
/// one soft unit per path literal with positive shifted weight. The optimum
/// gap equals `constant + sum of weights - min cost`.
pub fn gap_query_wcnf(encoded: &EncodedModel, fixed: &[Lit], objective: &ScaledObjective) -> String {
    let soft: Vec<(Var, i64)> = objective
        .trees
        .iter()
        .flat_map(|t| t.paths.iter().copied())
        .filter(|(_, w)| *w > 0)
        .collect();
    let total: i64 = soft.iter().map(|(_, w)| w).sum();
    let top = total + 1;
    let hard = encoded.clauses().len() + fixed.len();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "c gap query winner {} rival {} scale {} constant {} total_soft {}",
        objective.winner, objective.rival, objective.scale, objective.constant, total
    );
    let _ = writeln!(out, "p wcnf {} {} {}", encoded.num_vars(), hard + soft.len(), top);
    for clause in encoded.clauses() {
        let _ = write!(out, "{top}");
        for lit in clause {
            let _ = write!(out, " {lit}");
        }
        out.push_str(" 0\n");
    }
    for lit in fixed {
        let _ = writeln!(out, "{top} {lit} 0");
    }
    for (var, w) in soft {
        let _ = writeln!(out, "{w} {} 0", var.pos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_ensemble, instance_to_assumptions};
    use crate::model::tests::toy2f;
    use crate::model::{Ensemble, FeatureSpace, Node, Tree};

    fn x(values: &[f64]) -> Instance {
        Instance::new(values.to_vec()).unwrap()
    }

    #[test]
    fn toy_solve() {
        let enc = encode_ensemble(&toy2f());
        assert!(solve(&enc, &[]).is_sat());
        let f0 = enc.thresholds().atoms(0);
        assert_eq!(solve(&enc, &[f0[0].1.pos(), f0[1].1.neg()]), SolveOutcome::Unsat);

        let all = instance_to_assumptions(&enc, &x(&[1.0, 3.0]), &[0, 1]);
        let SolveOutcome::Sat(model) = solve(&enc, &all) else {
            panic!("expected sat")
        };
        let taken: Vec<f64> = enc
            .paths()
            .iter()
            .filter(|p| model[p.literal.index()])
            .map(|p| p.value)
            .collect();
        assert_eq!(taken, vec![2.0, 0.25]);
    }

    #[test]
    fn toy_gap_free() {
        // cells of (f0, f1): raw = -0.75 at f0 <= 0.5 is the minimum
        let enc = encode_ensemble(&toy2f());
        let r = max_score_gap(&enc, &[], 1, 0).unwrap();
        assert_eq!(r.gap.scaled, 750_000);
        assert_eq!(r.gap.value(), 0.75);
        assert_eq!(r.witness.gap, 750_000);
    }

    #[test]
    fn toy_gap_with_f0_fixed() {
        let enc = encode_ensemble(&toy2f());
        let fixed = instance_to_assumptions(&enc, &x(&[1.0, 3.0]), &[0]);
        let r = max_score_gap(&enc, &fixed, 1, 0).unwrap();
        assert_eq!(r.gap.value(), -0.75);
        assert!(entails(&enc, &fixed, 1).unwrap().is_valid());
        assert!(!entails(&enc, &[], 1).unwrap().is_valid());
    }

    #[test]
    fn inconsistent_fixed_values() {
        let enc = encode_ensemble(&toy2f());
        let f0 = enc.thresholds().atoms(0);
        let err = max_score_gap(&enc, &[f0[0].1.pos(), f0[1].1.neg()], 1, 0).unwrap_err();
        assert!(matches!(err, Error::InconsistentFixed));
    }

    #[test]
    fn constant_models() {
        let m = Ensemble::new(FeatureSpace::numbered(1), vec![Tree::leaf(0.3, 0)], 1, vec![0.2], Objective::BinaryRaw)
            .unwrap();
        let enc = encode_ensemble(&m);
        let r = max_score_gap(&enc, &[], 0, 1).unwrap();
        assert_eq!(r.gap.scaled, 500_000);
        assert_eq!(r.witness.selected, vec![0]);
        assert!(entails(&enc, &[], 1).unwrap().is_valid());
        assert!(!entails(&enc, &[], 0).unwrap().is_valid());
    }

    #[test]
    fn multiclass_tie_break_in_entailment() {
        // class 0 and class 1 tie everywhere -> class 0 is predicted, class 1 is not entailed
        let m = Ensemble::new(
            FeatureSpace::numbered(1),
            vec![Tree::leaf(0.5, 0), Tree::leaf(0.5, 1), Tree::leaf(0.1, 2)],
            3,
            vec![],
            Objective::MulticlassRaw,
        )
        .unwrap();
        let enc = encode_ensemble(&m);
        assert!(entails(&enc, &[], 0).unwrap().is_valid());
        match entails(&enc, &[], 1).unwrap() {
            Entailment::Counterexample { rival, .. } => assert_eq!(rival, 0),
            Entailment::Valid => panic!("tie must favour class 0"),
        }
    }

    #[test]
    fn witness_materialization() {
        let enc = encode_ensemble(&toy2f());
        let f0 = enc.thresholds().atoms(0);
        // interval (0.5, 1.5] for f0
        let inner = max_score_gap(&enc, &[f0[0].1.neg(), f0[1].1.pos()], 1, 0).unwrap();
        assert_eq!(witness_interval(&inner.witness, &enc, 0), (0.5, 1.5));
        assert_eq!(witness_to_instance(&inner.witness, &enc, &x(&[1.0, 3.0])).get(0), 1.0);
        // interval (1.5, inf)
        let outer = max_score_gap(&enc, &[f0[1].1.neg()], 1, 0).unwrap();
        assert_eq!(witness_interval(&outer.witness, &enc, 0), (1.5, f64::INFINITY));
        let v = witness_to_instance(&outer.witness, &enc, &x(&[1.0, 3.0])).get(0);
        assert_eq!(v, 1.5 + 1.5e-6);
    }

    #[test]
    fn witness_reproduces_gap_through_predict() {
        let m = toy2f();
        let enc = encode_ensemble(&m);
        let reference = x(&[1.0, 3.0]);
        let mut oracle = Oracle::new(&enc);
        oracle.set_reference(&reference);
        let r = oracle.max_score_gap(&[], 1, 0).unwrap();
        let adv = witness_to_instance(&r.witness, &enc, &reference);
        let raw = m.predict_raw(&adv)[0];
        assert!((-raw - r.gap.value()).abs() <= 2.0 * 0.5 / DEFAULT_SCALE as f64);
        // reference f1 is kept when the witness cell allows it
        assert_eq!(adv.get(1), 3.0);
    }

    #[test]
    fn scaled_objective_offsets() {
        let enc = encode_ensemble(&toy2f());
        let obj = ScaledObjective::new(&enc, 1, 0, DEFAULT_SCALE).unwrap();
        // winner is class 1: weights are -raw; tree0 min is -2.0, tree1 min is -0.25
        assert_eq!(obj.trees[0].offset, -2_000_000);
        assert_eq!(obj.trees[1].offset, -250_000);
        assert!(obj.trees.iter().flat_map(|t| &t.paths).all(|(_, w)| *w >= 0));
        assert_eq!(obj.constant, -2_250_000);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(scale_value(0.5, 1).unwrap(), 1);
        assert_eq!(scale_value(-0.5, 1).unwrap(), -1);
        assert_eq!(scale_value(1.2345675, 1_000_000).unwrap(), 1_234_568);
        assert!(scale_value(1e300, DEFAULT_SCALE).is_err());
    }

    #[test]
    fn wcnf_export() {
        let enc = encode_ensemble(&toy2f());
        let obj = ScaledObjective::new(&enc, 1, 0, DEFAULT_SCALE).unwrap();
        let text = gap_query_wcnf(&enc, &[], &obj);
        let header = text.lines().nth(1).unwrap();
        // 3 positive-weight soft units: tree0 has two non-minimal leaves, tree1 one
        assert_eq!(header, format!("p wcnf 8 {} 5500001", enc.clauses().len() + 3));
    }

    #[test]
    fn split_on_equal_thresholds_in_both_trees() {
        let stump = |lo: f64, hi: f64| {
            Tree::new(
                vec![
                    Node::Split { feature: 0, threshold: 1.0, left: 1, right: 2 },
                    Node::Leaf { value: lo },
                    Node::Leaf { value: hi },
                ],
                0,
                0,
            )
            .unwrap()
        };
        // the two trees cannot take opposite branches
        let m = Ensemble::new(FeatureSpace::numbered(1), vec![stump(1.0, -1.0), stump(-1.0, 1.0)], 1, vec![], Objective::BinaryRaw)
            .unwrap();
        let enc = encode_ensemble(&m);
        assert_eq!(max_score_gap(&enc, &[], 0, 1).unwrap().gap.scaled, 0);
    }
}
