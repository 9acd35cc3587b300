//! Compilation of a tree ensemble into propositional clauses.
//!
//! Each distinct split threshold `t` of feature `f` gets one atom meaning
//! `x[f] <= t`. The atoms of a feature form a chain: `(x <= t_j) -> (x <= t_{j+1})`.
//! Each leaf gets a path literal that is defined as the conjunction of the
//! signed atoms on its root-to-leaf path, and every tree must take some path.

use std::fmt::Write as _;

use serde::Serialize;

use crate::logic::{Clause, Lit, Var};
use crate::model::{Ensemble, Instance, Node, NodeId, Tree};

/// Sorted distinct thresholds per feature with their `<=` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMap {
    per_feature: Vec<Vec<(f64, Var)>>,
}

impl ThresholdMap {
    pub fn num_features(&self) -> usize {
        self.per_feature.len()
    }

    pub fn thresholds(&self, feature: usize) -> impl Iterator<Item = f64> + '_ {
        self.per_feature[feature].iter().map(|(t, _)| *t)
    }

    pub fn atoms(&self, feature: usize) -> &[(f64, Var)] {
        &self.per_feature[feature]
    }

    pub fn atom(&self, feature: usize, threshold: f64) -> Option<Var> {
        let chain = &self.per_feature[feature];
        chain
            .binary_search_by(|(t, _)| t.total_cmp(&threshold))
            .ok()
            .map(|i| chain[i].1)
    }

    pub fn atom_count(&self) -> usize {
        self.per_feature.iter().map(Vec::len).sum()
    }

    /// Signed atoms pinning `feature` to the cell containing `value`.
    pub fn pin(&self, feature: usize, value: f64) -> impl Iterator<Item = Lit> + '_ {
        self.per_feature[feature]
            .iter()
            .map(move |&(t, v)| v.lit(value <= t))
    }
}

/// Collects the distinct split thresholds of every feature and numbers their atoms
/// consecutively, feature by feature.
pub fn collect_thresholds(ensemble: &Ensemble) -> ThresholdMap {
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); ensemble.num_features()];
    for tree in ensemble.trees() {
        for node in tree.nodes() {
            if let Node::Split {
                feature, threshold, ..
            } = *node
            {
                raw[feature].push(threshold);
            }
        }
    }
    let mut next = 0u32;
    let per_feature = raw
        .into_iter()
        .map(|mut ts| {
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            ts.into_iter()
                .map(|t| {
                    let v = Var(next);
                    next += 1;
                    (t, v)
                })
                .collect()
        })
        .collect();
    ThresholdMap { per_feature }
}

/// A root-to-leaf path of one tree before it receives a literal.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePath {
    pub leaf: NodeId,
    pub value: f64,
    pub conditions: Vec<Lit>,
}

/// Enumerates the paths of `tree` depth-first, left branch first. A left branch
/// contributes the positive atom, a right branch the negated one.
///
/// Panics if a split threshold is missing from `map`.
pub fn encode_tree(tree: &Tree, map: &ThresholdMap) -> Vec<TreePath> {
    let mut out = Vec::new();
    let mut stack = vec![(tree.root(), Vec::new())];
    while let Some((id, conditions)) = stack.pop() {
        match *tree.node(id) {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let atom = map
                    .atom(feature, threshold)
                    .expect("threshold registered in map");
                let mut right_conds = conditions.clone();
                right_conds.push(atom.neg());
                let mut left_conds = conditions;
                left_conds.push(atom.pos());
                stack.push((right, right_conds));
                stack.push((left, left_conds));
            }
            Node::Leaf { value } => out.push(TreePath {
                leaf: id,
                value,
                conditions,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub tree: usize,
    pub leaf: NodeId,
    pub literal: Var,
    pub value: f64,
    pub conditions: Vec<Lit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    per_tree: Vec<Vec<PathEntry>>,
}

impl PathTable {
    pub fn tree(&self, tree: usize) -> &[PathEntry] {
        &self.per_tree[tree]
    }

    pub fn trees(&self) -> &[Vec<PathEntry>] {
        &self.per_tree
    }

    pub fn len(&self) -> usize {
        self.per_tree.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &PathEntry> {
        self.per_tree.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EncodingStats {
    /// Threshold atoms plus path literals.
    pub atoms: usize,
    pub threshold_atoms: usize,
    pub paths: usize,
    pub clauses: usize,
    pub ordering_clauses: usize,
}

#[derive(Debug, Clone)]
pub struct EncodedModel {
    ensemble: Ensemble,
    thresholds: ThresholdMap,
    paths: PathTable,
    clauses: Vec<Clause>,
    ordering_clauses: usize,
    num_vars: usize,
}

pub fn encode_ensemble(ensemble: &Ensemble) -> EncodedModel {
    let thresholds = collect_thresholds(ensemble);
    let mut next = thresholds.atom_count() as u32;
    let mut clauses: Vec<Clause> = Vec::new();

    for f in 0..thresholds.num_features() {
        for pair in thresholds.atoms(f).windows(2) {
            clauses.push(vec![pair[0].1.neg(), pair[1].1.pos()]);
        }
    }
    let ordering_clauses = clauses.len();

    let mut per_tree = Vec::with_capacity(ensemble.trees().len());
    for (t, tree) in ensemble.trees().iter().enumerate() {
        let entries: Vec<PathEntry> = encode_tree(tree, &thresholds)
            .into_iter()
            .map(|p| {
                let literal = Var(next);
                next += 1;
                PathEntry {
                    tree: t,
                    leaf: p.leaf,
                    literal,
                    value: p.value,
                    conditions: p.conditions,
                }
            })
            .collect();
        for e in &entries {
            for &a in &e.conditions {
                clauses.push(vec![e.literal.neg(), a]);
            }
            let mut def: Clause = e.conditions.iter().map(|&a| !a).collect();
            def.push(e.literal.pos());
            clauses.push(def);
        }
        clauses.push(entries.iter().map(|e| e.literal.pos()).collect());
        per_tree.push(entries);
    }

    EncodedModel {
        ensemble: ensemble.clone(),
        thresholds,
        paths: PathTable { per_tree },
        clauses,
        ordering_clauses,
        num_vars: next as usize,
    }
}

impl EncodedModel {
    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn thresholds(&self) -> &ThresholdMap {
        &self.thresholds
    }

    pub fn paths(&self) -> &PathTable {
        &self.paths
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn stats(&self) -> EncodingStats {
        EncodingStats {
            atoms: self.num_vars,
            threshold_atoms: self.thresholds.atom_count(),
            paths: self.paths.len(),
            clauses: self.clauses.len(),
            ordering_clauses: self.ordering_clauses,
        }
    }

    /// Signed atoms fixing each feature of `fixed` to the cell of its value in `instance`.
    pub fn assumptions(&self, instance: &Instance, fixed: impl IntoIterator<Item = usize>) -> Vec<Lit> {
        fixed
            .into_iter()
            .flat_map(|f| self.thresholds.pin(f, instance.get(f)).collect::<Vec<_>>())
            .collect()
    }

    /// Human-readable meaning of a variable.
    pub fn describe(&self, var: Var) -> String {
        let names = self.ensemble.feature_space();
        for f in 0..self.thresholds.num_features() {
            if let Some((t, _)) = self.thresholds.atoms(f).iter().find(|(_, v)| *v == var) {
                return format!("{} <= {}", names.name(f), t);
            }
        }
        match self.paths.iter().find(|p| p.literal == var) {
            Some(p) => format!("tree {} leaf {} value {}", p.tree, p.leaf, p.value),
            None => format!("unknown variable {}", var.0 + 1),
        }
    }

    /// Hard clauses in DIMACS CNF with comment lines naming every variable.
    pub fn to_dimacs(&self) -> String {
        let mut out = String::new();
        for v in 0..self.num_vars {
            let _ = writeln!(out, "c {} {}", v + 1, self.describe(Var(v as u32)));
        }
        let _ = writeln!(out, "p cnf {} {}", self.num_vars, self.clauses.len());
        for clause in &self.clauses {
            for lit in clause {
                let _ = write!(out, "{} ", lit.to_dimacs());
            }
            out.push_str("0\n");
        }
        out
    }
}

/// Free-function form of [`EncodedModel::assumptions`].
pub fn instance_to_assumptions(
    encoded: &EncodedModel,
    instance: &Instance,
    fixed_features: &[usize],
) -> Vec<Lit> {
    encoded.assumptions(instance, fixed_features.iter().copied())
}
