//! Canonical tree-ensemble representation and exact evaluation.
//!
//! Every split is normalized to "value <= threshold goes left". Binary models
//! carry a single raw-score output; class 1 is predicted iff that score is
//! strictly positive. Multiclass models predict the argmax with ties resolved
//! toward the lowest class index.

mod dataset;
mod lightgbm;
mod portable;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::Dataset;
pub use lightgbm::parse_lightgbm_text;
pub use portable::{emit_portable_json, parse_portable_json};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    names: Vec<String>,
}

impl FeatureSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate feature name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Features named `f0`, `f1`, ...
    pub fn numbered(count: usize) -> Self {
        Self {
            names: (0..count).map(|i| format!("f{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: NodeId,
        right: NodeId,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
    class_index: usize,
}

impl Tree {
    /// Builds a tree and checks that the node graph is a tree rooted at `root`.
    pub fn new(nodes: Vec<Node>, root: NodeId, class_index: usize) -> Result<Self> {
        let tree = Self {
            nodes,
            root,
            class_index,
        };
        tree.check_shape()?;
        Ok(tree)
    }

    pub fn leaf(value: f64, class_index: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
            root: 0,
            class_index,
        }
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.root >= n {
            return Err(Error::InvalidModel(format!("root {} out of range", self.root)));
        }
        let mut parents = vec![0usize; n];
        for node in &self.nodes {
            match *node {
                Node::Split {
                    left,
                    right,
                    threshold,
                    ..
                } => {
                    if left >= n || right >= n {
                        return Err(Error::InvalidModel(format!(
                            "dangling child index ({left}, {right}) with {n} nodes"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::InvalidModel(format!("non-finite threshold {threshold}")));
                    }
                    parents[left] += 1;
                    parents[right] += 1;
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::InvalidModel(format!("non-finite leaf value {value}")));
                    }
                }
            }
        }
        let shaped = parents
            .iter()
            .enumerate()
            .all(|(id, &p)| if id == self.root { p == 0 } else { p == 1 });
        // n - 1 single-parent nodes plus a parentless root rule out cycles only
        // together with reachability.
        if !shaped || self.reachable_count() != n {
            return Err(Error::InvalidModel("node graph is not a tree".into()));
        }
        Ok(())
    }

    fn reachable_count(&self) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        let mut count = 0;
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                continue;
            }
            count += 1;
            if let Node::Split { left, right, .. } = self.nodes[id] {
                stack.push(right);
                stack.push(left);
            }
        }
        count
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    /// Leaf ids in depth-first, left-before-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                Node::Leaf { .. } => out.push(id),
            }
        }
        out
    }

    pub fn leaf_value(&self, id: NodeId) -> f64 {
        match self.nodes[id] {
            Node::Leaf { value } => value,
            Node::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    /// Descends from the root; `value <= threshold` takes the left branch.
    pub fn leaf_for(&self, values: &[f64]) -> NodeId {
        let mut id = self.root;
        loop {
            match self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if values[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return id,
            }
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.leaf_value(self.leaf_for(values))
    }

    pub fn depth(&self) -> usize {
        fn go(tree: &Tree, id: NodeId) -> usize {
            match tree.nodes[id] {
                Node::Split { left, right, .. } => 1 + go(tree, left).max(go(tree, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, self.root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    BinaryRaw,
    MulticlassRaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    feature_space: FeatureSpace,
    trees: Vec<Tree>,
    num_classes: usize,
    base_scores: Vec<f64>,
    objective: Objective,
}

impl Ensemble {
    /// Validates and assembles an ensemble. An empty `base_scores` means all zeros.
    pub fn new(
        feature_space: FeatureSpace,
        trees: Vec<Tree>,
        num_classes: usize,
        base_scores: Vec<f64>,
        objective: Objective,
    ) -> Result<Self> {
        match objective {
            Objective::BinaryRaw if num_classes != 1 => {
                return Err(Error::InvalidModel(format!(
                    "binary_raw models have num_classes = 1, got {num_classes}"
                )))
            }
            Objective::MulticlassRaw if num_classes < 2 => {
                return Err(Error::InvalidModel(format!(
                    "multiclass_raw models need at least 2 classes, got {num_classes}"
                )))
            }
            _ => {}
        }
        let outputs = num_classes.max(1);
        let base_scores = if base_scores.is_empty() {
            vec![0.0; outputs]
        } else {
            base_scores
        };
        if base_scores.len() != outputs {
            return Err(Error::InvalidModel(format!(
                "{} base scores for {outputs} outputs",
                base_scores.len()
            )));
        }
        if let Some(b) = base_scores.iter().find(|b| !b.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite base score {b}")));
        }
        let mut per_class = vec![0usize; outputs];
        for (t, tree) in trees.iter().enumerate() {
            if tree.class_index >= outputs {
                return Err(Error::InvalidModel(format!(
                    "tree {t} has class_index {} but the model has {outputs} outputs",
                    tree.class_index
                )));
            }
            per_class[tree.class_index] += 1;
            for node in &tree.nodes {
                if let Node::Split { feature, .. } = node {
                    if *feature >= feature_space.len() {
                        return Err(Error::InvalidModel(format!(
                            "tree {t} splits on feature {feature}, model has {}",
                            feature_space.len()
                        )));
                    }
                }
            }
        }
        if objective == Objective::MulticlassRaw {
            if let Some(c) = per_class.iter().position(|&n| n == 0) {
                return Err(Error::InvalidModel(format!("class {c} has no trees")));
            }
        }
        Ok(Self {
            feature_space,
            trees,
            num_classes,
            base_scores,
            objective,
        })
    }

    pub fn feature_space(&self) -> &FeatureSpace {
        &self.feature_space
    }

    pub fn num_features(&self) -> usize {
        self.feature_space.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of predictable labels: 2 for binary models.
    pub fn num_labels(&self) -> usize {
        match self.objective {
            Objective::BinaryRaw => 2,
            Objective::MulticlassRaw => self.num_classes,
        }
    }

    /// Length of the raw score vector.
    pub fn num_outputs(&self) -> usize {
        self.num_classes.max(1)
    }

    pub fn base_scores(&self) -> &[f64] {
        &self.base_scores
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn is_binary(&self) -> bool {
        self.objective == Objective::BinaryRaw
    }

    pub fn check_width(&self, instance: &Instance) -> Result<()> {
        if instance.len() != self.num_features() {
            return Err(Error::Width {
                expected: self.num_features(),
                got: instance.len(),
            });
        }
        Ok(())
    }

    /// Per-output raw scores: base score plus the reached leaf of every tree of that output.
    pub fn predict_raw(&self, instance: &Instance) -> Vec<f64> {
        let mut scores = self.base_scores.clone();
        for tree in &self.trees {
            scores[tree.class_index] += tree.eval(instance.values());
        }
        scores
    }

    pub fn predict(&self, instance: &Instance) -> usize {
        decide(self.objective, &self.predict_raw(instance))
    }
}

/// Maps raw scores to a label: sign rule for binary, lowest-index argmax otherwise.
pub fn decide(objective: Objective, scores: &[f64]) -> usize {
    match objective {
        Objective::BinaryRaw => usize::from(scores[0] > 0.0),
        Objective::MulticlassRaw => {
            let mut best = 0;
            for (c, &s) in scores.iter().enumerate().skip(1) {
                if s > scores[best] {
                    best = c;
                }
            }
            best
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    values: Vec<f64>,
}

impl Instance {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Dataset(format!("feature {i} has non-finite value {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, feature: usize) -> f64 {
        self.values[feature]
    }

    pub fn set(&mut self, feature: usize, value: f64) {
        assert!(value.is_finite(), "instance values must be finite");
        self.values[feature] = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_distance(&self, other: &Instance) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Instance> for Vec<f64> {
    fn from(instance: Instance) -> Self {
        instance.values
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// The two-tree, two-feature binary fixture used throughout the test suite.
    pub(crate) fn toy2f() -> Ensemble {
        let tree0 = Tree::new(
            vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { value: -1.0 },
                Node::Split { feature: 1, threshold: 2.0, left: 3, right: 4 },
                Node::Leaf { value: 0.5 },
                Node::Leaf { value: 2.0 },
            ],
            0,
            0,
        )
        .unwrap();
        let tree1 = Tree::new(
            vec![
                Node::Split { feature: 0, threshold: 1.5, left: 1, right: 2 },
                Node::Leaf { value: 0.25 },
                Node::Leaf { value: -0.75 },
            ],
            0,
            0,
        )
        .unwrap();
        Ensemble::new(FeatureSpace::numbered(2), vec![tree0, tree1], 1, vec![], Objective::BinaryRaw).unwrap()
    }

    fn x(values: &[f64]) -> Instance {
        Instance::new(values.to_vec()).unwrap()
    }

    #[test]
    fn toy_raw_scores() {
        let m = toy2f();
        assert_eq!(m.predict_raw(&x(&[1.0, 3.0])), vec![2.25]);
        // boundary value goes left
        assert_eq!(m.predict_raw(&x(&[0.5, 0.0])), vec![-0.75]);
        assert_eq!(m.predict_raw(&x(&[2.0, 0.0])), vec![-0.25]);
    }

    #[test]
    fn toy_predictions() {
        let m = toy2f();
        assert_eq!(m.predict(&x(&[1.0, 3.0])), 1);
        assert_eq!(m.predict(&x(&[2.0, 0.0])), 0);
    }

    #[test]
    fn empty_ensemble_returns_base_scores() {
        let m = Ensemble::new(
            FeatureSpace::numbered(2),
            vec![],
            3,
            vec![0.1, -0.2, 0.3],
            Objective::MulticlassRaw,
        );
        // multiclass needs a tree per class
        assert!(m.is_err());
        let m = Ensemble::new(FeatureSpace::numbered(2), vec![], 1, vec![0.4], Objective::BinaryRaw).unwrap();
        assert_eq!(m.predict_raw(&x(&[9.0, -9.0])), vec![0.4]);
    }

    #[test]
    fn multiclass_tie_goes_to_lowest_index() {
        assert_eq!(decide(Objective::MulticlassRaw, &[0.3, 0.3]), 0);
        assert_eq!(decide(Objective::MulticlassRaw, &[0.1, 0.3, 0.3]), 1);
        assert_eq!(decide(Objective::BinaryRaw, &[0.0]), 0);
    }

    #[test]
    fn rejects_non_trees() {
        let shared_child = Tree::new(
            vec![
                Node::Split { feature: 0, threshold: 0.0, left: 1, right: 1 },
                Node::Leaf { value: 1.0 },
            ],
            0,
            0,
        );
        assert!(matches!(shared_child, Err(Error::InvalidModel(m)) if m.contains("not a tree")));

        let cycle = Tree::new(
            vec![
                Node::Split { feature: 0, threshold: 0.0, left: 1, right: 2 },
                Node::Split { feature: 0, threshold: 0.0, left: 0, right: 2 },
                Node::Leaf { value: 1.0 },
            ],
            0,
            0,
        );
        assert!(cycle.is_err());

        let dangling = Tree::new(
            vec![Node::Split { feature: 0, threshold: 0.0, left: 1, right: 7 }, Node::Leaf { value: 1.0 }],
            0,
            0,
        );
        assert!(dangling.is_err());
    }

    #[test]
    fn rejects_bad_feature_and_class() {
        let t = Tree::new(
            vec![
                Node::Split { feature: 3, threshold: 0.0, left: 1, right: 2 },
                Node::Leaf { value: 1.0 },
                Node::Leaf { value: 1.0 },
            ],
            0,
            0,
        )
        .unwrap();
        assert!(Ensemble::new(FeatureSpace::numbered(2), vec![t], 1, vec![], Objective::BinaryRaw).is_err());
        let t = Tree::leaf(1.0, 1);
        assert!(Ensemble::new(FeatureSpace::numbered(2), vec![t], 1, vec![], Objective::BinaryRaw).is_err());
    }

    #[test]
    fn leaves_are_depth_first() {
        let m = toy2f();
        assert_eq!(m.trees()[0].leaves(), vec![1, 3, 4]);
        assert_eq!(m.trees()[0].depth(), 2);
    }

    #[test]
    fn instance_rejects_nan() {
        assert!(Instance::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn duplicate_feature_names() {
        assert!(FeatureSpace::new(vec!["a".into(), "a".into()]).is_err());
    }
}
