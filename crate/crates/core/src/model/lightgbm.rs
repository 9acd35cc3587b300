//! Reader for LightGBM's text model format (`Booster::save_model`).

use std::collections::HashMap;

use super::{Ensemble, FeatureSpace, Node, Objective, Tree};
use crate::error::{Error, Result};

const CATEGORICAL_BIT: u32 = 1;
const MISSING_ZERO: u32 = 1;
const MISSING_NAN: u32 = 2;

/// A `key=value` block with the line number of each key.
#[derive(Default)]
struct Block {
    entries: HashMap<String, (usize, String)>,
    start: usize,
}

impl Block {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }
}

fn header_err(line: usize, msg: impl Into<String>) -> Error {
    Error::LightGbm {
        tree: None,
        line,
        msg: msg.into(),
    }
}

fn tree_err(tree: usize, line: usize, msg: impl Into<String>) -> Error {
    Error::LightGbm {
        tree: Some(tree),
        line,
        msg: msg.into(),
    }
}

pub fn parse_lightgbm_text(text: &str) -> Result<Ensemble> {
    let mut header = Block::default();
    let mut trees: Vec<(usize, Block)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line == "end of trees" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        if let Some(id) = line.strip_prefix("Tree=") {
            let id: usize = id
                .parse()
                .map_err(|_| header_err(line_no, format!("bad tree id {id:?}")))?;
            trees.push((
                id,
                Block {
                    start: line_no,
                    ..Block::default()
                },
            ));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            // flags such as `tree` or `average_output` carry no value
            if trees.is_empty() {
                header
                    .entries
                    .insert(line.to_string(), (line_no, String::new()));
            }
            continue;
        };
        let block = match trees.last_mut() {
            Some((_, b)) => b,
            None => &mut header,
        };
        block
            .entries
            .insert(key.trim().to_string(), (line_no, value.trim().to_string()));
    }

    if header.get("average_output").is_some() {
        return Err(header_err(1, "averaged (random forest) output is unsupported"));
    }

    let (num_class_line, num_class) = header_usize(&header, "num_class")?;
    if num_class == 0 {
        return Err(header_err(num_class_line, "num_class must be at least 1"));
    }
    if let Some((line, v)) = header.get("num_tree_per_iteration") {
        let per_iter: usize = v
            .parse()
            .map_err(|_| header_err(line, format!("bad num_tree_per_iteration {v:?}")))?;
        if per_iter != num_class {
            return Err(header_err(
                line,
                format!("num_tree_per_iteration {per_iter} differs from num_class {num_class}"),
            ));
        }
    }
    let (max_feat_line, max_feature_idx) = header_usize(&header, "max_feature_idx")?;
    let (names_line, names) = header
        .get("feature_names")
        .ok_or_else(|| header_err(0, "missing header key feature_names"))?;
    let names: Vec<String> = names.split_whitespace().map(str::to_string).collect();
    if names.len() != max_feature_idx + 1 {
        return Err(header_err(
            names_line.max(max_feat_line),
            format!(
                "{} feature names but max_feature_idx = {max_feature_idx}",
                names.len()
            ),
        ));
    }
    let feature_space =
        FeatureSpace::new(names).map_err(|e| header_err(names_line, e.to_string()))?;

    let (obj_line, objective) = header
        .get("objective")
        .ok_or_else(|| header_err(0, "missing header key objective"))?;
    let objective_name = objective.split_whitespace().next().unwrap_or("");
    let objective = match objective_name {
        "binary" | "cross_entropy" | "xentropy" if num_class == 1 => Objective::BinaryRaw,
        "multiclass" | "softmax" | "multiclassova" | "ova" | "ovr" if num_class > 1 => {
            Objective::MulticlassRaw
        }
        other => {
            return Err(header_err(
                obj_line,
                format!("unsupported objective {other:?} for num_class = {num_class}"),
            ))
        }
    };

    let parsed = trees
        .iter()
        .enumerate()
        .map(|(pos, (id, block))| {
            let class_index = if num_class > 1 { pos % num_class } else { 0 };
            parse_tree(*id, block, class_index, feature_space.len())
        })
        .collect::<Result<Vec<_>>>()?;

    Ensemble::new(feature_space, parsed, num_class, vec![], objective)
}

fn header_usize(header: &Block, key: &str) -> Result<(usize, usize)> {
    let (line, v) = header
        .get(key)
        .ok_or_else(|| header_err(0, format!("missing header key {key}")))?;
    let n = v
        .parse()
        .map_err(|_| header_err(line, format!("bad {key} value {v:?}")))?;
    Ok((line, n))
}

fn field<T: std::str::FromStr>(tree: usize, block: &Block, key: &str, expected: usize) -> Result<Vec<T>> {
    let (line, v) = block
        .get(key)
        .ok_or_else(|| tree_err(tree, block.start, format!("missing key {key}")))?;
    let values = v
        .split_whitespace()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| tree_err(tree, line, format!("bad {key} entry {s:?}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.len() != expected {
        return Err(tree_err(
            tree,
            line,
            format!("{key} has {} entries, expected {expected}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_tree(id: usize, block: &Block, class_index: usize, num_features: usize) -> Result<Tree> {
    let (leaves_line, num_leaves) = block
        .get("num_leaves")
        .ok_or_else(|| tree_err(id, block.start, "missing key num_leaves"))?;
    let num_leaves: usize = num_leaves
        .parse()
        .map_err(|_| tree_err(id, leaves_line, format!("bad num_leaves {num_leaves:?}")))?;
    if num_leaves == 0 {
        return Err(tree_err(id, leaves_line, "tree without leaves"));
    }
    if let Some((line, v)) = block.get("num_cat") {
        if v != "0" {
            return Err(tree_err(id, line, "categorical split unsupported"));
        }
    }
    if let Some((line, v)) = block.get("is_linear") {
        if v != "0" {
            return Err(tree_err(id, line, "linear trees are unsupported"));
        }
    }
    let leaf_values: Vec<f64> = field(id, block, "leaf_value", num_leaves)?;
    if num_leaves == 1 {
        return Tree::new(vec![Node::Leaf { value: leaf_values[0] }], 0, class_index)
            .map_err(|e| tree_err(id, block.start, e.to_string()));
    }

    let internal = num_leaves - 1;
    let features: Vec<usize> = field(id, block, "split_feature", internal)?;
    let thresholds: Vec<f64> = field(id, block, "threshold", internal)?;
    let decision_types: Vec<u32> = field(id, block, "decision_type", internal)?;
    let lefts: Vec<i64> = field(id, block, "left_child", internal)?;
    let rights: Vec<i64> = field(id, block, "right_child", internal)?;

    let line_of = |key: &str| block.get(key).map(|(l, _)| l).unwrap_or(block.start);

    // internal nodes keep their ids; leaf k becomes node internal + k
    let child = |c: i64, key: &str| -> Result<usize> {
        if c >= 0 {
            let c = c as usize;
            if c >= internal {
                return Err(tree_err(id, line_of(key), format!("dangling child index {c}")));
            }
            Ok(c)
        } else {
            let leaf = (-c - 1) as usize;
            if leaf >= num_leaves {
                return Err(tree_err(id, line_of(key), format!("dangling leaf index {c}")));
            }
            Ok(internal + leaf)
        }
    };

    let mut nodes = Vec::with_capacity(internal + num_leaves);
    for n in 0..internal {
        let dt = decision_types[n];
        if dt > 0b1111 {
            return Err(tree_err(id, line_of("decision_type"), format!("unknown decision type {dt}")));
        }
        if dt & CATEGORICAL_BIT != 0 {
            return Err(tree_err(id, line_of("decision_type"), "categorical split unsupported"));
        }
        match (dt >> 2) & 0b11 {
            0 | MISSING_NAN => {}
            MISSING_ZERO => {
                return Err(tree_err(
                    id,
                    line_of("decision_type"),
                    "zero-as-missing default direction unsupported",
                ))
            }
            other => {
                return Err(tree_err(
                    id,
                    line_of("decision_type"),
                    format!("unknown missing type {other} in decision type {dt}"),
                ))
            }
        }
        if features[n] >= num_features {
            return Err(tree_err(
                id,
                line_of("split_feature"),
                format!("split feature {} out of range", features[n]),
            ));
        }
        nodes.push(Node::Split {
            feature: features[n],
            threshold: thresholds[n],
            left: child(lefts[n], "left_child")?,
            right: child(rights[n], "right_child")?,
        });
    }
    nodes.extend(leaf_values.into_iter().map(|value| Node::Leaf { value }));

    Tree::new(nodes, 0, class_index).map_err(|e| tree_err(id, block.start, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Instance;

    fn header(num_class: usize, objective: &str) -> String {
        format!(
            "tree\nversion=v4\nnum_class={num_class}\nnum_tree_per_iteration={num_class}\n\
             label_index=0\nmax_feature_idx=1\nobjective={objective}\nfeature_names=f0 f1\n\n"
        )
    }

    fn stump(id: usize, lo: f64, hi: f64, dt: u32) -> String {
        format!(
            "Tree={id}\nnum_leaves=2\nnum_cat=0\nsplit_feature=0\nthreshold=0.5\n\
             decision_type={dt}\nleft_child=-1\nright_child=-2\nleaf_value={lo} {hi}\n\
             is_linear=0\nshrinkage=1\n\n"
        )
    }

    #[test]
    fn single_stump_binary() {
        let text = header(1, "binary sigmoid:1") + &stump(0, -1.0, 1.0, 2) + "end of trees\n";
        let m = parse_lightgbm_text(&text).unwrap();
        assert_eq!(m.objective(), Objective::BinaryRaw);
        assert_eq!(m.trees().len(), 1);
        assert_eq!(m.trees()[0].leaves().len(), 2);
        let at = |v: f64| m.predict_raw(&Instance::new(vec![v, 0.0]).unwrap())[0];
        assert_eq!(at(0.5), -1.0);
        assert_eq!(at(0.6), 1.0);
    }

    #[test]
    fn multiclass_round_robin_classes() {
        let mut text = header(3, "multiclass num_class:3");
        for i in 0..6 {
            text += &stump(i, -0.1 * i as f64, 0.1, 2);
        }
        let m = parse_lightgbm_text(&text).unwrap();
        let classes: Vec<usize> = m.trees().iter().map(|t| t.class_index()).collect();
        assert_eq!(classes, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn categorical_rejected() {
        let text = header(1, "binary sigmoid:1") + &stump(0, -1.0, 1.0, 1);
        let err = parse_lightgbm_text(&text).unwrap_err();
        assert!(err.to_string().contains("categorical split unsupported"), "{err}");
        assert!(err.to_string().contains("tree 0"), "{err}");
    }

    #[test]
    fn zero_missing_rejected_nan_missing_accepted() {
        let zero = header(1, "binary") + &stump(0, -1.0, 1.0, 0b0100);
        assert!(parse_lightgbm_text(&zero).is_err());
        let nan = header(1, "binary") + &stump(0, -1.0, 1.0, 0b1010);
        assert!(parse_lightgbm_text(&nan).is_ok());
    }

    #[test]
    fn dangling_child_reports_line() {
        let text = header(1, "binary")
            + "Tree=0\nnum_leaves=2\nsplit_feature=0\nthreshold=0.5\ndecision_type=2\n\
               left_child=-1\nright_child=-5\nleaf_value=1 2\n";
        let err = parse_lightgbm_text(&text).unwrap_err();
        match err {
            Error::LightGbm { tree, line, msg } => {
                assert_eq!(tree, Some(0));
                assert_eq!(line, 16);
                assert!(msg.contains("dangling"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_header() {
        let text = "tree\nnum_class=1\nmax_feature_idx=1\nfeature_names=a\nobjective=binary\n";
        assert!(matches!(
            parse_lightgbm_text(text),
            Err(Error::LightGbm { tree: None, .. })
        ));
        let text = "tree\nnum_class=1\nfeature_names=a b\nobjective=binary\n";
        assert!(parse_lightgbm_text(text).is_err());
    }

    #[test]
    fn single_leaf_tree() {
        let text = header(1, "binary") + "Tree=0\nnum_leaves=1\nnum_cat=0\nleaf_value=0.3\nshrinkage=1\n";
        let m = parse_lightgbm_text(&text).unwrap();
        assert_eq!(m.predict_raw(&Instance::new(vec![0.0, 0.0]).unwrap()), vec![0.3]);
    }
}
