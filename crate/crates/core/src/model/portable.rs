//! Portable JSON interchange format for tree ensembles.
//!
//! ```json
//! {"num_classes": 1, "objective": "binary_raw", "base_scores": [0.0],
//!  "features": [{"name": "f0"}],
//!  "trees": [{"class_index": 0, "root": 0, "nodes": [
//!     {"id": 0, "kind": "split", "feature": 0, "threshold": 0.5, "left": 1, "right": 2},
//!     {"id": 1, "kind": "leaf", "value": -1.0},
//!     {"id": 2, "kind": "leaf", "value": 1.0}]}]}
//! ```

use serde_json::{json, Map, Value};

use super::{Ensemble, FeatureSpace, Node, Objective, Tree};
use crate::error::{Error, Result};

fn schema(path: &str, msg: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn member<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(path, format!("missing key {key:?}")))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn as_index(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn as_real(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

pub fn parse_portable_json(text: &str) -> Result<Ensemble> {
    let root: Value = serde_json::from_str(text)?;
    let top = as_object(&root, "$")?;

    let num_classes = as_index(member(top, "$", "num_classes")?, "$.num_classes")?;
    let objective = match member(top, "$", "objective")?.as_str() {
        Some("binary_raw") => Objective::BinaryRaw,
        Some("multiclass_raw") => Objective::MulticlassRaw,
        _ => {
            return Err(schema(
                "$.objective",
                "expected \"binary_raw\" or \"multiclass_raw\"",
            ))
        }
    };
    let base_scores = match top.get("base_scores") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => as_array(v, "$.base_scores")?
            .iter()
            .enumerate()
            .map(|(i, b)| as_real(b, &format!("$.base_scores[{i}]")))
            .collect::<Result<_>>()?,
    };

    let names = as_array(member(top, "$", "features")?, "$.features")?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = format!("$.features[{i}]");
            let obj = as_object(f, &path)?;
            member(obj, &path, "name")?
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(&format!("{path}.name"), "expected a string"))
        })
        .collect::<Result<Vec<_>>>()?;
    let feature_space = FeatureSpace::new(names).map_err(|e| schema("$.features", e.to_string()))?;

    let trees = as_array(member(top, "$", "trees")?, "$.trees")?
        .iter()
        .enumerate()
        .map(|(t, v)| parse_tree(v, &format!("$.trees[{t}]")))
        .collect::<Result<Vec<_>>>()?;

    Ensemble::new(feature_space, trees, num_classes, base_scores, objective)
        .map_err(|e| schema("$", e.to_string()))
}

fn parse_tree(v: &Value, path: &str) -> Result<Tree> {
    let obj = as_object(v, path)?;
    let class_index = as_index(member(obj, path, "class_index")?, &format!("{path}.class_index"))?;
    let root = as_index(member(obj, path, "root")?, &format!("{path}.root"))?;
    let raw_nodes = as_array(member(obj, path, "nodes")?, &format!("{path}.nodes"))?;

    let mut nodes: Vec<Option<Node>> = vec![None; raw_nodes.len()];
    for (i, n) in raw_nodes.iter().enumerate() {
        let npath = format!("{path}.nodes[{i}]");
        let nobj = as_object(n, &npath)?;
        let id = as_index(member(nobj, &npath, "id")?, &format!("{npath}.id"))?;
        if id >= nodes.len() {
            return Err(schema(
                &format!("{npath}.id"),
                format!("node ids must be 0..{}", nodes.len()),
            ));
        }
        if nodes[id].is_some() {
            return Err(schema(&format!("{npath}.id"), format!("duplicate node id {id}")));
        }
        let node = match member(nobj, &npath, "kind")?.as_str() {
            Some("split") => Node::Split {
                feature: as_index(member(nobj, &npath, "feature")?, &format!("{npath}.feature"))?,
                threshold: as_real(member(nobj, &npath, "threshold")?, &format!("{npath}.threshold"))?,
                left: as_index(member(nobj, &npath, "left")?, &format!("{npath}.left"))?,
                right: as_index(member(nobj, &npath, "right")?, &format!("{npath}.right"))?,
            },
            Some("leaf") => Node::Leaf {
                value: as_real(member(nobj, &npath, "value")?, &format!("{npath}.value"))?,
            },
            _ => return Err(schema(&format!("{npath}.kind"), "expected \"split\" or \"leaf\"")),
        };
        nodes[id] = Some(node);
    }
    let nodes = nodes.into_iter().map(|n| n.expect("ids form a permutation")).collect();
    Tree::new(nodes, root, class_index).map_err(|e| schema(path, e.to_string()))
}

pub fn emit_portable_json(ensemble: &Ensemble) -> String {
    let trees: Vec<Value> = ensemble
        .trees()
        .iter()
        .map(|tree| {
            let nodes: Vec<Value> = tree
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, node)| match *node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => json!({"id": id, "kind": "split", "feature": feature,
                                "threshold": threshold, "left": left, "right": right}),
                    Node::Leaf { value } => json!({"id": id, "kind": "leaf", "value": value}),
                })
                .collect();
            json!({"class_index": tree.class_index(), "root": tree.root(), "nodes": nodes})
        })
        .collect();
    let features: Vec<Value> = ensemble
        .feature_space()
        .names()
        .iter()
        .map(|n| json!({ "name": n }))
        .collect();
    let doc = json!({
        "num_classes": ensemble.num_classes(),
        "objective": ensemble.objective(),
        "base_scores": ensemble.base_scores(),
        "features": features,
        "trees": trees,
    });
    serde_json::to_string_pretty(&doc).expect("ensemble serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy2f;
    use crate::model::Instance;

    const TOY: &str = include_str!("../../tests/fixtures/toy2f.json");

    #[test]
    fn toy_fixture_matches_hand_built() {
        let parsed = parse_portable_json(TOY).unwrap();
        assert_eq!(parsed, toy2f());
        let raw = parsed.predict_raw(&Instance::new(vec![1.0, 3.0]).unwrap());
        assert_eq!(raw, vec![2.25]);
    }

    #[test]
    fn round_trip() {
        let m = toy2f();
        assert_eq!(parse_portable_json(&emit_portable_json(&m)).unwrap(), m);
    }

    #[test]
    fn constant_model() {
        let text = r#"{"num_classes":1,"objective":"binary_raw","features":[{"name":"a"}],
            "trees":[{"class_index":0,"root":0,"nodes":[{"id":0,"kind":"leaf","value":0.0}]}]}"#;
        let m = parse_portable_json(text).unwrap();
        assert_eq!(m.trees().len(), 1);
        assert_eq!(m.base_scores(), &[0.0]);
    }

    #[test]
    fn shared_child_is_not_a_tree() {
        let text = r#"{"num_classes":1,"objective":"binary_raw","features":[{"name":"a"}],
            "trees":[{"class_index":0,"root":0,"nodes":[
              {"id":0,"kind":"split","feature":0,"threshold":0.5,"left":1,"right":1},
              {"id":1,"kind":"leaf","value":1.0}]}]}"#;
        let err = parse_portable_json(text).unwrap_err();
        assert!(err.to_string().contains("node graph is not a tree"), "{err}");
        assert!(err.to_string().contains("$.trees[0]"), "{err}");
    }

    #[test]
    fn schema_errors_carry_paths() {
        let text = r#"{"num_classes":1,"objective":"binary_raw","features":[{"name":"a"}],
            "trees":[{"class_index":0,"root":0,"nodes":[{"id":0,"kind":"leaf","value":"x"}]}]}"#;
        match parse_portable_json(text).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "$.trees[0].nodes[0].value"),
            other => panic!("unexpected {other}"),
        }
        let text = r#"{"num_classes":1,"objective":"softmax","features":[],"trees":[]}"#;
        assert!(matches!(parse_portable_json(text), Err(Error::Schema { path, .. }) if path == "$.objective"));
    }
}
