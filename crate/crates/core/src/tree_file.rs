//! JSON tree files.
//!
//! ```json
//! {"depth": 1,
//!  "nodes": [{"id": "root", "time": 0, "parent": null, "matrix": [[1, 1], [1, 1]]},
//!            {"id": 1, "time": 1, "parent": "root", "matrix": {"d": 2, "entries": [[1, 0], ["inf", 1]]}}],
//!  "measures": {"Q1": {"1": 1.0}},
//!  "claims": {"C": {"1": [1, "inf"]}}}
//! ```
//!
//! Ids may be numbers or strings. Leaves missing from a measure get weight zero.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::{ExchangeError, MatrixJson, ValueVector};
use crate::scalar::{Scalar, Tolerances};
use crate::tree::{ClaimVector, MarketTree, MeasureFamily, NodeSpec, TreeError, TreeMeasure, TreeSpec};
use crate::xreal::{RawEntry, XReal};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeId {
    Num(u64),
    Str(String),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Num(n) => write!(f, "{n}"),
            NodeId::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::Str(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixField {
    Grid(Vec<Vec<RawEntry>>),
    Json(MatrixJson),
}

impl MatrixField {
    pub fn grid<T: Scalar>(&self) -> Result<Vec<Vec<T>>, ExchangeError> {
        match self {
            MatrixField::Grid(g) => MatrixJson { d: None, entries: g.clone() }.grid(),
            MatrixField::Json(m) => m.grid(),
        }
    }

    pub fn from_grid<T: Scalar>(g: &[Vec<T>]) -> Self {
        MatrixField::Grid(g.iter().map(|r| r.iter().map(|x| RawEntry(x.as_f64())).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub time: usize,
    #[serde(default)]
    pub parent: Option<NodeId>,
    pub matrix: MatrixField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub depth: usize,
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub measures: IndexMap<String, IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub claims: IndexMap<String, IndexMap<String, Vec<RawEntry>>>,
}

#[derive(Debug, Error)]
pub enum TreeFileError {
    #[error("cannot parse tree file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("node `{node}`: {source}")]
    Matrix {
        node: String,
        #[source]
        source: ExchangeError,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("measure `{name}`: {source}")]
    Measure {
        name: String,
        #[source]
        source: TreeError,
    },
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("cannot pick a measure family: {0}")]
    Family(String),
    #[error("claim `{name}`: {detail}")]
    Claim { name: String, detail: String },
}

impl TreeFile {
    pub fn from_json(s: &str) -> Result<Self, TreeFileError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree files serialize")
    }

    /// Describes `tree` together with named measures.
    pub fn from_tree<T: Scalar>(tree: &MarketTree<T>, measures: &[(&str, &TreeMeasure<T>)]) -> Self {
        let spec = tree.to_spec();
        let nodes = spec
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id.as_str().into(),
                time: n.time,
                parent: n.parent.as_deref().map(NodeId::from),
                matrix: MatrixField::from_grid(&n.matrix),
            })
            .collect();
        let measures = measures
            .iter()
            .map(|(name, q)| {
                let w = (0..tree.n_leaves())
                    .filter(|&l| q.weight(l) > T::zero())
                    .map(|l| (tree.id(tree.leaves()[l]).to_string(), q.weight(l).as_f64()))
                    .collect();
                (name.to_string(), w)
            })
            .collect();
        TreeFile { depth: spec.depth, nodes, measures, claims: IndexMap::new() }
    }

    pub fn spec<T: Scalar>(&self) -> Result<TreeSpec<T>, TreeFileError> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let matrix = n
                    .matrix
                    .grid()
                    .map_err(|source| TreeFileError::Matrix { node: n.id.to_string(), source })?;
                Ok(NodeSpec {
                    id: n.id.to_string(),
                    time: n.time,
                    parent: n.parent.as_ref().map(|p| p.to_string()),
                    matrix,
                })
            })
            .collect::<Result<_, TreeFileError>>()?;
        Ok(TreeSpec { depth: self.depth, nodes })
    }

    /// Builds the tree, every measure and every claim.
    pub fn load<T: Scalar>(&self, tol: Tolerances<T>) -> Result<LoadedTree<T>, TreeFileError> {
        let tree = MarketTree::with_tolerances(&self.spec()?, tol)?;
        let mut measures = IndexMap::new();
        for (name, w) in &self.measures {
            let q = TreeMeasure::from_leaf_weights(&tree, w.iter().map(|(id, x)| (id.as_str(), T::lit(*x))))
                .map_err(|source| TreeFileError::Measure { name: name.clone(), source })?;
            measures.insert(name.clone(), q);
        }
        let mut claims = IndexMap::new();
        for (name, values) in &self.claims {
            claims.insert(name.clone(), load_claim(&tree, name, values)?);
        }
        Ok(LoadedTree { tree, measures, claims })
    }
}

fn load_claim<T: Scalar>(
    tree: &MarketTree<T>,
    name: &str,
    values: &IndexMap<String, Vec<RawEntry>>,
) -> Result<ClaimVector<T>, TreeFileError> {
    let err = |detail: String| TreeFileError::Claim { name: name.to_string(), detail };
    let mut per_leaf: Vec<Option<ValueVector<T>>> = vec![None; tree.n_leaves()];
    for (id, v) in values {
        let l = tree.leaf_position(id).map_err(|e| err(e.to_string()))?;
        let entries = v
            .iter()
            .map(|x| XReal::new(T::lit(x.0)).map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        per_leaf[l] = Some(ValueVector(entries));
    }
    let values = per_leaf
        .into_iter()
        .enumerate()
        .map(|(l, v)| v.ok_or_else(|| err(format!("no value for leaf `{}`", tree.id(tree.leaves()[l])))))
        .collect::<Result<Vec<_>, _>>()?;
    ClaimVector::new(tree, values).map_err(|e| err(e.to_string()))
}

/// A tree file after validation.
#[derive(Debug, Clone)]
pub struct LoadedTree<T> {
    pub tree: MarketTree<T>,
    pub measures: IndexMap<String, TreeMeasure<T>>,
    pub claims: IndexMap<String, ClaimVector<T>>,
}

impl<T: Scalar> LoadedTree<T> {
    /// The named measures in currency order. Without names: `Q1..Qd` if present,
    /// otherwise all measures when there are exactly `d` of them.
    pub fn family(&self, names: Option<&[String]>) -> Result<MeasureFamily<T>, TreeFileError> {
        let d = self.tree.d();
        let names: Vec<String> = match names {
            Some(n) => n.to_vec(),
            None => {
                let canonical: Vec<String> = (1..=d).map(|i| format!("Q{i}")).collect();
                if canonical.iter().all(|n| self.measures.contains_key(n)) {
                    canonical
                } else if self.measures.len() == d {
                    self.measures.keys().cloned().collect()
                } else {
                    return Err(TreeFileError::Family(format!(
                        "{} measures for {d} currencies and no Q1..Q{d}",
                        self.measures.len()
                    )));
                }
            }
        };
        let measures = names
            .iter()
            .map(|n| self.measures.get(n).cloned().ok_or_else(|| TreeFileError::UnknownMeasure(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        MeasureFamily::new(&self.tree, measures).map_err(|e| TreeFileError::Family(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "depth": 1,
        "nodes": [
            {"id": "root", "time": 0, "parent": null, "matrix": [[1, 1], [1, 1]]},
            {"id": 1, "time": 1, "parent": "root", "matrix": [[1, 1], [1, 1]]},
            {"id": 2, "time": 1, "parent": "root", "matrix": {"d": 2, "entries": [[1, 0], ["inf", 1]]}}
        ],
        "measures": {"Q1": {"1": 0.5, "2": 0.5}, "Q2": {"1": 1.0}},
        "claims": {"unit1": {"1": [1, 1], "2": [1, "inf"]}}
    }"#;

    #[test]
    fn parse_and_load() {
        let f = TreeFile::from_json(SAMPLE).unwrap();
        let t = f.load::<f64>(Tolerances::default()).unwrap();
        assert_eq!(t.tree.n_leaves(), 2);
        let fam = t.family(None).unwrap();
        assert_eq!(fam.get(1).weights(), &[1.0, 0.0]);
        let c = &t.claims["unit1"];
        assert!(c.value(1).get(1).is_infinite());
        let named = t.family(Some(&["Q2".into(), "Q1".into()])).unwrap();
        assert_eq!(named.get(0).weights(), &[1.0, 0.0]);
        assert!(matches!(t.family(Some(&["Q3".into(), "Q1".into()])), Err(TreeFileError::UnknownMeasure(_))));
    }

    #[test]
    fn round_trip() {
        let f = TreeFile::from_json(SAMPLE).unwrap();
        let t = f.load::<f64>(Tolerances::default()).unwrap();
        let out = TreeFile::from_tree(&t.tree, &[("Q1", &t.measures["Q1"]), ("Q2", &t.measures["Q2"])]);
        let back = TreeFile::from_json(&out.to_json_pretty()).unwrap().load::<f64>(Tolerances::default()).unwrap();
        assert_eq!(back.tree.n_leaves(), 2);
        assert_eq!(back.measures["Q1"].weights(), t.measures["Q1"].weights());
        assert!(out.to_json_pretty().contains("\"inf\""));
    }

    #[test]
    fn errors() {
        assert!(matches!(TreeFile::from_json("{"), Err(TreeFileError::Parse(_))));
        let bad = SAMPLE.replace(r#""parent": "root", "matrix": [[1, 1]"#, r#""parent": "nowhere", "matrix": [[1, 1]"#);
        let f = TreeFile::from_json(&bad).unwrap();
        assert!(matches!(f.load::<f64>(Tolerances::default()), Err(TreeFileError::Tree(TreeError::UnknownParent { .. }))));
        let bad = SAMPLE.replace(r#""Q2": {"1": 1.0}"#, r#""Q2": {"1": 0.7}"#);
        let f = TreeFile::from_json(&bad).unwrap();
        assert!(matches!(f.load::<f64>(Tolerances::default()), Err(TreeFileError::Measure { .. })));
    }
}
