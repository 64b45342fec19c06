//! Validation reports shared by matrices, value vectors and trees.
//!
//! Currency indices in reports are 1-based.

use serde::Serialize;

use crate::xreal::XReal;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `s[i][i] != 1`.
    Diagonal { i: usize, value: XReal<f64> },
    /// `s[i][j] = 0` without `s[j][i] = ∞`, or the converse.
    Reciprocal { i: usize, j: usize },
    /// `s[i][j]·s[j][k] != s[i][k]`.
    Consistency {
        i: usize,
        j: usize,
        k: usize,
        product: XReal<f64>,
        direct: XReal<f64>,
    },
    /// `s[i][j]·v[j] != v[i]`.
    ValueVector {
        i: usize,
        j: usize,
        product: XReal<f64>,
        value: XReal<f64>,
    },
    /// A node whose matrix fails validation.
    NodeMatrix { node: String, violations: Vec<Violation> },
    /// Some currency is already devalued at the root.
    RootDevalued { node: String, currencies: Vec<usize> },
    /// A currency devalued at `parent` is active again at `node`.
    Revival { node: String, parent: String, currency: usize },
    /// A leaf that does not sit at the final time.
    LeafDepth { node: String, time: usize, depth: usize },
    /// A node later than the declared depth.
    BeyondDepth { node: String, time: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self { ok: violations.is_empty(), violations }
    }

    pub fn ok() -> Self {
        Self::from_violations(Vec::new())
    }
}
