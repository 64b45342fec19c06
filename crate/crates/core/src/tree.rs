//! Finite event trees with an exchange matrix per node, leaf-weight
//! probability measures, and the one-step (super)martingale and
//! no-arbitrage checks on them.
//!
//! Nodes are stored in depth-first preorder, so the leaves below any node
//! form a contiguous range. Node handles are plain `usize` indices into that
//! order; the root is `0`.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::exchange::{
    basket_claim_value, validate_exchange_matrix_with, BasketPrices, ExchangeError, ExchangeMatrix,
    ValueVector,
};
use crate::report::{ValidationReport, Violation};
use crate::scalar::{scaled_residual, Scalar, Tolerances};
use crate::xreal::XReal;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` has unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("tree has no root (a node without parent)")]
    NoRoot,
    #[error("tree has several roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("root `{node}` must be at time 0, found {time}")]
    RootTime { node: String, time: usize },
    #[error("node `{node}` at time {time} has parent at time {parent_time}")]
    TimeGap { node: String, time: usize, parent_time: usize },
    #[error("nodes not reachable from the root (cycle): {0:?}")]
    Cycle(Vec<String>),
    #[error("node `{node}`: {source}")]
    Matrix {
        node: String,
        #[source]
        source: ExchangeError,
    },
    #[error("node `{node}` has {got} currencies, expected {expected}")]
    DimensionMismatch { node: String, expected: usize, got: usize },
    #[error("tree violates its invariants ({} violations)", .0.violations.len())]
    Invalid(ValidationReport),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),
    #[error("leaf `{leaf}`: weight {weight} must be finite and nonnegative")]
    InvalidWeight { leaf: String, weight: f64 },
    #[error("leaf weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("expected {expected} leaf values, got {got}")]
    LeafCount { expected: usize, got: usize },
    #[error("measure family has {got} members, expected one per currency ({expected})")]
    FamilySize { expected: usize, got: usize },
    #[error("conditioning on node `{0}`, which has zero probability")]
    NullNode(String),
    #[error("claim at leaf `{leaf}`: {source}")]
    Claim {
        leaf: String,
        #[source]
        source: ExchangeError,
    },
}

/// One node of a raw tree description.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec<T> {
    pub id: String,
    pub time: usize,
    pub parent: Option<String>,
    pub matrix: Vec<Vec<T>>,
}

/// Raw tree description, before validation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreeSpec<T> {
    pub depth: usize,
    pub nodes: Vec<NodeSpec<T>>,
}

impl<T: Scalar> TreeSpec<T> {
    pub fn new(root_matrix: Vec<Vec<T>>) -> Self {
        Self {
            depth: 0,
            nodes: vec![NodeSpec { id: "root".into(), time: 0, parent: None, matrix: root_matrix }],
        }
    }

    /// Appends a child of `parent` one step later; `depth` grows as needed.
    pub fn child(&mut self, id: impl Into<String>, parent: &str, matrix: Vec<Vec<T>>) -> &mut Self {
        let time = self
            .nodes
            .iter()
            .find(|n| n.id == parent)
            .map(|n| n.time + 1)
            .unwrap_or(1);
        self.depth = self.depth.max(time);
        self.nodes.push(NodeSpec { id: id.into(), time, parent: Some(parent.to_string()), matrix });
        self
    }
}

/// A validated node.
#[derive(Debug, Clone)]
pub struct Node<T> {
    pub id: String,
    pub time: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub matrix: ExchangeMatrix<T>,
    pub basket: BasketPrices<T>,
    /// Positions (into [`MarketTree::leaves`]) of the leaves below this node.
    pub leaves: Range<usize>,
}

/// A validated event tree.
#[derive(Debug, Clone)]
pub struct MarketTree<T> {
    d: usize,
    depth: usize,
    nodes: Vec<Node<T>>,
    leaves: Vec<usize>,
    index: HashMap<String, usize>,
    tol: Tolerances<T>,
}

struct Assembled<T> {
    order: Vec<usize>,
    parent_pos: Vec<Option<usize>>,
    spec: TreeSpec<T>,
    d: usize,
}

fn assemble<T: Scalar>(spec: &TreeSpec<T>) -> Result<Assembled<T>, TreeError> {
    if spec.nodes.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut index = HashMap::with_capacity(spec.nodes.len());
    for (k, n) in spec.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), k).is_some() {
            return Err(TreeError::DuplicateId(n.id.clone()));
        }
    }
    let d = spec.nodes[0].matrix.len();
    let mut children = vec![Vec::new(); spec.nodes.len()];
    let mut roots = Vec::new();
    for (k, n) in spec.nodes.iter().enumerate() {
        if n.matrix.len() != d {
            return Err(TreeError::DimensionMismatch { node: n.id.clone(), expected: d, got: n.matrix.len() });
        }
        match &n.parent {
            None => roots.push(k),
            Some(p) => {
                let &pk = index.get(p.as_str()).ok_or_else(|| TreeError::UnknownParent {
                    node: n.id.clone(),
                    parent: p.clone(),
                })?;
                if n.time != spec.nodes[pk].time + 1 {
                    return Err(TreeError::TimeGap {
                        node: n.id.clone(),
                        time: n.time,
                        parent_time: spec.nodes[pk].time,
                    });
                }
                children[pk].push(k);
            }
        }
    }
    let root = match roots.as_slice() {
        [] => return Err(TreeError::NoRoot),
        [r] => *r,
        many => return Err(TreeError::MultipleRoots(many.iter().map(|&k| spec.nodes[k].id.clone()).collect())),
    };
    if spec.nodes[root].time != 0 {
        return Err(TreeError::RootTime { node: spec.nodes[root].id.clone(), time: spec.nodes[root].time });
    }

    let mut order = Vec::with_capacity(spec.nodes.len());
    let mut stack = vec![root];
    while let Some(k) = stack.pop() {
        order.push(k);
        stack.extend(children[k].iter().rev());
    }
    if order.len() != spec.nodes.len() {
        let seen: HashSet<usize> = order.iter().copied().collect();
        let stray = (0..spec.nodes.len())
            .filter(|k| !seen.contains(k))
            .map(|k| spec.nodes[k].id.clone())
            .collect();
        return Err(TreeError::Cycle(stray));
    }
    let mut pos_of = vec![0; spec.nodes.len()];
    for (p, &k) in order.iter().enumerate() {
        pos_of[k] = p;
    }
    let parent_pos = order
        .iter()
        .map(|&k| spec.nodes[k].parent.as_ref().map(|p| pos_of[index[p.as_str()]]))
        .collect();
    Ok(Assembled { order, parent_pos, spec: spec.clone(), d })
}

fn tree_violations<T: Scalar>(a: &Assembled<T>, tol: T) -> Result<(Vec<Violation>, Vec<Option<ExchangeMatrix<T>>>), TreeError> {
    let mut violations = Vec::new();
    let mut matrices = Vec::with_capacity(a.order.len());
    let mut has_child = vec![false; a.order.len()];
    for p in a.parent_pos.iter().flatten() {
        has_child[*p] = true;
    }
    for (p, &k) in a.order.iter().enumerate() {
        let n = &a.spec.nodes[k];
        let report = validate_exchange_matrix_with(&n.matrix, tol)
            .map_err(|source| TreeError::Matrix { node: n.id.clone(), source })?;
        if report.ok {
            matrices.push(Some(
                ExchangeMatrix::new_with_tolerance(&n.matrix, tol)
                    .map_err(|source| TreeError::Matrix { node: n.id.clone(), source })?,
            ));
        } else {
            violations.push(Violation::NodeMatrix { node: n.id.clone(), violations: report.violations });
            matrices.push(None);
        }
        if n.time > a.spec.depth {
            violations.push(Violation::BeyondDepth { node: n.id.clone(), time: n.time, depth: a.spec.depth });
        } else if !has_child[p] && n.time != a.spec.depth {
            violations.push(Violation::LeafDepth { node: n.id.clone(), time: n.time, depth: a.spec.depth });
        }
    }
    if let Some(root) = &matrices[0] {
        let devalued: Vec<usize> = (0..a.d).filter(|&i| !root.is_active(i)).map(|i| i + 1).collect();
        if !devalued.is_empty() {
            violations.push(Violation::RootDevalued { node: a.spec.nodes[a.order[0]].id.clone(), currencies: devalued });
        }
    }
    for (p, parent) in a.parent_pos.iter().enumerate() {
        let Some(q) = parent else { continue };
        let (Some(child_m), Some(parent_m)) = (&matrices[p], &matrices[*q]) else {
            continue;
        };
        for i in 0..a.d {
            if !parent_m.is_active(i) && child_m.is_active(i) {
                violations.push(Violation::Revival {
                    node: a.spec.nodes[a.order[p]].id.clone(),
                    parent: a.spec.nodes[a.order[*q]].id.clone(),
                    currency: i + 1,
                });
            }
        }
    }
    Ok((violations, matrices))
}

/// Checks the tree invariants: valid matrices, no devaluation at the root,
/// absorbing devaluation, and all leaves at the final time.
///
/// Structural defects (missing or duplicate ids, cycles, time gaps, malformed
/// matrices) are errors rather than report entries.
pub fn validate_tree<T: Scalar>(spec: &TreeSpec<T>, tol: T) -> Result<ValidationReport, TreeError> {
    let a = assemble(spec)?;
    Ok(ValidationReport::from_violations(tree_violations(&a, tol)?.0))
}

impl<T: Scalar> MarketTree<T> {
    pub fn new(spec: &TreeSpec<T>) -> Result<Self, TreeError> {
        Self::with_tolerances(spec, T::default_tolerances())
    }

    pub fn with_tolerances(spec: &TreeSpec<T>, tol: Tolerances<T>) -> Result<Self, TreeError> {
        let a = assemble(spec)?;
        let (violations, matrices) = tree_violations(&a, tol.consistency)?;
        if !violations.is_empty() {
            return Err(TreeError::Invalid(ValidationReport::from_violations(violations)));
        }
        let mut nodes: Vec<Node<T>> = a
            .order
            .iter()
            .zip(matrices)
            .zip(&a.parent_pos)
            .map(|((&k, m), &parent)| {
                let n = &a.spec.nodes[k];
                let matrix = m.expect("validated");
                Node {
                    id: n.id.clone(),
                    time: n.time,
                    parent,
                    children: Vec::new(),
                    basket: matrix.basket_prices(),
                    matrix,
                    leaves: 0..0,
                }
            })
            .collect();
        for p in 1..nodes.len() {
            let q = nodes[p].parent.expect("non-root");
            nodes[q].children.push(p);
        }
        let mut leaves = Vec::new();
        for p in 0..nodes.len() {
            if nodes[p].children.is_empty() {
                nodes[p].leaves = leaves.len()..leaves.len() + 1;
                leaves.push(p);
            }
        }
        for p in (0..nodes.len()).rev() {
            if let (Some(first), Some(last)) = (nodes[p].children.first(), nodes[p].children.last()) {
                nodes[p].leaves = nodes[*first].leaves.start..nodes[*last].leaves.end;
            }
        }
        let index = nodes.iter().enumerate().map(|(p, n)| (n.id.clone(), p)).collect();
        Ok(Self { d: a.d, depth: a.spec.depth, nodes, leaves, index, tol })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tolerances(&self) -> &Tolerances<T> {
        &self.tol
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, n: usize) -> &Node<T> {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn id(&self, n: usize) -> &str {
        &self.nodes[n].id
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn matrix(&self, n: usize) -> &ExchangeMatrix<T> {
        &self.nodes[n].matrix
    }

    pub fn basket(&self, n: usize) -> &BasketPrices<T> {
        &self.nodes[n].basket
    }

    pub fn children(&self, n: usize) -> &[usize] {
        &self.nodes[n].children
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].children.is_empty()
    }

    /// Leaf node indices, in leaf-position order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf positions below `n`.
    pub fn leaf_range(&self, n: usize) -> Range<usize> {
        self.nodes[n].leaves.clone()
    }

    /// Leaf matrix at leaf position `l`.
    pub fn leaf_matrix(&self, l: usize) -> &ExchangeMatrix<T> {
        self.matrix(self.leaves[l])
    }

    pub fn leaf_position(&self, id: &str) -> Result<usize, TreeError> {
        let n = self.find(id).ok_or_else(|| TreeError::UnknownNode(id.to_string()))?;
        if !self.is_leaf(n) {
            return Err(TreeError::NotALeaf(id.to_string()));
        }
        Ok(self.nodes[n].leaves.start)
    }

    /// Nodes that have children.
    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&n| !self.is_leaf(n))
    }

    /// Ancestors of `n` from the root down to `n` itself.
    pub fn path(&self, n: usize) -> Vec<usize> {
        let mut path = vec![n];
        let mut cur = n;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// The raw description this tree was built from (nodes in preorder).
    pub fn to_spec(&self) -> TreeSpec<T> {
        TreeSpec {
            depth: self.depth,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    time: n.time,
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    matrix: n.matrix.to_grid(),
                })
                .collect(),
        }
    }

    /// Re-runs [`validate_tree`] on this tree.
    pub fn validate(&self) -> ValidationReport {
        validate_tree(&self.to_spec(), self.tol.consistency).expect("structure was validated")
    }
}

/// A probability measure given by leaf weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMeasure<T> {
    leaf: Vec<T>,
    node: Vec<T>,
}

impl<T: Scalar> TreeMeasure<T> {
    /// Leaf weights in leaf-position order; must sum to one.
    pub fn new(tree: &MarketTree<T>, weights: Vec<T>) -> Result<Self, TreeError> {
        Self::check(tree, &weights)?;
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > tree.tol.identity {
            return Err(TreeError::WeightSum(total.as_f64()));
        }
        Ok(Self::from_checked(tree, weights))
    }

    /// Rescales nonnegative weights with positive total to a probability measure.
    pub fn normalized(tree: &MarketTree<T>, weights: Vec<T>) -> Result<Self, TreeError> {
        Self::check(tree, &weights)?;
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(TreeError::WeightSum(total.as_f64()));
        }
        Ok(Self::from_checked(tree, weights.into_iter().map(|w| w / total).collect()))
    }

    /// Weights keyed by leaf id; missing leaves get weight zero.
    pub fn from_leaf_weights<'a, I>(tree: &MarketTree<T>, weights: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = (&'a str, T)>,
    {
        let mut w = vec![T::zero(); tree.n_leaves()];
        for (id, x) in weights {
            let l = tree.leaf_position(id)?;
            w[l] = w[l] + x;
        }
        Self::new(tree, w)
    }

    pub fn point_mass(tree: &MarketTree<T>, leaf_position: usize) -> Self {
        let mut w = vec![T::zero(); tree.n_leaves()];
        w[leaf_position] = T::one();
        Self::from_checked(tree, w)
    }

    pub fn uniform(tree: &MarketTree<T>) -> Self {
        let n = T::from_usize(tree.n_leaves()).expect("leaf count fits scalar");
        Self::from_checked(tree, vec![T::one() / n; tree.n_leaves()])
    }

    /// `Σ_k w_k·q_k` for weights summing to one.
    pub fn mixture(tree: &MarketTree<T>, parts: &[(T, &TreeMeasure<T>)]) -> Self {
        let mut w = vec![T::zero(); tree.n_leaves()];
        for (a, q) in parts {
            for (x, y) in w.iter_mut().zip(&q.leaf) {
                *x = *x + *a * *y;
            }
        }
        Self::from_checked(tree, w)
    }

    fn check(tree: &MarketTree<T>, weights: &[T]) -> Result<(), TreeError> {
        if weights.len() != tree.n_leaves() {
            return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: weights.len() });
        }
        for (l, w) in weights.iter().enumerate() {
            if !(w.is_finite() && *w >= T::zero()) {
                return Err(TreeError::InvalidWeight {
                    leaf: tree.id(tree.leaves()[l]).to_string(),
                    weight: w.as_f64(),
                });
            }
        }
        Ok(())
    }

    fn from_checked(tree: &MarketTree<T>, leaf: Vec<T>) -> Self {
        let mut node = vec![T::zero(); tree.len()];
        for n in (0..tree.len()).rev() {
            node[n] = if tree.is_leaf(n) {
                leaf[tree.node(n).leaves.start]
            } else {
                tree.children(n).iter().map(|&c| node[c]).sum()
            };
        }
        Self { leaf, node }
    }

    pub fn weights(&self) -> &[T] {
        &self.leaf
    }

    /// Leaf weight at leaf position `l`.
    pub fn weight(&self, l: usize) -> T {
        self.leaf[l]
    }

    /// Probability of the event "the path passes through node `n`".
    pub fn prob(&self, n: usize) -> T {
        self.node[n]
    }

    pub fn node_probs(&self) -> &[T] {
        &self.node
    }

    /// Probability above the null threshold.
    pub fn charges(&self, tree: &MarketTree<T>, n: usize) -> bool {
        self.node[n] > tree.tol.null_mass
    }

    pub fn charges_leaf(&self, tree: &MarketTree<T>, l: usize) -> bool {
        self.leaf[l] > tree.tol.null_mass
    }

    /// Same null sets on the leaves.
    pub fn equivalent(&self, tree: &MarketTree<T>, other: &Self) -> bool {
        (0..tree.n_leaves()).all(|l| self.charges_leaf(tree, l) == other.charges_leaf(tree, l))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.leaf
            .iter()
            .zip(&other.leaf)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// One measure per currency numéraire, in currency order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFamily<T> {
    measures: Vec<TreeMeasure<T>>,
}

impl<T: Scalar> MeasureFamily<T> {
    pub fn new(tree: &MarketTree<T>, measures: Vec<TreeMeasure<T>>) -> Result<Self, TreeError> {
        if measures.len() != tree.d() {
            return Err(TreeError::FamilySize { expected: tree.d(), got: measures.len() });
        }
        if let Some(q) = measures.iter().find(|q| q.leaf.len() != tree.n_leaves()) {
            return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: q.leaf.len() });
        }
        Ok(Self { measures })
    }

    pub fn d(&self) -> usize {
        self.measures.len()
    }

    pub fn get(&self, i: usize) -> &TreeMeasure<T> {
        &self.measures[i]
    }

    pub fn measures(&self) -> &[TreeMeasure<T>] {
        &self.measures
    }

    /// `Σ_i q_i / d`.
    pub fn average(&self, tree: &MarketTree<T>) -> TreeMeasure<T> {
        let w = T::one() / T::from_usize(self.d()).expect("d fits scalar");
        let parts: Vec<_> = self.measures.iter().map(|q| (w, q)).collect();
        TreeMeasure::mixture(tree, &parts)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.measures
            .iter()
            .zip(&other.measures)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(T::zero(), T::max)
    }
}

/// `E_q[payoff | n]` for a leaf-indexed payoff.
///
/// Null leaves (weight at or below the null threshold) do not contribute, so
/// an infinite payoff on a null leaf is harmless.
pub fn conditional_expectation<T: Scalar>(
    tree: &MarketTree<T>,
    q: &TreeMeasure<T>,
    n: usize,
    payoff: &[XReal<T>],
) -> Result<XReal<T>, TreeError> {
    if payoff.len() != tree.n_leaves() {
        return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: payoff.len() });
    }
    if !q.charges(tree, n) {
        return Err(TreeError::NullNode(tree.id(n).to_string()));
    }
    let mut acc = T::zero();
    for l in tree.leaf_range(n) {
        if !q.charges_leaf(tree, l) {
            continue;
        }
        match payoff[l] {
            XReal::Finite(x) => acc = acc + q.weight(l) * x,
            XReal::Infinite => return Ok(XReal::Infinite),
        }
    }
    Ok(XReal::Finite(acc / q.prob(n)))
}

/// Finite-valued version of [`conditional_expectation`].
pub fn expect<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>, n: usize, payoff: &[T]) -> Result<T, TreeError> {
    if payoff.len() != tree.n_leaves() {
        return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: payoff.len() });
    }
    if !q.charges(tree, n) {
        return Err(TreeError::NullNode(tree.id(n).to_string()));
    }
    let acc: T = tree
        .leaf_range(n)
        .filter(|&l| q.charges_leaf(tree, l))
        .map(|l| q.weight(l) * payoff[l])
        .sum();
    Ok(acc / q.prob(n))
}

/// `E_q[X(child) | n] = Σ_c q(c) X(c) / q(n)` over charged children.
fn one_step<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>, n: usize, x: impl Fn(usize) -> XReal<T>) -> XReal<T> {
    let mut acc = T::zero();
    for &c in tree.children(n) {
        if !q.charges(tree, c) {
            continue;
        }
        match x(c) {
            XReal::Finite(v) => acc = acc + q.prob(c) * v,
            XReal::Infinite => return XReal::Infinite,
        }
    }
    XReal::Finite(acc / q.prob(n))
}

/// Largest scaled one-step residual `|E_q[X(child)|n] - X(n)|` of a finite
/// node-indexed process over charged internal nodes, with the worst node.
pub fn process_martingale_residual<T: Scalar>(
    tree: &MarketTree<T>,
    q: &TreeMeasure<T>,
    values: &[T],
) -> (T, Option<usize>) {
    let mut worst = (T::zero(), None);
    for n in tree.internal_nodes() {
        if !q.charges(tree, n) {
            continue;
        }
        let XReal::Finite(e) = one_step(tree, q, n, |c| XReal::Finite(values[c])) else {
            unreachable!("finite process")
        };
        let r = scaled_residual(e, values[n]);
        if r > worst.0 || worst.1.is_none() {
            worst = (r, Some(n));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleKind {
    Supermartingale,
    Martingale,
}

/// A one-step comparison of `E[S_ij(child) | node]` with `S_ij(node)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCheck {
    pub node: String,
    pub j: usize,
    pub value: XReal<f64>,
    pub expectation: XReal<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub currency: usize,
    pub kind: MartingaleKind,
    pub ok: bool,
    /// `q({i devalued at T}) = 0`.
    pub finite: bool,
    pub devalued_mass: f64,
    pub violations: Vec<StepCheck>,
    /// Steps with expectation strictly below the current value.
    pub strict: Vec<StepCheck>,
    pub max_residual: f64,
}

fn row_check<T: Scalar>(
    tree: &MarketTree<T>,
    q: &TreeMeasure<T>,
    i: usize,
    columns: &[usize],
    kind: MartingaleKind,
) -> MartingaleReport {
    let tol = tree.tol.martingale;
    let devalued_mass: T = (0..tree.n_leaves())
        .filter(|&l| q.charges_leaf(tree, l) && !tree.leaf_matrix(l).is_active(i))
        .map(|l| q.weight(l))
        .sum();
    let finite = devalued_mass.is_zero();
    let mut violations = Vec::new();
    let mut strict = Vec::new();
    let mut max_residual = 0.0_f64;
    for n in tree.internal_nodes() {
        if !q.charges(tree, n) || !tree.matrix(n).is_active(i) {
            continue;
        }
        for &j in columns {
            let XReal::Finite(value) = tree.matrix(n).get(i, j) else {
                unreachable!("active row is finite")
            };
            let e = one_step(tree, q, n, |c| tree.matrix(c).get(i, j));
            let scale = T::one().max(value);
            let step = StepCheck {
                node: tree.id(n).to_string(),
                j: j + 1,
                value: XReal::Finite(value.as_f64()),
                expectation: e.to_f64(),
            };
            let (bad, residual) = match e {
                XReal::Infinite => (true, f64::INFINITY),
                XReal::Finite(e) => {
                    let excess = (e - value) / scale;
                    let residual = match kind {
                        MartingaleKind::Supermartingale => excess.max(T::zero()),
                        MartingaleKind::Martingale => excess.abs(),
                    };
                    if excess < -tol {
                        strict.push(step.clone());
                    }
                    (residual > tol, residual.as_f64())
                }
            };
            max_residual = max_residual.max(residual);
            if bad {
                violations.push(step);
            }
        }
    }
    MartingaleReport {
        currency: i + 1,
        kind,
        ok: finite && violations.is_empty(),
        finite,
        devalued_mass: devalued_mass.as_f64(),
        violations,
        strict,
        max_residual,
    }
}

/// Is the price vector `S_i` (row `i`) a `q`-supermartingale?
pub fn is_supermartingale<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>, i: usize) -> MartingaleReport {
    let all: Vec<usize> = (0..tree.d()).collect();
    row_check(tree, q, i, &all, MartingaleKind::Supermartingale)
}

/// Is the price vector `S_i` (row `i`) a `q`-martingale?
pub fn is_martingale<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>, i: usize) -> MartingaleReport {
    let all: Vec<usize> = (0..tree.d()).collect();
    row_check(tree, q, i, &all, MartingaleKind::Martingale)
}

/// Is the single rate `S_ij` a `q`-martingale?
pub fn is_rate_martingale<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>, i: usize, j: usize) -> MartingaleReport {
    row_check(tree, q, i, &[j], MartingaleKind::Martingale)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCurrency {
    pub node: String,
    pub currency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodReport {
    pub ok: bool,
    /// Charged nodes where an active currency devalues almost surely.
    pub violations: Vec<NodeCurrency>,
}

/// No Obvious Devaluations: at every charged node, every active currency
/// survives to the horizon with positive conditional probability.
pub fn check_nod<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>) -> NodReport {
    let d = tree.d();
    // survives[n][i]: some charged leaf below n has i active.
    let mut survives = vec![vec![false; d]; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.is_leaf(n) {
            if q.charges(tree, n) {
                for (i, s) in survives[n].iter_mut().enumerate() {
                    *s = tree.matrix(n).is_active(i);
                }
            }
        } else {
            for &c in tree.children(n) {
                for i in 0..d {
                    survives[n][i] |= survives[c][i];
                }
            }
        }
    }
    let mut violations = Vec::new();
    for n in 0..tree.len() {
        if !q.charges(tree, n) {
            continue;
        }
        for i in 0..d {
            if tree.matrix(n).is_active(i) && !survives[n][i] {
                violations.push(NodeCurrency { node: tree.id(n).to_string(), currency: i + 1 });
            }
        }
    }
    NodReport { ok: violations.is_empty(), violations }
}

/// An edge along which `S_ij` changes in a particular way.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEvent {
    pub parent: String,
    pub node: String,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsdReport {
    pub ok: bool,
    /// Charged edges on which some `S_ij` jumps from finite to `∞`.
    pub jumps: Vec<JumpEvent>,
}

fn jumps<T: Scalar>(
    tree: &MarketTree<T>,
    q: &TreeMeasure<T>,
    pred: impl Fn(XReal<T>, XReal<T>) -> bool,
) -> Vec<JumpEvent> {
    let mut out = Vec::new();
    for m in 1..tree.len() {
        if !q.charges(tree, m) {
            continue;
        }
        let n = tree.node(m).parent.expect("non-root");
        for i in 0..tree.d() {
            for j in 0..tree.d() {
                if pred(tree.matrix(n).get(i, j), tree.matrix(m).get(i, j)) {
                    out.push(JumpEvent {
                        parent: tree.id(n).to_string(),
                        node: tree.id(m).to_string(),
                        i: i + 1,
                        j: j + 1,
                    });
                }
            }
        }
    }
    out
}

/// No Sudden Devaluation: no charged edge carries a jump of some `S_ij` from
/// a finite value to `∞`.
pub fn check_nsd<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>) -> NsdReport {
    let jumps = jumps(tree, q, |a, b| a.is_finite() && b.is_infinite());
    NsdReport { ok: jumps.is_empty(), jumps }
}

/// Charged edges on which some `S_ij` jumps from a positive value to zero.
///
/// On a finite tree every such event is also a sudden devaluation; the
/// detector is exposed for diagnostics only.
pub fn jump_to_zero_events<T: Scalar>(tree: &MarketTree<T>, q: &TreeMeasure<T>) -> Vec<JumpEvent> {
    jumps(tree, q, |a, b| a.is_positive() && b.is_zero())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportWitness {
    pub leaf: String,
    pub q_i: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrencySupport {
    pub currency: usize,
    pub ok: bool,
    /// Survival leaves where exactly one of `q_i` and `Σ_k q_k` vanishes.
    pub witnesses: Vec<SupportWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub ok: bool,
    pub currencies: Vec<CurrencySupport>,
}

/// For each `i`: on the leaves where currency `i` is active, `q_i` and
/// `Σ_k q_k` have the same null sets.
pub fn check_support_condition<T: Scalar>(tree: &MarketTree<T>, fam: &MeasureFamily<T>) -> SupportReport {
    let total = fam.average(tree);
    let currencies: Vec<CurrencySupport> = (0..tree.d())
        .map(|i| {
            let qi = fam.get(i);
            let witnesses: Vec<SupportWitness> = (0..tree.n_leaves())
                .filter(|&l| tree.leaf_matrix(l).is_active(i))
                .filter(|&l| qi.charges_leaf(tree, l) != total.charges_leaf(tree, l))
                .map(|l| SupportWitness {
                    leaf: tree.id(tree.leaves()[l]).to_string(),
                    q_i: qi.weight(l).as_f64(),
                    total: (total.weight(l) * T::from_usize(tree.d()).expect("d fits")).as_f64(),
                })
                .collect();
            CurrencySupport { currency: i + 1, ok: witnesses.is_empty(), witnesses }
        })
        .collect();
    SupportReport { ok: currencies.iter().all(|c| c.ok), currencies }
}

/// A claim at maturity: one value vector per leaf, with its basket payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimVector<T> {
    values: Vec<ValueVector<T>>,
    basket: Vec<T>,
}

impl<T: Scalar> ClaimVector<T> {
    /// Validates each leaf's value vector against the leaf matrix.
    pub fn new(tree: &MarketTree<T>, values: Vec<ValueVector<T>>) -> Result<Self, TreeError> {
        if values.len() != tree.n_leaves() {
            return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: values.len() });
        }
        let basket = values
            .iter()
            .enumerate()
            .map(|(l, v)| {
                basket_claim_value(tree.leaf_matrix(l), v).map_err(|source| TreeError::Claim {
                    leaf: tree.id(tree.leaves()[l]).to_string(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { values, basket })
    }

    /// The claim paying `payoff[l]` baskets at leaf `l`.
    pub fn from_basket_payoff(tree: &MarketTree<T>, payoff: &[T]) -> Result<Self, TreeError> {
        if payoff.len() != tree.n_leaves() {
            return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: payoff.len() });
        }
        let values = payoff
            .iter()
            .enumerate()
            .map(|(l, &c)| ValueVector::from_basket_payoff(tree.leaf_matrix(l), c))
            .collect();
        Self::new(tree, values)
    }

    /// The claim paying `payoff[l]` units of currency `i` at leaf `l`.
    pub fn in_currency(tree: &MarketTree<T>, i: usize, payoff: &[T]) -> Result<Self, TreeError> {
        if payoff.len() != tree.n_leaves() {
            return Err(TreeError::LeafCount { expected: tree.n_leaves(), got: payoff.len() });
        }
        let mut values = Vec::with_capacity(payoff.len());
        for (l, &c) in payoff.iter().enumerate() {
            let v = if c.is_zero() {
                ValueVector::zeros(tree.d())
            } else {
                let unit = tree.leaf_matrix(l).unit_claim(i).map_err(|source| TreeError::Claim {
                    leaf: tree.id(tree.leaves()[l]).to_string(),
                    source,
                })?;
                ValueVector(unit.0.into_iter().map(|x| x.mul(XReal::Finite(c)).expect("c > 0")).collect())
            };
            values.push(v);
        }
        Self::new(tree, values)
    }

    /// One unit of currency `i` at every leaf.
    pub fn unit(tree: &MarketTree<T>, i: usize) -> Result<Self, TreeError> {
        Self::in_currency(tree, i, &vec![T::one(); tree.n_leaves()])
    }

    /// The basket itself: `C_i = Σ_j S_ij(T)`.
    pub fn basket(tree: &MarketTree<T>) -> Self {
        Self::from_basket_payoff(tree, &vec![T::one(); tree.n_leaves()]).expect("basket is a valid claim")
    }

    pub fn value(&self, l: usize) -> &ValueVector<T> {
        &self.values[l]
    }

    pub fn values(&self) -> &[ValueVector<T>] {
        &self.values
    }

    /// Basket payoff `C̄` per leaf.
    pub fn basket_payoff(&self) -> &[T] {
        &self.basket
    }

    /// Leaf-indexed payoff in currency `i`.
    pub fn in_currency_i(&self, i: usize) -> Vec<XReal<T>> {
        self.values.iter().map(|v| v.get(i)).collect()
    }

    pub fn add(&self, tree: &MarketTree<T>, other: &Self) -> Result<Self, TreeError> {
        let payoff: Vec<T> = self.basket.iter().zip(&other.basket).map(|(a, b)| *a + *b).collect();
        Self::from_basket_payoff(tree, &payoff)
    }

    pub fn scale(&self, tree: &MarketTree<T>, k: T) -> Result<Self, TreeError> {
        let payoff: Vec<T> = self.basket.iter().map(|a| *a * k).collect();
        Self::from_basket_payoff(tree, &payoff)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    /// Root at par; leaf `w1` keeps the rate, leaf `w2` devalues currency 2.
    pub(crate) fn two_leaf(w1: Vec<Vec<f64>>) -> MarketTree<f64> {
        let mut spec = TreeSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        spec.child("w1", "root", w1).child("w2", "root", vec![vec![1.0, 0.0], vec![INF, 1.0]]);
        MarketTree::new(&spec).unwrap()
    }

    fn example_12() -> MarketTree<f64> {
        two_leaf(vec![vec![1.0, 1.0], vec![1.0, 1.0]])
    }

    fn measure(t: &MarketTree<f64>, w: &[f64]) -> TreeMeasure<f64> {
        TreeMeasure::new(t, w.to_vec()).unwrap()
    }

    fn constant_tree() -> MarketTree<f64> {
        let m = ExchangeMatrix::from_price_vector(&[1.0, 2.0]).unwrap().to_grid();
        let mut spec = TreeSpec::new(m.clone());
        spec.child("a", "root", m.clone()).child("b", "root", m);
        MarketTree::new(&spec).unwrap()
    }

    #[test]
    fn validates_the_two_leaf_tree() {
        let t = two_leaf(vec![vec![1.0, 2.0], vec![0.5, 1.0]]);
        assert!(t.validate().ok);
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.leaf_range(t.root()), 0..2);
    }

    #[test]
    fn revival_is_a_violation() {
        let mut spec = TreeSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        spec.child("a", "root", vec![vec![1.0, 0.0], vec![INF, 1.0]])
            .child("b", "a", vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let report = validate_tree(&spec, 1e-9).unwrap();
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Revival { currency: 2, .. })));
        assert!(matches!(MarketTree::new(&spec), Err(TreeError::Invalid(_))));
    }

    #[test]
    fn single_node_tree_is_valid() {
        let spec = TreeSpec::new(vec![vec![1.0]]);
        assert!(validate_tree(&spec, 1e-9).unwrap().ok);
        let t = MarketTree::new(&spec).unwrap();
        assert_eq!(t.leaves(), &[0]);
    }

    #[test]
    fn structural_errors() {
        let mut spec = TreeSpec::new(vec![vec![1.0]]);
        spec.nodes.push(NodeSpec { id: "x".into(), time: 2, parent: Some("root".into()), matrix: vec![vec![1.0]] });
        assert!(matches!(validate_tree(&spec, 1e-9), Err(TreeError::TimeGap { .. })));

        let cyclic = TreeSpec {
            depth: 2,
            nodes: vec![
                NodeSpec { id: "r".into(), time: 0, parent: None, matrix: vec![vec![1.0]] },
                NodeSpec { id: "a".into(), time: 1, parent: Some("b".into()), matrix: vec![vec![1.0]] },
                NodeSpec { id: "b".into(), time: 1, parent: Some("a".into()), matrix: vec![vec![1.0]] },
            ],
        };
        assert!(matches!(validate_tree(&cyclic, 1e-9), Err(TreeError::TimeGap { .. }) | Err(TreeError::Cycle(_))));

        let mut dup = TreeSpec::new(vec![vec![1.0]]);
        dup.child("root", "root", vec![vec![1.0]]);
        assert!(matches!(validate_tree(&dup, 1e-9), Err(TreeError::DuplicateId(_))));
    }

    #[test]
    fn short_leaves_and_devalued_roots_are_reported() {
        let mut spec = TreeSpec::new(vec![vec![1.0]]);
        spec.child("a", "root", vec![vec![1.0]]).child("b", "root", vec![vec![1.0]]).child("c", "a", vec![vec![1.0]]);
        let report = validate_tree(&spec, 1e-9).unwrap();
        assert_eq!(report.violations, vec![Violation::LeafDepth { node: "b".into(), time: 1, depth: 2 }]);

        let spec = TreeSpec::new(vec![vec![1.0, 0.0], vec![INF, 1.0]]);
        let report = validate_tree(&spec, 1e-9).unwrap();
        assert!(matches!(report.violations[0], Violation::RootDevalued { .. }));
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = example_12();
        let payoff = [XReal::Finite(2.0), XReal::zero()];
        let uniform = measure(&t, &[0.5, 0.5]);
        assert_eq!(conditional_expectation(&t, &uniform, 0, &payoff).unwrap(), XReal::Finite(1.0));
        let point = measure(&t, &[1.0, 0.0]);
        assert_eq!(conditional_expectation(&t, &point, 0, &payoff).unwrap(), XReal::Finite(2.0));
        let w1 = t.find("w1").unwrap();
        assert_eq!(conditional_expectation(&t, &uniform, w1, &payoff).unwrap(), XReal::Finite(2.0));
        let w2 = t.find("w2").unwrap();
        assert!(matches!(conditional_expectation(&t, &point, w2, &payoff), Err(TreeError::NullNode(_))));
        let infinite = [XReal::Finite(1.0), XReal::Infinite];
        assert_eq!(conditional_expectation(&t, &point, 0, &infinite).unwrap(), XReal::Finite(1.0));
        assert_eq!(conditional_expectation(&t, &uniform, 0, &infinite).unwrap(), XReal::Infinite);
    }

    #[test]
    fn supermartingale_examples() {
        let t = example_12();
        let uniform = measure(&t, &[0.5, 0.5]);
        let r = is_supermartingale(&t, &uniform, 0);
        assert!(r.ok);
        assert_eq!(r.strict.len(), 1);
        assert_eq!(r.strict[0].node, "root");
        assert!(!is_supermartingale(&t, &uniform, 1).ok);
        assert!(!is_supermartingale(&t, &uniform, 1).finite);

        let c = constant_tree();
        let q = measure(&c, &[0.3, 0.7]);
        for i in 0..2 {
            let r = is_supermartingale(&c, &q, i);
            assert!(r.ok && r.strict.is_empty());
        }
    }

    #[test]
    fn martingale_examples() {
        let t = example_12();
        let r = is_martingale(&t, &measure(&t, &[0.5, 0.5]), 0);
        assert!(!r.ok);
        assert_eq!(r.violations[0].expectation, XReal::Finite(0.5));
        assert!(is_martingale(&t, &measure(&t, &[1.0, 0.0]), 1).ok);
        let c = constant_tree();
        assert!(is_martingale(&c, &measure(&c, &[0.5, 0.5]), 0).ok);
    }

    #[test]
    fn nod_examples() {
        let t = example_12();
        assert!(check_nod(&t, &measure(&t, &[0.5, 0.5])).ok);
        // currency 2 devalues for sure under the point mass on w2
        let r = check_nod(&t, &measure(&t, &[0.0, 1.0]));
        assert_eq!(r.violations, vec![NodeCurrency { node: "root".into(), currency: 2 }]);
        let single = MarketTree::new(&TreeSpec::new(vec![vec![1.0]])).unwrap();
        assert!(check_nod(&single, &TreeMeasure::uniform(&single)).ok);
    }

    #[test]
    fn nsd_examples() {
        let t = example_12();
        let r = check_nsd(&t, &measure(&t, &[0.5, 0.5]));
        assert!(!r.ok);
        assert_eq!(r.jumps.len(), 1);
        assert_eq!((r.jumps[0].i, r.jumps[0].j), (2, 1));
        assert!(check_nsd(&t, &measure(&t, &[1.0, 0.0])).ok);
        let c = constant_tree();
        assert!(check_nsd(&c, &TreeMeasure::uniform(&c)).ok);
        assert_eq!(jump_to_zero_events(&t, &measure(&t, &[0.5, 0.5])).len(), 1);
    }

    #[test]
    fn support_condition_examples() {
        let t = example_12();
        let fam = MeasureFamily::new(&t, vec![measure(&t, &[0.5, 0.5]), measure(&t, &[1.0, 0.0])]).unwrap();
        assert!(check_support_condition(&t, &fam).ok);

        // q_1 null on w2, where currency 1 survives and q_2 charges it
        let fam = MeasureFamily::new(&t, vec![measure(&t, &[1.0, 0.0]), measure(&t, &[0.5, 0.5])]).unwrap();
        let r = check_support_condition(&t, &fam);
        assert!(!r.currencies[0].ok);
        assert_eq!(r.currencies[0].witnesses[0].leaf, "w2");

        let single = MarketTree::new(&TreeSpec::new(vec![vec![1.0]])).unwrap();
        let fam = MeasureFamily::new(&single, vec![TreeMeasure::uniform(&single)]).unwrap();
        assert!(check_support_condition(&single, &fam).ok);
    }

    #[test]
    fn measure_construction() {
        let t = example_12();
        assert!(matches!(TreeMeasure::new(&t, vec![0.5, 0.6]), Err(TreeError::WeightSum(_))));
        assert!(matches!(TreeMeasure::new(&t, vec![1.5, -0.5]), Err(TreeError::InvalidWeight { .. })));
        let q = TreeMeasure::from_leaf_weights(&t, [("w2", 1.0)]).unwrap();
        assert_eq!(q.weights(), &[0.0, 1.0]);
        assert!(matches!(TreeMeasure::from_leaf_weights(&t, [("root", 1.0)]), Err(TreeError::NotALeaf(_))));
        assert!(MeasureFamily::new(&t, vec![q]).is_err());
    }

    #[test]
    fn claims_carry_basket_payoffs() {
        let t = two_leaf(vec![vec![1.0, 2.0], vec![0.5, 1.0]]);
        let unit2 = ClaimVector::unit(&t, 1).unwrap();
        assert!((unit2.basket_payoff()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(unit2.basket_payoff()[1], 0.0);
        let basket = ClaimVector::basket(&t);
        assert_eq!(basket.basket_payoff(), &[1.0, 1.0]);
        let c1 = ClaimVector::in_currency(&t, 0, &[1.0, 0.0]).unwrap();
        assert_eq!(c1.value(0).0, vec![XReal::one(), XReal::Finite(0.5)]);
    }
}
