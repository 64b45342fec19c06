//! Valuation measures from families that are not numéraire-consistent:
//! the strongest-currency deflator, and a one-step obstruction search.
//!
//! The deflator follows the currently strongest currency `c` along each path
//! and multiplies `Z` by the one-step growth of `Z_c / S̄_c`, where `Z_c` is
//! the density of `Q_c` against `P = Σ_i Q_i / d`. A new strongest currency
//! is picked once `1/S̄_c` exceeds `d + ε`. If `c` devalues on a charged child,
//! the growth factors of all active currencies are averaged on that step
//! instead, which keeps `Z` positive.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::aggregation::{AggregationError, ValuationMeasure};
use crate::scalar::{scaled_residual, Scalar};
use crate::xreal::XReal;
use crate::tree::{
    check_nod, check_nsd, check_support_condition, is_martingale, process_martingale_residual, MarketTree,
    MeasureFamily, TreeMeasure,
};

/// The hypotheses of the deflator construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// Each `S_i` is a `Q_i`-martingale.
    #[serde(rename = "i")]
    Martingale,
    /// `Σ_i Q_i / d` has no obvious devaluations.
    #[serde(rename = "ii")]
    Nod,
    /// On the survival set of each currency `i`, `Q_i ~ Σ_k Q_k`.
    #[serde(rename = "iii")]
    Support,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::Martingale => "(i)",
            Condition::Nod => "(ii)",
            Condition::Support => "(iii)",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "condition {}", self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionFailure {
    pub condition: Condition,
    pub currency: Option<usize>,
    pub node: Option<String>,
    pub detail: String,
}

impl fmt::Display for ConditionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} fails", self.condition)?;
        if let Some(c) = self.currency {
            write!(f, " for currency {c}")?;
        }
        write!(f, " ({}", self.detail)?;
        if let Some(n) = &self.node {
            write!(f, " at node `{n}`")?;
        }
        f.write_str(")")
    }
}

/// Outcome of checking every hypothesis. The predictable-jump condition on
/// strong currencies holds automatically on a discrete grid and is only
/// reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflatorConditions {
    pub ok: bool,
    pub failures: Vec<ConditionFailure>,
    /// `P` has no sudden devaluations, so the averaging patch is never needed.
    pub nsd: bool,
    pub predictable_jumps: String,
}

pub fn check_deflator_conditions<T: Scalar>(tree: &MarketTree<T>, fam: &MeasureFamily<T>) -> DeflatorConditions {
    let mut failures = Vec::new();
    for i in 0..tree.d() {
        let r = is_martingale(tree, fam.get(i), i);
        if !r.ok {
            let (node, detail) = match r.violations.first() {
                Some(v) => (Some(v.node.clone()), format!("S_{} is not a Q_{}-martingale", i + 1, i + 1)),
                None => (None, format!("Q_{} charges the devaluation of currency {}", i + 1, i + 1)),
            };
            failures.push(ConditionFailure { condition: Condition::Martingale, currency: Some(i + 1), node, detail });
        }
    }
    let p = fam.average(tree);
    let nod = check_nod(tree, &p);
    if let Some(v) = nod.violations.first() {
        failures.push(ConditionFailure {
            condition: Condition::Nod,
            currency: Some(v.currency),
            node: Some(v.node.clone()),
            detail: format!("currency {} devalues almost surely", v.currency),
        });
    }
    for c in check_support_condition(tree, fam).currencies.iter().filter(|c| !c.ok) {
        let w = &c.witnesses[0];
        failures.push(ConditionFailure {
            condition: Condition::Support,
            currency: Some(c.currency),
            node: Some(w.leaf.clone()),
            detail: format!("Q_{} and Σ_k Q_k have different null sets on its survival set", c.currency),
        });
    }
    DeflatorConditions {
        ok: failures.is_empty(),
        failures,
        nsd: check_nsd(tree, &p).ok,
        predictable_jumps: format!("automatically satisfied (discrete grid, N = {})", tree.depth()),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeflatorError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("{}", join_failures(.0))]
    Preconditions(Vec<ConditionFailure>),
    #[error("deflator verification failed: {what} at node `{node}` (residual {residual:e})")]
    Verification { what: String, node: String, residual: f64 },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

fn join_failures(f: &[ConditionFailure]) -> String {
    f.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Why a segment of the schedule starts at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    Start,
    /// `1/S̄` of the previous currency exceeded `d + ε`.
    Threshold,
    /// The previous step was averaged because the currency devalued.
    Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub node: String,
    pub time: usize,
    pub currency: usize,
    pub reason: SwitchReason,
}

/// Segment starts of the deflator, and the steps that were averaged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingSchedule {
    pub epsilon: f64,
    pub threshold: f64,
    pub events: Vec<SwitchEvent>,
    /// Parent nodes whose outgoing step was replaced by the average.
    pub patched: Vec<String>,
    #[serde(skip)]
    current: Vec<Option<usize>>,
    #[serde(skip)]
    event_at: Vec<Option<usize>>,
}

impl SwitchingSchedule {
    /// 0-based currency followed at node `n` (`None` off the support of `P`).
    pub fn currency_at(&self, n: usize) -> Option<usize> {
        self.current[n]
    }

    /// `(node, 1-based currency)` segment starts along the path to `n`.
    pub fn path_segments<T: Scalar>(&self, tree: &MarketTree<T>, n: usize) -> Vec<(String, usize)> {
        tree.path(n)
            .into_iter()
            .filter_map(|m| self.event_at[m].map(|e| (self.events[e].node.clone(), self.events[e].currency)))
            .collect()
    }

    pub fn event_at(&self, n: usize) -> Option<&SwitchEvent> {
        self.event_at[n].map(|e| &self.events[e])
    }
}

/// Node-indexed deflator with its reference measure `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorProcess<T> {
    z: Vec<T>,
    reference: TreeMeasure<T>,
}

impl<T: Scalar> DeflatorProcess<T> {
    pub fn values(&self) -> &[T] {
        &self.z
    }

    pub fn at(&self, n: usize) -> T {
        self.z[n]
    }

    pub fn reference(&self) -> &TreeMeasure<T> {
        &self.reference
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deflator<T> {
    pub process: DeflatorProcess<T>,
    pub schedule: SwitchingSchedule,
    pub measure: ValuationMeasure<T>,
    pub conditions: DeflatorConditions,
    /// Largest one-step residual of `Z` and `Z·S̄_j` under `P`.
    pub max_residual: T,
}

/// Builds `Z` with `Z(root) = 1`, `Z > 0` on the support of `P`, and `Z`,
/// `Z·S̄_j` both `P`-martingales; the valuation measure is `P·Z(T)`.
pub fn build_deflator<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    epsilon: T,
) -> Result<Deflator<T>, DeflatorError> {
    if !(epsilon.is_finite() && epsilon > T::zero()) {
        return Err(DeflatorError::InvalidEpsilon(epsilon.as_f64()));
    }
    let conditions = check_deflator_conditions(tree, fam);
    if !conditions.ok {
        return Err(DeflatorError::Preconditions(conditions.failures));
    }
    let d = tree.d();
    let p = fam.average(tree);
    let threshold = T::from_usize(d).expect("d fits") + epsilon;

    // G_j(n) = Z_j(n) Σ_k S_jk(n), zero off the support of Q_j.
    let g = |j: usize, n: usize| -> T {
        let zj = fam.get(j).prob(n) / p.prob(n);
        if !fam.get(j).charges(tree, n) {
            return T::zero();
        }
        zj * tree.matrix(n).row_sum(j).finite().expect("charged rows are finite")
    };

    let mut z = vec![T::one(); tree.len()];
    let mut current: Vec<Option<usize>> = vec![None; tree.len()];
    let mut events = Vec::new();
    let mut event_at = vec![None; tree.len()];
    let mut patched = Vec::new();
    let mut push = |n: usize, c: usize, reason: SwitchReason, events: &mut Vec<SwitchEvent>| {
        event_at[n] = Some(events.len());
        events.push(SwitchEvent { node: tree.id(n).to_string(), time: tree.node(n).time, currency: c + 1, reason });
    };

    let root = tree.root();
    let c0 = tree.matrix(root).strongest_currency_with(tree.tolerances().consistency);
    current[root] = Some(c0);
    push(root, c0, SwitchReason::Start, &mut events);

    // Preorder visits parents before children.
    for n in 0..tree.len() {
        if tree.is_leaf(n) {
            continue;
        }
        let kids = tree.children(n);
        let Some(c) = current[n].filter(|_| p.charges(tree, n)) else {
            for &m in kids {
                z[m] = z[n];
            }
            continue;
        };
        let gc = g(c, n);
        if !(gc > T::zero()) {
            return Err(DeflatorError::Verification {
                what: format!("followed currency {} has zero weight", c + 1),
                node: tree.id(n).to_string(),
                residual: f64::INFINITY,
            });
        }
        let mut ratio: Vec<T> = kids.iter().map(|&m| if p.charges(tree, m) { g(c, m) / gc } else { T::one() }).collect();
        let patch = kids.iter().zip(&ratio).any(|(&m, r)| p.charges(tree, m) && r.is_zero());
        if patch {
            let active: Vec<(usize, T)> = tree.matrix(n).active_set().into_iter().map(|j| (j, g(j, n))).collect();
            let k = T::from_usize(active.len()).expect("count fits");
            for (r, &m) in ratio.iter_mut().zip(kids) {
                if p.charges(tree, m) {
                    *r = active.iter().map(|&(j, gj)| g(j, m) / gj).sum::<T>() / k;
                }
            }
            patched.push(tree.id(n).to_string());
        }
        for (&m, r) in kids.iter().zip(ratio) {
            z[m] = z[n] * r;
            if !p.charges(tree, m) {
                continue;
            }
            let reason = if patch {
                Some(SwitchReason::Patch)
            } else if tree.matrix(m).row_sum(c) > XReal::Finite(threshold) {
                Some(SwitchReason::Threshold)
            } else {
                None
            };
            match reason {
                Some(reason) => {
                    let s = tree.matrix(m).strongest_currency_with(tree.tolerances().consistency);
                    current[m] = Some(s);
                    push(m, s, reason, &mut events);
                }
                None => current[m] = Some(c),
            }
        }
    }

    let max_residual = verify(tree, &p, &z)?;
    let weights = (0..tree.n_leaves()).map(|l| p.weight(l) * z[tree.leaves()[l]]).collect();
    let measure = ValuationMeasure::new(tree, TreeMeasure::normalized(tree, weights).map_err(AggregationError::from)?)?;
    Ok(Deflator {
        process: DeflatorProcess { z, reference: p },
        schedule: SwitchingSchedule {
            epsilon: epsilon.as_f64(),
            threshold: threshold.as_f64(),
            events,
            patched,
            current,
            event_at,
        },
        measure,
        conditions,
        max_residual,
    })
}

fn verify<T: Scalar>(tree: &MarketTree<T>, p: &TreeMeasure<T>, z: &[T]) -> Result<T, DeflatorError> {
    let tol = tree.tolerances().martingale;
    if let Some(n) = (0..tree.len()).find(|&n| p.charges(tree, n) && !(z[n] > T::zero())) {
        return Err(DeflatorError::Verification {
            what: "Z is not strictly positive".into(),
            node: tree.id(n).to_string(),
            residual: z[n].as_f64(),
        });
    }
    let root_gap = scaled_residual(z[tree.root()], T::one());
    let mut worst = root_gap;
    let mut check = |what: String, values: &[T]| -> Result<(), DeflatorError> {
        let (r, node) = process_martingale_residual(tree, p, values);
        if r > tol {
            return Err(DeflatorError::Verification {
                what,
                node: tree.id(node.expect("node")).to_string(),
                residual: r.as_f64(),
            });
        }
        worst = worst.max(r);
        Ok(())
    };
    check("Z is not a P-martingale".into(), z)?;
    for j in 0..tree.d() {
        let zs: Vec<T> = (0..tree.len()).map(|n| z[n] * tree.basket(n).get(j)).collect();
        check(format!("Z·S̄_{} is not a P-martingale", j + 1), &zs)?;
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// No charged child below the parent, at least one above.
    Up,
    /// No charged child above the parent, at least one below.
    Down,
}

/// A step on which some basket price moves one way only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Obstruction {
    pub node: String,
    pub currency: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstructionReport {
    /// Some step rules out every valuation measure equivalent to `P`.
    pub found: bool,
    /// With two currencies, `found == false` also proves that one exists.
    pub exact: bool,
    pub witnesses: Vec<Obstruction>,
}

/// Looks for a charged node where some `S̄_k` cannot be a martingale under
/// any measure with the same null sets as `p`: all charged children on one
/// side of the parent value with at least one strictly so.
///
/// By aggregation, a hit also rules out any numéraire-consistent family
/// whose sum is equivalent to `p`. For `d = 2` the basket prices move along
/// a line and the test is exact; for larger `d` it is sufficient only.
pub fn find_obstructions<T: Scalar>(tree: &MarketTree<T>, p: &TreeMeasure<T>) -> ObstructionReport {
    let tol = tree.tolerances().martingale;
    let mut witnesses = Vec::new();
    for n in tree.internal_nodes() {
        if !p.charges(tree, n) {
            continue;
        }
        for k in 0..tree.d() {
            let v = tree.basket(n).get(k);
            let (mut above, mut below) = (false, false);
            for &m in tree.children(n) {
                if !p.charges(tree, m) {
                    continue;
                }
                let x = tree.basket(m).get(k);
                above |= x > v + tol;
                below |= x < v - tol;
            }
            let direction = match (above, below) {
                (true, false) => Direction::Up,
                (false, true) => Direction::Down,
                _ => continue,
            };
            witnesses.push(Obstruction { node: tree.id(n).to_string(), currency: k + 1, direction });
        }
    }
    ObstructionReport { found: !witnesses.is_empty(), exact: tree.d() <= 2, witnesses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::aggregate_consistent;
    use crate::tree::tests::two_leaf;
    use crate::tree::TreeSpec;

    fn fam(t: &MarketTree<f64>, q: &[&[f64]]) -> MeasureFamily<f64> {
        MeasureFamily::new(t, q.iter().map(|w| TreeMeasure::new(t, w.to_vec()).unwrap()).collect()).unwrap()
    }

    #[test]
    fn lost_martingale_is_rejected_on_condition_i() {
        let t = two_leaf(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = fam(&t, &[&[0.5, 0.5], &[1.0, 0.0]]);
        let err = build_deflator(&t, &f, 1.0).unwrap_err();
        let DeflatorError::Preconditions(failures) = &err else { panic!("{err}") };
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].condition, Condition::Martingale);
        assert!(err.to_string().starts_with("condition (i) fails for currency 1"), "{err}");
        assert!(find_obstructions(&t, &f.average(&t)).found);
    }

    #[test]
    fn consistent_two_leaf_family_fails_condition_i_for_currency_2() {
        // S_21 drops from 1 to 1/2 on the only Q_2-charged leaf.
        let t = two_leaf(vec![vec![1.0, 2.0], vec![0.5, 1.0]]);
        let f = fam(&t, &[&[0.5, 0.5], &[1.0, 0.0]]);
        let cond = check_deflator_conditions(&t, &f);
        assert_eq!(cond.failures.len(), 1);
        assert_eq!((cond.failures[0].condition, cond.failures[0].currency), (Condition::Martingale, Some(2)));
    }

    fn binomial() -> (MarketTree<f64>, MeasureFamily<f64>) {
        let up = crate::ExchangeMatrix::from_price_vector(&[1.0, 2.0]).unwrap().to_grid();
        let down = crate::ExchangeMatrix::from_price_vector(&[1.0, 0.5]).unwrap().to_grid();
        let mut spec = TreeSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        spec.child("u", "root", up).child("d", "root", down);
        let t = MarketTree::new(&spec).unwrap();
        let f = fam(&t, &[&[1.0 / 3.0, 2.0 / 3.0], &[2.0 / 3.0, 1.0 / 3.0]]);
        (t, f)
    }

    #[test]
    fn deflator_on_a_martingale_family() {
        let (t, f) = binomial();
        let out = build_deflator(&t, &f, 1.0).unwrap();
        assert!(out.max_residual < 1e-12);
        assert!(out.process.values().iter().all(|&z| z > 0.0));
        assert_eq!(out.schedule.events[0].reason, SwitchReason::Start);
        assert_eq!(out.schedule.events[0].currency, 1);
        assert!(out.schedule.patched.is_empty());
        assert!(out.conditions.nsd);
        // one-step completeness: the valuation measure is unique
        let agg = aggregate_consistent(&t, &f).unwrap();
        assert!(out.measure.measure().max_abs_diff(agg.measure()) < 1e-12);
    }

    #[test]
    fn sudden_devaluation_of_the_followed_currency_is_patched() {
        // Currency 1 is strongest at the root and devalues on leaf `x`,
        // which only Q_2 charges.
        let ratio = |x: &[f64]| crate::ExchangeMatrix::from_price_vector(x).unwrap().to_grid();
        let inf = f64::INFINITY;
        let mut spec = TreeSpec::new(ratio(&[2.0, 1.0]));
        spec.child("x", "root", vec![vec![1.0, inf], vec![0.0, 1.0]])
            .child("y1", "root", ratio(&[3.0, 1.0]))
            .child("y2", "root", ratio(&[1.0, 1.0]));
        let t = MarketTree::new(&spec).unwrap();
        let f = fam(&t, &[&[0.0, 0.75, 0.25], &[0.2, 0.6, 0.2]]);
        let out = build_deflator(&t, &f, 1.0).unwrap();
        assert_eq!(out.schedule.patched, vec!["root".to_string()]);
        assert!(out.process.values().iter().all(|&z| z > 0.0));
        assert!(!out.conditions.nsd);
        let y1 = t.find("y1").unwrap();
        assert_eq!(out.schedule.event_at(y1).map(|e| e.reason), Some(SwitchReason::Patch));
        assert!(out.measure.measure().equivalent(&t, &f.average(&t)));
    }

    #[test]
    fn epsilon_must_be_positive() {
        let t = two_leaf(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = fam(&t, &[&[0.5, 0.5], &[1.0, 0.0]]);
        assert!(matches!(build_deflator(&t, &f, 0.0), Err(DeflatorError::InvalidEpsilon(_))));
    }

    #[test]
    fn no_obstruction_when_prices_straddle() {
        let (t, _) = binomial();
        let r = find_obstructions(&t, &TreeMeasure::uniform(&t));
        assert!(!r.found && r.exact);
        let r = find_obstructions(&t, &TreeMeasure::point_mass(&t, 0));
        assert!(r.found);
    }
}
