//! Numéraire-consistent families, the basket valuation measure, and the
//! valuation operator built on them.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::{scaled_residual, Scalar};
use crate::tree::{
    expect, is_martingale, is_rate_martingale, process_martingale_residual, ClaimVector, MarketTree,
    MeasureFamily, TreeError, TreeMeasure,
};
use crate::xreal::XReal;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("measure family is not numéraire-consistent ({} violations)", .0.violations.len())]
    Inconsistent(ConsistencyReport),
    #[error("basket prices are not a martingale: currency {currency} at node `{node}` (residual {residual:e})")]
    NotValuationMeasure { currency: usize, node: String, residual: f64 },
    #[error("S_{currency} is not a Q_{currency}-martingale{}", witness_suffix(.node))]
    NotMartingale { currency: usize, node: Option<String> },
    #[error("claim is infinite in currency {currency} at charged leaf `{leaf}`")]
    InfiniteClaim { currency: usize, leaf: String },
    #[error("claim pays at leaf `{leaf}` where currency {currency} has devalued")]
    PaysOnDevaluation { currency: usize, leaf: String },
    #[error("currency {currency} is not active at node `{node}`")]
    InactiveCurrency { currency: usize, node: String },
    #[error("currency 1 devalues at charged leaf `{leaf}`")]
    BaseCurrencyDevalues { leaf: String },
}

fn witness_suffix(node: &Option<String>) -> String {
    match node {
        Some(n) => format!(" (witness node `{n}`)"),
        None => " (positive mass on its devaluation)".to_string(),
    }
}

/// `E^{Q_i}[S_ij(t) 1_A]` against `S_ij(0) Q_j(A ∩ {S_ji(t) > 0})` on one atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyViolation {
    pub i: usize,
    pub j: usize,
    pub time: usize,
    pub node: String,
    pub lhs: XReal<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub ok: bool,
    pub violations: Vec<ConsistencyViolation>,
    pub max_residual: f64,
}

/// Checks the change-of-numéraire identity on every atom (node) of every
/// time, for every ordered currency pair.
pub fn check_consistency<T: Scalar>(tree: &MarketTree<T>, fam: &MeasureFamily<T>) -> ConsistencyReport {
    let tol = tree.tolerances().consistency;
    let root = tree.matrix(tree.root());
    let mut violations = Vec::new();
    let mut max_residual = 0.0_f64;
    for n in 0..tree.len() {
        let m = tree.matrix(n);
        for i in 0..tree.d() {
            let qi = fam.get(i);
            for j in 0..tree.d() {
                if i == j {
                    continue;
                }
                let lhs = if qi.charges(tree, n) {
                    m.get(i, j).mul(XReal::Finite(qi.prob(n))).expect("positive times finite")
                } else {
                    XReal::zero()
                };
                let qj = fam.get(j);
                let rhs = if m.get(j, i).is_positive() && qj.charges(tree, n) {
                    root.get(i, j).finite().expect("root is fully active") * qj.prob(n)
                } else {
                    T::zero()
                };
                let residual = match lhs {
                    XReal::Finite(l) => scaled_residual(l, rhs).as_f64(),
                    XReal::Infinite => f64::INFINITY,
                };
                max_residual = max_residual.max(residual);
                if residual > tol.as_f64() {
                    violations.push(ConsistencyViolation {
                        i: i + 1,
                        j: j + 1,
                        time: tree.node(n).time,
                        node: tree.id(n).to_string(),
                        lhs: lhs.to_f64(),
                        rhs: rhs.as_f64(),
                    });
                }
            }
        }
    }
    ConsistencyReport { ok: violations.is_empty(), violations, max_residual }
}

fn require_consistent<T: Scalar>(tree: &MarketTree<T>, fam: &MeasureFamily<T>) -> Result<(), AggregationError> {
    let report = check_consistency(tree, fam);
    if report.ok {
        Ok(())
    } else {
        Err(AggregationError::Inconsistent(report))
    }
}

/// A measure under which every basket price `S̄_j` is a martingale.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationMeasure<T> {
    measure: TreeMeasure<T>,
    max_residual: T,
}

impl<T: Scalar> ValuationMeasure<T> {
    pub fn new(tree: &MarketTree<T>, measure: TreeMeasure<T>) -> Result<Self, AggregationError> {
        let tol = tree.tolerances().martingale;
        let mut max_residual = T::zero();
        for j in 0..tree.d() {
            let values: Vec<T> = (0..tree.len()).map(|n| tree.basket(n).get(j)).collect();
            let (residual, node) = process_martingale_residual(tree, &measure, &values);
            if residual > tol {
                return Err(AggregationError::NotValuationMeasure {
                    currency: j + 1,
                    node: tree.id(node.expect("residual comes from a node")).to_string(),
                    residual: residual.as_f64(),
                });
            }
            max_residual = max_residual.max(residual);
        }
        Ok(Self { measure, max_residual })
    }

    pub fn measure(&self) -> &TreeMeasure<T> {
        &self.measure
    }

    pub fn into_measure(self) -> TreeMeasure<T> {
        self.measure
    }

    pub fn weights(&self) -> &[T] {
        self.measure.weights()
    }

    /// Largest one-step martingale residual of `S̄` found at construction.
    pub fn max_residual(&self) -> T {
        self.max_residual
    }
}

/// `Q̄ = Σ_i S̄_i(0) Q_i` for a numéraire-consistent family.
pub fn aggregate_consistent<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
) -> Result<ValuationMeasure<T>, AggregationError> {
    require_consistent(tree, fam)?;
    let b0 = tree.basket(tree.root());
    let parts: Vec<_> = fam.measures().iter().enumerate().map(|(i, q)| (b0.get(i), q)).collect();
    ValuationMeasure::new(tree, TreeMeasure::mixture(tree, &parts))
}

/// `dQ_i/dQ̄ = S̄_i(T)/S̄_i(0)`.
///
/// Each `Q_i` is renormalized to absorb the rounding slack left by the
/// martingale tolerance of `Q̄`.
pub fn disaggregate<T: Scalar>(
    tree: &MarketTree<T>,
    qbar: &ValuationMeasure<T>,
) -> Result<MeasureFamily<T>, AggregationError> {
    let b0 = tree.basket(tree.root());
    let measures = (0..tree.d())
        .map(|i| {
            let w = (0..tree.n_leaves())
                .map(|l| qbar.measure().weight(l) * tree.basket(tree.leaves()[l]).get(i) / b0.get(i))
                .collect();
            TreeMeasure::normalized(tree, w)
        })
        .collect::<Result<_, _>>()?;
    Ok(MeasureFamily::new(tree, measures)?)
}

fn leaf_id<T: Scalar>(tree: &MarketTree<T>, l: usize) -> String {
    tree.id(tree.leaves()[l]).to_string()
}

/// `E^{Q_i}_r[f]` over charged leaves, failing on an infinite charged value.
fn expect_x<T: Scalar>(
    tree: &MarketTree<T>,
    q: &TreeMeasure<T>,
    r: usize,
    currency: usize,
    f: impl Fn(usize) -> XReal<T>,
) -> Result<T, AggregationError> {
    let mut finite = vec![T::zero(); tree.n_leaves()];
    for l in tree.leaf_range(r) {
        if !q.charges_leaf(tree, l) {
            continue;
        }
        match f(l) {
            XReal::Finite(x) => finite[l] = x,
            XReal::Infinite => {
                return Err(AggregationError::InfiniteClaim { currency: currency + 1, leaf: leaf_id(tree, l) })
            }
        }
    }
    Ok(expect(tree, q, r, &finite)?)
}

/// `Σ_{j∈𝔄(r)} S̄_j(r) E^{Q_j}_r[C_j / |𝔄(T)|]`, the basket value of the
/// claim at node `r`.
pub fn value_claim<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    claim: &ClaimVector<T>,
    r: usize,
) -> Result<T, AggregationError> {
    require_consistent(tree, fam)?;
    let b = tree.basket(r);
    let mut total = T::zero();
    for j in tree.matrix(r).active_set() {
        let e = expect_x(tree, fam.get(j), r, j, |l| {
            let n_active = T::from_usize(tree.leaf_matrix(l).active_set().len()).expect("count fits");
            match claim.value(l).get(j) {
                XReal::Finite(x) => XReal::Finite(x / n_active),
                XReal::Infinite => XReal::Infinite,
            }
        })?;
        total = total + b.get(j) * e;
    }
    Ok(total)
}

/// `S̄_i(r) E^{Q_i}_r[C_i]` for a claim that vanishes wherever currency `i`
/// has devalued (on leaves charged by the family).
pub fn value_claim_survival<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    claim: &ClaimVector<T>,
    r: usize,
    i: usize,
) -> Result<T, AggregationError> {
    require_consistent(tree, fam)?;
    let total = fam.average(tree);
    for l in 0..tree.n_leaves() {
        let pays = claim.basket_payoff()[l].abs() > tree.tolerances().identity;
        if total.charges_leaf(tree, l) && !tree.leaf_matrix(l).is_active(i) && pays {
            return Err(AggregationError::PaysOnDevaluation { currency: i + 1, leaf: leaf_id(tree, l) });
        }
    }
    let b = tree.basket(r).get(i);
    if b.is_zero() {
        return Ok(T::zero());
    }
    let e = expect_x(tree, fam.get(i), r, i, |l| claim.value(l).get(i))?;
    Ok(b * e)
}

/// `F_i(r) = S_{i,1}(r) E^{Q_1}_r[C_1 1{S_{1,i}(T) = 0}]`, in units of currency `i`.
///
/// Zero when currency 1 is already worthless in currency `i` at `r`.
pub fn correction_term<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    claim: &ClaimVector<T>,
    i: usize,
    r: usize,
) -> Result<T, AggregationError> {
    let m = tree.matrix(r);
    if !m.is_active(i) {
        return Err(AggregationError::InactiveCurrency { currency: i + 1, node: tree.id(r).to_string() });
    }
    let s_i1 = m.get(i, 0).finite().expect("active row is finite");
    if s_i1.is_zero() {
        return Ok(T::zero());
    }
    let e = expect_x(tree, fam.get(0), r, 0, |l| {
        if tree.leaf_matrix(l).get(0, i).is_zero() {
            claim.value(l).get(0)
        } else {
            XReal::zero()
        }
    })?;
    Ok(s_i1 * e)
}

/// Worst violation of "`F_i` is a `Q_i`-potential" over the nodes charged by `Q_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialReport {
    pub currency: usize,
    /// Largest `E^{Q_i}[F_i(m) | n] − F_i(n)` over one-step transitions, scaled.
    pub max_excess: f64,
    /// Largest `|F_i(T)|` on leaves charged by `Q_i`.
    pub terminal_max: f64,
    pub ok: bool,
}

/// Checks that `F_i` is a one-step `Q_i`-supermartingale (hence a supermartingale along
/// nested nodes) that vanishes at maturity.
pub fn check_correction_potential<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    claim: &ClaimVector<T>,
    i: usize,
) -> Result<PotentialReport, AggregationError> {
    let qi = fam.get(i);
    let mut f = vec![None; tree.len()];
    for n in 0..tree.len() {
        if qi.charges(tree, n) {
            f[n] = Some(correction_term(tree, fam, claim, i, n)?);
        }
    }
    let mut max_excess = 0.0_f64;
    let mut terminal_max = 0.0_f64;
    for n in 0..tree.len() {
        let Some(fn_) = f[n] else { continue };
        if tree.is_leaf(n) {
            terminal_max = terminal_max.max(fn_.abs().as_f64());
            continue;
        }
        let pn = qi.prob(n);
        let mut e = T::zero();
        for &m in tree.children(n) {
            if let Some(fm) = f[m] {
                e = e + qi.prob(m) / pn * fm;
            }
        }
        let excess = (e - fn_) / T::one().max(fn_.abs()).max(e.abs());
        max_excess = max_excess.max(excess.as_f64());
    }
    let tol = tree.tolerances().martingale.as_f64();
    Ok(PotentialReport {
        currency: i + 1,
        max_excess,
        terminal_max,
        ok: max_excess <= tol && terminal_max <= tol,
    })
}

/// Value in currency `i` split into the classical `Q_i` price and `F_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionDecomposition {
    pub currency: usize,
    pub node: String,
    pub value: f64,
    pub classical: f64,
    pub correction: f64,
    pub residual: f64,
    pub ok: bool,
}

/// Checks `value_i(r) = E^{Q_i}_r[C_i] + F_i(r)`, which requires currency 1
/// to survive on every leaf below `r` charged by the family.
pub fn correction_decomposition<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    claim: &ClaimVector<T>,
    i: usize,
    r: usize,
) -> Result<CorrectionDecomposition, AggregationError> {
    let total = fam.average(tree);
    if let Some(l) = tree
        .leaf_range(r)
        .find(|&l| total.charges_leaf(tree, l) && !tree.leaf_matrix(l).is_active(0))
    {
        return Err(AggregationError::BaseCurrencyDevalues { leaf: leaf_id(tree, l) });
    }
    let correction = correction_term(tree, fam, claim, i, r)?;
    let value = value_claim(tree, fam, claim, r)? / tree.basket(r).get(i);
    let classical = expect_x(tree, fam.get(i), r, i, |l| claim.value(l).get(i))?;
    let residual = scaled_residual(value, classical + correction);
    Ok(CorrectionDecomposition {
        currency: i + 1,
        node: tree.id(r).to_string(),
        value: value.as_f64(),
        classical: classical.as_f64(),
        correction: correction.as_f64(),
        residual: residual.as_f64(),
        ok: residual <= tree.tolerances().consistency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DevaluationIdentity {
    pub currency: usize,
    /// `1 - E^{Q_i}[Σ_j S_ij(T)] / Σ_k S_ik(0)`.
    pub lhs: f64,
    /// `Σ_j w_ij Q_j(S_ji(T) = 0)`.
    pub rhs: f64,
    pub residual: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DevaluationReport {
    pub ok: bool,
    pub currencies: Vec<DevaluationIdentity>,
}

/// The normalized expected loss of the basket in currency `i` equals the
/// weighted devaluation probabilities of `i` under the other measures.
pub fn devaluation_identity_report<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
) -> Result<DevaluationReport, AggregationError> {
    require_consistent(tree, fam)?;
    let root = tree.matrix(tree.root());
    let currencies: Vec<DevaluationIdentity> = (0..tree.d())
        .map(|i| {
            let sum0 = root.row_sum(i).finite().expect("root is fully active");
            let qi = fam.get(i);
            let e: T = (0..tree.n_leaves())
                .filter(|&l| qi.charges_leaf(tree, l))
                .map(|l| qi.weight(l) * tree.leaf_matrix(l).row_sum(i).finite().unwrap_or_else(T::infinity))
                .sum();
            let lhs = T::one() - e / sum0;
            let rhs: T = (0..tree.d())
                .map(|j| {
                    let w = root.get(i, j).finite().expect("finite") / sum0;
                    let qj = fam.get(j);
                    let mass: T = (0..tree.n_leaves())
                        .filter(|&l| qj.charges_leaf(tree, l) && tree.leaf_matrix(l).get(j, i).is_zero())
                        .map(|l| qj.weight(l))
                        .sum();
                    w * mass
                })
                .sum();
            let residual = (lhs - rhs).abs();
            DevaluationIdentity {
                currency: i + 1,
                lhs: lhs.as_f64(),
                rhs: rhs.as_f64(),
                residual: residual.as_f64(),
                ok: residual <= tree.tolerances().identity,
            }
        })
        .collect();
    Ok(DevaluationReport { ok: currencies.iter().all(|c| c.ok), currencies })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalEquivalence {
    pub i: usize,
    pub j: usize,
    /// `S_ij` is a `Q_i`-martingale.
    pub martingale: bool,
    /// `Q_j(S_ji(T) > 0) = 1`.
    pub survival: bool,
    /// `Q_j(S_ji(T) = 0)`.
    pub devaluation_mass: f64,
    pub agree: bool,
    pub family_consistent: bool,
}

/// Both sides of "`S_ij` is a `Q_i`-martingale iff currency `i` survives
/// against `j` almost surely under `Q_j`". The equivalence is guaranteed only
/// for consistent families; the report records whether the family is one.
pub fn martingale_iff_survival<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
    i: usize,
    j: usize,
) -> SurvivalEquivalence {
    let martingale = is_rate_martingale(tree, fam.get(i), i, j).ok;
    let qj = fam.get(j);
    let mass: T = (0..tree.n_leaves())
        .filter(|&l| qj.charges_leaf(tree, l) && tree.leaf_matrix(l).get(j, i).is_zero())
        .map(|l| qj.weight(l))
        .sum();
    let survival = mass.is_zero();
    SurvivalEquivalence {
        i: i + 1,
        j: j + 1,
        martingale,
        survival,
        devaluation_mass: mass.as_f64(),
        agree: martingale == survival,
        family_consistent: check_consistency(tree, fam).ok,
    }
}

/// Valuation measure from a family of per-currency martingale measures:
/// `dQ̃_i/dQ_i = Σ_j S_ij(T) / Σ_j S_ij(0)` and `Q̄ = Σ_i Q̃_i / d`.
pub fn aggregate_martingale<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
) -> Result<ValuationMeasure<T>, AggregationError> {
    for i in 0..tree.d() {
        let report = is_martingale(tree, fam.get(i), i);
        if !report.ok {
            return Err(AggregationError::NotMartingale {
                currency: i + 1,
                node: report.violations.first().map(|v| v.node.clone()),
            });
        }
    }
    let q = change_to_basket_units(tree, fam)?;
    ValuationMeasure::new(tree, fam_average(tree, &q))
}

/// The measures `Q̃_i` of [`aggregate_martingale`], one per currency.
fn change_to_basket_units<T: Scalar>(
    tree: &MarketTree<T>,
    fam: &MeasureFamily<T>,
) -> Result<Vec<TreeMeasure<T>>, AggregationError> {
    let root = tree.matrix(tree.root());
    (0..tree.d())
        .map(|i| {
            let sum0 = root.row_sum(i).finite().expect("root is fully active");
            let qi = fam.get(i);
            let w = (0..tree.n_leaves())
                .map(|l| {
                    if qi.charges_leaf(tree, l) {
                        let s = tree.leaf_matrix(l).row_sum(i).finite().expect("martingale rows are finite");
                        qi.weight(l) * s / sum0
                    } else {
                        T::zero()
                    }
                })
                .collect();
            TreeMeasure::normalized(tree, w).map_err(AggregationError::from)
        })
        .collect()
}

fn fam_average<T: Scalar>(tree: &MarketTree<T>, q: &[TreeMeasure<T>]) -> TreeMeasure<T> {
    let w = T::one() / T::from_usize(q.len()).expect("d fits");
    let parts: Vec<_> = q.iter().map(|m| (w, m)).collect();
    TreeMeasure::mixture(tree, &parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::ExchangeMatrix;
    use crate::tree::tests::two_leaf;
    use crate::tree::TreeSpec;

    fn fam(t: &MarketTree<f64>, q: &[&[f64]]) -> MeasureFamily<f64> {
        MeasureFamily::new(t, q.iter().map(|w| TreeMeasure::new(t, w.to_vec()).unwrap()).collect()).unwrap()
    }

    fn consistent() -> (MarketTree<f64>, MeasureFamily<f64>) {
        let t = two_leaf(vec![vec![1.0, 2.0], vec![0.5, 1.0]]);
        let f = fam(&t, &[&[0.5, 0.5], &[1.0, 0.0]]);
        (t, f)
    }

    fn single() -> (MarketTree<f64>, MeasureFamily<f64>) {
        let t = MarketTree::new(&TreeSpec::new(vec![vec![1.0]])).unwrap();
        let f = fam(&t, &[&[1.0]]);
        (t, f)
    }

    fn constant() -> MarketTree<f64> {
        let m = ExchangeMatrix::from_price_vector(&[1.0, 2.0]).unwrap().to_grid();
        let mut spec = TreeSpec::new(m.clone());
        spec.child("a", "root", m.clone()).child("b", "root", m);
        MarketTree::new(&spec).unwrap()
    }

    #[test]
    fn example_12_family_is_inconsistent() {
        let t = two_leaf(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = fam(&t, &[&[0.5, 0.5], &[1.0, 0.0]]);
        let r = check_consistency(&t, &f);
        assert!(!r.ok);
        assert!(!r.violations.iter().any(|v| v.node == "root"));
        // A = Ω at t = 1 is the union of the two leaves: 1/2 + 0 against 1 + 0
        let w1 = r.violations.iter().find(|v| v.node == "w1" && v.i == 1 && v.j == 2).unwrap();
        assert_eq!((w1.lhs, w1.rhs), (XReal::Finite(0.5), 1.0));
        assert!(matches!(aggregate_consistent(&t, &f), Err(AggregationError::Inconsistent(_))));
    }

    #[test]
    fn two_leaf_family_is_consistent() {
        let (t, f) = consistent();
        assert!(check_consistency(&t, &f).ok);
        let (s, sf) = single();
        assert!(check_consistency(&s, &sf).ok);
    }

    #[test]
    fn aggregate_and_disaggregate_two_leaf() {
        let (t, f) = consistent();
        let qbar = aggregate_consistent(&t, &f).unwrap();
        assert!((qbar.weights()[0] - 0.75).abs() < 1e-15 && (qbar.weights()[1] - 0.25).abs() < 1e-15);
        let e: f64 = (0..2).map(|l| qbar.weights()[l] * t.leaf_matrix(l).basket_prices().get(0)).sum();
        assert!((e - 0.5).abs() < 1e-15);
        let back = disaggregate(&t, &qbar).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-15);
        let again = aggregate_consistent(&t, &back).unwrap();
        assert!(again.measure().max_abs_diff(qbar.measure()) < 1e-15);
        assert!(qbar.measure().equivalent(&t, &f.average(&t)));
    }

    #[test]
    fn single_currency_aggregation_is_identity() {
        let (t, f) = single();
        assert_eq!(aggregate_consistent(&t, &f).unwrap().weights(), &[1.0]);
        assert_eq!(aggregate_martingale(&t, &f).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn disaggregate_on_constant_tree_copies_the_measure() {
        let t = constant();
        let q = TreeMeasure::uniform(&t);
        let qbar = ValuationMeasure::new(&t, q.clone()).unwrap();
        let f = disaggregate(&t, &qbar).unwrap();
        for i in 0..2 {
            assert!(f.get(i).max_abs_diff(&q) < 1e-15);
        }
    }

    #[test]
    fn valuation_measure_rejects_non_martingales() {
        let (t, _) = consistent();
        let q = TreeMeasure::new(&t, vec![0.5, 0.5]).unwrap();
        assert!(matches!(ValuationMeasure::new(&t, q), Err(AggregationError::NotValuationMeasure { .. })));
    }

    #[test]
    fn value_claim_examples() {
        let (t, f) = consistent();
        let b0 = t.basket(0);
        for i in 0..2 {
            let v = value_claim(&t, &f, &ClaimVector::unit(&t, i).unwrap(), 0).unwrap();
            assert!((v - b0.get(i)).abs() < 1e-15);
        }
        let v = value_claim(&t, &f, &ClaimVector::basket(&t), 0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        // one unit of currency 1 on w1 only: basket payoff 1/3 there
        let c = ClaimVector::in_currency(&t, 0, &[1.0, 0.0]).unwrap();
        let v = value_claim(&t, &f, &c, 0).unwrap();
        let qbar = aggregate_consistent(&t, &f).unwrap();
        let direct: f64 = (0..2).map(|l| qbar.weights()[l] * c.basket_payoff()[l]).sum();
        assert!((v - 0.25).abs() < 1e-15 && (v - direct).abs() < 1e-15);
    }

    #[test]
    fn value_claim_survival_examples() {
        let (t, f) = consistent();
        let survives1 = ClaimVector::in_currency(&t, 0, &[1.0, 1.0]).unwrap();
        let v = value_claim_survival(&t, &f, &survives1, 0, 0).unwrap();
        assert!((v - t.basket(0).get(0)).abs() < 1e-15);
        let zero = ClaimVector::from_basket_payoff(&t, &[0.0, 0.0]).unwrap();
        assert_eq!(value_claim_survival(&t, &f, &zero, 0, 1).unwrap(), 0.0);

        // call on currency 2 struck at 1 in currency-1 units: pays 1 on w1, 0 on w2
        let call = ClaimVector::in_currency(&t, 0, &[1.0, 0.0]).unwrap();
        let a = value_claim_survival(&t, &f, &call, 0, 1).unwrap();
        let b = value_claim(&t, &f, &call, 0).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(
            value_claim_survival(&t, &f, &survives1, 0, 1),
            Err(AggregationError::PaysOnDevaluation { currency: 2, .. })
        ));
    }

    #[test]
    fn correction_term_examples() {
        let (t, f) = consistent();
        let one = ClaimVector::unit(&t, 0).unwrap();
        assert!((correction_term(&t, &f, &one, 1, 0).unwrap() - 0.5).abs() < 1e-15);
        let w1 = t.find("w1").unwrap();
        assert_eq!(correction_term(&t, &f, &one, 1, w1).unwrap(), 0.0);

        let on_survival = ClaimVector::in_currency(&t, 0, &[1.0, 0.0]).unwrap();
        assert_eq!(correction_term(&t, &f, &on_survival, 1, 0).unwrap(), 0.0);
        let w2 = t.find("w2").unwrap();
        assert!(matches!(
            correction_term(&t, &f, &one, 1, w2),
            Err(AggregationError::InactiveCurrency { currency: 2, .. })
        ));

        let dec = correction_decomposition(&t, &f, &one, 1, 0).unwrap();
        assert!(dec.ok, "{dec:?}");
        assert!((dec.value - 1.0).abs() < 1e-15 && (dec.classical - 0.5).abs() < 1e-15);
    }

    #[test]
    fn correction_is_a_potential() {
        let (t, f) = consistent();
        let one = ClaimVector::unit(&t, 0).unwrap();
        for i in 0..2 {
            let r = check_correction_potential(&t, &f, &one, i).unwrap();
            assert!(r.ok, "{r:?}");
            assert_eq!(r.terminal_max, 0.0);
        }
    }

    #[test]
    fn devaluation_identity_examples() {
        let (t, f) = consistent();
        let r = devaluation_identity_report(&t, &f).unwrap();
        assert!(r.ok);
        assert!(r.currencies[0].lhs.abs() < 1e-15);
        assert!((r.currencies[1].lhs - 0.25).abs() < 1e-15);

        let c = constant();
        let q = TreeMeasure::uniform(&c);
        let cf = MeasureFamily::new(&c, vec![q.clone(), q]).unwrap();
        let r = devaluation_identity_report(&c, &cf).unwrap();
        assert!(r.currencies.iter().all(|x| x.lhs.abs() < 1e-15 && x.rhs == 0.0));

        let (s, sf) = single();
        let r = devaluation_identity_report(&s, &sf).unwrap();
        assert_eq!((r.currencies[0].lhs, r.currencies[0].rhs), (0.0, 0.0));
    }

    #[test]
    fn martingale_iff_survival_examples() {
        let (t, f) = consistent();
        let r = martingale_iff_survival(&t, &f, 0, 1);
        assert!(r.martingale && r.survival && r.agree && r.family_consistent);
        let r = martingale_iff_survival(&t, &f, 1, 0);
        assert!(!r.martingale && !r.survival && r.agree);

        let c = constant();
        let q = TreeMeasure::uniform(&c);
        let cf = MeasureFamily::new(&c, vec![q.clone(), q]).unwrap();
        let r = martingale_iff_survival(&c, &cf, 0, 1);
        assert!(r.martingale && r.survival);
    }

    #[test]
    fn aggregate_martingale_examples() {
        // binomial step: S_12 ∈ {2, 0.5} from 1; Q_1 = (1/3, 2/3) makes S_12 a martingale
        let up = ExchangeMatrix::from_price_vector(&[1.0, 2.0]).unwrap().to_grid();
        let down = ExchangeMatrix::from_price_vector(&[1.0, 0.5]).unwrap().to_grid();
        let mut spec = TreeSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        spec.child("u", "root", up).child("d", "root", down);
        let t = MarketTree::new(&spec).unwrap();
        // S_21 ∈ {1/2, 2}: Q_2 = (2/3, 1/3)
        let f = fam(&t, &[&[1.0 / 3.0, 2.0 / 3.0], &[2.0 / 3.0, 1.0 / 3.0]]);
        let qbar = aggregate_martingale(&t, &f).unwrap();
        assert!(qbar.max_residual() < 1e-12);
        assert!(qbar.measure().equivalent(&t, &f.average(&t)));

        let c = constant();
        let cf = fam(&c, &[&[0.2, 0.8], &[0.6, 0.4]]);
        let qbar = aggregate_martingale(&c, &cf).unwrap();
        assert!((qbar.weights()[0] - 0.4).abs() < 1e-15);

        let (t, f) = consistent();
        assert!(matches!(
            aggregate_martingale(&t, &f),
            Err(AggregationError::NotMartingale { currency: 2, .. })
        ));
    }
}
