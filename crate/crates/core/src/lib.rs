//! Devaluation-aware multi-currency valuation.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases fix the common case. Public functions take 0-based currency indices,
//! reports and messages use 1-based ones.

pub mod aggregation;
pub mod camara_heston;
pub mod counterexamples;
pub mod deflator;
pub mod exchange;
pub mod random;
pub mod report;
pub mod scalar;
pub mod tree;
pub mod tree_file;
pub mod xreal;

pub use aggregation::{
    aggregate_consistent, aggregate_martingale, check_consistency, check_correction_potential,
    correction_decomposition, correction_term, devaluation_identity_report, disaggregate,
    martingale_iff_survival, value_claim, value_claim_survival, AggregationError, ConsistencyReport,
    ValuationMeasure,
};
pub use camara_heston::{
    decompose_price, mc_price, parity_report, price_exchange_option, price_exchange_put, simulate_paths,
    validate_params, CHError, CHParams, MCEstimate, Measure, TwoCurrencyClaim,
};
pub use deflator::{
    build_deflator, check_deflator_conditions, find_obstructions, Condition, Deflator, DeflatorError,
    SwitchingSchedule,
};
pub use exchange::{
    basket_claim_value, recover_rates, validate_exchange_matrix, validate_exchange_matrix_with,
    validate_value_vector, BasketPrices, ExchangeError, ExchangeMatrix, MatrixJson, RecoveredRates,
    ValueVector,
};
pub use report::{ValidationReport, Violation};
pub use scalar::{Scalar, Tolerances};
pub use tree::{
    check_nod, check_nsd, check_support_condition, conditional_expectation, is_martingale,
    is_supermartingale, validate_tree, ClaimVector, MarketTree, MeasureFamily, TreeError, TreeMeasure,
    TreeSpec,
};
pub use tree_file::{LoadedTree, TreeFile, TreeFileError};
pub use xreal::{UndefinedProduct, XReal};

pub type XRealF64 = XReal<f64>;
pub type ExchangeMatrixF64 = ExchangeMatrix<f64>;
pub type BasketPricesF64 = BasketPrices<f64>;
pub type ValueVectorF64 = ValueVector<f64>;
pub type MarketTreeF64 = MarketTree<f64>;
pub type TreeMeasureF64 = TreeMeasure<f64>;
pub type MeasureFamilyF64 = MeasureFamily<f64>;
pub type ClaimVectorF64 = ClaimVector<f64>;
pub type ValuationMeasureF64 = ValuationMeasure<f64>;
pub type DeflatorF64 = Deflator<f64>;
pub type CHParamsF64 = CHParams<f64>;
pub type MCEstimateF64 = MCEstimate<f64>;
