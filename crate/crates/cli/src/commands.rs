use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use nlab_core::camara_heston::ExchangeCall;
use nlab_core::counterexamples::{self, FixtureError, SuiteReport};
use nlab_core::{
    aggregate_consistent, aggregate_martingale, build_deflator, decompose_price, mc_price, parity_report,
    price_exchange_option, validate_exchange_matrix_with, validate_params, validate_tree, AggregationError,
    CHParams, DeflatorError, LoadedTree, MatrixJson, Tolerances, TreeFile, TreeFileError, TreeMeasure,
    ValidationReport,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{csv, json};
use crate::{Cli, Command, Format, Mode};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input.
    Input(String),
    /// Well-formed input that fails a domain check.
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

pub struct Outcome {
    pub body: String,
    pub code: u8,
    /// Printed to stderr after the body.
    pub message: Option<String>,
}

impl Outcome {
    fn ok(body: String) -> Self {
        Self { body, code: 0, message: None }
    }

    fn failed(body: String, message: String) -> Self {
        Self { body, code: 1, message: Some(format!("error: {message}")) }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let tol = match cli.tol {
        Some(t) => Tolerances::default().with_check_tolerance(t),
        None => Tolerances::default(),
    };
    let format = cli.format;
    match &cli.command {
        Command::Validate { file } => validate(file, tol, format.unwrap_or(Format::Json)),
        Command::Aggregate { file, mode, epsilon, family } => {
            aggregate(file, tol, *mode, *epsilon, family.as_deref(), format.unwrap_or(Format::Json))
        }
        Command::Price { params, strikes, mc, paths, seed } => {
            let paths = usize::try_from(*paths).map_err(|_| CliError::Input("--paths is too large".into()))?;
            price(params, strikes, mc.then_some((paths, *seed)), format.unwrap_or(Format::Json))
        }
        Command::Counterexamples { fixtures, write_fixtures } => {
            suite(fixtures.as_deref(), write_fixtures.as_deref(), format)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn violation_rows(report: &ValidationReport) -> Vec<Vec<String>> {
    report
        .violations
        .iter()
        .map(|v| {
            let value = serde_json::to_value(v).expect("violations serialize");
            let kind = value["kind"].as_str().unwrap_or_default().to_string();
            vec![kind, serde_json::to_string(&value).expect("value serializes")]
        })
        .collect()
}

fn validate(file: &Path, tol: Tolerances<f64>, format: Format) -> Result<Outcome, CliError> {
    let text = read(file)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
    let parse = |e: serde_json::Error| CliError::Input(format!("{}: {e}", file.display()));

    let (kind, result): (&str, Result<ValidationReport, String>) = if value.get("nodes").is_some() {
        let tf: TreeFile = serde_json::from_value(value).map_err(parse)?;
        ("tree", validate_tree_file(&tf, tol))
    } else {
        let m: MatrixJson = if value.is_array() {
            MatrixJson { d: None, entries: serde_json::from_value(value).map_err(parse)? }
        } else {
            serde_json::from_value(value).map_err(parse)?
        };
        let r = m
            .grid::<f64>()
            .and_then(|g| validate_exchange_matrix_with(&g, tol.consistency))
            .map_err(|e| e.to_string());
        ("matrix", r)
    };

    match result {
        Ok(report) => {
            let body = match format {
                Format::Json => json(&json!({"kind": kind, "ok": report.ok, "violations": report.violations})),
                Format::Csv => csv(&["kind", "detail"], &violation_rows(&report)),
            };
            if report.ok {
                Ok(Outcome::ok(body))
            } else {
                let msg = format!("{kind} is invalid: {} violation(s)", report.violations.len());
                Ok(Outcome::failed(body, msg))
            }
        }
        Err(e) => {
            let body = match format {
                Format::Json => json(&json!({"kind": kind, "ok": false, "error": e})),
                Format::Csv => csv(&["kind", "detail"], &[vec!["error".into(), e.clone()]]),
            };
            Ok(Outcome::failed(body, e))
        }
    }
}

/// Structure and matrices first; measures and claims only for a valid tree.
fn validate_tree_file(tf: &TreeFile, tol: Tolerances<f64>) -> Result<ValidationReport, String> {
    let spec = tf.spec::<f64>().map_err(|e| e.to_string())?;
    let report = validate_tree(&spec, tol.consistency).map_err(|e| e.to_string())?;
    if report.ok {
        tf.load::<f64>(tol).map_err(|e| e.to_string())?;
    }
    Ok(report)
}

fn load_tree(file: &Path, tol: Tolerances<f64>) -> Result<LoadedTree<f64>, CliError> {
    let tf = TreeFile::from_json(&read(file)?).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
    tf.load(tol).map_err(|e| CliError::Domain(format!("{}: {e}", file.display())))
}

fn leaf_weights(t: &LoadedTree<f64>, q: &TreeMeasure<f64>) -> IndexMap<String, f64> {
    (0..t.tree.n_leaves()).map(|l| (t.tree.id(t.tree.leaves()[l]).to_string(), q.weight(l))).collect()
}

#[derive(Serialize)]
struct AggregateReport {
    mode: &'static str,
    ok: bool,
    family: Vec<String>,
    measure: IndexMap<String, f64>,
    max_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    deflator: Option<Value>,
}

fn aggregate(
    file: &Path,
    tol: Tolerances<f64>,
    mode: Mode,
    epsilon: f64,
    names: Option<&[String]>,
    format: Format,
) -> Result<Outcome, CliError> {
    let t = load_tree(file, tol)?;
    let fam = t.family(names).map_err(|e| match e {
        TreeFileError::UnknownMeasure(_) | TreeFileError::Family(_) => CliError::Domain(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    let family: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => (1..=t.tree.d()).map(|i| format!("Q{i}")).collect(),
    };
    let mode_name = match mode {
        Mode::Consistent => "consistent",
        Mode::Martingale => "martingale",
        Mode::Deflator => "deflator",
    };
    let failure = |error: String, detail: Value| {
        let body = match format {
            Format::Json => json(&json!({"mode": mode_name, "ok": false, "error": error, "detail": detail})),
            Format::Csv => csv(&["error"], &[vec![error.clone()]]),
        };
        Ok(Outcome::failed(body, error))
    };
    let agg_detail = |e: &AggregationError| match e {
        AggregationError::Inconsistent(r) => serde_json::to_value(r).expect("report serializes"),
        _ => Value::Null,
    };

    let (measure, max_residual, deflator) = match mode {
        Mode::Consistent | Mode::Martingale => {
            let r = if mode == Mode::Consistent {
                aggregate_consistent(&t.tree, &fam)
            } else {
                aggregate_martingale(&t.tree, &fam)
            };
            match r {
                Ok(q) => (q.measure().clone(), q.max_residual(), None),
                Err(e) => return failure(e.to_string(), agg_detail(&e)),
            }
        }
        Mode::Deflator => match build_deflator(&t.tree, &fam, epsilon) {
            Ok(d) => {
                let z: IndexMap<String, f64> =
                    (0..t.tree.len()).map(|n| (t.tree.id(n).to_string(), d.process.at(n))).collect();
                let detail = json!({
                    "epsilon": epsilon,
                    "z": z,
                    "schedule": d.schedule,
                    "conditions": d.conditions,
                });
                (d.measure.measure().clone(), d.max_residual, Some(detail))
            }
            Err(e) => {
                let detail = match &e {
                    DeflatorError::Preconditions(f) => serde_json::to_value(f).expect("failures serialize"),
                    DeflatorError::Aggregation(a) => agg_detail(a),
                    _ => Value::Null,
                };
                return failure(e.to_string(), detail);
            }
        },
    };
    let report = AggregateReport {
        mode: mode_name,
        ok: true,
        family,
        measure: leaf_weights(&t, &measure),
        max_residual,
        deflator,
    };
    let body = match format {
        Format::Json => json(&report),
        Format::Csv => {
            let rows: Vec<Vec<String>> = report.measure.iter().map(|(k, w)| vec![k.clone(), w.to_string()]).collect();
            csv(&["leaf", "weight"], &rows)
        }
    };
    Ok(Outcome::ok(body))
}

#[derive(Serialize)]
struct PriceRow {
    #[serde(rename = "K")]
    strike: f64,
    closed_form: f64,
    mc_mean: Option<f64>,
    mc_se: Option<f64>,
    classical: f64,
    correction: f64,
    parity_gap: f64,
    put: f64,
    aggregated_parity_residual: f64,
}

fn price(params: &Path, strikes: &[f64], mc: Option<(usize, u64)>, format: Format) -> Result<Outcome, CliError> {
    let p: CHParams<f64> = serde_json::from_str(&read(params)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", params.display())))?;
    let report = validate_params(&p).map_err(|e| CliError::Domain(e.to_string()))?;
    if !report.ok {
        return Err(CliError::Domain(report.to_string()));
    }
    let domain = |e: nlab_core::CHError| CliError::Domain(e.to_string());
    let mut rows = Vec::new();
    for &k in strikes {
        let closed_form = price_exchange_option(&p, k).map_err(domain)?;
        let dec = decompose_price(&p, k).map_err(domain)?;
        let parity = parity_report(&p, k).map_err(domain)?;
        let est = match mc {
            Some((paths, seed)) => Some(mc_price(&p, &ExchangeCall { strike: k }, paths, seed).map_err(domain)?),
            None => None,
        };
        rows.push(PriceRow {
            strike: k,
            closed_form,
            mc_mean: est.map(|e| e.estimate),
            mc_se: est.map(|e| e.se),
            classical: dec.classical,
            correction: dec.correction,
            parity_gap: parity.classical_gap,
            put: parity.put,
            aggregated_parity_residual: parity.aggregated_residual,
        });
    }
    let body = match format {
        Format::Json => {
            let (s1, s2) = p.basket_weights();
            json(&json!({
                "params": p,
                "basket_weights": [s1, s2],
                "mc": mc.map(|(paths, seed)| json!({"paths": paths, "seed": seed})),
                "rows": rows,
            }))
        }
        Format::Csv => {
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.strike.to_string(),
                        r.closed_form.to_string(),
                        opt(r.mc_mean),
                        opt(r.mc_se),
                        r.classical.to_string(),
                        r.correction.to_string(),
                        r.parity_gap.to_string(),
                    ]
                })
                .collect();
            csv(&["K", "closed_form", "mc_mean", "mc_se", "classical", "correction", "parity_gap"], &table)
        }
    };
    Ok(Outcome::ok(body))
}

fn fixture_error(e: FixtureError) -> CliError {
    CliError::Input(e.to_string())
}

fn suite(fixtures: Option<&Path>, write: Option<&Path>, format: Option<Format>) -> Result<Outcome, CliError> {
    if let Some(dir) = write {
        counterexamples::write_fixtures(dir).map_err(fixture_error)?;
        let names: Vec<String> = counterexamples::fixtures().iter().map(|f| format!("{}.json", f.name)).collect();
        return Ok(Outcome::ok(format!("wrote {} to {}\n", names.join(", "), dir.display())));
    }
    let report: SuiteReport = match fixtures {
        Some(dir) => {
            let files = counterexamples::load_fixtures(dir).map_err(fixture_error)?;
            counterexamples::run_suite_on(&files).map_err(fixture_error)?
        }
        None => counterexamples::run_suite(),
    };
    let body = match format {
        None => report.cases.iter().map(|c| format!("{c}\n")).collect(),
        Some(Format::Json) => json(&report),
        Some(Format::Csv) => {
            let rows: Vec<Vec<String>> = report
                .cases
                .iter()
                .map(|c| vec![c.name.clone(), c.status.to_string(), c.modified.to_string(), c.message.clone()])
                .collect();
            csv(&["name", "status", "modified", "message"], &rows)
        }
    };
    if report.ok {
        Ok(Outcome::ok(body))
    } else {
        let failed = report.cases.iter().filter(|c| c.status != counterexamples::CaseStatus::Pass).count();
        Ok(Outcome::failed(body, format!("{failed} fixture(s) did not reproduce their verdicts")))
    }
}
