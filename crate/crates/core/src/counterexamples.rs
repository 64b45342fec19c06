//! Three two-currency trees on which the aggregation theorems visibly need their
//! hypotheses, with the verdicts each one must produce.
//!
//! * `supermartingale-arbitrage`: currency 2 devalues in one of two states. `S_12` is a
//!   strict `Q_1`-supermartingale, so the family is inconsistent and the deflator
//!   construction rejects it on condition (i).
//! * `obvious-devaluation`: after a coin flip currency 2 follows a fair walk that ends
//!   in devaluation with certainty. `Σ Q_i/2` violates NOD.
//! * `support-gap`: `Q_1` is `Q_2` conditioned on never hitting a barrier, so the two
//!   supports differ on the survival set of currency 1 and no consistent family with
//!   the same null sets exists.
//!
//! On a finite tree every devaluation is a jump, so a NOD failure always comes with an
//! NSD failure, and the strict local martingales of continuous time are replaced by
//! strict supermartingales (discrete local martingales bounded below are martingales).

use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::aggregation::{check_consistency, martingale_iff_survival};
use crate::deflator::{build_deflator, check_deflator_conditions, find_obstructions, Condition};
use crate::scalar::Tolerances;
use crate::tree::{check_nod, check_nsd, check_support_condition, MarketTree, TreeMeasure, TreeSpec};
use crate::tree_file::{TreeFile, TreeFileError};

const INF: f64 = f64::INFINITY;

/// Matrix of a two-currency node with `S_12 = x`; `x = 0` devalues currency 2.
fn rate(x: f64) -> Vec<Vec<f64>> {
    if x == 0.0 {
        vec![vec![1.0, 0.0], vec![INF, 1.0]]
    } else {
        vec![vec![1.0, x], vec![1.0 / x, 1.0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailedCondition {
    pub condition: Condition,
    pub currency: Option<usize>,
}

impl fmt::Display for FailedCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.condition.label())?;
        if let Some(c) = self.currency {
            write!(f, "[{c}]")?;
        }
        Ok(())
    }
}

/// The qualitative outcome of the checks on one fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdicts {
    pub consistent: bool,
    pub nod: bool,
    pub nsd: bool,
    pub support: bool,
    pub failed_conditions: Vec<FailedCondition>,
    /// Some step rules out every valuation measure equivalent to `Σ Q_i/2`.
    pub obstruction: bool,
}

impl fmt::Display for Verdicts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conds: Vec<String> = self.failed_conditions.iter().map(|c| c.to_string()).collect();
        write!(
            f,
            "consistent={} nod={} nsd={} support={} failed=[{}] obstruction={}",
            self.consistent,
            self.nod,
            self.nsd,
            self.support,
            conds.join(","),
            self.obstruction
        )
    }
}

/// Verdicts plus the messages behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub verdicts: Verdicts,
    /// Error from the deflator construction, if it refused.
    pub deflator: Option<String>,
    /// `S_21` is a `Q_2`-martingale iff `Q_1(S_12(T) > 0) = 1`; both sides agree.
    pub survival_equivalence: bool,
}

pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub file: TreeFile,
    pub expected: Verdicts,
    /// Required substring of the deflator error.
    pub deflator_message: Option<&'static str>,
}

fn file(spec: &TreeSpec<f64>, q1: &[(&str, f64)], q2: &[(&str, f64)]) -> TreeFile {
    let tree = MarketTree::new(spec).expect("fixture tree is valid");
    let m1 = TreeMeasure::from_leaf_weights(&tree, q1.iter().copied()).expect("fixture measure");
    let m2 = TreeMeasure::from_leaf_weights(&tree, q2.iter().copied()).expect("fixture measure");
    TreeFile::from_tree(&tree, &[("Q1", &m1), ("Q2", &m2)])
}

fn failed(condition: Condition, currency: Option<usize>) -> FailedCondition {
    FailedCondition { condition, currency }
}

pub fn supermartingale_arbitrage() -> Fixture {
    let mut spec = TreeSpec::new(rate(1.0));
    spec.child("w1", "root", rate(1.0)).child("w2", "root", rate(0.0));
    Fixture {
        name: "supermartingale-arbitrage",
        summary: "strict supermartingale rate; consistency fails and the deflator rejects on (i)",
        file: file(&spec, &[("w1", 0.5), ("w2", 0.5)], &[("w1", 1.0)]),
        expected: Verdicts {
            consistent: false,
            nod: true,
            nsd: false,
            support: true,
            failed_conditions: vec![failed(Condition::Martingale, Some(1))],
            obstruction: true,
        },
        deflator_message: Some("condition (i) fails for currency 1"),
    }
}

pub fn obvious_devaluation() -> Fixture {
    let mut spec = TreeSpec::new(rate(1.0));
    spec.child("x0", "root", rate(1.0))
        .child("x0.2", "x0", rate(1.0))
        .child("x0.3", "x0.2", rate(1.0))
        .child("x0.4", "x0.3", rate(1.0))
        .child("x1", "root", rate(1.0))
        .child("up", "x1", rate(2.0))
        .child("up.1", "up", rate(1.0))
        .child("up.1.0", "up.1", rate(0.0))
        .child("up.3", "up", rate(3.0))
        .child("up.3.0", "up.3", rate(0.0))
        .child("hit", "x1", rate(0.0))
        .child("hit.3", "hit", rate(0.0))
        .child("hit.4", "hit.3", rate(0.0));
    Fixture {
        name: "obvious-devaluation",
        summary: "fair walk that devalues with certainty on one branch; NOD fails",
        file: file(
            &spec,
            &[("x0.4", 0.5), ("up.1.0", 0.125), ("up.3.0", 0.125), ("hit.4", 0.25)],
            &[("x0.4", 1.0)],
        ),
        expected: Verdicts {
            consistent: false,
            nod: false,
            nsd: false,
            support: true,
            failed_conditions: vec![failed(Condition::Martingale, Some(1)), failed(Condition::Nod, Some(2))],
            obstruction: true,
        },
        deflator_message: Some("condition (ii) fails for currency 2"),
    }
}

pub fn support_gap() -> Fixture {
    // walk k from 2; S_12 = 1 until k hits 1, then 1 + (k - 1)/2
    let mut spec = TreeSpec::new(rate(1.0));
    spec.child("a", "root", rate(1.0))
        .child("a.2", "a", rate(1.5))
        .child("a.3", "a.2", rate(1.5))
        .child("b", "root", rate(1.0))
        .child("b.2", "b", rate(1.0))
        .child("b.2.1", "b.2", rate(1.0))
        .child("b.2.3", "b.2", rate(1.0))
        .child("b.4", "b", rate(1.0))
        .child("b.4.3", "b.4", rate(1.0))
        .child("b.4.5", "b.4", rate(1.0));
    let third = 1.0 / 3.0;
    Fixture {
        name: "support-gap",
        summary: "Q1 is Q2 conditioned on not hitting; the support condition fails",
        file: file(
            &spec,
            &[("b.2.3", third), ("b.4.3", third), ("b.4.5", third)],
            &[("a.3", 0.5), ("b.2.1", 0.125), ("b.2.3", 0.125), ("b.4.3", 0.125), ("b.4.5", 0.125)],
        ),
        expected: Verdicts {
            consistent: false,
            nod: true,
            nsd: true,
            support: false,
            failed_conditions: vec![failed(Condition::Martingale, Some(2)), failed(Condition::Support, Some(1))],
            obstruction: true,
        },
        deflator_message: Some("condition (iii) fails for currency 1"),
    }
}

pub fn fixtures() -> Vec<Fixture> {
    vec![supermartingale_arbitrage(), obvious_devaluation(), support_gap()]
}

/// Runs every check on a two-currency tree file with measures `Q1`, `Q2`.
pub fn observe(file: &TreeFile) -> Result<Observation, TreeFileError> {
    let loaded = file.load::<f64>(Tolerances::default())?;
    let tree = &loaded.tree;
    let fam = loaded.family(None)?;
    let p = fam.average(tree);
    let conditions = check_deflator_conditions(tree, &fam);
    let deflator = build_deflator(tree, &fam, 0.5).err().map(|e| e.to_string());
    let survival_equivalence = tree.d() < 2 || martingale_iff_survival(tree, &fam, 1, 0).agree;
    Ok(Observation {
        verdicts: Verdicts {
            consistent: check_consistency(tree, &fam).ok,
            nod: check_nod(tree, &p).ok,
            nsd: check_nsd(tree, &p).ok,
            support: check_support_condition(tree, &fam).ok,
            failed_conditions: conditions
                .failures
                .iter()
                .map(|f| failed(f.condition, f.currency))
                .fold(Vec::new(), |mut acc, f| {
                    if !acc.contains(&f) {
                        acc.push(f);
                    }
                    acc
                }),
            obstruction: find_obstructions(tree, &p).found,
        },
        deflator,
        survival_equivalence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// A fixture loaded from disk differs from the built-in one and changes the outcome.
    #[serde(rename = "FIXTURE-DRIFT")]
    FixtureDrift,
}

impl fmt::Display for CaseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseStatus::Pass => "PASS",
            CaseStatus::Fail => "FAIL",
            CaseStatus::FixtureDrift => "FIXTURE-DRIFT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub status: CaseStatus,
    pub modified: bool,
    pub expected: Verdicts,
    pub observed: Option<Observation>,
    pub message: String,
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.name, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub ok: bool,
    pub cases: Vec<CaseReport>,
}

fn check_case(fixture: &Fixture, file: &TreeFile) -> CaseReport {
    let modified = *file != fixture.file;
    let mismatch = if modified { CaseStatus::FixtureDrift } else { CaseStatus::Fail };
    let report = |status, observed, message| CaseReport {
        name: fixture.name.to_string(),
        status,
        modified,
        expected: fixture.expected.clone(),
        observed,
        message,
    };
    let obs = match observe(file) {
        Ok(o) => o,
        Err(e) => return report(mismatch, None, format!("cannot evaluate fixture: {e}")),
    };
    if obs.verdicts != fixture.expected {
        let msg = format!("expected {}, observed {}", fixture.expected, obs.verdicts);
        return report(mismatch, Some(obs), msg);
    }
    if let Some(want) = fixture.deflator_message {
        let got = obs.deflator.clone().unwrap_or_default();
        if !got.contains(want) {
            let msg = format!("deflator error should mention \"{want}\", got \"{got}\"");
            return report(mismatch, Some(obs), msg);
        }
    }
    let msg = format!("{} ({})", fixture.summary, obs.verdicts);
    report(CaseStatus::Pass, Some(obs), msg)
}

/// Checks the built-in fixtures.
pub fn run_suite() -> SuiteReport {
    let cases: Vec<CaseReport> = fixtures().iter().map(|f| check_case(f, &f.file)).collect();
    SuiteReport { ok: cases.iter().all(|c| c.status == CaseStatus::Pass), cases }
}

/// Checks fixture files (keyed by fixture name) against the built-in verdicts.
pub fn run_suite_on(files: &[(String, TreeFile)]) -> Result<SuiteReport, FixtureError> {
    if files.is_empty() {
        return Err(FixtureError::Empty);
    }
    let known = fixtures();
    let mut cases = Vec::new();
    for (name, file) in files {
        let fixture = known
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| FixtureError::Unknown(name.clone()))?;
        cases.push(check_case(fixture, file));
    }
    for f in &known {
        if !files.iter().any(|(n, _)| n == f.name) {
            return Err(FixtureError::Missing(f.name.to_string()));
        }
    }
    Ok(SuiteReport { ok: cases.iter().all(|c| c.status == CaseStatus::Pass), cases })
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: TreeFileError,
    },
    #[error("no fixture files found")]
    Empty,
    #[error("fixture `{0}` is missing")]
    Missing(String),
    #[error("unknown fixture `{0}`")]
    Unknown(String),
}

/// Writes `<name>.json` for every built-in fixture.
pub fn write_fixtures(dir: &Path) -> Result<(), FixtureError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| FixtureError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for f in fixtures() {
        let path = dir.join(format!("{}.json", f.name));
        std::fs::write(&path, f.file.to_json_pretty() + "\n").map_err(io(&path))?;
    }
    Ok(())
}

/// Reads every `*.json` in `dir`, sorted by name.
pub fn load_fixtures(dir: &Path) -> Result<Vec<(String, TreeFile)>, FixtureError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| FixtureError::Io { path, source }
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let file = TreeFile::from_json(&text)
            .map_err(|source| FixtureError::Parse { path: path.display().to_string(), source })?;
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push((name, file));
    }
    if out.is_empty() {
        return Err(FixtureError::Empty);
    }
    Ok(out)
}
