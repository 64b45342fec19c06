//! End-to-end tests of the `nlab` binary. Set `UPDATE_GOLDEN=1` to rewrite the golden files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn nlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlab"))
        .args(args)
        .current_dir(data(""))
        .env_remove("NLAB_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn validate_exit_codes() {
    let ok = nlab(&["validate", "matrix_ok.json"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert_eq!(json(&ok)["ok"], true);

    let bad = nlab(&["validate", "matrix_bad.json"]);
    assert_eq!(code(&bad), 1);
    golden("validate_matrix_bad.json", &stdout(&bad));

    let malformed = nlab(&["validate", "malformed.json"]);
    assert_eq!(code(&malformed), 2);
    assert!(stderr(&malformed).starts_with("error:"));

    let missing = nlab(&["validate", "no_such_file.json"]);
    assert_eq!(code(&missing), 2);

    for tree in ["two_leaf.json", "single.json"] {
        let o = nlab(&["validate", tree]);
        assert_eq!(code(&o), 0, "{tree}: {}", stderr(&o));
        assert_eq!(json(&o)["kind"], "tree");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&nlab(&["price", "ch.json"])), 2);
    assert_eq!(code(&nlab(&["aggregate", "two_leaf.json", "--mode", "sideways"])), 2);
    assert_eq!(code(&nlab(&["validate", "matrix_ok.json", "--tol", "-1"])), 2);
    assert_eq!(code(&nlab(&["--help"])), 0);
}

#[test]
fn aggregate_consistent_two_leaf() {
    let o = nlab(&["aggregate", "two_leaf.json", "--mode", "consistent"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert!((v["measure"]["w1"].as_f64().unwrap() - 0.75).abs() < 1e-15);
    assert!((v["measure"]["w2"].as_f64().unwrap() - 0.25).abs() < 1e-15);
    golden("aggregate_two_leaf.json", &stdout(&o));

    let csv = nlab(&["aggregate", "two_leaf.json", "--mode", "consistent", "--format", "csv"]);
    assert_eq!(stdout(&csv), "leaf,weight\nw1,0.75\nw2,0.25\n");
}

#[test]
fn aggregate_family_selection() {
    let o = nlab(&["aggregate", "two_leaf.json", "--mode", "consistent", "--family", "Q1,Q2"]);
    assert_eq!(code(&o), 0);
    let unknown = nlab(&["aggregate", "two_leaf.json", "--mode", "consistent", "--family", "Q1,Q9"]);
    assert_eq!(code(&unknown), 1);
}

#[test]
fn deflator_reports_the_failed_condition() {
    let o = nlab(&["aggregate", "two_leaf.json", "--mode", "deflator"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("condition (i) fails for currency 2"), "{}", stderr(&o));
    assert_eq!(json(&o)["ok"], false);

    let single = nlab(&["aggregate", "single.json", "--mode", "deflator"]);
    assert_eq!(code(&single), 0, "{}", stderr(&single));
    let v = json(&single);
    assert_eq!(v["deflator"]["conditions"]["ok"], true);
    assert!((v["measure"]["ba"].as_f64().unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn price_rows() {
    let o = nlab(&["price", "ch.json", "--strikes", "0,1,1.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    golden("price_ch.json", &stdout(&o));
    let v = json(&o);
    let rows = v["rows"].as_array().unwrap();
    // K = 0 pays the basket weight of currency 2 whatever happens
    let s2 = v["basket_weights"][1].as_f64().unwrap();
    assert!((rows[0]["closed_form"].as_f64().unwrap() - s2).abs() < 1e-15);
    for r in rows {
        assert!(r["aggregated_parity_residual"].as_f64().unwrap().abs() < 1e-14);
        assert!(r["mc_mean"].is_null());
    }
}

#[test]
fn price_without_jumps_has_no_correction() {
    let o = nlab(&["price", "ch_nojump.json", "--strikes", "1", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    golden("price_nojump.csv", &stdout(&o));
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = line.split(',').collect();
    assert_eq!(cols.len(), 7);
    assert_eq!(cols[2], "");
    assert_eq!(cols[5].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn price_rejects_inconsistent_params() {
    let o = nlab(&["price", "ch_mu_mismatch.json", "--strikes", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("consistency constraint violated"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());

    let neg = nlab(&["price", "ch.json", "--strikes", "-1"]);
    assert_eq!(code(&neg), 1);
}

#[test]
fn monte_carlo_is_seeded() {
    let args = ["price", "ch.json", "--strikes", "1", "--mc", "--paths", "20000", "--format", "csv"];
    let a = nlab(&args);
    let b = nlab(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));

    let explicit = nlab(&[&args[..], &["--seed", "7"]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_nlab"))
        .args(args)
        .current_dir(data(""))
        .env("NLAB_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(stdout(&explicit), stdout(&env));
    assert_ne!(stdout(&explicit), stdout(&a));

    let line = stdout(&a).lines().nth(1).unwrap().to_string();
    let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
    let (closed, mean, se) = (cols[1], cols[2], cols[3]);
    assert!((mean - closed).abs() < 4.0 * se, "mean {mean} closed {closed} se {se}");
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = nlab(&["validate", "matrix_ok.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["ok"], true);
}

#[test]
fn counterexamples_builtin() {
    let o = nlab(&["counterexamples"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.starts_with("PASS ")));
    golden("counterexamples.txt", &out);
}

#[test]
fn counterexamples_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&nlab(&["counterexamples", "--write-fixtures", d])), 0);
    let o = nlab(&["counterexamples", "--fixtures", d]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS ")).count(), 3);

    // rewrite one fixture so its verdicts no longer hold: Q2 gets full support
    let path = dir.path().join("supermartingale-arbitrage.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let leaves: Vec<String> = v["measures"]["Q1"].as_object().unwrap().keys().cloned().collect();
    let q: serde_json::Map<String, serde_json::Value> =
        leaves.iter().map(|l| (l.clone(), serde_json::json!(1.0 / leaves.len() as f64))).collect();
    v["measures"]["Q2"] = serde_json::Value::Object(q);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let drift = nlab(&["counterexamples", "--fixtures", d]);
    assert_eq!(code(&drift), 1);
    assert!(stdout(&drift).contains("FIXTURE-DRIFT supermartingale-arbitrage"), "{}", stdout(&drift));
}

#[test]
fn counterexamples_bad_directories() {
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&nlab(&["counterexamples", "--fixtures", empty.path().to_str().unwrap()])), 2);
    assert_eq!(code(&nlab(&["counterexamples", "--fixtures", "/nonexistent/fixtures"])), 2);
}
