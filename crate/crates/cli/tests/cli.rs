use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TRINOMIAL: &str = r#"{"d": 1, "horizon": 1, "nodes": [
  {"id": 0, "time": 0, "parent": null, "prob": 1.0, "price": [1.0]},
  {"id": 1, "time": 1, "parent": 0, "prob": 0.3333333333333333, "price": [2.0]},
  {"id": 2, "time": 1, "parent": 0, "prob": 0.3333333333333333, "price": [1.0]},
  {"id": 3, "time": 1, "parent": 0, "prob": 0.3333333333333334, "price": [0.5]}],
 "claim": {"type": "call", "asset": 0, "strike": 1.0}}"#;

const MARTINGALE: &str = r#"{"d": 1, "horizon": 2, "nodes": [
  {"id": 0, "time": 0, "parent": null, "price": [1.0]},
  {"id": 1, "time": 1, "parent": 0, "prob": 0.5, "price": [1.5]},
  {"id": 2, "time": 1, "parent": 0, "prob": 0.5, "price": [0.5]},
  {"id": 3, "time": 2, "parent": 1, "prob": 0.5, "price": [2.0]},
  {"id": 4, "time": 2, "parent": 1, "prob": 0.5, "price": [1.0]},
  {"id": 5, "time": 2, "parent": 2, "prob": 0.5, "price": [0.75]},
  {"id": 6, "time": 2, "parent": 2, "prob": 0.5, "price": [0.25]}]}"#;

/// Both children one unit up: the riskless payoff 1 is replicated exactly.
const ARBITRAGE: &str = r#"{"d": 1, "horizon": 1, "nodes": [
  {"id": 0, "time": 0, "parent": null, "price": [1.0]},
  {"id": 1, "time": 1, "parent": 0, "prob": 0.5, "price": [2.0]},
  {"id": 2, "time": 1, "parent": 0, "prob": 0.5, "price": [2.0]}],
 "claim": {"type": "put", "asset": 0, "strike": 3.0}}"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_quadhedge")).args(args).current_dir(self.dir.path()).output().unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn hedge_reports_root_mean_value() {
    let sb = Sandbox::new();
    sb.file("m.json", TRINOMIAL);
    let o = sb.run(&["hedge", "--market", "m.json", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv(&sb.out("out/hedge.csv"));
    let root = rows.iter().find(|r| r[column(&header, "node")] == "0").unwrap();
    let v: f64 = root[column(&header, "V")].parse().unwrap();
    assert!((v - 3.0 / 14.0).abs() < 1e-15);
    let eps2: f64 = root[column(&header, "eps2")].parse().unwrap();
    assert!((eps2 - 1.0 / 42.0).abs() < 1e-15);
    let summary = json(&sb.out("out/hedge_summary.json"));
    assert_eq!(summary["schema"], 1);
    assert_eq!(summary["pass"], true);
}

#[test]
fn hedge_from_off_optimal_wealth_and_claim_override() {
    let sb = Sandbox::new();
    sb.file("m.json", TRINOMIAL);
    sb.file("c.json", r#"{"type": "terminal", "values": {"1": 1.0, "2": 0.0, "3": 0.0}}"#);
    let o = sb.run(&["hedge", "--market", "m.json", "--claim", "c.json", "--v", "1.5", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let s = json(&sb.out("out/hedge_summary.json"));
    let stop = &s["stops"][0];
    let (l, v, e) = (stop["opportunity"].as_f64().unwrap(), stop["mean_value"].as_f64().unwrap(), stop["eps2"].as_f64().unwrap());
    let predicted = l * (1.5 - v).powi(2) + e;
    assert!((stop["mean_square_error"].as_f64().unwrap() - predicted).abs() < 1e-12);
}

#[test]
fn lop_on_martingale_tree() {
    let sb = Sandbox::new();
    sb.file("m.json", MARTINGALE);
    let o = sb.run(&["lop", "--market", "m.json", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let r = json(&sb.out("out/lop.json"));
    assert_eq!(r["holds"], true);
    assert_eq!(r["min_L"], 1.0);
    assert_eq!(r["audit"]["all_pass"], true);
}

#[test]
fn lop_failure_exit_codes() {
    let sb = Sandbox::new();
    sb.file("m.json", ARBITRAGE);
    let o = sb.run(&["lop", "--market", "m.json", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let r = json(&sb.out("out/lop.json"));
    assert_eq!(r["holds"], false);
    assert_eq!(r["violating_nodes"][0], 0);
    assert!(r["audit"].is_null());
    let o = sb.run(&["hedge", "--market", "m.json", "--out", "out"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[0]"));
}

#[test]
fn malformed_input_exits_2() {
    let sb = Sandbox::new();
    sb.file("bad.json", "{\"d\": 1,\n \"horizon\": }");
    let o = sb.run(&["hedge", "--market", "bad.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    sb.file("probs.json", &TRINOMIAL.replace("0.3333333333333334", "0.5"));
    assert_eq!(code(&sb.run(&["hedge", "--market", "probs.json"])), 2);

    sb.file("m.json", TRINOMIAL);
    assert_eq!(code(&sb.run(&["hedge", "--market", "m.json", "--tau", "1,2"])), 2);
    assert_eq!(code(&sb.run(&["frontier", "--market", "m.json", "--lambda-grid", "1:2"])), 2);
    assert_eq!(code(&sb.run(&["hedge", "--market", "missing.json"])), 2);
    assert_eq!(code(&sb.run(&["counterexample", "--p", "1.5", "--paths", "10"])), 2);
}

#[test]
fn sharpe_trinomial() {
    let sb = Sandbox::new();
    sb.file("m.json", TRINOMIAL);
    let o = sb.run(&["sharpe", "--market", "m.json", "--pi", "0.25", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let r = json(&sb.out("out/sharpe.json"));
    let stop = &r["stops"][0];
    assert!((stop["rho2"].as_f64().unwrap() - 0.125).abs() < 1e-9);
    assert!((stop["eta"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-9);
    assert!((stop["attained_rho2"].as_f64().unwrap() - 0.125).abs() < 1e-9);
}

#[test]
fn frontier_grid_in_both_formats() {
    let sb = Sandbox::new();
    sb.file("m.json", TRINOMIAL);
    let o = sb.run(&["frontier", "--market", "m.json", "--lambda-grid", "-1:1:11", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let (header, rows) = csv(&sb.out("out/frontier.csv"));
    assert_eq!(&header[..3], ["stop_node", "mean", "variance"]);
    assert_eq!(rows.len(), 11);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        let p: f64 = r[4].parse().unwrap();
        assert!((v - p).abs() <= 1e-9 * v.abs().max(1.0));
    }
    let o = sb.run(&["frontier", "--market", "m.json", "--lambda-grid", "-1:1:11", "--format", "json", "--out", "out"]);
    assert_eq!(code(&o), 0);
    let t = json(&sb.out("out/frontier.json"));
    assert_eq!(t["schema"], 1);
    assert_eq!(t["rows"].as_array().unwrap().len(), 11);
}

#[test]
fn oracle_check_suite_and_single_market() {
    let sb = Sandbox::new();
    let o = sb.run(&["oracle-check", "--trees", "5", "--seed", "3", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&sb.out("out/oracle_check.json"));
    assert_eq!(r["pass"], true);
    assert_eq!(r["trees"], 5);

    sb.file("m.json", TRINOMIAL);
    let o = sb.run(&["oracle-check", "--market", "m.json", "--out", "one"]);
    assert_eq!(code(&o), 0);
    assert!(json(&sb.out("one/oracle_check.json"))["seed"].is_null());

    // A zero tolerance turns rounding differences into mismatches.
    let o = sb.run(&["oracle-check", "--trees", "3", "--tol", "0", "--out", "neg"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&sb.out("neg/oracle_check.json"))["pass"], false);
}

#[test]
fn counterexample_outputs_are_reproducible() {
    let sb = Sandbox::new();
    let args = |out: &'static str| ["counterexample", "--p", "0.5", "--dt", "0.01", "--paths", "4000", "--seed", "7", "--out", out];
    assert_eq!(code(&sb.run(&args("a"))), 0);
    assert_eq!(code(&sb.run(&args("b"))), 0);
    for f in ["opportunity.csv", "flvr.csv", "nonclosedness.csv", "blowup.csv", "counterexample.json"] {
        let a = std::fs::read(sb.out("a").join(f)).unwrap();
        let b = std::fs::read(sb.out("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let (header, rows) = csv(&sb.out("a/opportunity.csv"));
    assert_eq!(&header[..6], ["t", "L_raw", "L_normalized", "L_mc", "ci_lo", "ci_hi"]);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    let l0: f64 = rows[0][1].parse().unwrap();
    assert!((l0 - 0.2018).abs() < 1e-4);
    let (header, _) = csv(&sb.out("a/flvr.csv"));
    assert_eq!(&header[..3], ["n", "flvr_min_wealth", "loss_freq"]);
    let (header, rows) = csv(&sb.out("a/blowup.csv"));
    assert_eq!(&header[..3], ["k", "t_k", "inv_L"]);
    assert_eq!(rows.len(), 11);
    let r = json(&sb.out("a/counterexample.json"));
    assert_eq!(r["horizon_probability"]["adopted"], 0.5);
}

#[test]
fn seed_changes_only_monte_carlo_columns() {
    let sb = Sandbox::new();
    let run = |seed: &str, out: &str| {
        let o = sb.run(&["counterexample", "--dt", "0.01", "--paths", "2000", "--seed", seed, "--out", out]);
        assert_eq!(code(&o), 0);
    };
    run("1", "a");
    run("2", "b");
    let (_, a) = csv(&sb.out("a/opportunity.csv"));
    let (_, b) = csv(&sb.out("b/opportunity.csv"));
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[..3], rb[..3]);
    }
    assert_ne!(a[1][3], b[1][3]);
    assert_eq!(std::fs::read(sb.out("a/blowup.csv")).unwrap(), std::fs::read(sb.out("b/blowup.csv")).unwrap());
}
