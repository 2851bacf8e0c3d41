use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_obstacle");

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--quiet").arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Rows of a CSV file as (header, values).
fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = csv(path);
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn summary(out: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/summary.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "summary violates schema: {errors:?}");
    v
}

fn metric(s: &Value, k: &str) -> f64 {
    s["metrics"][k].as_f64().unwrap_or_else(|| panic!("no metric {k}"))
}

fn assert_layout(out: &Path, tables: &[&str]) {
    for f in ["config.toml", "run.log", "summary.json"].iter().chain(tables) {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for t in tables {
        let (header, _) = csv(&out.join(t));
        assert!(header.iter().all(|h| !h.is_empty() && h.parse::<f64>().is_err()), "{t} lacks a header");
    }
}

#[test]
fn solve_constant_solution() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[problem]\nb = 1.0\n");
    let out = tmp.path().join("out");
    let o = run(&["solve"], Some(&cfg), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_layout(&out, &["solution.csv"]);
    assert!(column(&out.join("solution.csv"), "u").iter().all(|u| (u - 1.0).abs() <= 1e-12));
    let s = summary(&out);
    assert_eq!(s["passed"], true);
    assert_eq!(metric(&s, "active_size"), 0.0);
}

#[test]
fn solvers_agree() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[domain]\nnx = 6\nny = 6\n\n[problem]\nb = 0.3\ng = { kind = \"gaussian\", amplitude = -40.0, x0 = 0.6, y0 = 0.6, width = 0.3 }\n\n[solver]\ntol = 1e-12\n",
    );
    let (a, b) = (tmp.path().join("psor"), tmp.path().join("pdas"));
    assert_eq!(code(&run(&["solve", "--solver", "psor"], Some(&cfg), &a)), 0);
    assert_eq!(code(&run(&["solve", "--solver", "pdas"], Some(&cfg), &b)), 0);
    let (ua, ub) = (column(&a.join("solution.csv"), "u"), column(&b.join("solution.csv"), "u"));
    let diff = ua.iter().zip(&ub).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-8, "solvers differ by {diff}");
    assert!(metric(&summary(&b), "active_size") > 0.0);
}

#[test]
fn invalid_weight_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[problem]\nweight = -1.0\n");
    let o = run(&["optimize"], Some(&cfg), &tmp.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("problem.weight"));
}

#[test]
fn bad_input_exits_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.toml", "[domain]\nnx = \"eight\"\n");
    let o = run(&["solve"], Some(&cfg), &out);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain.nx"));
    assert_eq!(code(&run(&["solve", "--solver", "newton"], None, &out)), 1);
    assert_eq!(code(&run(&["solve"], Some(&tmp.path().join("missing.toml")), &out)), 1);
    let cfg = write_config(tmp.path(), "g.toml", "[problem]\ng = { file = \"short.csv\" }\n");
    fs::write(tmp.path().join("short.csv"), "g\n1\n2\n").unwrap();
    let o = run(&["solve"], Some(&cfg), &out);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("problem.g.file"));
}

#[test]
fn non_convergence_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[problem]\ng = { kind = \"constant\", value = -20.0 }\n\n[solver]\nmethod = \"psor\"\nmax_iter = 2\n");
    let o = run(&["solve"], Some(&cfg), &tmp.path().join("a"));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(tmp.path(), "o.toml", "[problem]\nb = 1.0\n\n[optimizer]\nmax_iter = 1\n");
    let out = tmp.path().join("b");
    assert_eq!(code(&run(&["optimize"], Some(&cfg), &out)), 2);
    // The trace survives a failed run.
    assert!(out.join("trace.csv").is_file());
}

#[test]
fn optimize_zero_optimum() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[problem]\nb = 0.0\n");
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["optimize"], Some(&cfg), &out)), 0);
    assert_layout(&out, &["trace.csv", "control.csv", "state.csv"]);
    assert!(metric(&summary(&out), "cost") <= 1e-12);
}

#[test]
fn optimize_trace_and_control_bound() {
    let tmp = TempDir::new().unwrap();
    for (name, weight) in [("demo", 1.0), ("heavy", 1e3)] {
        let cfg = write_config(
            tmp.path(),
            &format!("{name}.toml"),
            &format!("[problem]\nb = 1.0\nweight = {weight:?}\nq = {{ kind = \"constant\", value = -1.0 }}\n"),
        );
        let out = tmp.path().join(name);
        let o = run(&["optimize"], Some(&cfg), &out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let costs = column(&out.join("trace.csv"), "cost");
        assert!(costs.windows(2).all(|w| w[1] <= w[0]), "{costs:?}");
        let s = summary(&out);
        assert!(metric(&s, "control_norm") <= metric(&s, "control_bound"));
        let cost: Value = serde_json::from_str(&fs::read_to_string(out.join("cost.json")).unwrap()).unwrap();
        assert!((cost["cost"].as_f64().unwrap() - metric(&s, "cost")).abs() <= 1e-12 * (1.0 + metric(&s, "cost")));
    }
}

#[test]
fn optimized_control_reloads_from_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[domain]\nnx = 4\nny = 4\n\n[problem]\nb = 1.0\n");
    let first = tmp.path().join("first");
    assert_eq!(code(&run(&["optimize"], Some(&cfg), &first)), 0);
    let cfg2 = write_config(
        tmp.path(),
        "c2.toml",
        "[domain]\nnx = 4\nny = 4\n\n[problem]\nb = 1.0\ng = { file = \"first/control.csv\" }\n",
    );
    let second = tmp.path().join("second");
    assert_eq!(code(&run(&["solve"], Some(&cfg2), &second)), 0);
    let (a, b) = (metric(&summary(&first), "cost"), metric(&summary(&second), "cost"));
    assert!((a - b).abs() <= 1e-9 * a, "{a} vs {b}");
}

#[test]
fn sweep_constant_solution_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[domain]\nnx = 2\nny = 2\n\n[experiment]\nlevels = 3\n");
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["sweep"], Some(&cfg), &out)), 0);
    assert_layout(&out, &["convergence.csv"]);
    for c in ["error_v", "error_h", "cost_gap"] {
        assert!(column(&out.join("convergence.csv"), c).iter().all(|e| *e <= 1e-11), "{c}");
    }
}

#[test]
fn sweep_smooth_rate() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[domain]\nnx = 2\nny = 2\n\n[problem]\nb = 1.0\ng = { kind = \"constant\", value = 10.0 }\n",
    );
    let out = tmp.path().join("out");
    let o = run(&["sweep", "--levels", "4"], Some(&cfg), &out);
    assert_eq!(code(&o), 0, "{}", fs::read_to_string(out.join("run.log")).unwrap());
    let s = summary(&out);
    assert!(s["rates"]["error_v"].as_f64().unwrap() >= 0.5);
    assert_eq!(s["passed"], true);
}

#[test]
fn sweep_assertion_failure_exits_three() {
    // Two coarse levels cannot resolve a thin contact-free layer, so the
    // error does not decrease.
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[domain]\nnx = 1\nny = 1\n\n[problem]\nb = 0.05\ng = { kind = \"constant\", value = -50.0 }\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["sweep", "--levels", "3"], Some(&cfg), &out)), 3);
    assert_eq!(summary(&out)["passed"], false);
}

#[test]
fn sampled_sweeps() {
    let tmp = TempDir::new().unwrap();
    for (kind, table) in [
        ("lipschitz", "lipschitz.csv"),
        ("parallelogram", "parallelogram.csv"),
        ("cost_bound", "cost_bound.csv"),
        ("gradient", "gradient.csv"),
    ] {
        let cfg = write_config(
            tmp.path(),
            &format!("{kind}.toml"),
            &format!("[domain]\nnx = 5\nny = 5\n\n[problem]\nb = 0.5\n\n[experiment]\nsweep = \"{kind}\"\ntrials = 6\ndirections = 3\n"),
        );
        let out = tmp.path().join(kind);
        let o = run(&["sweep", "--seed", "3"], Some(&cfg), &out);
        assert_eq!(code(&o), 0, "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        assert_layout(&out, &[table]);
        let s = summary(&out);
        assert_eq!(s["seed"], 3);
        assert_eq!(s["passed"], true);
    }
}

#[test]
fn sweep_control_reports_first_order_state_limit() {
    // Controls converge fast, but linear elements give the state only O(h)
    // in H1: three halvings cannot reduce its error tenfold, so that single
    // assertion fails and the run exits 3.
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[domain]\nnx = 2\nny = 2\n\n[problem]\nb = 1.0\n\n[experiment]\nsweep = \"control\"\nlevels = 4\n",
    );
    let out = tmp.path().join("out");
    let o = run(&["sweep"], Some(&cfg), &out);
    assert_eq!(code(&o), 3, "{}", fs::read_to_string(out.join("run.log")).unwrap());
    let d = column(&out.join("convergence.csv"), "control_distance");
    assert!(d[0] / d[d.len() - 1] >= 10.0);
    let s = summary(&out);
    let failed: Vec<&str> = s["assertions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|a| a["passed"] == false)
        .map(|a| a["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["error_v_tenfold_reduction"]);
}

#[test]
fn scan_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[domain]\nnx = 6\nny = 6\n\n[problem]\nb = 0.5\n\n[experiment]\ntrials = 10\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["scan", "--seed", "42"], Some(&cfg), &a)), 0);
    assert_eq!(code(&run(&["scan", "--seed", "42"], Some(&cfg), &b)), 0);
    assert_layout(&a, &["scan.csv"]);
    for f in ["scan.csv", "summary.json", "config.toml", "run.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let s = summary(&a);
    assert_eq!(metric(&s, "records"), 90.0);
    assert_eq!(metric(&s, "implication_failures"), 0.0);
    let c = tmp.path().join("c");
    assert_eq!(code(&run(&["scan", "--seed", "43"], Some(&cfg), &c)), 0);
    assert_ne!(fs::read(a.join("scan.csv")).unwrap(), fs::read(c.join("scan.csv")).unwrap());
}

#[test]
fn config_snapshot_reproduces_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[domain]\nnx = 5\nny = 5\n\n[problem]\nb = 0.4\ng = { kind = \"affine\", a0 = -10.0, ax = 5.0, ay = 0.0 }\n");
    let a = tmp.path().join("a");
    assert_eq!(code(&run(&["solve", "--solver", "psor"], Some(&cfg), &a)), 0);
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&["solve"], Some(&a.join("config.toml")), &b)), 0);
    assert_eq!(fs::read(a.join("solution.csv")).unwrap(), fs::read(b.join("solution.csv")).unwrap());
}
