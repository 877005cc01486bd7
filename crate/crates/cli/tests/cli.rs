//! End-to-end runs of the `rqlr` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rqlr(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rqlr"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("RQLR_THREADS", t),
        None => cmd.env_remove("RQLR_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn estimate_reports_identified_set_and_both_coordinates() {
    let out = rqlr(
        &[
            "estimate",
            "--model",
            "one-factor",
            "--n",
            "500",
            "--seed",
            "11",
        ],
        None,
    );
    let v = json(&out);
    let r = &v["result"];
    let cs = r["cross_section"].as_array().unwrap();
    // sd of the endpoints is about 0.13 at n = 500.
    assert!((f(&cs[0]) - 0.5).abs() < 0.4, "{cs:?}");
    assert!((f(&cs[1]) - 2.0).abs() < 0.4, "{cs:?}");
    assert_eq!(r["pi_hat"].as_array().unwrap().len(), 5);
    assert!(r["structural_hat"]["sigma2"].is_number());
    assert!(r["q_value"].as_f64().unwrap() >= 0.0);
    assert!(r["active_bounds"].is_array());
    assert_eq!(v["config"]["seed"], 11);
    assert_eq!(v["config"]["input"]["n"], 500);
}

#[test]
fn missing_value_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "x1,x2,x3\n1,2,3\n0.5,,1\n2,1,0\n").unwrap();
    let out = rqlr(
        &[
            "estimate",
            "--model",
            "one-factor",
            "--data",
            path.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
}

#[test]
fn too_few_columns_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    let mut text = String::from("a,b\n");
    for i in 0..20 {
        text.push_str(&format!("{},{}\n", i, i * i % 7));
    }
    std::fs::write(&path, text).unwrap();
    let out = rqlr(
        &[
            "estimate",
            "--model",
            "one-factor",
            "--data",
            path.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_and_simulated_inputs_agree() {
    // The same data through a file and through the simulator.
    let dir = tempfile::tempdir().unwrap();
    let data = rqlr_core::simulate_dgp(&rqlr_core::DgpSpec {
        structural: rqlr_core::StructuralParams::benchmark(rqlr_core::Model::OneFactor),
        n: 300,
        seed: 5,
    })
    .unwrap();
    let mut text = String::from("x1,x2,x3\n");
    for row in data.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let path = dir.path().join("d.csv");
    std::fs::write(&path, text).unwrap();
    let a = json(&rqlr(
        &[
            "estimate",
            "--model",
            "one-factor",
            "--data",
            path.to_str().unwrap(),
        ],
        None,
    ));
    let b = json(&rqlr(
        &[
            "estimate",
            "--model",
            "one-factor",
            "--n",
            "300",
            "--seed",
            "5",
        ],
        None,
    ));
    assert_eq!(a["result"], b["result"]);
}

#[test]
fn estimate_is_byte_identical_across_runs() {
    let args = [
        "estimate",
        "--model",
        "two-factor",
        "--n",
        "400",
        "--seed",
        "2",
    ];
    let a = rqlr(&args, Some("1"));
    let b = rqlr(&args, Some("3"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn test_command_serializes_the_report() {
    let args = [
        "test",
        "--model",
        "one-factor",
        "--n",
        "400",
        "--seed",
        "4",
        "--beta0",
        "1.0",
        "--draws",
        "500",
    ];
    let a = rqlr(&args, Some("1"));
    let v = json(&a);
    let r = &v["result"];
    assert!(f(&r["qlr"]) >= 0.0);
    assert!(f(&r["cv"]) >= 0.0);
    assert_eq!(r["reject"].as_bool().unwrap(), f(&r["qlr"]) > f(&r["cv"]));
    assert_eq!(r["infeasible"], false);
    assert_eq!(r["critical_value"]["case"], "W1");
    assert_eq!(r["options"]["draws"], 500);
    assert_eq!(a.stdout, rqlr(&args, Some("2")).stdout);
}

#[test]
fn infeasible_null_is_flagged_not_fatal() {
    let v = json(&rqlr(
        &[
            "test",
            "--model",
            "one-factor",
            "--n",
            "300",
            "--seed",
            "4",
            "--beta0=-0.5",
            "--draws",
            "200",
        ],
        None,
    ));
    assert_eq!(v["result"]["infeasible"], true);
    assert_eq!(v["result"]["reject"], true);
    assert!(v["result"]["qlr"].is_null());
}

#[test]
fn test_needs_a_null() {
    let out = rqlr(&["test", "--model", "one-factor", "--n", "300"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_relative_csv_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = rqlr_core::simulate_dgp(&rqlr_core::DgpSpec {
        structural: rqlr_core::StructuralParams::benchmark(rqlr_core::Model::OneFactor),
        n: 300,
        seed: 8,
    })
    .unwrap();
    let mut text = String::from("y,x1,x2,x3\n");
    for (i, row) in data.row_iter().enumerate() {
        text.push_str(&format!("{i},{:?},{:?},{:?}\n", row[0], row[1], row[2]));
    }
    std::fs::write(dir.path().join("data.csv"), text).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
model = "one-factor"
seed = 3
draws = 300

[input]
csv = "data.csv"
columns = ["x1", "x2", "x3"]

[restriction]
beta0 = 1.5

[budget]
alpha_c = 0.012
"#,
    )
    .unwrap();
    let out_path = dir.path().join("report.json");
    let out = rqlr(
        &[
            "test",
            "--config",
            cfg.to_str().unwrap(),
            "--beta0",
            "1.0",
            "--out",
            out_path.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(f(&v["config"]["restriction"]["beta0"]), 1.0);
    assert_eq!(f(&v["result"]["beta0"]), 1.0);
    assert_eq!(f(&v["result"]["options"]["budget"]["alpha_c"]), 0.012);
    assert_eq!(v["config"]["input"]["columns"][0], "x1");
}

#[test]
fn bad_config_file_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "model = \"three-factor\"\n").unwrap();
    let out = rqlr(
        &["estimate", "--config", cfg.to_str().unwrap(), "--n", "100"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = rqlr(
        &[
            "estimate",
            "--config",
            Path::new("/nonexistent/x.toml").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ci_grid_refinement_is_consistent() {
    let base = [
        "ci",
        "--model",
        "one-factor",
        "--n",
        "400",
        "--seed",
        "6",
        "--draws",
        "300",
    ];
    let coarse = json(&rqlr(
        &[&base[..], &["--beta0-grid", "0.2:2.6:0.6"]].concat(),
        None,
    ));
    let fine = json(&rqlr(
        &[&base[..], &["--beta0-grid", "0.2:2.6:0.3"]].concat(),
        None,
    ));
    let points = |v: &Value| v["result"]["ci"]["points"].as_array().unwrap().clone();
    let fine_points = points(&fine);
    // Every coarse point reappears in the fine grid with the same decision.
    for p in points(&coarse) {
        let b = f(&p["beta0"]);
        let q = fine_points
            .iter()
            .find(|q| (f(&q["beta0"]) - b).abs() < 1e-9)
            .expect("nested grid");
        assert_eq!(p["reject"], q["reject"]);
        assert_eq!(p["qlr"], q["qlr"]);
    }
    assert_eq!(fine["result"]["ci"]["empty"], false);
}

#[test]
fn ci_reports_empty_set() {
    let v = json(&rqlr(
        &[
            "ci",
            "--model",
            "one-factor",
            "--n",
            "2000",
            "--seed",
            "6",
            "--draws",
            "300",
            "--beta0-grid",
            "8,9",
        ],
        None,
    ));
    assert_eq!(v["result"]["ci"]["empty"], true);
    assert!(v["result"]["ci"]["hull"].is_null());
}

#[test]
fn simulate_quantiles_lists_candidates() {
    let v = json(&rqlr(
        &[
            "simulate-quantiles",
            "--model",
            "one-factor",
            "--n",
            "400",
            "--seed",
            "1",
            "--beta0",
            "1.0",
            "--draws",
            "300",
        ],
        None,
    ));
    let cands = v["result"]["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 21);
    assert!(cands.iter().all(|c| f(&c["min_draw"]) >= -1e-9));
}

#[test]
fn reject_curve_validates_reps() {
    for reps in ["0", "49"] {
        let out = rqlr(
            &[
                "reject-curve",
                "--model",
                "one-factor",
                "--n",
                "200",
                "--beta0-grid",
                "1",
                "--reps",
                reps,
            ],
            None,
        );
        assert_eq!(out.status.code(), Some(2));
    }
    let out = rqlr(
        &[
            "reject-curve",
            "--model",
            "one-factor",
            "--n",
            "200",
            "--beta0-grid",
            "1",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reject_curve_is_sorted_and_reproducible() {
    let args = [
        "reject-curve",
        "--model",
        "one-factor",
        "--n",
        "250",
        "--beta0-grid",
        "2.0,0.5",
        "--reps",
        "50",
        "--draws",
        "200",
        "--seed",
        "9",
    ];
    let a = rqlr(&args, Some("1"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = rqlr(&args, Some("2"));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text
        .lines()
        .next()
        .unwrap()
        .starts_with("# command: reject-curve"));
    assert!(text.contains("\"seed\":9"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("beta0"))
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0][0] < rows[1][0]);
    for r in rows {
        let (p, se, reps) = (r[1], r[2], r[3]);
        assert!((se - (p * (1.0 - p) / reps).sqrt()).abs() < 1e-15);
    }
}

#[test]
fn bad_thread_count_is_an_input_error() {
    let out = rqlr(
        &["estimate", "--model", "one-factor", "--n", "100"],
        Some("zero"),
    );
    assert_eq!(out.status.code(), Some(2));
}
