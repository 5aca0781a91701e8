use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use simplex_score::assembly::{sample_removed, DeltaPolicy, LossConfig};
use simplex_score::evaluation::roc_auc;
use simplex_score::model::{Mode, ModelSpec};
use simplex_score::sampling::{banded_k, sample_ab_mcmc, McmcOptions};
use simplex_score::solver::{fit_path, PathGrid, SolverOptions};
use simplex_score::weights::{Truncation, WeightSpec};
use simplex_score_cli::io::{read_dataset, write_dataset, Ingest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simplex-score"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_banded(dir: &Path, m: usize, n: usize, seed: u64) {
    let out = run(&[
        "simulate", "--m", &m.to_string(), "--n", &n.to_string(), "--bandwidth", "1",
        "--burn-in", "500", "--thin", "2", "--seed", &seed.to_string(), "--out", s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_estimate_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_banded(&sim, 6, 150, 1);
    let truth = json(&sim.join("truth.json"));
    assert_eq!(truth["schema_version"], 1);
    assert_eq!(truth["m"], 6);

    let est = tmp.path().join("est");
    let out = run(&[
        "estimate", s(&sim.join("data.csv")), "--eta-known-zero", "--n-lambda", "15",
        "--folds", "3", "--out", s(&est),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let e = json(&est.join("estimate.json"));
    assert_eq!(e["path"].as_array().unwrap().len(), 15);
    assert_eq!(e["all_converged"], true);
    let star = e["cv"]["lambda_star"].as_f64().unwrap();
    assert_eq!(e["selected"]["lambda"].as_f64().unwrap(), star);
    assert!(e["delta"].as_f64().unwrap() > 1.0);
    let k_hat = e["selected"]["params"]["k"].as_array().unwrap();
    assert_eq!(k_hat.len(), 6);
    assert!(k_hat.iter().all(|row| row.as_array().unwrap().len() == 6));
    let nnz = e["path"].as_array().unwrap().iter().map(|p| p["nonzero_off"].as_u64().unwrap()).max().unwrap();
    assert!(nnz <= 30);

    let ev = tmp.path().join("ev");
    let out = run(&["eval", s(&est), "--truth", s(&sim.join("truth.json")), "--out", s(&ev)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&ev.join("metrics.json"));
    let auc = m["auc_table"][0]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(m["auc_table"][0]["h_exponent"].as_f64().unwrap(), 2.0);
    assert_eq!(m["estimates"][0]["roc"].as_array().unwrap().len(), 15);
}

#[test]
fn am1_with_nonzero_a_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_banded(&sim, 4, 30, 2);
    let out = run(&["estimate", s(&sim.join("data.csv")), "--mode", "am1", "--a", "0.5", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn malformed_csv_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "x1,x2\n0.5,0.5\n0.2,oops\n").unwrap();
    let out = run(&["estimate", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn off_simplex_rows_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "0.5,0.6\n0.2,0.8\n").unwrap();
    let out = run(&["estimate", s(&bad), "--folds", "0", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn usage_error_exits_2() {
    let out = run(&["estimate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mismatched_truth_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_banded(&a, 4, 40, 3);
    simulate_banded(&b, 5, 40, 3);
    let est = tmp.path().join("est");
    let out = run(&["estimate", s(&a.join("data.csv")), "--folds", "0", "--n-lambda", "5", "--out", s(&est)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["eval", s(&est.join("estimate.json")), "--truth", s(&b.join("truth.json")), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn csv_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_banded(&sim, 5, 50, 4);
    let spec = ModelSpec::new(0.0, 0.0, Mode::Am1).unwrap();
    let d = read_dataset(&sim.join("data.csv"), &spec, Ingest::Compositions).unwrap();
    let copy = tmp.path().join("copy.csv");
    write_dataset(&copy, &d).unwrap();
    let e = read_dataset(&copy, &spec, Ingest::Compositions).unwrap();
    let worst = d
        .rows()
        .zip(e.rows())
        .flat_map(|(r, q)| r.iter().zip(q.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn counts_are_closed() {
    let tmp = tempfile::tempdir().unwrap();
    let counts = tmp.path().join("counts.csv");
    fs::write(&counts, "a,b,c\n1,2,1\n0,3,5\n").unwrap();
    let spec = ModelSpec::new(0.0, 0.0, Mode::Am1).unwrap();
    let d = read_dataset(&counts, &spec, Ingest::Counts { pseudocount: 1.0 }).unwrap();
    assert_eq!(d.labels().unwrap(), ["a", "b", "c"]);
    let r = d.rows().nth(1).unwrap();
    assert!((r[0] - 1.0 / 11.0).abs() < 1e-15 && (r[2] - 6.0 / 11.0).abs() < 1e-15);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_banded(&sim, 5, 60, 5);
    let data = sim.join("data.csv");
    let mut bytes = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let dir = tmp.path().join(format!("e{i}"));
        let out = run(&[
            "--threads", threads, "estimate", s(&data), "--n-lambda", "8", "--folds", "3", "--out", s(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(dir.join("estimate.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);

    let again = tmp.path().join("sim2");
    simulate_banded(&again, 5, 60, 5);
    assert_eq!(fs::read(data).unwrap(), fs::read(again.join("data.csv")).unwrap());
}

#[test]
fn difftest_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let alpha = "2,3,2,3";
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let out = run(&["simulate", "--n", "30", "--dirichlet-alpha", alpha, "--seed", seed, "--out", s(dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let rep = tmp.path().join("rep");
    let out = run(&[
        "difftest", s(&a.join("data.csv")), s(&b.join("data.csv")), "--B", "9", "--n-lambda", "6",
        "--folds", "3", "--out", s(&rep),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&rep.join("report.json"));
    let p = r["result"]["global_p"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(r["replicates"], 9);
    assert_eq!(r["degrees"].as_array().unwrap().len(), 4);
}

/// The CLI defaults reproduce the support-recovery study: banded truth,
/// h(x) = x², no truncation, five seeded removed coordinates, δ from the
/// bound with τ = 4 and η held at zero.
#[test]
fn cli_pipeline_reproduces_library_auc() {
    let (m, n, seed) = (20, 400, 7u64);
    let truth = banded_k(m, 2).unwrap();
    let data = sample_ab_mcmc(&ModelSpec::am1(), &truth, n, &McmcOptions { seed, ..McmcOptions::default() }).unwrap();
    let cfg = LossConfig {
        spec: ModelSpec::am1(),
        weights: WeightSpec::power(m, 2.0).with_truncation(Truncation::Quantile(1.0)),
        removed: sample_removed(m, 5, seed).unwrap(),
        delta: DeltaPolicy::Bound(4.0),
    };
    let solver = SolverOptions { eta_known_zero: true, ..SolverOptions::default() };
    let path = fit_path(&cfg.build(&data).unwrap(), &solver, &PathGrid::default()).unwrap();
    let expected = roc_auc(&path, &truth).unwrap().auc;

    let tmp = tempfile::tempdir().unwrap();
    let (sim, est, ev) = (tmp.path().join("sim"), tmp.path().join("est"), tmp.path().join("ev"));
    let seed_s = seed.to_string();
    let (csv, truth_json) = (sim.join("data.csv"), sim.join("truth.json"));
    let steps: [Vec<&str>; 3] = [
        vec!["simulate", "--m", "20", "--n", "400", "--bandwidth", "2", "--seed", &seed_s, "--out", s(&sim)],
        vec!["estimate", s(&csv), "--eta-known-zero", "--folds", "0", "--seed", &seed_s, "--out", s(&est)],
        vec!["eval", s(&est), "--truth", s(&truth_json), "--out", s(&ev)],
    ];
    for args in &steps {
        let out = run(args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let auc = json(&ev.join("metrics.json"))["auc_table"][0]["auc"].as_f64().unwrap();
    assert!((auc - expected).abs() <= 1e-12, "cli {auc} vs library {expected}");
    assert!(auc > 0.8, "{auc}");
}
