//! End-to-end runs of the `barrier-mdp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use barrier_mdp::cli::{CSV_HEADER, EXIT_CERTIFICATE_FAILED, EXIT_INPUT, EXIT_MAX_ITERS, EXIT_OK};
use barrier_mdp::env::{save, save_problem, Problem};
use barrier_mdp::{DistributionRho, Mdp, QTable, Weights};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barrier-mdp"))
        .args(args)
        .env("BARRIER_MDP_LOG", "quiet")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn one_cell(dir: &Path) -> String {
    let path = dir.join("cell.json");
    save(&Mdp::new(1, 1, 0.9, vec![1.0], vec![1.0]).unwrap(), &path).unwrap();
    path.display().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_one_cell_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_cell(dir.path());
    let out = run(&["solve", "--mdp", &mdp, "--eta", "0.1", "--tol", "1e-10"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["termination"], "grad_tol_met");
    let q = report["q_tilde"][0][0].as_f64().unwrap();
    assert!((q - 10.1).abs() <= 1e-8);
    assert!(report["lambda_tilde"][0][0][0].as_f64().unwrap() > 0.0);
}

#[test]
fn certify_one_cell_gives_five_passing_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_cell(dir.path());
    let path = dir.path().join("certs.json");
    let out = run(&[
        "certify",
        "--mdp",
        &mdp,
        "--eta",
        "0.01",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let certs: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let names: Vec<&str> = certs
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "q_error",
            "bellman_error",
            "dual_policy_value",
            "primal_policy_value",
            "policy_value_gap"
        ]
    );
    for c in certs.as_array().unwrap() {
        assert_eq!(c["lower_ok"], true);
        assert_eq!(c["upper_ok"], true);
    }
}

#[test]
fn certify_policy_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(&["gen", "--env", "random:3,4,2"]);
    assert_eq!(code(&gen), EXIT_OK);
    let mdp = dir.path().join("m.json");
    fs::write(&mdp, &gen.stdout).unwrap();
    let policy = dir.path().join("pi.json");
    fs::write(&policy, "[[0.5,0.5],[1,0],[0,1],[0.25,0.75]]").unwrap();
    let out = run(&[
        "certify",
        "--mdp",
        mdp.to_str().unwrap(),
        "--eta",
        "0.01",
        "--policy",
        policy.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = json(&out)
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(names, ["policy_eval_q_error", "policy_eval_bellman_error"]);
}

#[test]
fn failing_certificates_exit_with_their_own_code() {
    // a stochastic model where the policy-value clauses are known to fail
    let dir = tempfile::tempdir().unwrap();
    let gen = run(&["gen", "--env", "random:0,5,3"]);
    let mdp = dir.path().join("m.json");
    fs::write(&mdp, &gen.stdout).unwrap();
    let out = run(&["certify", "--mdp", mdp.to_str().unwrap(), "--eta", "0.1"]);
    let certs = json(&out);
    let all_pass = certs
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["lower_ok"] == true && c["upper_ok"] == true);
    let expected = if all_pass { EXIT_OK } else { EXIT_CERTIFICATE_FAILED };
    assert_eq!(code(&out), expected);
}

#[test]
fn oracle_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_cell(dir.path());
    let out = run(&["oracle", "--mdp", &mdp, "--qstar"]);
    assert_eq!(code(&out), EXIT_OK);
    assert!((json(&out)[0][0].as_f64().unwrap() - 10.0).abs() < 1e-10);
    let pi = dir.path().join("pi.json");
    fs::write(&pi, "[[1.0]]").unwrap();
    let out = run(&["oracle", "--mdp", &mdp, "--policy", pi.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK);
    assert!((json(&out)[0][0].as_f64().unwrap() - 10.0).abs() < 1e-10);
    // exactly one mode
    assert_eq!(code(&run(&["oracle", "--mdp", &mdp])), EXIT_INPUT);
}

#[test]
fn bench_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [&["--warm"][..], &["--cold", "--sequential"][..], &[][..]] {
        let csv = dir.path().join("curve.csv");
        let mut args = vec![
            "bench",
            "--env",
            "chain:4",
            "--etas",
            "0.1,0.01",
            "--csv",
            csv.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert!(rows.iter().any(|r| r[0] == 0.1) && rows.iter().any(|r| r[0] == 0.01));
        assert!(rows.iter().all(|r| r.len() == 5 && r[4] >= 0.0));
    }
    assert_eq!(
        code(&run(&[
            "bench", "--env", "chain:4", "--etas", "0.01,0.1", "--csv", "x.csv"
        ])),
        EXIT_INPUT
    );
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_cell(dir.path());
    assert_eq!(code(&run(&["solve", "--mdp", &mdp])), EXIT_INPUT);
    assert_eq!(code(&run(&["solve", "--mdp", &mdp, "--eta", "-1"])), EXIT_INPUT);
    assert_eq!(
        code(&run(&["solve", "--mdp", "/nonexistent.json", "--eta", "0.1"])),
        EXIT_INPUT
    );
    assert_eq!(
        code(&run(&["solve", "--mdp", &mdp, "--eta", "0.1", "--step", "newton"])),
        EXIT_INPUT
    );
    assert_eq!(code(&run(&["gen", "--env", "lake"])), EXIT_INPUT);
    let broken = dir.path().join("broken.json");
    fs::write(
        &broken,
        r#"{"num_states":1,"num_actions":1,"gamma":0.9,"transition":[[[0.5]]],"reward":[[[0]]]}"#,
    )
    .unwrap();
    let out = run(&["solve", "--mdp", broken.to_str().unwrap(), "--eta", "0.1"]);
    assert_eq!(code(&out), EXIT_INPUT);
}

#[test]
fn iteration_budget_maps_to_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mdp = Mdp::new(2, 1, 0.9, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let problem = Problem {
        rho: DistributionRho::new(QTable::from_fn(2, 1, |s, _| [0.3, 0.7][s])).unwrap(),
        weights: Weights::ones(2, 1),
        mdp,
    };
    save_problem(&problem, &path).unwrap();
    let out = run(&[
        "solve",
        "--mdp",
        path.to_str().unwrap(),
        "--eta",
        "0.01",
        "--max-iters",
        "3",
    ]);
    assert_eq!(code(&out), EXIT_MAX_ITERS);
    assert_eq!(json(&out)["termination"], "max_iters");
}

#[test]
fn bench_terminal_error_sits_under_the_distance_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("chain.csv");
    let out = run(&[
        "bench",
        "--env",
        "chain:3",
        "--etas",
        "0.1",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK);
    let text = fs::read_to_string(&csv).unwrap();
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let mdp = barrier_mdp::env::chain(3, 0.9).unwrap();
    let p = barrier_mdp::barrier::BarrierParams::standard(&mdp, 0.1).unwrap();
    assert!(last[4] <= 0.1 * p.weights.sum() / p.rho.min());
    let iters: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(iters.windows(2).all(|w| w[1] > w[0]));
}
