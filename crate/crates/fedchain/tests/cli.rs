//! Black-box tests of the `fedchain` binary: exit codes, machine-readable
//! errors, and byte-for-byte reproducible outputs.

use std::path::Path;
use std::process::{Command, Output};

fn fedchain(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedchain"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TOY_CONFIG: &str = "\
seed=7
mode=stochastic
n_clients=4
n_miners=2
epochs=2
lr=0.1
feature_dim=6
hidden_widths=5
label_count=3
labels_per_client=3
total_samples=48
test_samples=24
k_frac=0.2
lambda=0.8
budget_s=30
";

#[test]
fn print_default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedchain(&["--print-default-config"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n_clients=50"));
    assert!(text.contains("lambda=auto"));
}

#[test]
fn simulate_is_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.cfg"), TOY_CONFIG).unwrap();
    for run in ["a", "b"] {
        let out = fedchain(
            &["--config", "toy.cfg", "--out", run, "simulate"],
            dir.path(),
        );
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["metrics.csv", "summary.json", "ledger.chain", "solution_trace.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} not reproducible");
    }
    // metrics carry the documented header
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "round,tau_local,tau_up,tau_cross,tau_mine,tau_down,tau_aggre,fork_attempts,bytes_total,cum_time_s,test_loss,test_acc"
    ));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.cfg"), TOY_CONFIG).unwrap();
    let a = fedchain(
        &["--config", "toy.cfg", "--seed", "1", "--out", "s1", "simulate"],
        dir.path(),
    );
    let b = fedchain(
        &["--config", "toy.cfg", "--seed", "2", "--out", "s2", "simulate"],
        dir.path(),
    );
    assert!(a.status.success() && b.status.success());
    let ma = std::fs::read(dir.path().join("s1/metrics.csv")).unwrap();
    let mb = std::fs::read(dir.path().join("s2/metrics.csv")).unwrap();
    assert_ne!(ma, mb, "different seeds must produce different runs");
}

#[test]
fn verify_chain_accepts_good_and_rejects_tampered_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.cfg"), TOY_CONFIG).unwrap();
    let out = fedchain(
        &["--config", "toy.cfg", "--out", "run", "simulate"],
        dir.path(),
    );
    assert!(out.status.success());
    let ledger = dir.path().join("run/ledger.chain");

    let ok = fedchain(
        &["verify-chain", "--ledger", ledger.to_str().unwrap()],
        dir.path(),
    );
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["ok"], serde_json::json!(true));
    assert!(parsed["height"].as_u64().unwrap() > 0);

    // truncation: nonzero exit, height reported on stderr
    let bytes = std::fs::read(&ledger).unwrap();
    let truncated = dir.path().join("truncated.chain");
    std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
    let bad = fedchain(
        &["verify-chain", "--ledger", truncated.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&bad.stderr).trim()).unwrap();
    assert!(err["height"].as_u64().is_some(), "stderr: {err}");

    // single byte flip inside some block
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    let flip_path = dir.path().join("flipped.chain");
    std::fs::write(&flip_path, &flipped).unwrap();
    let bad = fedchain(
        &["verify-chain", "--ledger", flip_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedchain(&["--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fedchain(&["simulate", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // malformed config is also a usage problem
    std::fs::write(dir.path().join("bad.cfg"), "lr=not_a_number\n").unwrap();
    let out = fedchain(&["--config", "bad.cfg", "simulate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "machine-readable error expected: {err}");
}

#[test]
fn sweep_emits_one_row_per_compression_level() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.cfg"), TOY_CONFIG).unwrap();
    let out = fedchain(
        &[
            "--config",
            "toy.cfg",
            "sweep",
            "--k-list",
            "0.05,0.2,0.5,1.0",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines.len(), 5, "header plus four arms: {text}");
    assert!(lines[0].starts_with("arm,k_frac,k,lambda,seed"));
}

#[test]
fn estimate_and_optimize_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.cfg"), TOY_CONFIG).unwrap();
    let est = fedchain(&["--config", "toy.cfg", "estimate"], dir.path());
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let params_text = String::from_utf8(est.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&params_text).unwrap();
    assert!(parsed["l_smooth"].as_f64().unwrap() > 0.0);
    std::fs::write(dir.path().join("params.json"), &params_text).unwrap();

    std::fs::write(
        dir.path().join("net.env"),
        "n_clients=4\nn_miners=2\nd=53\ns_bytes=4\ntau_local_s=0.05\n",
    )
    .unwrap();
    let opt = fedchain(
        &[
            "optimize",
            "--env",
            "net.env",
            "--params",
            "params.json",
            "--budget",
            "60",
            "--grid",
            "grid.csv",
            "--grid-size",
            "40",
        ],
        dir.path(),
    );
    assert!(opt.status.success(), "{}", String::from_utf8_lossy(&opt.stderr));
    let sol: serde_json::Value =
        serde_json::from_str(&String::from_utf8(opt.stdout).unwrap()).unwrap();
    let k_star = sol["k_star"].as_u64().unwrap();
    assert!(k_star >= 1 && k_star <= 53);
    assert!(sol["lambda_star"].as_f64().unwrap() > 0.0);
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.trim().lines().count(), 1 + 40 * 40);
}
