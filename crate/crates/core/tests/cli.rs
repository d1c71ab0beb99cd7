use std::process::Command;

fn vrer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrer"))
}

#[test]
fn run_then_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ac");
    let status = vrer()
        .args(["run", "--env", "cartpole", "--algo", "ac", "--vrer", "on"])
        .args(["--iters", "3", "--n", "40", "--minibatch", "8", "--macro-reps", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("iters=3"), "{config}");

    let cmp = vrer()
        .arg("compare")
        .arg("--a")
        .arg(out.join("curve.csv"))
        .arg("--b")
        .arg(out.join("curve.csv"))
        .output()
        .unwrap();
    assert!(cmp.status.success());
    assert!(!cmp.stdout.is_empty());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "env=acrobot\niters=5\nn=30\nmacro_reps=1\nminibatch=8\n").unwrap();
    let out = dir.path().join("out");
    let status = vrer()
        .args(["run", "--iters", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("env=acrobot") && config.contains("iters=2"), "{config}");
}

#[test]
fn invalid_selection_constant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let output = vrer()
        .args(["run", "--c", "1.0", "--iters", "1", "--macro-reps", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("c must"));
}
