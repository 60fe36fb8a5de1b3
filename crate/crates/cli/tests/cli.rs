use std::path::Path;
use std::process::{Command, Output};

fn rbl(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rbl"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("RBL_THREADS", n),
        None => cmd.env_remove("RBL_THREADS"),
    };
    cmd.output().expect("spawn rbl")
}

fn run_csv(dir: &Path, name: &str, threads: &str) -> Vec<u8> {
    let out = dir.join(name);
    let o = rbl(
        &[
            "run",
            "--d",
            "12",
            "--link",
            "cubic",
            "--horizon",
            "400",
            "--n-runs",
            "6",
            "--seed",
            "17",
            "--out",
            out.to_str().unwrap(),
        ],
        Some(threads),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn csv_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_csv(dir.path(), "a.csv", "1");
    let b = run_csv(dir.path(), "b.csv", "3");
    let c = run_csv(dir.path(), "c.csv", "1");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 400);
    assert!(!text.contains('\r'));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"d": 7, "horizon": 9, "link": "identity", "schedule": {"kind": "constant", "eta": 0.1, "sigma": 0.3}}"#).unwrap();
    let o = rbl(
        &["run", "--config", cfg.to_str().unwrap(), "--horizon", "4"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    let eta: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(eta, 0.1);
}

#[test]
fn config_errors_exit_with_3() {
    for args in [
        &["run", "--horizon", "0"][..],
        &["run", "--set", "nope=1"],
        &["run", "--link", "no_such_link"],
        &["run", "--config", "/nonexistent/cfg.json"],
        &["run", "--no-such-flag"],
        &["sweep", "--dims", "3,5,6"],
    ] {
        let o = rbl(args, None);
        assert_eq!(
            o.status.code(),
            Some(3),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = rbl(&["run", "--horizon", "2"], Some("zero"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn quick_verify_passes() {
    let o = rbl(&["verify"], None);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() > 20);
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn counterexample_frozen_dynamics() {
    let o = rbl(
        &[
            "counterexample",
            "--eta",
            "0",
            "--horizon",
            "100",
            "--n-runs",
            "4",
        ],
        None,
    );
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("fraction_max_m_le_0.2=1"), "{text}");
    let o = rbl(&["counterexample", "--sigma", "0.5"], None);
    assert_eq!(o.status.code(), Some(3));
}
