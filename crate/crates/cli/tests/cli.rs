//! End-to-end checks of the command-line surface: exit-code discipline,
//! configuration rejection, and the shape of the emitted data files.

use std::path::Path;
use std::process::Command;

fn rcm(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

const BASE: &str = r#"
[system]
kind = "builtin_example"

[grid]
t_back = 8.0
t_fwd = 2.0
h = 0.02

[xi_grid]
min = -1.0
max = 1.0
count = 11

[run]
seeds = [1, 2]
eps = [0.2, 0.1, 0.05]
lyapunov_t = 2.0
"#;

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcm(&["expand", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", "this is not toml [");
    let out = rcm(&["expand"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gamma_not_below_beta_rejected_at_parse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BASE.to_string()
        + r#"
[trichotomy]
k = 1.0
beta = 1.0
gamma = 1.0
"#;
    write(dir.path(), "rcm.toml", &cfg);
    let out = rcm(&["trichotomy"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta"), "stderr: {err}");
}

#[test]
fn unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", &(BASE.to_string() + "\n[bogus]\nx = 1\n"));
    let out = rcm(&["expand"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trichotomy_passes_for_builtin_and_zero_lipschitz_margin() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", BASE);
    let out = rcm(&["trichotomy"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("out/trichotomy_report.txt")).unwrap();
    assert!(report.contains("hypothesis_pass = true"));
    assert!(report.contains("gap_holds = true"));
    assert!(report.contains("lambda_c_mean"));
}

#[test]
fn polynomial_zero_lipschitz_has_zero_margin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[system]
kind = "polynomial"
n = 1
m = 1
a_c = [[0.0]]
a_s = [[-1.0]]
lipschitz = 0.0

[trichotomy]
k = 1.0
beta = 1.0
gamma = 0.0

[grid]
t_back = 5.0
t_fwd = 2.0
h = 0.02

[xi_grid]
min = -1.0
max = 1.0
count = 5

[run]
seeds = [1]
lyapunov_t = 2.0
"#;
    write(dir.path(), "rcm.toml", cfg);
    let out = rcm(&["trichotomy"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("out/trichotomy_report.txt")).unwrap();
    assert!(report.contains("gap_margin = 0.0000000000000000e0"), "{report}");
}

#[test]
fn expand_emits_deterministic_hd_and_seed_dependent_h1() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", BASE);
    let out = rcm(&["expand"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |seed: u64| -> Vec<Vec<f64>> {
        let text =
            std::fs::read_to_string(dir.path().join(format!("out/expansion_seed{seed}.txt")))
                .unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "xi Hd H1 H2");
        lines
            .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
            .collect()
    };
    let a = read(1);
    let b = read(2);
    assert_eq!(a.len(), 11);
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[0], rb[0]); // same xi column
        assert_eq!(ra[1], rb[1]); // identical deterministic column
        let xi = ra[0];
        assert!((ra[1] + xi * xi).abs() < 1e-2, "Hd({xi}) = {}", ra[1]);
    }
    // the stochastic columns differ between seeds
    assert!(a.iter().zip(&b).any(|(ra, rb)| ra[2] != rb[2]));
}

#[test]
fn oracle_emits_rows_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "rcm.toml",
        &BASE.replace("count = 11", "count = 3"),
    );
    let out = rcm(&["oracle"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/oracle.txt")).unwrap();
    let rows = text.lines().count() - 1;
    assert_eq!(rows, 2 * 3 * 3); // seeds x eps x xi points
    // eps = 0 is allowed and matches the deterministic manifold
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first.split_whitespace().count(), 7);
}

#[test]
fn horizon_beyond_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "rcm.toml",
        &BASE.replace("lyapunov_t = 2.0", "lyapunov_t = 2.0\ninvariance_horizon = 50.0"),
    );
    let out = rcm(&["invariance"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn worker_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", BASE);
    let out = Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(["expand", "--out", "enved"])
        .env("RCM_WORKERS", "2")
        .current_dir(dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("enved/expansion_seed1.txt").exists());
}

#[test]
fn seed_offset_shifts_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rcm.toml", BASE);
    let out = rcm(&["expand", "--out", "shifted", "--seed-offset", "10"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("shifted/expansion_seed11.txt").exists());
    assert!(dir.path().join("shifted/expansion_seed12.txt").exists());
}
