use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn reldiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reldiff")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn reference_field_validates() {
    let o = reldiff(&["validate-field", "--config", &config("reference.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for check in ["positivity PASS", "bianchi    PASS", "two-point  PASS"] {
        assert!(out.contains(check), "{out}");
    }
}

#[test]
fn spacelike_spectrum_is_rejected() {
    let o = reldiff(&["validate-field", "--config", &config("spacelike.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("covariance not PSD"), "{}", stdout(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = reldiff(&["kubo", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read"), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "seed = 1\n[field]\nn_modes = \"many\"\n");
    let o = reldiff(&["validate-field", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("n_modes"), "{err}");
}

#[test]
fn run_without_out_is_a_usage_error() {
    let o = reldiff(&["run", "--config", &config("smoke.toml")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analytic_profile_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = reldiff(&["kubo", "--config", &config("kubo-exponential.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("kubo.json")).unwrap()).unwrap();
    // g = A e^{-r u}: κ² = 4∫ g'(s²) ds = -2A √(π r)
    let expected = -2.0 * 0.01 * (std::f64::consts::PI * 2.0).sqrt();
    let h = report["kappa2_h"]["computed"].as_f64().unwrap();
    assert!((h - expected).abs() < 1e-10 * expected.abs(), "{h} vs {expected}");
    assert_eq!(report["kappa2_h"]["negative"], true);
}

#[test]
fn zero_field_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "[kubo.profile]\nkind = \"field\"\ncoupling = 0.0\nn_modes = 16\nn_seeds = 4\ngrid_points = 16\n",
    );
    let o = reldiff(&["kubo", "--config", &path]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("kappa2 (H route) = 0e0"), "{}", stdout(&o));
}

#[test]
fn undecayed_profile_is_not_resolved() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("s,H1,H\n");
    for i in 0..50 {
        table.push_str(&format!("{},{},0\n", i as f64 * 0.1, 1.0 / (1.0 + i as f64 * 0.01)));
    }
    std::fs::write(dir.path().join("profile.csv"), table).unwrap();
    let path = write_config(dir.path(), "[kubo.profile]\nkind = \"table\"\npath = \"profile.csv\"\n");
    let o = reldiff(&["kubo", "--config", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("correlation not resolved"), "{}", stdout(&o));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(m: &serde_json::Value) -> Vec<(String, String)> {
    m["experiments"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|e| e["outputs"].as_array().unwrap().iter())
        .map(|f| (f["path"].as_str().unwrap().to_owned(), f["sha256"].as_str().unwrap().to_owned()))
        .collect()
}

#[test]
fn smoke_run_passes_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("smoke.toml");
    let o = reldiff(&["run", "--config", &cfg, "--out", a.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let o = reldiff(&["run", "--config", &cfg, "--out", b.path().to_str().unwrap(), "--workers", "3"]);
    assert_eq!(o.status.code(), Some(0));

    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma["pass"], true);
    let sums = checksums(&ma);
    assert!(sums.len() >= 10);
    assert_eq!(sums, checksums(&mb));
    for (path, _) in &sums {
        assert!(a.path().join(path).is_file(), "{path}");
    }
    assert!(std::fs::read_to_string(a.path().join("summary.txt")).unwrap().contains("overall PASS"));
}

#[test]
fn seed_override_changes_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"
[[experiment]]
name = "walk"
kind = "diffusion-ensemble"
params = { kappa2 = 1.0, particle = { mass = 1.0, c = 1.0 }, kind = "schay-dudley-proper" }
n_particles = 50
horizon = 1.0
step = 0.1
checkpoints = [1.0]
"#,
    );
    reldiff(&["run", "--config", &path, "--out", a.path().to_str().unwrap(), "--seed", "1"]);
    reldiff(&["run", "--config", &path, "--out", b.path().to_str().unwrap(), "--seed", "2"]);
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma["seed"], 1);
    assert_ne!(checksums(&ma), checksums(&mb));
}

#[test]
fn failing_experiment_exits_nonzero_and_still_writes_manifest() {
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"
[[experiment]]
name = "ok"
kind = "diffusion-ensemble"
params = { kappa2 = 1.0, particle = { mass = 1.0, c = 1.0 }, kind = "schay-dudley-proper" }
n_particles = 20
horizon = 1.0
step = 0.1
checkpoints = [1.0]

[[experiment]]
name = "bad"
kind = "diffusion-ensemble"
params = { kappa2 = 1.0, particle = { mass = 1.0, c = 1.0 }, kind = "schay-dudley-proper" }
n_particles = 20
horizon = 1.0
step = 0.1
checkpoints = [2.0]
"#,
    );
    let o = reldiff(&["run", "--config", &path, "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(out.path());
    assert_eq!(m["experiments"][0]["status"], "pass");
    assert_eq!(m["experiments"][1]["status"], "error");
    assert_eq!(m["pass"], false);
}
