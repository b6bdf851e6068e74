use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_RUN: &str = r#"
seed = 9

[oracle]
name = "quartic"
dim = 2
sigma0 = 1.0
sigma1 = 0.0
box_radius = 1.0

[convergence]
optimizer = "rmsprop"
eps = 1.0
seeds = 3
x0 = 0.25
"#;

const SMALL_SCALE: &str = r#"
seed = 2

[oracle]
name = "quartic"
dim = 1
sigma0 = 1.0
sigma1 = 0.0
box_radius = 2.5

[scaling]
optimizer = "rmsprop"
eps = [1.6, 0.8, 0.4]
seeds = 4
x0 = 2.0
"#;

const SMALL_PARITY: &str = r#"
seed = 5

[oracle]
name = "logistic_toy"
n = 64
dim = 3
batch = 8
data_seed = 0
label_noise = 0.1

[parity]
steps = 200
seeds = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_affine-adam"))
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn invoke(config: Option<&Path>, out: &Path, args: &[&str]) -> Output {
    let mut cmd = bin();
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(Result::unwrap).collect()
}

#[test]
fn run_writes_one_row_per_seed_plus_aggregate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_RUN);
    let out = dir.path().join("out");
    let o = invoke(Some(&cfg), &out, &["run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out.join("convergence.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| &r[0] == "seed").count(), 3);
    assert_eq!(&rows[3][0], "aggregate");
    assert!(out.join("schedule.toml").exists());
    assert!(fs::read_to_string(out.join("convergence.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn rerun_is_byte_identical_and_seed_override_changes_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_RUN);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&invoke(Some(&cfg), &a, &["run"])), 0);
    assert_eq!(code(&invoke(Some(&cfg), &b, &["--jobs", "1", "run"])), 0);
    assert_eq!(code(&invoke(Some(&cfg), &c, &["--seed", "10", "run"])), 0);
    let read = |d: &Path| fs::read(d.join("convergence.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn verify_lemmas_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("lemmas");
    let ok = invoke(None, &out, &["verify-lemmas", "--cases", "200"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let rows = read_rows(&out.join("lemmas.csv"));
    assert!(rows.iter().all(|r| &r[10] == "true"));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("violations.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().map(Vec::len), Some(0));

    let bad = invoke(None, &dir.path().join("bug"), &["verify-lemmas", "--cases", "200", "--inject-bug"]);
    assert_eq!(code(&bad), 1);
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("bug/violations.json")).unwrap()).unwrap();
    assert!(!v.as_array().unwrap().is_empty());

    let zero = invoke(None, &dir.path().join("zero"), &["verify-lemmas", "--cases", "0"]);
    assert_eq!(code(&zero), 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let missing_oracle = write_config(&dir, "a.toml", "seed = 1\n[convergence]\neps = 0.5\nx0 = 0.1\n");
    let o = invoke(Some(&missing_oracle), &out, &["run"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("oracle"));

    let unknown_key = write_config(&dir, "b.toml", &format!("{SMALL_RUN}\nbogus = 1\n"));
    assert_eq!(code(&invoke(Some(&unknown_key), &out, &["run"])), 2);

    let no_section = write_config(&dir, "c.toml", SMALL_RUN);
    assert_eq!(code(&invoke(Some(&no_section), &out, &["parity"])), 2);

    assert_eq!(code(&invoke(None, &out, &["run"])), 2);
    assert_eq!(code(&invoke(Some(&dir.path().join("nope.toml")), &out, &["run"])), 2);
    assert_eq!(code(&invoke(Some(&no_section), &out, &["--jobs", "0", "run"])), 2);
}

#[test]
fn scale_study_reports_slopes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scale.toml", SMALL_SCALE);
    let out = dir.path().join("out");
    let o = invoke(Some(&cfg), &out, &["scale-study"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out.join("scale.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[3][0], "slope");
    assert!(out.join("scale.svg").exists());
}

#[test]
fn parity_reports_gap() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "parity.toml", SMALL_PARITY);
    let out = dir.path().join("out");
    let o = invoke(Some(&cfg), &out, &["parity"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("parity.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    let gap = header.iter().position(|h| h == "final_loss_gap").unwrap();
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let g: f64 = rows[0][gap].parse().unwrap();
    assert!(g.is_finite() && g >= 0.0);
    assert!(out.join("parity_curve.csv").exists());
}

#[test]
fn estimators_write_fits() {
    let dir = TempDir::new().unwrap();
    let smooth = write_config(
        &dir,
        "s.toml",
        r#"
seed = 3
[oracle]
name = "exp_sum"
dim = 1
sigma0 = 0.1
[smoothness]
eta = 0.02
steps = 100
x0 = 2.0
"#,
    );
    let out = dir.path().join("s");
    let o = invoke(Some(&smooth), &out, &["estimate-smoothness"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_rows(&out.join("smoothness_samples.csv")).len() >= 10);
    assert!(!read_rows(&out.join("smoothness_fit.csv")).is_empty());

    let noise = write_config(
        &dir,
        "n.toml",
        r#"
seed = 4
[oracle]
name = "gaussian_linreg"
dim = 1
[noise]
points = [0.5, 1.0, 2.0]
samples = 500
"#,
    );
    let out = dir.path().join("n");
    let o = invoke(Some(&noise), &out, &["estimate-noise"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_rows(&out.join("noise_points.csv")).len(), 3);
    assert!(!read_rows(&out.join("noise_fit.csv")).is_empty());
}
