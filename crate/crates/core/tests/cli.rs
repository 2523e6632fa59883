//! End-to-end runs of the `gensemcom` binary.

use std::path::Path;
use std::process::{Command, Output};

use gensemcom::denoiser::Denoiser;
use gensemcom::harness::report::{read_result_rows, RESULT_COLUMNS};
use gensemcom::mlp::Mlp;

const SMALL: &str = r#"
[sweep]
snr_db = [0.0, 5.0, 10.0, 15.0, 20.0]
seeds = [0, 1]
n = 40

[ablation]
seeds = [0, 1]
n = 40

[prop1]
n_samples = 10000
dim = 64

[train]
hidden = 16
iterations = 200
batch_size = 32
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gensemcom"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).env_remove("GENSEMCOM_OUT_DIR").args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn with_config(extra: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    (dir, path.to_string_lossy().into_owned())
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["selftest", "--out", "st"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("st/selftest.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(!csv.contains(",false"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[chanel]\nsnr_db = 5.0\n").unwrap();
    let out = run(dir.path(), &["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chanel"));
    let out = run(dir.path(), &["sweep", "--config", "does-not-exist.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let (dir, cfg) = with_config("[denoiser]\nkind = \"mlp\"\ncheckpoint = \"nope.ckpt\"\n");
    let out = run(dir.path(), &["sweep", "--config", &cfg, "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn prop1_negative_control_fails_with_exit_one() {
    let (dir, cfg) = with_config("");
    std::fs::write(&cfg, SMALL.replace("[prop1]\n", "[prop1]\nmisindex_alpha_bar = true\n")).unwrap();
    let out = run(dir.path(), &["verify-prop1", "--config", &cfg, "--out", "p"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance failure"));
    assert!(dir.path().join("p/prop1.csv").exists());
}

#[test]
fn prop1_reduces_to_the_plain_forward_level() {
    let (dir, cfg) = with_config("");
    let text = SMALL.replace(
        "[prop1]\n",
        "[pipeline]\nt_f1 = 5\nt_f2 = 0\n\n[channel]\nsnr_db = inf\n\n[prop1]\ngamma_mode = \"forced_unit\"\n",
    );
    std::fs::write(&cfg, text).unwrap();
    let out = run(dir.path(), &["verify-prop1", "--config", &cfg, "--out", "p"]);
    assert_eq!(out.status.code(), Some(0));
    let mut r = csv::Reader::from_path(dir.path().join("p/prop1.csv")).unwrap();
    let predicted: f64 = r.records().next().unwrap().unwrap()[3].parse().unwrap();
    let s = gensemcom::schedule::NoiseSchedule::latent_default();
    assert!((predicted - (1.0 - s.alpha_bar(100))).abs() < 1e-12);
}

#[test]
fn sweep_rows_header_plot_and_thread_independence() {
    let (dir, cfg) = with_config("");
    let a = run(dir.path(), &["sweep", "--config", &cfg, "--out", "a", "--jobs", "1"]);
    let b = run(dir.path(), &["sweep", "--config", &cfg, "--out", "b", "--jobs", "3"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let ca = std::fs::read(dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(ca, std::fs::read(dir.path().join("b/sweep.csv")).unwrap());
    let header = String::from_utf8_lossy(&ca).lines().next().unwrap().to_string();
    assert_eq!(header, RESULT_COLUMNS.join(","));

    let rows = read_result_rows(&dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(rows.len(), 5 * 2 * 2);
    assert!(rows.iter().all(|r| r.mse.is_finite() && r.sw2.is_finite() && r.mmd2.is_finite()));

    let svg = std::fs::read_to_string(dir.path().join("a/sweep.svg")).unwrap();
    assert_eq!(svg, std::fs::read_to_string(dir.path().join("b/sweep.svg")).unwrap());
    assert_eq!(svg.matches("class=\"series\"").count(), 2);
    assert_eq!(svg.matches("class=\"marker\"").count(), 10);

    let c = run(dir.path(), &["sweep", "--config", &cfg, "--out", "c", "--baseline", "off", "--plot", "off"]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(read_result_rows(&dir.path().join("c/sweep.csv")).unwrap().len(), 10);
    assert!(!dir.path().join("c/sweep.svg").exists());

    let d = run(dir.path(), &["sweep", "--config", &cfg, "--out", "d", "--seed", "7", "--baseline", "off"]);
    assert_eq!(d.status.code(), Some(0));
    let rows = read_result_rows(&dir.path().join("d/sweep.csv")).unwrap();
    assert!(rows.len() == 5 && rows.iter().all(|r| r.seed == 7));
}

#[test]
fn output_directory_from_environment() {
    let (dir, cfg) = with_config("");
    let target = dir.path().join("from-env");
    let out = bin()
        .current_dir(dir.path())
        .env("GENSEMCOM_OUT_DIR", &target)
        .args(["selftest", "--config", &cfg])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("selftest.csv").exists());
}

#[test]
fn ablation_grid_cardinality() {
    let (dir, cfg) = with_config("");
    let out = run(dir.path(), &["ablate", "--config", &cfg, "--out", "a"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = read_result_rows(&dir.path().join("a/ablation.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2 + 2);
    let cells: std::collections::BTreeSet<(usize, usize, String)> =
        rows.iter().filter(|r| r.variant == "proposed").map(|r| (r.t_f1, r.t_f2, r.t_b_mode.clone())).collect();
    assert_eq!(cells.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.variant == "random_noise").count(), 2);
}

#[test]
fn training_is_reproducible_and_checkpoint_round_trips() {
    let (dir, cfg) = with_config("");
    assert_eq!(run(dir.path(), &["train", "--config", &cfg, "--out", "a"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["train", "--config", &cfg, "--out", "b"]).status.code(), Some(0));
    let ck = |d: &str| std::fs::read(dir.path().join(d).join("mlp.ckpt")).unwrap();
    assert_eq!(ck("a"), ck("b"));
    assert_eq!(
        std::fs::read(dir.path().join("a/train_loss.csv")).unwrap(),
        std::fs::read(dir.path().join("b/train_loss.csv")).unwrap()
    );
    let m = Mlp::load(&dir.path().join("a/mlp.ckpt")).unwrap();
    let again = Mlp::from_bytes(&ck("b")).unwrap();
    let z = vec![0.3; 32];
    assert_eq!(m.predict(&z, 123, None).unwrap(), again.predict(&z, 123, None).unwrap());

    // The trained checkpoint drives a sweep.
    let ckpt = dir.path().join("a/mlp.ckpt");
    let text = format!("{SMALL}\n[denoiser]\nkind = \"mlp\"\ncheckpoint = \"{}\"\n", ckpt.display());
    std::fs::write(&cfg, text).unwrap();
    let out = run(dir.path(), &["sweep", "--config", &cfg, "--out", "m", "--seed", "0", "--baseline", "off"]);
    assert_eq!(out.status.code(), Some(0));
}
