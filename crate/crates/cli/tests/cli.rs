use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedtwin_cli::{run_experiment, validate, ExperimentConfig, Manifest, RunOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedtwin"));
    c.env("RUST_LOG", "warn");
    c
}

fn shipped() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

const TINY_BURGERS: &str = r#"
experiment = "burgers_rom"
mode = "both"
seed = 3
[fed]
K = 4
B = 4
lr = 0.05
rounds = 3
[model]
hidden = [8, 8]
[burgers]
nx = 32
n_t = 8
n_nu = 5
"#;

const TINY_KS: &str = r#"
experiment = "ks_autoencoder"
mode = "both"
[fed]
K = 2
B = 16
lr = 0.1
rounds = 2
[model]
latent = 4
[ks]
spinup_from = -10.0
train_until = 20.0
t_end = 30.0
bins = 16
"#;

const TINY_SST: &str = r#"
experiment = "sst_autoencoder"
mode = "both"
[fed]
K = 2
B = 8
lr = 0.1
rounds = 2
[model]
latent = 3
arch = "ks"
[sst]
weeks = 40
train_weeks = 30
height = 8
width = 16
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_cli(config: &Path, out: &Path, threads: usize) -> Output {
    bin()
        .args(["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn shipped_configs_validate_clean() {
    let configs = shipped();
    assert_eq!(configs.len(), 3);
    for path in configs {
        let cfg = ExperimentConfig::load(&path).unwrap();
        let v = validate(&cfg);
        assert!(v.errors.is_empty(), "{}: {:?}", path.display(), v.errors);
        assert!(v.warnings.is_empty(), "{}: {:?}", path.display(), v.warnings);
        let out = bin().args(["validate", path.to_str().unwrap()]).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn zero_clients_fails_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &TINY_BURGERS.replace("K = 4", "K = 0"));
    let out = bin().args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fed.K"));
    let out = run_cli(&cfg, &tmp.path().join("run"), 1);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn every_problem_is_reported_at_once() {
    let body = TINY_BURGERS.replace("K = 4", "K = 0").replace("rounds = 3", "rounds = 0");
    let cfg = ExperimentConfig::from_toml(&body).unwrap();
    let fields: Vec<String> = validate(&cfg).errors.into_iter().map(|e| e.field).collect();
    assert!(fields.contains(&"fed.K".to_string()), "{fields:?}");
    assert!(fields.contains(&"fed.rounds".to_string()), "{fields:?}");
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "typo.toml", &format!("{TINY_BURGERS}\nsede = 1\n"));
    let out = bin().args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = tmp.path().join("nope.toml");
    let out = bin().args(["validate", missing.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_batch_is_a_warning() {
    let cfg = ExperimentConfig::from_toml(&TINY_BURGERS.replace("B = 4", "B = 64")).unwrap();
    let v = validate(&cfg);
    assert!(v.errors.is_empty());
    assert!(v.warnings.iter().any(|w| w.field == "fed.B"), "{:?}", v.warnings);
}

#[test]
fn zero_learning_rate_gives_flat_matching_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(&TINY_BURGERS.replace("lr = 0.05", "lr = 0.0")).unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let read = |mode: &str| -> Vec<Vec<f64>> {
        let text = fs::read_to_string(tmp.path().join(format!("rounds_{mode}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("round,train_loss,val_loss,wall_ms"));
        lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let central = read("centralized");
    let fed = read("federated");
    assert_eq!(central.len(), 4);
    assert_eq!(fed.len(), 4);
    for (c, f) in central.iter().zip(&fed) {
        assert_eq!(c[0], f[0]);
        // validation loss is the same computation on the same model
        assert_eq!(c[2], f[2]);
        assert_eq!(c[2], central[0][2]);
        assert_eq!(c[1], central[0][1]);
        assert_eq!(f[1], fed[0][1]);
        // pooled train loss is a weighted mean of client losses, equal up to rounding
        assert!((c[1] - f[1]).abs() <= 1e-12 * c[1].abs());
    }
}

#[test]
fn repeated_runs_are_hash_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, body) in [("b.toml", TINY_BURGERS), ("k.toml", TINY_KS), ("s.toml", TINY_SST)] {
        let cfg = write_config(tmp.path(), name, body);
        let a = tmp.path().join(format!("{name}.a"));
        let b = tmp.path().join(format!("{name}.b"));
        let c = tmp.path().join(format!("{name}.c"));
        for (out, threads) in [(&a, 1), (&b, 1), (&c, 3)] {
            let o = run_cli(&cfg, out, threads);
            assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (ma, mb, mc) = (manifest(&a), manifest(&b), manifest(&c));
        assert_eq!(ma, mb, "{name}");
        // fixed-order aggregation makes the thread count irrelevant too
        assert_eq!(ma, mc, "{name}");
        let mut listed: Vec<String> = ma.files.iter().map(|f| f.path.clone()).collect();
        listed.push("manifest.json".into());
        listed.sort();
        let mut present: Vec<String> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        present.sort();
        assert_eq!(listed, present, "{name}: manifest must cover the run directory");
    }
}

#[test]
fn expected_artifacts_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "k.toml", TINY_KS);
    let out = tmp.path().join("ks");
    assert!(run_cli(&cfg, &out, 1).status.success());
    let names: Vec<String> = manifest(&out).files.into_iter().map(|f| f.path).collect();
    for want in [
        "config.toml",
        "metrics.json",
        "rounds_centralized.csv",
        "rounds_federated.csv",
        "reconstruction_centralized.csv",
        "reconstruction_federated.csv",
        "jointpdf_truth.csv",
        "jointpdf_centralized.csv",
        "jointpdf_federated.csv",
        "autoencoder_centralized.bin",
        "autoencoder_federated.bin",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want}: {names:?}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for mode in ["centralized", "federated"] {
        let js = metrics["modes"][mode]["js_divergence"].as_f64().unwrap();
        assert!((0.0..=std::f64::consts::LN_2).contains(&js));
    }
}

#[test]
fn rerun_replaces_previous_artifacts_but_refuses_strays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", TINY_BURGERS);
    let out = tmp.path().join("run");
    assert!(run_cli(&cfg, &out, 1).status.success());
    let first = manifest(&out);
    assert!(run_cli(&cfg, &out, 1).status.success());
    assert_eq!(manifest(&out), first);

    fs::write(out.join("notes.txt"), "mine").unwrap();
    let o = run_cli(&cfg, &out, 1);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("notes.txt"));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", TINY_BURGERS);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_cli(&cfg, &a, 1).status.success());
    let o = bin()
        .args(["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let rounds = |d: &Path| fs::read_to_string(d.join("rounds_federated.csv")).unwrap();
    assert_ne!(rounds(&a), rounds(&b));
}
