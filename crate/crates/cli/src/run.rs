//! Runs one configured experiment and writes its artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fedtwin::autoenc::{train_autoencoder, AeTraining, MaxAbsScaler};
use fedtwin::dynsys::{
    burgers_exact, burgers_snapshots, ks_generate, read_snapshots, write_snapshots, ParamPoint,
    SnapshotMatrix,
};
use fedtwin::fed::{write_round_csv, RoundLog, TrainMode};
use fedtwin::ingest::{
    flatten_masked, load_sst, read_sst, synth_sst_with, write_sst, AnomalyScaler, SstArchive,
};
use fedtwin::metrics::{derivative_samples, joint_pdf, js_divergence, mse, relative_l2, sample_ranges};
use fedtwin::nn::write_checkpoint;
use fedtwin::pod::{rom_predict, train_rom};
use ndarray::ArrayView1;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{validate, ConfigError, ConfigIssue, Experiment, ExperimentConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: fedtwin::Error,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError>;
}

impl<T> Context<T> for fedtwin::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError> {
        self.map_err(|source| RunError::Runtime {
            context: what(),
            source,
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, RunError> {
        self.map_err(|source| RunError::Io {
            context: what(),
            source,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Ignore cached datasets and regenerate them.
    pub regen: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: Value,
    pub warnings: Vec<ConfigIssue>,
}

/// Validates `cfg`, runs every configured training mode and writes the artifacts
/// into `cfg.output_dir`, finishing with a manifest of content hashes.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let warnings = validate(cfg).into_result()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
    clear_previous_run(&dir)?;
    let mut out = Artifacts {
        dir: dir.clone(),
        written: Vec::new(),
    };
    out.text(
        "config.toml",
        &toml::to_string(cfg).expect("config serializes"),
    )?;

    let metrics = match cfg.experiment {
        Experiment::BurgersRom => run_burgers(cfg, &mut out)?,
        Experiment::KsAutoencoder => run_ks(cfg, opts, &mut out)?,
        Experiment::SstAutoencoder => run_sst(cfg, opts, &mut out)?,
    };
    out.text(
        "metrics.json",
        &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    let manifest = write_manifest(cfg.experiment, &dir, &out.written)?;
    Ok(RunSummary {
        dir,
        manifest,
        metrics,
        warnings,
    })
}

struct Artifacts {
    dir: PathBuf,
    /// Names written so far, in order.
    written: Vec<String>,
}

impl Artifacts {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.dir.join(name);
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        File::create(&path)
            .map(BufWriter::new)
            .context(|| format!("creating {}", path.display()))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .context(|| format!("writing {name}"))
    }

    /// Runs a fallible writer against a fresh file.
    fn with<F>(&mut self, name: &str, f: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut BufWriter<File>) -> fedtwin::Result<()>,
    {
        let mut w = self.create(name)?;
        f(&mut w).context(|| format!("writing {name}"))?;
        w.flush().context(|| format!("writing {name}"))
    }

    fn rounds(&mut self, mode: &str, logs: &[RoundLog], timing: bool) -> Result<(), RunError> {
        let logs: Vec<RoundLog> = logs
            .iter()
            .map(|l| RoundLog {
                wall_ms: if timing { l.wall_ms } else { 0.0 },
                ..*l
            })
            .collect();
        self.with(&format!("rounds_{mode}.csv"), |w| write_round_csv(w, &logs))
    }
}

fn hex_sha256(path: &Path) -> Result<(u64, String), RunError> {
    let bytes = fs::read(path).context(|| format!("reading {}", path.display()))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Removes the files listed by an earlier manifest in `dir`, then checks that no
/// other files are left at the top level, so the new manifest covers the directory.
/// Subdirectories are left alone.
fn clear_previous_run(dir: &Path) -> Result<(), RunError> {
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let body = fs::read_to_string(&manifest_path).context(|| format!("reading {}", manifest_path.display()))?;
        let old: Manifest = serde_json::from_str(&body).map_err(|e| RunError::Io {
            context: format!("reading {}", manifest_path.display()),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        for entry in &old.files {
            let path = dir.join(&entry.path);
            if path.is_file() {
                fs::remove_file(&path).context(|| format!("removing {}", path.display()))?;
            }
        }
        fs::remove_file(&manifest_path).context(|| format!("removing {}", manifest_path.display()))?;
    }
    let mut strays = Vec::new();
    for entry in fs::read_dir(dir).context(|| format!("listing {}", dir.display()))? {
        let entry = entry.context(|| format!("listing {}", dir.display()))?;
        if entry.path().is_file() {
            strays.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if !strays.is_empty() {
        strays.sort();
        return Err(RunError::Io {
            context: format!("output directory {} is not empty", dir.display()),
            source: std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("files not from an earlier run: {}", strays.join(", ")),
            ),
        });
    }
    Ok(())
}

/// Hashes the named files under `dir` into `manifest.json`. Anything else in the
/// directory, such as output of an earlier run, is left out.
pub fn write_manifest(experiment: Experiment, dir: &Path, names: &[String]) -> Result<Manifest, RunError> {
    let mut entries = Vec::new();
    for name in names.iter().filter(|n| n.as_str() != MANIFEST) {
        let (bytes, sha256) = hex_sha256(&dir.join(name))?;
        entries.push(ManifestEntry {
            path: name.clone(),
            bytes,
            sha256,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        experiment,
        files: entries,
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), body + "\n").context(|| "writing manifest".into())?;
    Ok(manifest)
}

fn loss_summary(logs: &[RoundLog]) -> Value {
    let first = logs.first().expect("round 0 is always logged");
    let last = logs.last().expect("non-empty");
    json!({
        "rounds": last.round,
        "initial_train_loss": first.train_loss,
        "initial_val_loss": first.val_loss,
        "final_train_loss": last.train_loss,
        "final_val_loss": last.val_loss,
        "val_loss_drop": first.val_loss / last.val_loss,
    })
}

fn run_burgers(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, RunError> {
    let sampling = cfg.burgers.sampling();
    let grid = sampling.grid();
    let params = sampling.params();
    let snaps = burgers_snapshots(&grid, &params).context(|| "generating Burgers snapshots".into())?;
    let p = ParamPoint::new(cfg.burgers.eval_t, cfg.burgers.eval_nu);
    let truth: Vec<f64> = grid
        .iter()
        .map(|&x| burgers_exact(x, p))
        .collect::<fedtwin::Result<_>>()
        .context(|| "evaluating the reference solution".into())?;
    let settings = cfg.rom_settings();

    let mut modes = BTreeMap::new();
    let mut predictions = Vec::new();
    for (name, mode) in cfg.modes() {
        log::info!("training Burgers ROM ({name})");
        let run = train_rom(&snaps, &params, &settings, &mode).context(|| format!("{name} ROM training"))?;
        let model = &run.model;
        out.rounds(name, &run.logs, cfg.timing)?;
        out.with(&format!("rom_network_{name}.bin"), |w| write_checkpoint(w, &model.network))?;
        out.with(&format!("pod_basis_{name}.bin"), |w| model.basis.write(w))?;
        out.text(
            &format!("rom_scalers_{name}.json"),
            &serde_json::to_string_pretty(&json!({
                "coefficients": model.coefficients,
                "params": model.params,
                "mean": model.mean.as_ref().map(|m| m.to_vec()),
            }))
            .expect("scalers serialize"),
        )?;

        let pred = rom_predict(model, p).context(|| format!("{name} ROM prediction"))?;
        let breakdown = model
            .error_breakdown(p, ArrayView1::from(&truth))
            .context(|| format!("{name} ROM error"))?;
        let mut summary = loss_summary(&run.logs);
        summary["rank"] = json!(model.basis.rank());
        summary["relative_l2"] = json!(breakdown.total);
        summary["truncation_error"] = json!(breakdown.truncation);
        summary["regression_error"] = json!(breakdown.regression);
        summary["extrapolated"] = json!(pred.extrapolated);
        modes.insert(name, summary);
        predictions.push((name, pred.field.to_vec()));
    }

    for (name, field) in &predictions {
        write_columns(
            out,
            &format!("reconstruction_{name}.csv"),
            &grid,
            "x",
            &[("truth", truth.clone()), ("prediction", field.clone())],
        )?;
    }

    Ok(json!({
        "experiment": "burgers_rom",
        "eval_param": {"t": p.t, "nu": p.nu},
        "modes": modes,
    }))
}

fn cache_key(parts: &impl Serialize) -> String {
    let text = serde_json::to_string(parts).expect("key serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn cached<T>(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    name: &str,
    key: &str,
    read: impl FnOnce(BufReader<File>) -> fedtwin::Result<T>,
    write: impl FnOnce(&mut BufWriter<File>, &T) -> fedtwin::Result<()>,
    generate: impl FnOnce() -> fedtwin::Result<T>,
) -> Result<T, RunError> {
    let Some(dir) = &cfg.cache_dir else {
        return generate().context(|| format!("generating {name} data"));
    };
    let path = dir.join(format!("{name}_{key}.bin"));
    if !opts.regen && path.exists() {
        log::info!("loading cached {name} data from {}", path.display());
        let f = File::open(&path).context(|| format!("opening {}", path.display()))?;
        return read(BufReader::new(f)).context(|| format!("reading {}", path.display()));
    }
    let data = generate().context(|| format!("generating {name} data"))?;
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let mut w = BufWriter::new(File::create(&path).context(|| format!("creating {}", path.display()))?);
    write(&mut w, &data).context(|| format!("writing {}", path.display()))?;
    w.flush().context(|| format!("writing {}", path.display()))?;
    Ok(data)
}

fn columns(m: &SnapshotMatrix, range: std::ops::Range<usize>) -> Result<SnapshotMatrix, RunError> {
    m.select_columns(&range.collect::<Vec<_>>())
        .context(|| "splitting snapshots".into())
}

fn train_ae(
    cfg: &ExperimentConfig,
    name: &str,
    mode: &TrainMode,
    train: &SnapshotMatrix,
    val: &SnapshotMatrix,
    out: &mut Artifacts,
) -> Result<AeTraining, RunError> {
    log::info!("training autoencoder R={} ({name})", cfg.model.latent);
    let run = train_autoencoder(train, val, cfg.model.latent, cfg.arch(), mode)
        .context(|| format!("{name} autoencoder training"))?;
    out.rounds(name, &run.logs, cfg.timing)?;
    out.with(&format!("autoencoder_{name}.bin"), |w| run.autoencoder.write(w))?;
    Ok(run)
}

fn run_ks(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut Artifacts) -> Result<Value, RunError> {
    let solver = cfg.ks.solver();
    let key = cache_key(&(solver, cfg.seed));
    let snaps = cached(
        cfg,
        opts,
        "ks",
        &key,
        read_snapshots,
        |w, s| write_snapshots(w, s),
        || ks_generate(&solver, cfg.seed),
    )?;
    let n_train = cfg.ks.train_count();
    let train = columns(&snaps, 0..n_train)?;
    let test = columns(&snaps, n_train..snaps.cols())?;
    let scaler = MaxAbsScaler::fit(&train).context(|| "scaling KS data".into())?;
    let train_s = scaler.apply(&train).context(|| "scaling KS data".into())?;
    let test_s = scaler.apply(&test).context(|| "scaling KS data".into())?;

    let dx = solver.dx();
    let truth_samples = derivative_samples(&test, dx).context(|| "differentiating test data".into())?;
    let ranges = sample_ranges(&truth_samples).context(|| "joint PDF ranges".into())?;
    let bins = [cfg.ks.bins; 2];
    let truth_pdf = joint_pdf(&truth_samples, bins, ranges).context(|| "joint PDF of test data".into())?;
    out.with("jointpdf_truth.csv", |w| truth_pdf.write_csv(w))?;

    let k = cfg.ks.plot_index;
    let mut modes = BTreeMap::new();
    for (name, mode) in cfg.modes() {
        let run = train_ae(cfg, name, &mode, &train_s, &test_s, out)?;
        let rec = run
            .autoencoder
            .reconstruct_snapshots(&test_s)
            .and_then(|r| scaler.invert(&r))
            .context(|| format!("{name} reconstruction"))?;
        let rec_samples = derivative_samples(&rec, dx).context(|| "differentiating reconstruction".into())?;
        let pdf = joint_pdf(&rec_samples, bins, ranges).context(|| "joint PDF of reconstruction".into())?;
        out.with(&format!("jointpdf_{name}.csv"), |w| pdf.write_csv(w))?;
        let js = js_divergence(&truth_pdf, &pdf).context(|| "JS divergence".into())?;

        let mut summary = loss_summary(&run.logs);
        summary["test_mse"] = json!(mse(test.view(), rec.view()).context(|| "test MSE".into())?);
        summary["test_relative_l2"] =
            json!(relative_l2(test.view(), rec.view()).context(|| "test error".into())?);
        summary["js_divergence"] = json!(js);
        summary["pdf_clip_fraction"] = json!(pdf.clip_fraction);
        modes.insert(name, summary);
        write_columns(
            out,
            &format!("reconstruction_{name}.csv"),
            &solver.grid(),
            "x",
            &[("truth", test.column(k).to_vec()), ("prediction", rec.column(k).to_vec())],
        )?;
    }

    Ok(json!({
        "experiment": "ks_autoencoder",
        "latent": cfg.model.latent,
        "train_snapshots": train.cols(),
        "test_snapshots": test.cols(),
        "scale": scaler.scale,
        "modes": modes,
    }))
}

fn write_columns(
    out: &mut Artifacts,
    name: &str,
    coord: &[f64],
    coord_name: &str,
    cols: &[(&str, Vec<f64>)],
) -> Result<(), RunError> {
    let mut csv = String::from(coord_name);
    for (n, _) in cols {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push('\n');
    for (i, c) in coord.iter().enumerate() {
        csv.push_str(&format!("{c:e}"));
        for (_, v) in cols {
            csv.push_str(&format!(",{:e}", v[i]));
        }
        csv.push('\n');
    }
    out.text(name, &csv)
}

fn sst_archive(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SstArchive, RunError> {
    if let Some(path) = &cfg.sst.path {
        return load_sst(path).context(|| format!("loading {}", path.display()));
    }
    let synth = cfg.sst.synth();
    let key = cache_key(&(synth, cfg.sst.weeks, cfg.seed));
    cached(
        cfg,
        opts,
        "sst",
        &key,
        read_sst,
        |w, a| write_sst(w, a),
        || synth_sst_with(&synth, cfg.sst.weeks, cfg.seed),
    )
}

fn run_sst(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut Artifacts) -> Result<Value, RunError> {
    let archive = sst_archive(cfg, opts)?;
    let n_train = cfg.sst.train_weeks;
    if n_train >= archive.len() {
        return Err(ConfigError::Invalid(vec![ConfigIssue {
            field: "sst.train_weeks".into(),
            message: format!("archive has only {} frames", archive.len()),
        }])
        .into());
    }
    let (all, index) = flatten_masked(&archive).context(|| "flattening SST frames".into())?;
    let train = columns(&all, 0..n_train)?;
    let test = columns(&all, n_train..all.cols())?;
    let scaler = AnomalyScaler::fit(&train).context(|| "fitting anomaly scaling".into())?;
    let train_s = scaler.apply(&train).context(|| "scaling SST data".into())?;
    let test_s = scaler.apply(&test).context(|| "scaling SST data".into())?;

    let k = cfg.sst.plot_index.min(test.cols() - 1);
    let (h, w) = archive.shape();
    let mut modes = BTreeMap::new();
    for (name, mode) in cfg.modes() {
        let run = train_ae(cfg, name, &mode, &train_s, &test_s, out)?;
        let rec = run
            .autoencoder
            .reconstruct_snapshots(&test_s)
            .and_then(|r| scaler.invert(&r))
            .context(|| format!("{name} reconstruction"))?;
        let mut summary = loss_summary(&run.logs);
        summary["test_mse_celsius"] = json!(mse(test.view(), rec.view()).context(|| "test MSE".into())?);
        let anomalies = |m: &SnapshotMatrix| scaler.apply(m).map(|a| a.into_array());
        let (ta, ra) = (
            anomalies(&test).context(|| "anomalies".into())?,
            anomalies(&rec).context(|| "anomalies".into())?,
        );
        summary["test_anomaly_relative_l2"] =
            json!(relative_l2(ta.view(), ra.view()).context(|| "anomaly error".into())?);
        modes.insert(name, summary);
        let (truth, pred) = (test.column(k), rec.column(k));
        let mut csv = String::from("lat,lon,truth,prediction\n");
        for (row, &p) in index.points.iter().enumerate() {
            let (i, j) = (p / w, p % w);
            let lat = -90.0 + (i as f64 + 0.5) * 180.0 / h as f64;
            let lon = (j as f64 + 0.5) * 360.0 / w as f64;
            csv.push_str(&format!("{lat},{lon},{:e},{:e}\n", truth[row], pred[row]));
        }
        out.text(&format!("reconstruction_{name}.csv"), &csv)?;
    }

    Ok(json!({
        "experiment": "sst_autoencoder",
        "latent": cfg.model.latent,
        "grid": [h, w],
        "ocean_points": index.len(),
        "train_snapshots": train.cols(),
        "test_snapshots": test.cols(),
        "anomaly_scale": scaler.scale,
        "modes": modes,
    }))
}
