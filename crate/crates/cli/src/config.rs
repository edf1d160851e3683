//! Experiment configuration: a TOML file with one table per concern.

use std::fmt;
use std::path::{Path, PathBuf};

use fedtwin::autoenc::AeArch;
use fedtwin::dynsys::{BurgersSampling, KsConfig};
use fedtwin::fed::{CentralConfig, FedConfig, TrainMode};
use fedtwin::ingest::SynthSstConfig;
use fedtwin::pod::{RankChoice, RomSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BurgersRom,
    KsAutoencoder,
    SstAutoencoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Centralized,
    Federated,
    Both,
}

impl RunMode {
    pub fn centralized(self) -> bool {
        matches!(self, RunMode::Centralized | RunMode::Both)
    }

    pub fn federated(self) -> bool {
        matches!(self, RunMode::Federated | RunMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    #[serde(rename = "K", default = "default_clients")]
    pub clients: usize,
    #[serde(rename = "E", default = "default_one")]
    pub local_epochs: usize,
    #[serde(rename = "B", default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Defaults to 500 for `burgers_rom` and 100 for the autoencoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
}

fn default_clients() -> usize {
    10
}
fn default_one() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            clients: default_clients(),
            local_epochs: default_one(),
            batch_size: default_batch(),
            lr: default_lr(),
            rounds: None,
        }
    }
}

/// Pooled-training settings; unset fields follow `[fed]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralSection {
    /// Defaults to `K * B`.
    pub batch_size: Option<usize>,
    /// Defaults to `fed.rounds * fed.E`.
    pub epochs: Option<usize>,
    /// Defaults to `fed.lr`.
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Autoencoder latent size `R`.
    pub latent: usize,
    /// Autoencoder layout; defaults to the experiment's own.
    pub arch: Option<AeArch>,
    /// Fixed POD rank for the ROM; unset means the energy rule.
    pub rank: Option<usize>,
    pub energy: f64,
    pub hidden: Vec<usize>,
    pub val_fraction: f64,
    pub subtract_mean: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let rom = RomSettings::default();
        Self {
            latent: 8,
            arch: None,
            rank: None,
            energy: 0.9999,
            hidden: rom.hidden,
            val_fraction: rom.val_fraction,
            subtract_mean: rom.subtract_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersSection {
    pub nx: usize,
    pub n_t: usize,
    pub n_nu: usize,
    /// Parameter at which the reconstruction is reported.
    pub eval_t: f64,
    pub eval_nu: f64,
}

impl Default for BurgersSection {
    fn default() -> Self {
        let s = BurgersSampling::default();
        Self {
            nx: s.nx,
            n_t: s.n_t,
            n_nu: s.n_nu,
            eval_t: 0.02,
            eval_nu: 0.00475,
        }
    }
}

impl BurgersSection {
    pub fn sampling(&self) -> BurgersSampling {
        BurgersSampling {
            nx: self.nx,
            n_t: self.n_t,
            n_nu: self.n_nu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsSection {
    pub length: f64,
    pub n: usize,
    pub dt: f64,
    pub sample_dt: f64,
    pub spinup_from: f64,
    /// Snapshots in `(0, train_until]` train; later ones form the test window.
    pub train_until: f64,
    pub t_end: f64,
    /// Bins per axis of the derivative joint PDF.
    pub bins: usize,
    /// Test-window snapshot written to the reconstruction CSV.
    pub plot_index: usize,
}

impl Default for KsSection {
    fn default() -> Self {
        let k = KsConfig::default();
        Self {
            length: k.length,
            n: k.n,
            dt: k.dt,
            sample_dt: k.sample_dt,
            spinup_from: k.spinup_from,
            train_until: 2500.0,
            t_end: 3750.0,
            bins: fedtwin::metrics::DEFAULT_BINS,
            plot_index: 0,
        }
    }
}

impl KsSection {
    pub fn solver(&self) -> KsConfig {
        KsConfig {
            length: self.length,
            n: self.n,
            dt: self.dt,
            sample_dt: self.sample_dt,
            spinup_from: self.spinup_from,
            t_end: self.t_end,
        }
    }

    pub fn train_count(&self) -> usize {
        (self.train_until / self.sample_dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SstSection {
    /// SSTG1 file; the synthetic generator is used when unset.
    pub path: Option<PathBuf>,
    /// Synthetic weeks to generate.
    pub weeks: usize,
    /// Leading frames used for training; the rest are the test set.
    pub train_weeks: usize,
    pub height: usize,
    pub width: usize,
    /// Test frame written to the reconstruction CSV.
    pub plot_index: usize,
}

impl Default for SstSection {
    fn default() -> Self {
        let s = SynthSstConfig::default();
        Self {
            path: None,
            weeks: 1800,
            train_weeks: 1500,
            height: s.height,
            width: s.width,
            plot_index: 0,
        }
    }
}

impl SstSection {
    pub fn synth(&self) -> SynthSstConfig {
        SynthSstConfig {
            height: self.height,
            width: self.width,
            ..SynthSstConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts go. Not archived with the run, so the same experiment
    /// written to two places hashes the same.
    #[serde(default = "default_output", skip_serializing)]
    pub output_dir: PathBuf,
    /// Generated datasets are cached here when set.
    #[serde(default, skip_serializing)]
    pub cache_dir: Option<PathBuf>,
    /// Record wall-clock time in the round logs. Off by default so repeated runs
    /// produce identical files.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub central: CentralSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub burgers: BurgersSection,
    #[serde(default)]
    pub ks: KsSection,
    #[serde(default)]
    pub sst: SstSection,
}

fn default_mode() -> RunMode {
    RunMode::Both
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Communication rounds, with the per-experiment default filled in.
    pub fn rounds(&self) -> usize {
        self.fed.rounds.unwrap_or(match self.experiment {
            Experiment::BurgersRom => 500,
            Experiment::KsAutoencoder | Experiment::SstAutoencoder => 100,
        })
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            clients: self.fed.clients,
            local_epochs: self.fed.local_epochs,
            batch_size: self.fed.batch_size,
            lr: self.fed.lr,
            rounds: self.rounds(),
            seed: self.seed,
        }
    }

    pub fn central_config(&self) -> CentralConfig {
        CentralConfig {
            epochs: self.central.epochs.unwrap_or(self.rounds() * self.fed.local_epochs),
            batch_size: self
                .central
                .batch_size
                .unwrap_or(self.fed.clients * self.fed.batch_size),
            lr: self.central.lr.unwrap_or(self.fed.lr),
            seed: self.seed,
        }
    }

    /// The training modes to run, centralized first.
    pub fn modes(&self) -> Vec<(&'static str, TrainMode)> {
        let mut out = Vec::new();
        if self.mode.centralized() {
            out.push(("centralized", TrainMode::Centralized(self.central_config())));
        }
        if self.mode.federated() {
            out.push(("federated", TrainMode::Federated(self.fed_config())));
        }
        out
    }

    pub fn arch(&self) -> AeArch {
        self.model.arch.unwrap_or(match self.experiment {
            Experiment::SstAutoencoder => AeArch::Sst,
            _ => AeArch::Ks,
        })
    }

    pub fn rom_settings(&self) -> RomSettings {
        RomSettings {
            rank: match self.model.rank {
                Some(r) => RankChoice::Fixed(r),
                None => RankChoice::Energy(self.model.energy),
            },
            hidden: self.model.hidden.clone(),
            val_fraction: self.model.val_fraction,
            split_seed: self.seed,
            subtract_mean: self.model.subtract_mean,
        }
    }

    /// Number of training samples the trainers will see, when known without data.
    fn training_samples(&self) -> Option<usize> {
        match self.experiment {
            Experiment::BurgersRom => {
                let n = self.burgers.n_t * self.burgers.n_nu;
                let val = ((n as f64) * self.model.val_fraction).round() as usize;
                Some(n.saturating_sub(val))
            }
            Experiment::KsAutoencoder => Some(self.ks.train_count()),
            Experiment::SstAutoencoder => self.sst.path.is_none().then_some(self.sst.train_weeks),
        }
    }
}

/// One problem found in a configuration, tagged with the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Unreadable(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("{} configuration error(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

/// Errors and warnings from checking a configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub errors: Vec<ConfigIssue>,
    pub warnings: Vec<ConfigIssue>,
}

impl Validation {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(ConfigIssue {
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.warnings.push(ConfigIssue {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<ConfigIssue>, ConfigError> {
        if self.errors.is_empty() {
            Ok(self.warnings)
        } else {
            Err(ConfigError::Invalid(self.errors))
        }
    }
}

fn positive(v: &mut Validation, field: &str, value: usize) {
    if value == 0 {
        v.error(field, "must be at least 1");
    }
}

/// A learning rate: finite and non-negative. Zero is legal but trains nothing.
fn learning_rate(v: &mut Validation, field: &str, value: f64) {
    if !(value.is_finite() && value >= 0.0) {
        v.error(field, format!("must be a finite number >= 0, got {value}"));
    } else if value == 0.0 {
        v.warn(field, "is 0; parameters will not change");
    }
}

/// Checks every field and cross-field constraint, collecting all problems.
pub fn validate(cfg: &ExperimentConfig) -> Validation {
    let mut v = Validation::default();

    positive(&mut v, "fed.K", cfg.fed.clients);
    positive(&mut v, "fed.E", cfg.fed.local_epochs);
    positive(&mut v, "fed.B", cfg.fed.batch_size);
    positive(&mut v, "fed.rounds", cfg.rounds());
    learning_rate(&mut v, "fed.lr", cfg.fed.lr);
    if let Some(b) = cfg.central.batch_size {
        positive(&mut v, "central.batch_size", b);
    }
    if let Some(e) = cfg.central.epochs {
        positive(&mut v, "central.epochs", e);
    }
    if let Some(lr) = cfg.central.lr {
        learning_rate(&mut v, "central.lr", lr);
    }

    if let Some(n) = cfg.training_samples() {
        if cfg.mode.federated() && cfg.fed.clients > 0 {
            if n < cfg.fed.clients {
                v.error("fed.K", format!("{} clients but only {n} training samples", cfg.fed.clients));
            } else if cfg.fed.batch_size > n / cfg.fed.clients {
                v.warn(
                    "fed.B",
                    format!(
                        "batch size {} exceeds the smallest shard ({} samples); each client takes one full batch",
                        cfg.fed.batch_size,
                        n / cfg.fed.clients
                    ),
                );
            }
        }
        let central = cfg.central_config();
        if cfg.mode.centralized() && central.batch_size > n {
            v.warn(
                "central.batch_size",
                format!("batch size {} exceeds the {n} training samples and will be clamped", central.batch_size),
            );
        }
    }

    match cfg.experiment {
        Experiment::BurgersRom => validate_burgers(cfg, &mut v),
        Experiment::KsAutoencoder => validate_ks(cfg, &mut v),
        Experiment::SstAutoencoder => validate_sst(cfg, &mut v),
    }
    v
}

fn validate_burgers(cfg: &ExperimentConfig, v: &mut Validation) {
    let b = &cfg.burgers;
    if b.nx < 2 {
        v.error("burgers.nx", "need at least 2 grid points");
    }
    positive(v, "burgers.n_t", b.n_t);
    positive(v, "burgers.n_nu", b.n_nu);
    if !(b.eval_nu > 0.0 && b.eval_nu.is_finite()) {
        v.error("burgers.eval_nu", "viscosity must be positive");
    }
    if !(b.eval_t >= 0.0 && b.eval_t.is_finite()) {
        v.error("burgers.eval_t", "time must be non-negative");
    }
    let m = &cfg.model;
    if !(m.val_fraction > 0.0 && m.val_fraction < 1.0) {
        v.error("model.val_fraction", "must lie strictly between 0 and 1");
    } else {
        let n = b.n_t * b.n_nu;
        let val = ((n as f64) * m.val_fraction).round() as usize;
        if val == 0 || val >= n {
            v.error("model.val_fraction", format!("holds out {val} of {n} parameter points"));
        }
    }
    if m.hidden.is_empty() || m.hidden.contains(&0) {
        v.error("model.hidden", "need at least one hidden layer, all widths positive");
    }
    match m.rank {
        Some(0) => v.error("model.rank", "must be at least 1"),
        Some(r) if r > b.nx => v.error("model.rank", format!("{r} exceeds the {} grid points", b.nx)),
        _ => {}
    }
    if !(m.energy > 0.0 && m.energy <= 1.0) {
        v.error("model.energy", "must lie in (0, 1]");
    }
}

fn validate_latent(v: &mut Validation, latent: usize, n: usize) {
    if latent == 0 {
        v.error("model.latent", "must be at least 1");
    } else if latent >= n {
        v.error("model.latent", format!("{latent} is not below the input size {n}"));
    }
}

fn validate_ks(cfg: &ExperimentConfig, v: &mut Validation) {
    let k = &cfg.ks;
    if let Err(e) = k.solver().validate() {
        v.error("ks", e.to_string());
    }
    validate_latent(v, cfg.model.latent, k.n);
    if !(k.train_until > 0.0 && k.train_until < k.t_end) {
        v.error("ks.train_until", format!("must lie in (0, t_end = {})", k.t_end));
    } else if ((k.train_until / k.sample_dt).round() - k.train_until / k.sample_dt).abs() > 1e-9 {
        v.error("ks.train_until", "must be a multiple of sample_dt");
    }
    if k.bins < 2 {
        v.error("ks.bins", "need at least 2 bins per axis");
    }
    let test = ((k.t_end - k.train_until) / k.sample_dt).round() as usize;
    if k.plot_index >= test.max(1) {
        v.error("ks.plot_index", format!("test window has {test} snapshots"));
    }
}

fn validate_sst(cfg: &ExperimentConfig, v: &mut Validation) {
    let s = &cfg.sst;
    match &s.path {
        Some(p) => {
            if !p.exists() {
                v.error("sst.path", format!("{} does not exist", p.display()));
            }
        }
        None => {
            if s.height < 2 || s.width < 2 {
                v.error("sst.height", "synthetic grid must be at least 2x2");
            }
            if s.train_weeks < 2 {
                v.error("sst.train_weeks", "need at least 2 training weeks");
            }
            if s.train_weeks >= s.weeks {
                v.error("sst.train_weeks", format!("must be below sst.weeks = {}", s.weeks));
            } else if s.plot_index >= s.weeks - s.train_weeks {
                v.error("sst.plot_index", format!("test set has {} frames", s.weeks - s.train_weeks));
            }
            validate_latent(v, cfg.model.latent, s.height * s.width);
        }
    }
}
