//! Parametric ROM: a dense network maps `mu = (t, nu)` to POD coefficients, which
//! are expanded back into a field on the POD modes.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_pod, compute_pod_energy, PodBasis};
use crate::dynsys::{ParamPoint, SnapshotMatrix};
use crate::error::{check_dim, Error, Result};
use crate::fed::{Dataset, RoundLog, TrainMode};
use crate::nn::{build_network, mlp_specs, Activation, Network};

/// How many POD modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankChoice {
    Fixed(usize),
    /// Smallest rank reaching this fraction of the total squared singular values.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomSettings {
    pub rank: RankChoice,
    pub hidden: Vec<usize>,
    pub val_fraction: f64,
    pub split_seed: u64,
    /// Subtract the mean training snapshot before the POD.
    pub subtract_mean: bool,
}

impl Default for RomSettings {
    fn default() -> Self {
        Self {
            rank: RankChoice::Energy(0.9999),
            hidden: vec![40; 4],
            val_fraction: 0.2,
            split_seed: 0,
            subtract_mean: false,
        }
    }
}

/// Per-feature affine map of `[min, max]` onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    lo: f64,
    hi: f64,
}

/// Scales modal coefficients to `[-1, 1]` per mode.
pub type CoefficientScaler = MinMaxScaler;
/// Scales `(t, nu)` to `[0, 1]^2`.
pub type ParamScaler = MinMaxScaler;

impl MinMaxScaler {
    /// Fits on the rows of `samples`.
    pub fn fit(samples: &Array2<f64>, lo: f64, hi: f64) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Empty("scaler samples"));
        }
        let min = samples
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = samples
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self { min, max, lo, hi })
    }

    fn width(&self, j: usize) -> f64 {
        let w = self.max[j] - self.min[j];
        if w > 0.0 {
            w
        } else {
            1.0
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("scaled vector", self.dim(), x.len())?;
        Ok(Array1::from_shape_fn(x.len(), |j| {
            self.lo + (self.hi - self.lo) * (x[j] - self.min[j]) / self.width(j)
        }))
    }

    pub fn unscale(&self, s: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("unscaled vector", self.dim(), s.len())?;
        Ok(Array1::from_shape_fn(s.len(), |j| {
            self.min[j] + (s[j] - self.lo) / (self.hi - self.lo) * self.width(j)
        }))
    }

    pub fn scale_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(rows.raw_dim());
        for (src, mut dst) in rows.rows().into_iter().zip(out.rows_mut()) {
            dst.assign(&self.scale(src)?);
        }
        Ok(out)
    }
}

/// Everything needed to evaluate the ROM at a new parameter.
#[derive(Debug, Clone)]
pub struct RomModel {
    pub basis: PodBasis,
    pub network: Network,
    pub coefficients: CoefficientScaler,
    pub params: ParamScaler,
    /// Mean snapshot added back after reconstruction, when mean subtraction is on.
    pub mean: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct RomPrediction {
    pub field: Array1<f64>,
    pub coefficients: Array1<f64>,
    /// The parameter lies outside the training box.
    pub extrapolated: bool,
}

/// Relative L2 error split into its truncation and regression parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RomErrorBreakdown {
    pub total: f64,
    /// `||u - P u|| / ||u||` with `P` the projection onto the retained modes.
    pub truncation: f64,
    /// `||Phi (alpha_pred - alpha_true)|| / ||u||`.
    pub regression: f64,
}

#[derive(Debug, Clone)]
pub struct RomTraining {
    pub model: RomModel,
    pub logs: Vec<RoundLog>,
    pub train_columns: Vec<usize>,
    pub val_columns: Vec<usize>,
}

fn params_matrix(params: &[ParamPoint]) -> Array2<f64> {
    Array2::from_shape_fn((params.len(), 2), |(i, j)| if j == 0 { params[i].t } else { params[i].nu })
}

/// Random train/validation split of `n` columns; both lists come back sorted.
pub fn split_columns(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!("validation fraction {val_fraction}")));
    }
    let n_val = ((n as f64) * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {n_val} of {n} columns for validation"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Builds the POD from the training columns and fits the coefficient network.
pub fn train_rom(
    snapshots: &SnapshotMatrix,
    params: &[ParamPoint],
    settings: &RomSettings,
    mode: &TrainMode,
) -> Result<RomTraining> {
    check_dim("parameter list", snapshots.cols(), params.len())?;
    let (train_cols, val_cols) = split_columns(params.len(), settings.val_fraction, settings.split_seed)?;
    let train = snapshots.select_columns(&train_cols)?;
    let val = snapshots.select_columns(&val_cols)?;

    let mean = settings
        .subtract_mean
        .then(|| train.as_array().mean_axis(Axis(1)).expect("non-empty"));
    let center = |m: &SnapshotMatrix| -> Result<SnapshotMatrix> {
        match &mean {
            Some(mu) => SnapshotMatrix::new(m.as_array() - &mu.view().insert_axis(Axis(1))),
            None => Ok(m.clone()),
        }
    };
    let train_c = center(&train)?;
    let val_c = center(&val)?;

    let basis = match settings.rank {
        RankChoice::Fixed(r) => compute_pod(&train_c, r)?,
        RankChoice::Energy(f) => compute_pod_energy(&train_c, f)?,
    };
    log::info!("POD rank {} from {} training snapshots", basis.rank(), train_cols.len());

    // samples as rows
    let alpha_train = basis.project_all(train_c.view())?.reversed_axes();
    let alpha_val = basis.project_all(val_c.view())?.reversed_axes();
    let coeff_scaler = CoefficientScaler::fit(&alpha_train, -1.0, 1.0)?;

    let train_params: Vec<ParamPoint> = train_cols.iter().map(|&j| params[j]).collect();
    let val_params: Vec<ParamPoint> = val_cols.iter().map(|&j| params[j]).collect();
    let mu_train = params_matrix(&train_params);
    let param_scaler = ParamScaler::fit(&mu_train, 0.0, 1.0)?;

    let train_set = Dataset::new(
        param_scaler.scale_rows(&mu_train)?,
        coeff_scaler.scale_rows(&alpha_train)?,
    )?;
    let val_set = Dataset::new(
        param_scaler.scale_rows(&params_matrix(&val_params))?,
        coeff_scaler.scale_rows(&alpha_val)?,
    )?;

    let mut widths = vec![2];
    widths.extend(&settings.hidden);
    widths.push(basis.rank());
    let specs = mlp_specs(&widths, Activation::Relu, Activation::Linear);
    let init = build_network(&specs, mode.seed())?;

    let (network, logs) = mode.train(init, &train_set, &val_set)?;

    Ok(RomTraining {
        model: RomModel {
            basis,
            network,
            coefficients: coeff_scaler,
            params: param_scaler,
            mean,
        },
        logs,
        train_columns: train_cols,
        val_columns: val_cols,
    })
}

impl RomModel {
    fn expand(&self, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut field = self.basis.reconstruct(alpha)?;
        if let Some(mu) = &self.mean {
            field += mu;
        }
        Ok(field)
    }

    /// Unscaled modal coefficients predicted for `p`.
    pub fn predict_coefficients(&self, p: ParamPoint) -> Result<Array1<f64>> {
        let mu = self.params.scale(ndarray::array![p.t, p.nu].view())?;
        let scaled = self.network.forward(mu.as_slice().expect("contiguous"))?;
        self.coefficients.unscale(ArrayView1::from(&scaled))
    }

    /// Coefficients of `u` on the retained modes.
    pub fn true_coefficients(&self, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        match &self.mean {
            Some(mu) => self.basis.project((&u - mu).view()),
            None => self.basis.project(u),
        }
    }

    pub fn error_breakdown(&self, p: ParamPoint, truth: ArrayView1<f64>) -> Result<RomErrorBreakdown> {
        let norm = truth.dot(&truth).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("reference field has zero norm".into()));
        }
        let alpha_true = self.true_coefficients(truth)?;
        let alpha_pred = self.predict_coefficients(p)?;
        let projected = self.expand(alpha_true.view())?;
        let predicted = self.expand(alpha_pred.view())?;
        let l2 = |a: &Array1<f64>| a.dot(a).sqrt();
        // modes are orthonormal, so the regression part lives in coefficient space
        Ok(RomErrorBreakdown {
            total: l2(&(&truth - &predicted)) / norm,
            truncation: l2(&(&truth - &projected)) / norm,
            regression: l2(&(&alpha_pred - &alpha_true)) / norm,
        })
    }
}

/// Field predicted at `p`: scale, network, unscale, expand on the modes.
pub fn rom_predict(model: &RomModel, p: ParamPoint) -> Result<RomPrediction> {
    let coefficients = model.predict_coefficients(p)?;
    Ok(RomPrediction {
        field: model.expand(coefficients.view())?,
        coefficients,
        extrapolated: p.is_extrapolation(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{burgers_snapshots, param_grid, uniform_grid};
    use crate::fed::{CentralConfig, FedConfig};
    use crate::nn::{Dense, LayerSpec};
    use ndarray::array;

    fn small_problem() -> (SnapshotMatrix, Vec<ParamPoint>) {
        let params = param_grid(8, 5);
        let grid = uniform_grid(0.0, 1.0, 32);
        (burgers_snapshots(&grid, &params).unwrap(), params)
    }

    fn quick_central(lr: f64) -> TrainMode {
        TrainMode::Centralized(CentralConfig { epochs: 3, batch_size: 8, lr, seed: 4 })
    }

    #[test]
    fn scaler_roundtrip_and_range() {
        let s = MinMaxScaler::fit(&array![[1.0, -2.0], [3.0, 6.0], [2.0, 2.0]], -1.0, 1.0).unwrap();
        assert_eq!(s.scale(array![1.0, 6.0].view()).unwrap(), array![-1.0, 1.0]);
        let x = array![2.5, -1.0];
        let back = s.unscale(s.scale(x.view()).unwrap().view()).unwrap();
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-15));
        assert!(s.max.iter().zip(&s.min).all(|(a, b)| a >= b));
    }

    #[test]
    fn split_is_disjoint_cover() {
        let (train, val) = split_columns(100, 0.2, 3).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_columns(3, 0.0, 0).is_err());
    }

    #[test]
    fn lr_zero_keeps_initial_network() {
        let (snaps, params) = small_problem();
        let settings = RomSettings { rank: RankChoice::Fixed(4), ..RomSettings::default() };
        let out = train_rom(&snaps, &params, &settings, &quick_central(0.0)).unwrap();
        let specs = mlp_specs(&[2, 40, 40, 40, 40, 4], Activation::Relu, Activation::Linear);
        assert_eq!(out.model.network, build_network(&specs, 4).unwrap());
        assert_eq!(out.train_columns.len() + out.val_columns.len(), params.len());
    }

    #[test]
    fn bypass_network_reproduces_projection() {
        let (snaps, params) = small_problem();
        let settings = RomSettings { rank: RankChoice::Fixed(5), ..RomSettings::default() };
        let mut model = train_rom(&snaps, &params, &settings, &quick_central(0.0)).unwrap().model;
        let j = 7;
        let truth = snaps.column(j).to_owned();
        // replace the network by a constant map onto the true scaled coefficients
        let alpha = model.true_coefficients(truth.view()).unwrap();
        let scaled = model.coefficients.scale(alpha.view()).unwrap();
        let spec = LayerSpec::new(2, 5, Activation::Linear);
        model.network =
            Network::from_layers(vec![Dense::new(spec, Array2::zeros((5, 2)), scaled).unwrap()]).unwrap();
        let pred = rom_predict(&model, params[j]).unwrap();
        let projected = model.basis.reconstruct(alpha.view()).unwrap();
        for (a, b) in pred.field.iter().zip(projected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!pred.extrapolated);
        let parts = model.error_breakdown(params[j], truth.view()).unwrap();
        assert!(parts.regression < 1e-12);
        assert!((parts.total - parts.truncation).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_is_flagged() {
        let (snaps, params) = small_problem();
        let settings = RomSettings { rank: RankChoice::Fixed(3), ..RomSettings::default() };
        let model = train_rom(&snaps, &params, &settings, &quick_central(0.01)).unwrap().model;
        assert!(rom_predict(&model, ParamPoint::new(3.0, 0.005)).unwrap().extrapolated);
    }

    #[test]
    fn error_parts_satisfy_triangle_inequality() {
        let (snaps, params) = small_problem();
        let settings = RomSettings { rank: RankChoice::Fixed(4), ..RomSettings::default() };
        let model = train_rom(&snaps, &params, &settings, &quick_central(0.05)).unwrap().model;
        for j in [0usize, 5, 17, 30] {
            if params[j].t == 0.0 && snaps.column(j).iter().all(|v| *v == 0.0) {
                continue;
            }
            let parts = model.error_breakdown(params[j], snaps.column(j)).unwrap();
            assert!(parts.total <= parts.truncation + parts.regression + 1e-12);
            assert!(parts.total >= 0.0);
        }
    }

    #[test]
    fn mean_subtraction_roundtrip() {
        let (snaps, params) = small_problem();
        let settings = RomSettings {
            rank: RankChoice::Fixed(6),
            subtract_mean: true,
            ..RomSettings::default()
        };
        let model = train_rom(&snaps, &params, &settings, &quick_central(0.0)).unwrap().model;
        let mean = model.mean.clone().unwrap();
        let alpha = model.true_coefficients(mean.view()).unwrap();
        assert!(alpha.iter().all(|a| a.abs() < 1e-12));
        let back = model.expand(alpha.view()).unwrap();
        assert!((&back - &mean).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn federated_mode_trains() {
        let (snaps, params) = small_problem();
        let settings = RomSettings { rank: RankChoice::Fixed(3), ..RomSettings::default() };
        let mode = TrainMode::Federated(FedConfig {
            clients: 4,
            local_epochs: 1,
            batch_size: 4,
            lr: 0.05,
            rounds: 5,
            seed: 2,
        });
        let out = train_rom(&snaps, &params, &settings, &mode).unwrap();
        assert_eq!(out.logs.len(), 6);
        assert!(out.logs.last().unwrap().train_loss < out.logs[0].train_loss);
    }
}
