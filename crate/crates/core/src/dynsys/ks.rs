//! Kuramoto–Sivashinsky `u_t = -u_xxxx - u_xx - u u_x` on an `L`-periodic domain.
//!
//! Pseudo-spectral in space, fourth-order exponential time differencing (ETDRK4) in
//! time, with the phi-function weights evaluated by averaging over a circle of
//! contour points around each `dt * L(q)`. The nonlinear term is `-0.5 d/dx (u^2)`,
//! formed in physical space without dealiasing.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::SnapshotMatrix;
use crate::error::{Error, Result};

/// Number of contour points used for the phi-function weights.
pub const CONTOUR_POINTS: usize = 32;

/// Highest wavenumber index excited by the random initial condition.
const IC_MODES: usize = 8;
/// Root-mean-square amplitude of the random initial condition.
const IC_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsConfig {
    /// Domain length `L`.
    pub length: f64,
    /// Grid points `N`, a power of two.
    pub n: usize,
    pub dt: f64,
    /// Interval between recorded snapshots; a multiple of `dt`.
    pub sample_dt: f64,
    /// Time at which the initial condition is imposed (`<= 0`).
    pub spinup_from: f64,
    /// Last recorded time; snapshots cover `(0, t_end]`.
    pub t_end: f64,
}

impl Default for KsConfig {
    fn default() -> Self {
        Self {
            length: 22.0,
            n: 64,
            dt: 2.5e-3,
            sample_dt: 0.25,
            spinup_from: -250.0,
            t_end: 2500.0,
        }
    }
}

fn whole_multiple(span: f64, step: f64, what: &str) -> Result<usize> {
    let ratio = span / step;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(Error::Config(format!(
            "{what} ({span}) is not a whole multiple of {step}"
        )));
    }
    Ok(k as usize)
}

impl KsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config("domain length must be positive".into()));
        }
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::Config(format!("grid size {} is not a power of two >= 4", self.n)));
        }
        if !(self.dt > 0.0 && self.sample_dt > 0.0) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        if !(self.spinup_from <= 0.0) {
            return Err(Error::Config("spin-up must start at or before t = 0".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        self.steps_per_sample()?;
        self.spinup_steps()?;
        self.sample_count()?;
        Ok(())
    }

    pub fn steps_per_sample(&self) -> Result<usize> {
        whole_multiple(self.sample_dt, self.dt, "sample interval")
    }

    pub fn spinup_steps(&self) -> Result<usize> {
        whole_multiple(-self.spinup_from, self.dt, "spin-up span")
    }

    pub fn sample_count(&self) -> Result<usize> {
        whole_multiple(self.t_end, self.sample_dt, "recording span")
    }

    /// Times of the recorded columns.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        Ok((1..=self.sample_count()?)
            .map(|k| k as f64 * self.sample_dt)
            .collect())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.dx()).collect()
    }

    /// Angular wavenumbers in FFT order with the Nyquist entry zeroed.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|m| {
                let idx = if m < n / 2 {
                    m as f64
                } else if m == n / 2 {
                    0.0
                } else {
                    m as f64 - n as f64
                };
                2.0 * PI * idx / self.length
            })
            .collect()
    }
}

/// Per-wavenumber ETDRK4 stepping coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EtdCoefficients {
    /// Linear symbol `q^2 - q^4`.
    pub linear: Vec<f64>,
    /// `exp(dt L)`.
    pub e: Vec<f64>,
    /// `exp(dt L / 2)`.
    pub e2: Vec<f64>,
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
}

/// `(Q, f1, f2, f3)` for one value of the linear symbol, by contour averaging.
pub fn contour_weights(dt: f64, linear: f64, points: usize) -> (f64, f64, f64, f64) {
    let hl = dt * linear;
    let mut acc = [Complex64::new(0.0, 0.0); 4];
    for j in 0..points {
        let theta = 2.0 * PI * (j as f64 + 0.5) / points as f64;
        let z = Complex64::new(hl + theta.cos(), theta.sin());
        let ez = z.exp();
        let z3 = z * z * z;
        acc[0] += ((z / 2.0).exp() - 1.0) / z;
        acc[1] += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
        acc[2] += (2.0 + z + ez * (z - 2.0)) / z3;
        acc[3] += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
    }
    let m = points as f64;
    (
        dt * acc[0].re / m,
        dt * acc[1].re / m,
        dt * acc[2].re / m,
        dt * acc[3].re / m,
    )
}

pub fn etdrk4_coefficients(config: &KsConfig) -> Result<EtdCoefficients> {
    config.validate()?;
    let dt = config.dt;
    let linear: Vec<f64> = config
        .wavenumbers()
        .iter()
        .map(|q| q * q - q * q * q * q)
        .collect();
    let mut c = EtdCoefficients {
        e: linear.iter().map(|l| (dt * l).exp()).collect(),
        e2: linear.iter().map(|l| (dt * l / 2.0).exp()).collect(),
        q: Vec::with_capacity(config.n),
        f1: Vec::with_capacity(config.n),
        f2: Vec::with_capacity(config.n),
        f3: Vec::with_capacity(config.n),
        linear,
    };
    for &l in &c.linear {
        let (q, f1, f2, f3) = contour_weights(dt, l, CONTOUR_POINTS);
        c.q.push(q);
        c.f1.push(f1);
        c.f2.push(f2);
        c.f3.push(f3);
    }
    Ok(c)
}

/// Projects `v` onto the spectra of real fields, `v[n - k] = conj(v[k])`.
///
/// Only the real part of the physical field feeds the nonlinear term, so an
/// anti-Hermitian component would evolve under the linear operator alone and grow
/// at the unstable wavenumbers until round-off leaks it back into the real field.
fn enforce_hermitian(v: &mut [Complex64]) {
    let n = v.len();
    v[0].im = 0.0;
    v[n / 2].im = 0.0;
    for k in 1..n / 2 {
        let avg = 0.5 * (v[k] + v[n - k].conj());
        v[k] = avg;
        v[n - k] = avg.conj();
    }
}

/// Stateful ETDRK4 stepper holding FFT plans and scratch space.
pub struct KsSolver {
    config: KsConfig,
    coeffs: EtdCoefficients,
    /// `-0.5 i q` for the conservative nonlinear term.
    nl_factor: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    work: Vec<Complex64>,
    stages: [Vec<Complex64>; 6],
}

impl KsSolver {
    pub fn new(config: &KsConfig) -> Result<Self> {
        let coeffs = etdrk4_coefficients(config)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(config.n);
        let inverse = planner.plan_fft_inverse(config.n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let zero = vec![Complex64::new(0.0, 0.0); config.n];
        Ok(Self {
            config: *config,
            coeffs,
            nl_factor: config
                .wavenumbers()
                .iter()
                .map(|&q| Complex64::new(0.0, -0.5 * q))
                .collect(),
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            work: zero.clone(),
            stages: std::array::from_fn(|_| zero.clone()),
        })
    }

    pub fn config(&self) -> &KsConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &EtdCoefficients {
        &self.coeffs
    }

    /// Spectral coefficients of a real field.
    pub fn to_spectral(&mut self, u: &[f64]) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process_with_scratch(&mut v, &mut self.scratch);
        v
    }

    /// Real field from spectral coefficients.
    pub fn to_physical(&mut self, v: &[Complex64]) -> Vec<f64> {
        self.work.copy_from_slice(v);
        self.inverse
            .process_with_scratch(&mut self.work, &mut self.scratch);
        let n = self.config.n as f64;
        self.work.iter().map(|c| c.re / n).collect()
    }

    /// `N(v) = -0.5 i q FFT(real(IFFT(v))^2)` written into `out`.
    fn nonlinear(&mut self, v: &[Complex64], out_stage: usize) {
        let n = self.config.n as f64;
        self.work.copy_from_slice(v);
        self.inverse
            .process_with_scratch(&mut self.work, &mut self.scratch);
        for c in self.work.iter_mut() {
            let u = c.re / n;
            *c = Complex64::new(u * u, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.work, &mut self.scratch);
        let out = &mut self.stages[out_stage];
        for ((o, w), g) in out.iter_mut().zip(&self.work).zip(&self.nl_factor) {
            *o = g * w;
        }
    }

    /// One ETDRK4 step of size `dt`, in place.
    pub fn step(&mut self, v: &mut [Complex64]) {
        const NV: usize = 0;
        const NA: usize = 1;
        const NB: usize = 2;
        const NC: usize = 3;
        const A: usize = 4;
        const B: usize = 5;
        let len = v.len();

        self.nonlinear(v, NV);
        for i in 0..len {
            self.stages[A][i] = self.coeffs.e2[i] * v[i] + self.coeffs.q[i] * self.stages[NV][i];
        }
        let a = std::mem::take(&mut self.stages[A]);
        self.nonlinear(&a, NA);
        self.stages[A] = a;
        for i in 0..len {
            self.stages[B][i] = self.coeffs.e2[i] * v[i] + self.coeffs.q[i] * self.stages[NA][i];
        }
        let b = std::mem::take(&mut self.stages[B]);
        self.nonlinear(&b, NB);
        self.stages[B] = b;
        // c reuses the b buffer
        for i in 0..len {
            self.stages[B][i] = self.coeffs.e2[i] * self.stages[A][i]
                + self.coeffs.q[i] * (2.0 * self.stages[NB][i] - self.stages[NV][i]);
        }
        let c = std::mem::take(&mut self.stages[B]);
        self.nonlinear(&c, NC);
        self.stages[B] = c;
        for i in 0..len {
            let s = &self.stages;
            v[i] = self.coeffs.e[i] * v[i]
                + s[NV][i] * self.coeffs.f1[i]
                + 2.0 * (s[NA][i] + s[NB][i]) * self.coeffs.f2[i]
                + s[NC][i] * self.coeffs.f3[i];
        }
        enforce_hermitian(v);
    }

    /// Advances `steps` steps, failing if the state stops being finite.
    pub fn advance(&mut self, v: &mut [Complex64], steps: usize, t_start: f64) -> Result<()> {
        const CHECK_EVERY: usize = 100;
        for s in 0..steps {
            self.step(v);
            if (s + 1) % CHECK_EVERY == 0 || s + 1 == steps {
                if v.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
                    return Err(Error::BlowUp {
                        time: t_start + (s + 1) as f64 * self.config.dt,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Smooth zero-mean random field: independent normal cosine and sine amplitudes on
/// wavenumbers `1..=8`, rescaled to RMS 0.1.
pub fn ks_initial_condition(config: &KsConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = IC_MODES.min(config.n / 2 - 1);
    let amps: Vec<(f64, f64)> = (0..modes)
        .map(|_| (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let mut u: Vec<f64> = config
        .grid()
        .iter()
        .map(|&x| {
            amps.iter()
                .enumerate()
                .map(|(m, (a, b))| {
                    let q = 2.0 * PI * (m + 1) as f64 / config.length;
                    a * (q * x).cos() + b * (q * x).sin()
                })
                .sum()
        })
        .collect();
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64).sqrt();
    u.iter_mut().for_each(|v| *v *= IC_RMS / rms);
    Ok(u)
}

/// Integrates from the random initial condition at `spinup_from` and records one
/// column every `sample_dt` over `(0, t_end]`.
pub fn ks_generate(config: &KsConfig, seed: u64) -> Result<SnapshotMatrix> {
    let u0 = ks_initial_condition(config, seed)?;
    ks_generate_from(config, &u0)
}

/// As [`ks_generate`] but from a given field imposed at `spinup_from`.
pub fn ks_generate_from(config: &KsConfig, u0: &[f64]) -> Result<SnapshotMatrix> {
    config.validate()?;
    crate::error::check_dim("initial condition", config.n, u0.len())?;
    let mut solver = KsSolver::new(config)?;
    let mut v = solver.to_spectral(u0);
    // The mean is conserved; pin it so round-off cannot seed a drift.
    v[0].im = 0.0;

    solver.advance(&mut v, config.spinup_steps()?, config.spinup_from)?;

    let samples = config.sample_count()?;
    let per_sample = config.steps_per_sample()?;
    let mut out = Array2::zeros((config.n, samples));
    for k in 0..samples {
        solver.advance(&mut v, per_sample, k as f64 * config.sample_dt)?;
        let u = solver.to_physical(&v);
        for (dst, src) in out.column_mut(k).iter_mut().zip(u) {
            *dst = src;
        }
    }
    SnapshotMatrix::new(out)
}

/// Classical RK4 on the same spectral discretisation, with the linear term handled
/// explicitly. Needs a step far below `config.dt` to be stable; it exists to check
/// [`KsSolver`] over short horizons.
pub fn ks_rk4_reference(config: &KsConfig, u0: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    config.validate()?;
    crate::error::check_dim("initial condition", config.n, u0.len())?;
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::Config(format!("reference horizon {t} with step {dt}")));
    }
    let steps = whole_multiple(t, dt, "reference horizon")?;
    let mut solver = KsSolver::new(config)?;
    let linear: Vec<f64> = config.wavenumbers().iter().map(|q| q * q - q.powi(4)).collect();
    let rhs = |solver: &mut KsSolver, v: &[Complex64]| -> Vec<Complex64> {
        solver.nonlinear(v, 0);
        v.iter()
            .zip(&linear)
            .zip(&solver.stages[0])
            .map(|((x, l), nl)| x * l + nl)
            .collect()
    };
    let mut v = solver.to_spectral(u0);
    v[0].im = 0.0;
    for _ in 0..steps {
        let k1 = rhs(&mut solver, &v);
        let a: Vec<Complex64> = v.iter().zip(&k1).map(|(x, k)| x + 0.5 * dt * k).collect();
        let k2 = rhs(&mut solver, &a);
        let b: Vec<Complex64> = v.iter().zip(&k2).map(|(x, k)| x + 0.5 * dt * k).collect();
        let k3 = rhs(&mut solver, &b);
        let c: Vec<Complex64> = v.iter().zip(&k3).map(|(x, k)| x + dt * k).collect();
        let k4 = rhs(&mut solver, &c);
        for i in 0..v.len() {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        enforce_hermitian(&mut v);
    }
    let u = solver.to_physical(&v);
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { time: t });
    }
    Ok(u)
}
