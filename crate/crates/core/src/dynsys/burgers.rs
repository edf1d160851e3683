use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SnapshotMatrix;
use crate::error::{Error, Result};

/// Training range of the time parameter.
pub const T_RANGE: (f64, f64) = (0.0, 2.0);
/// Training range of the viscosity parameter.
pub const NU_RANGE: (f64, f64) = (0.001, 0.01);

/// Parameter pair `mu = (t, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub t: f64,
    pub nu: f64,
}

impl ParamPoint {
    pub fn new(t: f64, nu: f64) -> Self {
        Self { t, nu }
    }

    /// Outside the sampled training box.
    pub fn is_extrapolation(&self) -> bool {
        !(T_RANGE.0..=T_RANGE.1).contains(&self.t) || !(NU_RANGE.0..=NU_RANGE.1).contains(&self.nu)
    }
}

/// Exact solution `u(x; t, nu)` of the viscous Burgers problem on `[0, 1]`.
///
/// `u = (x/(t+1)) / (1 + sqrt((t+1)/t0) exp(x^2 / (4 nu (t+1))))` with
/// `t0 = exp(1/(8 nu))`. The denominator's exponential is assembled in log space,
/// since `t0` alone overflows for small `nu`.
pub fn burgers_exact(x: f64, p: ParamPoint) -> Result<f64> {
    if !(p.nu > 0.0 && p.nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("viscosity must be positive, got {}", p.nu)));
    }
    if !(p.t >= 0.0 && p.t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {}", p.t)));
    }
    let tp1 = p.t + 1.0;
    let ramp = x / tp1;
    let log_term = 0.5 * (tp1.ln() - 1.0 / (8.0 * p.nu)) + x * x / (4.0 * p.nu * tp1);
    if log_term > 0.0 {
        let e = (-log_term).exp();
        Ok(ramp * e / (1.0 + e))
    } else {
        Ok(ramp / (1.0 + log_term.exp()))
    }
}

/// `n` uniformly spaced points covering `[a, b]` including both ends.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Grid and parameter-sampling density for Burgers snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurgersSampling {
    pub nx: usize,
    pub n_t: usize,
    pub n_nu: usize,
}

impl Default for BurgersSampling {
    fn default() -> Self {
        Self {
            nx: 256,
            n_t: 64,
            n_nu: 16,
        }
    }
}

impl BurgersSampling {
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, 1.0, self.nx)
    }

    pub fn params(&self) -> Vec<ParamPoint> {
        param_grid(self.n_t, self.n_nu)
    }
}

/// Tensor grid over the training box, `t` outer and `nu` inner.
pub fn param_grid(n_t: usize, n_nu: usize) -> Vec<ParamPoint> {
    let nus = uniform_grid(NU_RANGE.0, NU_RANGE.1, n_nu);
    uniform_grid(T_RANGE.0, T_RANGE.1, n_t)
        .into_iter()
        .flat_map(|t| nus.iter().map(move |&nu| ParamPoint::new(t, nu)))
        .collect()
}

/// Matrix whose column `n` is `u(grid; params[n])`.
pub fn burgers_snapshots(grid: &[f64], params: &[ParamPoint]) -> Result<SnapshotMatrix> {
    if grid.is_empty() {
        return Err(Error::Empty("spatial grid"));
    }
    if params.is_empty() {
        return Err(Error::Empty("parameter list"));
    }
    let mut a = Array2::zeros((grid.len(), params.len()));
    for (j, &p) in params.iter().enumerate() {
        for (i, &x) in grid.iter().enumerate() {
            a[[i, j]] = burgers_exact(x, p)?;
        }
    }
    SnapshotMatrix::new(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_left_boundary() {
        for p in [ParamPoint::new(0.0, 0.001), ParamPoint::new(1.3, 0.007)] {
            assert_eq!(burgers_exact(0.0, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn high_precision_reference_values() {
        // 60-digit evaluations of the closed form.
        let cases = [
            (0.5, 1.0, 0.005, 0.249_319_339_648_167_8),
            (0.3, 0.5, 0.001, 0.2),
            (0.7, 0.02, 0.00475, 3.681_143_053_590_501e-6),
            (0.9, 2.0, 0.001, 0.001_162_524_253_975_805),
        ];
        for (x, t, nu, want) in cases {
            let got = burgers_exact(x, ParamPoint::new(t, nu)).unwrap();
            assert!(((got - want) / want).abs() < 1e-13, "{x} {t} {nu}: {got} vs {want}");
        }
    }

    #[test]
    fn decays_in_time() {
        let mut prev = f64::INFINITY;
        for t in [10.0, 100.0, 1e3, 1e4, 1e6] {
            let u = burgers_exact(0.4, ParamPoint::new(t, 0.005)).unwrap();
            assert!(u < prev);
            prev = u;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn rejects_bad_viscosity() {
        assert!(burgers_exact(0.5, ParamPoint::new(1.0, 0.0)).is_err());
        assert!(burgers_exact(0.5, ParamPoint::new(1.0, -0.1)).is_err());
        assert!(burgers_exact(0.5, ParamPoint::new(-1.0, 0.01)).is_err());
    }

    #[test]
    fn positive_inside_domain() {
        for p in param_grid(9, 5) {
            for x in uniform_grid(0.0, 1.0, 41).into_iter().skip(1) {
                assert!(burgers_exact(x, p).unwrap() > 0.0, "{x} {p:?}");
            }
        }
    }

    #[test]
    fn snapshot_columns_follow_params() {
        let grid = uniform_grid(0.0, 1.0, 11);
        let params = [ParamPoint::new(0.5, 0.003), ParamPoint::new(1.5, 0.009)];
        let a = burgers_snapshots(&grid, &params[..1]).unwrap();
        assert_eq!((a.rows(), a.cols()), (11, 1));
        let a = burgers_snapshots(&grid, &params).unwrap();
        for (j, p) in params.iter().enumerate() {
            for (i, &x) in grid.iter().enumerate() {
                assert_eq!(a.column(j)[i], burgers_exact(x, *p).unwrap());
            }
        }
        assert!(burgers_snapshots(&[], &params).is_err());
        assert!(burgers_snapshots(&grid, &[]).is_err());
    }

    #[test]
    fn default_sampling_shape() {
        let s = BurgersSampling::default();
        let params = s.params();
        assert_eq!(params.len(), 1024);
        assert_eq!(params[0], ParamPoint::new(0.0, 0.001));
        assert_eq!(params[1023], ParamPoint::new(2.0, 0.01));
        let a = burgers_snapshots(&s.grid(), &params).unwrap();
        assert_eq!((a.rows(), a.cols()), (256, 1024));
    }

    #[test]
    fn extrapolation_flag() {
        assert!(!ParamPoint::new(0.02, 0.00475).is_extrapolation());
        assert!(ParamPoint::new(2.5, 0.005).is_extrapolation());
        assert!(ParamPoint::new(1.0, 0.02).is_extrapolation());
    }
}
