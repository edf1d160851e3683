use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::dynsys::SnapshotMatrix;
use crate::error::{Error, Result};

/// Bins per axis unless a caller says otherwise.
pub const DEFAULT_BINS: usize = 64;
/// Lower bound applied before taking the log of a density.
pub const LOG_DENSITY_FLOOR: f64 = 1e-12;

/// Normalized 2D histogram over `(u_x, u_xx)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointHistogram {
    /// `bins_x + 1` edges of the first axis.
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[[i, j]]` for first-axis bin `i` and second-axis bin `j`.
    #[serde(serialize_with = "rows")]
    pub counts: Array2<u64>,
    #[serde(serialize_with = "rows")]
    pub density: Array2<f64>,
    /// Fraction of samples that fell outside the ranges and were clipped into edge bins.
    pub clip_fraction: f64,
}

fn rows<T: Serialize + Clone, S: serde::Serializer>(a: &Array2<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let nested: Vec<Vec<T>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    nested.serialize(s)
}

/// Spectral wavenumbers for `n` points spaced `dx`; the Nyquist entry is zero when `odd`.
fn wavenumbers(n: usize, dx: f64, odd: bool) -> Vec<f64> {
    let scale = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    (0..n)
        .map(|j| {
            if 2 * j == n && odd {
                0.0
            } else if 2 * j <= n {
                j as f64 * scale
            } else {
                (j as f64 - n as f64) * scale
            }
        })
        .collect()
}

struct Differentiator {
    n: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    k1: Vec<f64>,
    k2: Vec<f64>,
}

impl Differentiator {
    fn new(n: usize, dx: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 points, got {n}")));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing {dx}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k1: wavenumbers(n, dx, true),
            k2: wavenumbers(n, dx, false),
        })
    }

    fn apply(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut hat: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut hat);
        let mut d1: Vec<Complex64> = hat.iter().zip(&self.k1).map(|(h, k)| h * Complex64::new(0.0, *k)).collect();
        let mut d2: Vec<Complex64> = hat.iter().zip(&self.k2).map(|(h, k)| h * (-k * k)).collect();
        self.inverse.process(&mut d1);
        self.inverse.process(&mut d2);
        let norm = 1.0 / self.n as f64;
        (
            d1.iter().map(|c| c.re * norm).collect(),
            d2.iter().map(|c| c.re * norm).collect(),
        )
    }
}

/// `(u_x, u_xx)` of a periodic field sampled at spacing `dx`, by FFT.
pub fn derivative_fields(u: &[f64], dx: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(Differentiator::new(u.len(), dx)?.apply(u))
}

/// Pointwise `(u_x, u_xx)` pairs pooled over every column of `snapshots`.
pub fn derivative_samples(snapshots: &SnapshotMatrix, dx: f64) -> Result<Vec<[f64; 2]>> {
    let diff = Differentiator::new(snapshots.rows(), dx)?;
    let mut out = Vec::with_capacity(snapshots.rows() * snapshots.cols());
    for col in snapshots.as_array().columns() {
        let (ux, uxx) = diff.apply(&col.to_vec());
        out.extend(ux.into_iter().zip(uxx).map(|(a, b)| [a, b]));
    }
    Ok(out)
}

/// Per-axis `[min, max]` of the samples.
pub fn sample_ranges(samples: &[[f64; 2]]) -> Result<[(f64, f64); 2]> {
    if samples.is_empty() {
        return Err(Error::Empty("histogram samples"));
    }
    let mut r = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for s in samples {
        for a in 0..2 {
            r[a].0 = r[a].0.min(s[a]);
            r[a].1 = r[a].1.max(s[a]);
        }
    }
    Ok(r)
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

/// Returns the bin and whether the value was outside `[lo, hi]`.
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> (usize, bool) {
    if v < lo {
        return (0, true);
    }
    if v > hi {
        return (bins - 1, true);
    }
    let b = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    (b.min(bins - 1), false)
}

/// Density histogram of `samples` with `bins` cells per axis over `ranges`.
pub fn joint_pdf(samples: &[[f64; 2]], bins: [usize; 2], ranges: [(f64, f64); 2]) -> Result<JointHistogram> {
    if samples.is_empty() {
        return Err(Error::Empty("histogram samples"));
    }
    if bins.iter().any(|&b| b < 2) {
        return Err(Error::InvalidArgument(format!("need at least 2 bins per axis, got {bins:?}")));
    }
    for (lo, hi) in ranges {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("degenerate histogram range [{lo}, {hi}]")));
        }
    }
    if samples.iter().any(|s| !s[0].is_finite() || !s[1].is_finite()) {
        return Err(Error::InvalidArgument("non-finite histogram sample".into()));
    }
    let mut counts = Array2::<u64>::zeros((bins[0], bins[1]));
    let mut clipped = 0usize;
    for s in samples {
        let (i, ci) = bin_of(s[0], ranges[0].0, ranges[0].1, bins[0]);
        let (j, cj) = bin_of(s[1], ranges[1].0, ranges[1].1, bins[1]);
        counts[[i, j]] += 1;
        clipped += usize::from(ci || cj);
    }
    let area = (ranges[0].1 - ranges[0].0) / bins[0] as f64 * (ranges[1].1 - ranges[1].0) / bins[1] as f64;
    let total = samples.len() as f64;
    Ok(JointHistogram {
        x_edges: edges(ranges[0].0, ranges[0].1, bins[0]),
        y_edges: edges(ranges[1].0, ranges[1].1, bins[1]),
        density: counts.mapv(|c| c as f64 / (total * area)),
        counts,
        clip_fraction: clipped as f64 / total,
    })
}

impl JointHistogram {
    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Probability mass per bin; sums to one.
    pub fn masses(&self) -> Array2<f64> {
        let total = self.total() as f64;
        self.counts.mapv(|c| c as f64 / total)
    }

    pub fn bin_area(&self) -> f64 {
        let w = |e: &[f64]| (e[e.len() - 1] - e[0]) / (e.len() - 1) as f64;
        w(&self.x_edges) * w(&self.y_edges)
    }

    /// `ln(max(density, floor))`, for log-scale comparison.
    pub fn log_density(&self) -> Array2<f64> {
        self.density.mapv(|d| d.max(LOG_DENSITY_FLOOR).ln())
    }

    /// One row per bin: `ux_lo,ux_hi,uxx_lo,uxx_hi,count,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ux_lo,ux_hi,uxx_lo,uxx_hi,count,density")?;
        for ((i, j), c) in self.counts.indexed_iter() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{},{:e}",
                self.x_edges[i],
                self.x_edges[i + 1],
                self.y_edges[j],
                self.y_edges[j + 1],
                c,
                self.density[[i, j]]
            )?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Format {
            format: "json",
            reason: e.to_string(),
        })
    }
}

/// `x ln(x / m)` with the `0 ln 0 = 0` convention.
fn kl_term(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        x * (x / m).ln()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence between the bin masses of `p` and `q`, in nats.
///
/// Both histograms must share edges exactly. Each bin contributes
/// `p ln(p/m) + q ln(q/m)` with `m = (p + q)/2`, summed in row-major order, so
/// swapping the arguments gives a bit-identical result.
pub fn js_divergence(p: &JointHistogram, q: &JointHistogram) -> Result<f64> {
    if p.x_edges != q.x_edges || p.y_edges != q.y_edges {
        return Err(Error::InvalidArgument("histograms use different binning".into()));
    }
    let (mp, mq) = (p.masses(), q.masses());
    let mut sum = 0.0;
    for (a, b) in mp.iter().zip(mq.iter()) {
        let m = 0.5 * (a + b);
        sum += kl_term(*a, m) + kl_term(*b, m);
    }
    Ok((0.5 * sum).clamp(0.0, std::f64::consts::LN_2))
}
