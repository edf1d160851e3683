use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};

use super::svd::{thin_svd, Svd};
use crate::dynsys::SnapshotMatrix;
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 5] = b"PODB1";

/// Retained POD modes plus the full singular spectrum of the snapshot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `(state size, rank)` with orthonormal columns.
    modes: Array2<f64>,
    /// All `min(rows, cols)` singular values, descending.
    singular_values: Array1<f64>,
    /// Number of snapshots the basis was built from.
    snapshots: usize,
}

/// Smallest rank whose leading squared singular values reach `fraction` of the total.
pub fn rank_for_energy(singular_values: &[f64], fraction: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (k, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    singular_values.len()
}

/// POD of `a` keeping `rank` modes.
///
/// Each mode's sign is fixed so that its largest-magnitude entry is positive.
pub fn compute_pod(a: &SnapshotMatrix, rank: usize) -> Result<PodBasis> {
    check_rank(a, rank)?;
    Ok(from_svd(thin_svd(a.view()), rank, a.cols()))
}

/// POD with the smallest rank capturing `fraction` of the snapshot energy.
pub fn compute_pod_energy(a: &SnapshotMatrix, fraction: f64) -> Result<PodBasis> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("energy fraction {fraction}")));
    }
    let svd = thin_svd(a.view());
    let rank = rank_for_energy(svd.s.as_slice().expect("contiguous"), fraction);
    Ok(from_svd(svd, rank, a.cols()))
}

fn check_rank(a: &SnapshotMatrix, rank: usize) -> Result<()> {
    let k = a.rows().min(a.cols());
    if rank == 0 || rank > k {
        return Err(Error::InvalidArgument(format!("rank {rank} outside 1..={k}")));
    }
    Ok(())
}

fn from_svd(svd: Svd, rank: usize, snapshots: usize) -> PodBasis {
    let mut modes = svd.u.slice(ndarray::s![.., ..rank]).to_owned();
    for mut col in modes.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    PodBasis {
        modes,
        singular_values: svd.s,
        snapshots,
    }
}

impl PodBasis {
    pub fn from_parts(
        modes: Array2<f64>,
        singular_values: Array1<f64>,
        snapshots: usize,
    ) -> Result<Self> {
        if modes.ncols() == 0 || modes.ncols() > singular_values.len() {
            return Err(Error::InvalidArgument("rank exceeds the singular spectrum".into()));
        }
        Ok(Self {
            modes,
            singular_values,
            snapshots,
        })
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn state_size(&self) -> usize {
        self.modes.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn modes(&self) -> ArrayView2<'_, f64> {
        self.modes.view()
    }

    pub fn mode(&self, k: usize) -> ArrayView1<'_, f64> {
        self.modes.column(k)
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    /// `sum_{k > rank} sigma_k^2`, the energy the truncation discards.
    pub fn tail_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.rank())
            .map(|s| s * s)
            .sum()
    }

    /// Modal coefficients `Phi^T u`.
    pub fn project(&self, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("projected field", self.state_size(), u.len())?;
        Ok(self.modes.t().dot(&u))
    }

    /// Field `Phi alpha`.
    pub fn reconstruct(&self, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("modal coefficients", self.rank(), alpha.len())?;
        Ok(self.modes.dot(&alpha))
    }

    /// Coefficients for every column of `a`, one snapshot per column.
    pub fn project_all(&self, a: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("projected snapshots", self.state_size(), a.nrows())?;
        Ok(self.modes.t().dot(&a))
    }

    /// `||A - Phi Phi^T A||_F^2` by direct summation.
    pub fn truncation_error(&self, a: ArrayView2<f64>) -> Result<f64> {
        let coeffs = self.project_all(a)?;
        let approx = self.modes.dot(&coeffs);
        Ok(a.iter().zip(approx.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    /// Writes `PODB1`, the state size, snapshot count and rank as `u64`, the modes
    /// column by column, then the full singular spectrum; all little-endian.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.state_size(), self.snapshots, self.rank()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for col in self.modes.columns() {
            for v in col {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in &self.singular_values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            format: "PODB1",
            reason: reason.into(),
        };
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [nx, n, rank] = header;
        let spectrum = nx.min(n);
        if rank == 0 || rank > spectrum || nx.checked_mul(rank).is_none_or(|v| v > 1 << 32) {
            return Err(bad("implausible header"));
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let modes = Array2::from_shape_vec((nx, rank).f(), read_f64s(nx * rank)?)
            .map_err(|e| bad(&e.to_string()))?
            .as_standard_layout()
            .to_owned();
        let singular_values = Array1::from(read_f64s(spectrum)?);
        Self::from_parts(modes, singular_values, n)
    }
}
