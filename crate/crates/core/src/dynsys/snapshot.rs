//! Column-per-snapshot data matrices and their `SNAP1` file format.
//!
//! File layout: magic `SNAP1`, rows and cols as little-endian `u64`, then the
//! entries column by column as little-endian `f64`.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};

use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"SNAP1";

/// Data matrix `A` with one state vector per column (`rows` = state size).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Array2<f64>,
}

impl SnapshotMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty("snapshot matrix"));
        }
        Ok(Self { data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map(Vec::len).ok_or(Error::Empty("snapshot matrix"))?;
        let mut data = Array2::zeros((rows, columns.len()));
        for (j, col) in columns.iter().enumerate() {
            crate::error::check_dim("snapshot column", rows, col.len())?;
            data.column_mut(j).assign(&ArrayView1::from(col.as_slice()));
        }
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.data.column(j)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Sub-matrix with the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        Self::new(self.data.select(Axis(1), cols))
    }

    /// One snapshot per row, the layout the trainers consume.
    pub fn samples(&self) -> Array2<f64> {
        self.data.t().to_owned()
    }
}

pub fn write_snapshots<W: Write>(mut w: W, snaps: &SnapshotMatrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(snaps.rows() as u64).to_le_bytes())?;
    w.write_all(&(snaps.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(snaps.rows() * 8);
    for col in snaps.data.columns() {
        buf.clear();
        for v in col {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_snapshots<R: Read>(mut r: R) -> Result<SnapshotMatrix> {
    let bad = |reason: &str| Error::Format {
        format: "SNAP1",
        reason: reason.into(),
    };
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n > 0 && n < (1 << 34))
        .ok_or_else(|| bad("implausible shape"))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let data = Array2::from_shape_vec((rows, cols).f(), values).map_err(|e| bad(&e.to_string()))?;
    SnapshotMatrix::new(data.as_standard_layout().to_owned())
}
