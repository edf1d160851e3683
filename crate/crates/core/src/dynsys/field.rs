use ndarray::{Array1, Array2};

use crate::error::{check_dim, Error, Result};

/// A discretized physical field on a 1D line or a 2D grid.
///
/// 1D fields are stored as a single row. The optional mask marks valid points
/// (`true`); values at invalid points are ignored downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    values: Array2<f64>,
    x: Array1<f64>,
    y: Option<Array1<f64>>,
    mask: Option<Array2<bool>>,
}

impl FieldGrid {
    pub fn line(values: Array1<f64>, x: Array1<f64>) -> Result<Self> {
        check_dim("field coordinates", values.len(), x.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite field value".into()));
        }
        let n = values.len();
        Ok(Self {
            values: values.into_shape_with_order((1, n)).expect("1D to row"),
            x,
            y: None,
            mask: None,
        })
    }

    /// 2D field with `values[[i, j]]` at `(y[i], x[j])`.
    pub fn grid(
        values: Array2<f64>,
        y: Array1<f64>,
        x: Array1<f64>,
        mask: Option<Array2<bool>>,
    ) -> Result<Self> {
        check_dim("field rows", values.nrows(), y.len())?;
        check_dim("field columns", values.ncols(), x.len())?;
        if let Some(m) = &mask {
            if m.dim() != values.dim() {
                return Err(Error::InvalidArgument("mask shape differs from field".into()));
            }
        }
        let finite = values.indexed_iter().all(|(ij, v)| {
            v.is_finite() || mask.as_ref().is_some_and(|m| !m[ij])
        });
        if !finite {
            return Err(Error::InvalidArgument("non-finite value at a valid point".into()));
        }
        Ok(Self {
            values,
            x,
            y: Some(y),
            mask,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn x(&self) -> &Array1<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&Array1<f64>> {
        self.y.as_ref()
    }

    pub fn mask(&self) -> Option<&Array2<bool>> {
        self.mask.as_ref()
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[[i, j]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn masked_nan_is_allowed() {
        let v = array![[1.0, f64::NAN], [0.0, 2.0]];
        let m = array![[true, false], [true, true]];
        let g = FieldGrid::grid(v.clone(), array![0.0, 1.0], array![0.0, 1.0], Some(m)).unwrap();
        assert!(!g.is_valid(0, 1));
        assert!(FieldGrid::grid(v, array![0.0, 1.0], array![0.0, 1.0], None).is_err());
    }

    #[test]
    fn line_shape() {
        let f = FieldGrid::line(array![1.0, 2.0, 3.0], array![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(f.values().dim(), (1, 3));
        assert!(FieldGrid::line(array![1.0], array![0.0, 1.0]).is_err());
    }
}
