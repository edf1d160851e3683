//! Error measures, derivative statistics and histogram divergence.

mod pdf;

pub use pdf::{
    derivative_fields, derivative_samples, joint_pdf, js_divergence, sample_ranges, JointHistogram,
    DEFAULT_BINS, LOG_DENSITY_FLOOR,
};

use ndarray::{ArrayView, Dimension};

use crate::error::{Error, Result};

fn same_shape<D: Dimension>(a: &ArrayView<f64, D>, b: &ArrayView<f64, D>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `||truth - approx|| / ||truth||` in the Euclidean (Frobenius) norm.
pub fn relative_l2<D: Dimension>(truth: ArrayView<f64, D>, approx: ArrayView<f64, D>) -> Result<f64> {
    same_shape(&truth, &approx)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, a) in truth.iter().zip(approx.iter()) {
        num += (t - a) * (t - a);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero field".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean squared difference over all elements.
pub fn mse<D: Dimension>(truth: ArrayView<f64, D>, approx: ArrayView<f64, D>) -> Result<f64> {
    same_shape(&truth, &approx)?;
    if truth.is_empty() {
        return Err(Error::Empty("mse operands"));
    }
    let sum: f64 = truth.iter().zip(approx.iter()).map(|(t, a)| (t - a) * (t - a)).sum();
    Ok(sum / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn relative_l2_examples() {
        let u = array![1.0, -2.0, 3.0];
        assert_eq!(relative_l2(u.view(), u.view()).unwrap(), 0.0);
        assert_eq!(relative_l2(u.view(), Array1::zeros(3).view()).unwrap(), 1.0);
        assert!(relative_l2(Array1::zeros(3).view(), u.view()).is_err());
        assert!(relative_l2(u.view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn relative_l2_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Array2<f64> = Array2::from_shape_simple_fn((7, 5), || StandardNormal.sample(&mut rng));
        let b: Array2<f64> = Array2::from_shape_simple_fn((7, 5), || StandardNormal.sample(&mut rng));
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..7 {
            for j in 0..5 {
                num += (a[[i, j]] - b[[i, j]]).powi(2);
                den += a[[i, j]].powi(2);
            }
        }
        let want = (num / den).sqrt();
        assert!((relative_l2(a.view(), b.view()).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[1.0, 0.0], [3.0, 6.0]];
        assert_eq!(mse(a.view(), b.view()).unwrap(), 2.0);
        assert!(mse(Array1::<f64>::zeros(0).view(), Array1::zeros(0).view()).is_err());
    }

    proptest! {
        #[test]
        fn relative_l2_triangle(
            u in prop::collection::vec(-5.0f64..5.0, 6),
            v in prop::collection::vec(-5.0f64..5.0, 6),
            w in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let (u, v, w) = (Array1::from(u), Array1::from(v), Array1::from(w));
            let norm = u.dot(&u).sqrt();
            prop_assume!(norm > 1e-3);
            let d = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|x| x * x).sum().sqrt();
            let lhs = relative_l2(u.view(), w.view()).unwrap();
            prop_assert!(lhs <= (d(&u, &v) + d(&v, &w)) / norm * (1.0 + 1e-12) + 1e-15);
        }
    }
}
