//! Central finite differences, the independent oracle for [`Graph::backward`](super::Graph::backward).

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `x`, one entry at a time.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Matrix<T>, step: T) -> Result<Matrix<T>>
where
    T: Scalar,
    F: FnMut(&Matrix<T>) -> Result<T>,
{
    if !(step > T::zero()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let two = T::lit(2.0);
    for k in 0..x.len() {
        let orig = x.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let hi = f(&probe)?;
        probe.as_mut_slice()[k] = orig - step;
        let lo = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFiniteProbe { index: k });
        }
        grad.as_mut_slice()[k] = (hi - lo) / (two * step);
    }
    Ok(grad)
}

/// `|a - b| <= max(abs_tol, rel_tol * max(|a|, |b|))`.
pub fn grad_close<T: Scalar>(a: T, b: T, abs_tol: T, rel_tol: T) -> bool {
    let diff = (a - b).abs();
    diff <= abs_tol.max(rel_tol * a.abs().max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = finite_difference_gradient(
            |m: &Matrix<f64>| Ok(m.as_slice().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((g[(0, 1)] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Matrix::from_rows(&[[1.0, -3.0], [0.5, 7.0]]).unwrap();
        let g = finite_difference_gradient(|_| Ok(4.2), &x, 1e-5).unwrap();
        assert_eq!(g, Matrix::zeros(2, 2));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_values() {
        let x = Matrix::scalar(1.0);
        assert!(finite_difference_gradient(|_| Ok(0.0), &x, 0.0).is_err());
        let err = finite_difference_gradient(|_| Ok(f64::INFINITY), &x, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteProbe { index: 0 }));
    }
}
