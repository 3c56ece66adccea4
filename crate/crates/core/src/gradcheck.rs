//! Central-difference gradient oracle.
//!
//! This is the independent check every analytic backward in the crate is
//! verified against. It must stay free of any dependency on the backward
//! implementations themselves.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient estimate of a scalar function:
/// `(f(x + h·e_i) − f(x − h·e_i)) / (2h)` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let f_plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let f_minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_grad objective at coordinate {i}"),
            });
        }
        grad[i] = (f_plus - f_minus) / (2.0 * h);
    }
    Ok(Tensor::raw(x.shape().to_vec(), grad))
}

/// Worst relative disagreement between an analytic and a numeric gradient.
///
/// Per element: `|a − n| / max(|a|, |n|, floor)`. The floor keeps noise on
/// near-zero components from registering as a relative blow-up; `1e-5` is
/// appropriate for objectives of magnitude O(1..100) differentiated with
/// `h = 1e-5`.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Step size used by the crate's gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error tolerance used by the crate's gradient checks.
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor for [`max_rel_err`].
pub const FD_FLOOR: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_vec(vec![0.3, -2.0, 7.0]).unwrap();
        let g = finite_diff_grad(|_| Ok(42.0), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn non_finite_objective_is_error() {
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        let r = finite_diff_grad(|t| Ok(1.0 / (t.data()[0] - t.data()[0])), &x, 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn rel_err_floor_absorbs_noise_on_zero_components() {
        let a = Tensor::from_vec(vec![0.0, 1.0]).unwrap();
        let n = Tensor::from_vec(vec![1e-11, 1.0 + 1e-9]).unwrap();
        assert!(max_rel_err(&a, &n, FD_FLOOR) < 1e-4);
    }
}
