//! Finite-difference gradient oracle.
//!
//! Central differences at 64-bit precision; the oracle is deliberately
//! independent of any backward-pass code so it can arbitrate correctness.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Default perturbation for [`fd_gradcheck`].
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Compare an analytic gradient against central finite differences of `f`.
///
/// Returns max_i |g_fd - g_an| / max(1, |g_fd| + |g_an|).
pub fn fd_gradcheck<T, F>(f: F, x: &[T], analytic: &[T]) -> Result<T>
where
    T: Real,
    F: FnMut(&[T]) -> Result<T>,
{
    fd_gradcheck_with_eps(f, x, analytic, real(DEFAULT_FD_EPS))
}

pub fn fd_gradcheck_with_eps<T, F>(mut f: F, x: &[T], analytic: &[T], eps: T) -> Result<T>
where
    T: Real,
    F: FnMut(&[T]) -> Result<T>,
{
    if analytic.len() != x.len() {
        return Err(Error::LengthMismatch {
            context: "fd_gradcheck analytic gradient".into(),
            expected: x.len(),
            got: analytic.len(),
        });
    }
    let mut point = x.to_vec();
    let mut worst = T::zero();
    let two = real::<T>(2.0);
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = f(&point)?;
        point[i] = orig - eps;
        let minus = f(&point)?;
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!(
                "objective non-finite at coordinate {i}"
            )));
        }
        let g_fd = (plus - minus) / (two * eps);
        let g_an = analytic[i];
        let denom = T::one().max(g_fd.abs() + g_an.abs());
        let rel = (g_fd - g_an).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
