//! Adam optimizer state and update step.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Optimizer state for one flat parameter vector. State is owned by the
/// caller and passed in explicitly; nothing is hidden behind the update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step_count: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Canonical moments: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step_count: 0,
            lr,
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.len() != self.v.len() {
            return Err(Error::LengthMismatch {
                context: "AdamState moments".into(),
                expected: self.m.len(),
                got: self.v.len(),
            });
        }
        let in_unit = |b: T| b > T::zero() && b < T::one();
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got beta1={}, beta2={}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// One Adam step with bias correction. `step_count` is incremented before
/// the correction, so the first call uses t = 1.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            context: "adam_update".into(),
            expected: params.len(),
            got: if params.len() != grads.len() {
                grads.len()
            } else {
                state.m.len()
            },
        });
    }
    state.validate()?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let one = T::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (one - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (one - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        // bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        // update is -lr * g / (|g| + eps).
        let mut params: Vec<f64> = vec![0.5, -0.25, 3.0];
        let grads = vec![0.3, -0.7, 0.001];
        let mut state = AdamState::new(3, 0.01);
        adam_update(&mut params, &grads, &mut state).unwrap();
        for (i, (&p, &g)) in params.iter().zip(&grads).enumerate() {
            let orig = [0.5, -0.25, 3.0][i];
            let expected = orig - 0.01 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-12, "param {i}");
        }
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params: Vec<f64> = vec![1.0, 2.0];
        let mut state = AdamState::new(2, 0.1);
        // seed the moments with one real step, then feed zeros
        adam_update(&mut params, &[0.5, -0.5], &mut state).unwrap();
        let snapshot = params.clone();
        let m_before = state.m.clone();
        adam_update(&mut params, &[0.0, 0.0], &mut state).unwrap();
        // moments decay only
        for (after, before) in state.m.iter().zip(&m_before) {
            assert!((after - before * 0.9).abs() < 1e-15);
        }
        // with a zero gradient the correction still applies the decayed
        // momentum, so params move strictly less than one lr step
        for (p, s) in params.iter().zip(&snapshot) {
            assert!((p - s).abs() <= 0.1 + 1e-12);
        }

        // from a genuinely cold state, a zero gradient changes nothing
        let mut cold: Vec<f64> = vec![1.0, 2.0];
        let mut cold_state = AdamState::new(2, 0.1);
        adam_update(&mut cold, &[0.0, 0.0], &mut cold_state).unwrap();
        assert_eq!(cold, vec![1.0, 2.0]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(w) = w^2, grad = 2w, start at 1.0, lr = 0.1, 100 steps
        let mut w: Vec<f64> = vec![1.0];
        let mut state = AdamState::new(1, 0.1);
        for _ in 0..100 {
            let g = vec![2.0 * w[0]];
            adam_update(&mut w, &g, &mut state).unwrap();
        }
        assert!(w[0].abs() < 0.05, "w = {}", w[0]);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut params = vec![0.1, -0.2, 0.3];
            let mut state = AdamState::new(3, 0.05);
            for step in 0..10 {
                let g: Vec<f64> = params.iter().map(|p| p * 2.0 + step as f64 * 0.01).collect();
                adam_update(&mut params, &g, &mut state).unwrap();
            }
            (params, state)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert_eq!(
            p1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(s1, s2);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, 0.1);
        assert!(adam_update(&mut params, &[1.0, 2.0], &mut state).is_err());
    }
}
