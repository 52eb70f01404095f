//! The four training losses and their weighted combination.
//!
//! All batch reductions are means, so the loss weights keep the same meaning
//! across batch sizes. Log losses floor probabilities at [`PROB_FLOOR`] to
//! avoid -inf on saturated softmax outputs; the floor sits far below every
//! test tolerance.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndcore::Matrix;
use crate::scalar::Real;

/// Probability floor applied inside the log losses.
pub const PROB_FLOOR: f64 = 1e-12;

/// Relative contributions of the loss terms: total = task + alpha * domain
/// plus beta * confusion, with mu weighting the proximal pull inside the
/// task objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
    pub mu: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::from(100.0).unwrap(),
            mu: T::from(0.01).unwrap(),
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < T::zero() || self.beta < T::zero() || self.mu < T::zero() {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which pointwise loss drives the task phase. MSE is the default training
/// surrogate; MAE stays available as a config option and is always the
/// reported evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLoss {
    #[default]
    Mse,
    Mae,
}

impl TaskLoss {
    pub fn value<T: Real>(&self, y: &[T], y_hat: &[T]) -> Result<T> {
        if y.is_empty() {
            return Err(Error::EmptyInput("task loss targets".into()));
        }
        if y.len() != y_hat.len() {
            return Err(Error::LengthMismatch {
                context: "task loss".into(),
                expected: y.len(),
                got: y_hat.len(),
            });
        }
        let n = T::from(y.len()).unwrap();
        let sum = y
            .iter()
            .zip(y_hat)
            .map(|(&a, &b)| {
                let d = b - a;
                match self {
                    TaskLoss::Mse => d * d,
                    TaskLoss::Mae => d.abs(),
                }
            })
            .sum::<T>();
        Ok(sum / n)
    }

    /// dL/d y_hat for one sample of a batch of `n`.
    pub fn d_prediction<T: Real>(&self, y: T, y_hat: T, n: usize) -> T {
        let n = T::from(n).unwrap();
        let d = y_hat - y;
        match self {
            TaskLoss::Mse => (T::one() + T::one()) * d / n,
            TaskLoss::Mae => {
                if d > T::zero() {
                    T::one() / n
                } else if d < T::zero() {
                    -T::one() / n
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Mean squared error over the batch.
pub fn task_loss<T: Real>(y: &[T], y_hat: &[T]) -> Result<T> {
    TaskLoss::Mse.value(y, y_hat)
}

/// Squared distance of the extractor and predictor weights from the anchor;
/// the domain predictor is excluded.
pub fn prox_loss<T: Real>(global: &ModelParams<T>, local: &ModelParams<T>) -> Result<T> {
    let mut acc = T::zero();
    for (g, l) in [
        (&global.repr, &local.repr),
        (&global.pred, &local.pred),
    ] {
        if g.dims() != l.dims() {
            return Err(Error::dim(
                "prox_loss",
                format!("{:?}", g.dims()),
                format!("{:?}", l.dims()),
            ));
        }
        for (gl, ll) in g.layers.iter().zip(&l.layers) {
            for (a, b) in gl.weights.data().iter().zip(ll.weights.data()) {
                let d = *a - *b;
                acc += d * d;
            }
            for (a, b) in gl.bias.iter().zip(&ll.bias) {
                let d = *a - *b;
                acc += d * d;
            }
        }
    }
    Ok(acc)
}

/// Task loss plus the weighted proximal term.
pub fn combined_task_objective<T: Real>(
    y: &[T],
    y_hat: &[T],
    global: &ModelParams<T>,
    local: &ModelParams<T>,
    mu: T,
) -> Result<T> {
    Ok(task_loss(y, y_hat)? + mu * prox_loss(global, local)?)
}

/// Mean negative log-probability of the true site, over rows of `p`.
pub fn domain_loss<T: Real>(p: &Matrix<T>, d: &[usize]) -> Result<T> {
    if p.rows() == 0 {
        return Err(Error::EmptyInput("domain loss probabilities".into()));
    }
    if d.len() != p.rows() {
        return Err(Error::LengthMismatch {
            context: "domain loss labels".into(),
            expected: p.rows(),
            got: d.len(),
        });
    }
    let floor = T::from(PROB_FLOOR).unwrap();
    let mut acc = T::zero();
    for (r, &label) in d.iter().enumerate() {
        if label >= p.cols() {
            return Err(Error::LabelOutOfRange {
                label,
                n_sites: p.cols(),
            });
        }
        acc -= p[(r, label)].max(floor).ln();
    }
    Ok(acc / T::from(p.rows()).unwrap())
}

/// Mean cross-entropy against the uniform distribution, over rows of `p`.
/// Bounded below by ln(H), with equality exactly at uniform rows.
pub fn confusion_loss<T: Real>(p: &Matrix<T>) -> Result<T> {
    if p.rows() == 0 {
        return Err(Error::EmptyInput("confusion loss probabilities".into()));
    }
    let floor = T::from(PROB_FLOOR).unwrap();
    let h = T::from(p.cols()).unwrap();
    let mut acc = T::zero();
    for r in 0..p.rows() {
        for &v in p.row(r) {
            acc -= v.max(floor).ln() / h;
        }
    }
    Ok(acc / T::from(p.rows()).unwrap())
}

/// Weighted sum of the three phase losses, reported per round for
/// diagnostics; the optimizer applies the parts in separate phases.
pub fn total_loss<T: Real>(l_task: T, l_domain: T, l_confusion: T, weights: &LossWeights<T>) -> T {
    l_task + weights.alpha * l_domain + weights.beta * l_confusion
}
