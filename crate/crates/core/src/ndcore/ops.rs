//! Layer-level forward/backward primitives.

use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::scalar::Real;

/// Gradients of one affine layer.
#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub d_weights: Matrix<T>,
    pub d_bias: Vec<T>,
    pub d_input: Matrix<T>,
}

/// out[n,o] = sum_i input[n,i] * weights[i,o] + bias[o]
pub fn affine_forward<T: Real>(
    input: &Matrix<T>,
    weights: &Matrix<T>,
    bias: &[T],
) -> Result<Matrix<T>> {
    if input.cols() != weights.rows() {
        return Err(Error::dim(
            "affine_forward input/weights",
            format!("{}x{}", input.rows(), input.cols()),
            format!("{}x{}", weights.rows(), weights.cols()),
        ));
    }
    if bias.len() != weights.cols() {
        return Err(Error::LengthMismatch {
            context: "affine_forward bias".into(),
            expected: weights.cols(),
            got: bias.len(),
        });
    }
    let mut out = input.matmul(weights)?;
    for r in 0..out.rows() {
        for (o, v) in out.row_mut(r).iter_mut().enumerate() {
            *v += bias[o];
        }
    }
    Ok(out)
}

/// d_weights = input^T * upstream; d_bias = column sums of upstream;
/// d_input = upstream * weights^T.
pub fn affine_backward<T: Real>(
    input: &Matrix<T>,
    weights: &Matrix<T>,
    upstream: &Matrix<T>,
) -> Result<LayerGrads<T>> {
    if upstream.rows() != input.rows() || upstream.cols() != weights.cols() {
        return Err(Error::dim(
            "affine_backward upstream",
            format!("{}x{}", upstream.rows(), upstream.cols()),
            format!("{}x{} expected", input.rows(), weights.cols()),
        ));
    }
    let d_weights = input.transpose().matmul(upstream)?;
    let mut d_bias = vec![T::zero(); weights.cols()];
    for r in 0..upstream.rows() {
        for (o, v) in upstream.row(r).iter().enumerate() {
            d_bias[o] += *v;
        }
    }
    let d_input = upstream.matmul(&weights.transpose())?;
    Ok(LayerGrads {
        d_weights,
        d_bias,
        d_input,
    })
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Upstream gradient masked where the preactivation x <= 0.
pub fn relu_backward<T: Real>(x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    if x.shape() != upstream.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let mut out = upstream.clone();
    for (v, &pre) in out.data_mut().iter_mut().zip(x.data()) {
        if pre <= T::zero() {
            *v = T::zero();
        }
    }
    Ok(out)
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
