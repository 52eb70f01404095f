//! Minimal dense-network numerical kernel: matrix storage, affine/ReLU/softmax
//! forward and backward passes, Adam, and a finite-difference gradient oracle.
//!
//! Everything here is a pure function of its inputs; optimizer state is passed
//! explicitly. Values are safe to move between threads.

mod adam;
mod gradcheck;
mod matrix;
mod ops;

pub use adam::{adam_update, AdamState};
pub use gradcheck::{fd_gradcheck, fd_gradcheck_with_eps, DEFAULT_FD_EPS};
pub use matrix::Matrix;
pub use ops::{
    affine_backward, affine_forward, relu_backward, relu_forward, softmax_rows, LayerGrads,
};
