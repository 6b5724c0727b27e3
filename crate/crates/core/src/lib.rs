// Float checks are written `!(x >= 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cnn;
pub mod error;
pub mod eval;
pub mod model;
pub mod mst;
pub mod nn;
pub mod optim;
pub mod persist;
pub mod seed;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
