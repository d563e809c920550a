//! Differentiable computation core: dense tensors, feed-forward nets with
//! analytic gradients, SGD, stable softmax / log-sum-exp, and a deterministic
//! PRNG.

mod net;
mod rng;
mod stable;
mod tensor;

pub use net::{Activation, DifferentiableNet};
pub use rng::Rng;
pub use stable::{log_sum_exp, softmax};
pub use tensor::Tensor2D;
