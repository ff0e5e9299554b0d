//! Shared substrate: tensors, PRNG, tensor files and the finite-difference oracle.

pub mod gradcheck;
pub mod io;
mod real;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_flat, finite_diff_grad, max_rel_error};
pub use io::{tensor_read, tensor_read_any, tensor_write};
pub use real::{sigmoid, silu, silu_grad, softplus, Dtype, Real};
pub use rng::Rng;
pub use tensor::{checked_numel, Tensor};
