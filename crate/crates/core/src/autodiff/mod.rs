//! Minimal reverse-mode automatic differentiation: dense 2-D tensors, a
//! per-batch tape of operations, and an Adam optimizer over a named
//! parameter store.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, ParamStore};
pub use tape::{BnMode, Tape, Var, BN_EPS};
pub use tensor::Tensor;
