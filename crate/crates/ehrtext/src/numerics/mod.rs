//! Minimal numeric stack: tensors, a gradient tape, an optimizer, and the
//! verification tools that keep them honest.

pub mod adamw;
pub mod gradcheck;
pub mod parallel;
pub mod scalar;
pub mod sparsemax;
pub mod store;
pub mod tape;
pub mod tensor;

pub use adamw::AdamW;
pub use scalar::Real;
pub use store::ParamStore;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
