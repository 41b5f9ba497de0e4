//! Reverse-mode automatic differentiation over dense `f64` tensors, with
//! the fused spectral primitives the network needs, and AdamW.

mod error;
pub mod optim;
pub mod tape;
mod tensor;

pub use error::{Error, Result};
pub use optim::{adamw_step, lr_schedule, AdamW, Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
