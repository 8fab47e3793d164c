//! Continual learning of several classification tasks on one multi-head
//! residual network, with distillation against a frozen teacher copy so old
//! tasks are retained without their data.

pub mod data;
pub mod error;
pub mod experiments;
pub mod io;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
