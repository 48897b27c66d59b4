//! Bottleneck architectures with and without a SoLU residual module,
//! a reverse-mode autodiff engine to train them, and tools to measure how
//! strongly residual-stream feature directions overlap.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod interference;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vessel;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
