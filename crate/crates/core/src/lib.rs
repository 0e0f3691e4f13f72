//! Dynamic capacity networks.

pub mod attention;
pub mod cli;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod seq;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{DType, Real, Tensor};
