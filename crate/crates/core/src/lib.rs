//! STMambaNet: a spatial-temporal selective state-space network for EEG
//! motor-imagery classification, with its own reverse-mode autodiff.

pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod model;
pub mod selftest;
pub mod ssm;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Float, Graph, Mode, ParamStore, Tensor, Var};
