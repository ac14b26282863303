//! Deep label alignment: training with soft-gated spectral filtering of
//! feature matrices, plus the linear-regression identities behind it.

pub mod data;
pub mod dla;
pub mod error;
pub mod gradcheck;
pub mod linear_lab;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
