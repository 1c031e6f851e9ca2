pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod model;
pub mod nn;
pub mod plots;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
