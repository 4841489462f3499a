pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod loss;
pub mod model;
pub mod patch;
pub mod profile;
pub mod tensor;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
