pub mod augmentation;
pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod network;
pub mod protocols;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
