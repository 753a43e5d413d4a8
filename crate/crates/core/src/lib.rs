pub mod cli;
pub mod cutmetric;
pub mod error;
pub mod gntk;
pub mod limitg;
pub mod matrix;
pub mod netlab;
pub mod numkit;
pub mod saliency;
pub mod uatlab;

pub use error::{Error, Result};
pub use matrix::Matrix;
