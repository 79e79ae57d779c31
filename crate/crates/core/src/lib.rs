pub mod cli;
pub mod embedding;
pub mod error;
pub mod hstu;
pub mod mfalcon;
pub mod model;
pub mod numeric;
pub mod sequence;
pub mod stochastic_length;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
