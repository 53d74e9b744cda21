pub mod catalog;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod numeric;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
