pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
