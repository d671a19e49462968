pub mod error;
pub mod rng;
pub mod tensor;
pub mod schedule;
pub mod diffusion;
pub mod nn;
pub mod predictors;
pub mod oracles;
pub mod optim;
pub mod checkpoint;
pub mod data;
pub mod teacher;
pub mod rsd;
pub mod run;
pub mod plot;
pub mod vsd;
pub mod eval;
pub mod config;
pub mod verify;

mod binio;

pub use error::{Error, Result};
pub use tensor::Tensor;
