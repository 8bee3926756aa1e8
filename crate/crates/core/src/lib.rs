pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod nets;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
