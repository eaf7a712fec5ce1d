pub mod analysis;
pub mod arch;
pub mod cli;
pub mod compression;
pub mod data;
pub mod easiness;
pub mod error;
pub mod io;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
