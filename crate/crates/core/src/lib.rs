//! Sim-to-real object position detection with two variational autoencoders
//! that share one decoder.

pub mod cli;
pub mod error;
pub mod eval;
pub mod models;
pub mod ndtensor;
pub mod pipeline;
pub mod scenegen;

pub use error::{Error, Result};
