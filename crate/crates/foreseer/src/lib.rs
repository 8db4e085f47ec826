//! Files, checkpoints, the HTTP verifier client and the command-line runner
//! around `foreseer_core`.

pub mod checkpoint;
pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod io;

pub use error::{Error, Result};
