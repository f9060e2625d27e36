//! File formats, synthetic phantoms, model persistence and the command-line
//! interface around `vsrf-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod model;
pub mod phantom;
pub mod report;

pub use error::{Error, Result};
