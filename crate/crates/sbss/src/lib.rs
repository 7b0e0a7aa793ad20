//! File formats, experiment configuration and the replication harness for
//! spatial blind source separation. The numerics live in `sbss_core`.

pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod manifest;
pub mod specs;

pub use error::{Error, Result};
