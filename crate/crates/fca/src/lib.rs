//! Standard-library companion of `fca-core`: dataset discovery, PNG and
//! `FMP1` file IO, key=value configuration, reports, run manifests, the
//! timing harness and the `fca` command line.

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod report;

pub use error::{Error, Result};
