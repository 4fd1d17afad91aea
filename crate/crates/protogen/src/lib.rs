//! File formats, configuration, parallel evaluation and the command verbs
//! behind the `protogen` binary. The numeric core is [`protogen_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod embedding_csv;
pub mod error;
pub mod parallel;
pub mod reports;

pub use error::{Error, Result};
