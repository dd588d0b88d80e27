//! File formats, datasets on disk and the command-line front end.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod report;

pub use error::{Error, Result};
pub use vkd_core as core;
