//! File formats, configuration, parallel drivers and the end-to-end
//! pipeline around `voxelmesh-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod pipeline;

pub use error::{Error, Result};
