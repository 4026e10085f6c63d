//! Test-set transfer selection: validate model-similarity proxies against
//! test-set properties offline, then pick reference test sets for a new
//! model online.

pub mod error;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod properties;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod workspace;

pub use error::{Error, Result};
