//! File formats, checkpoints, a synthetic corpus generator and the
//! command-line pipeline around `medslot-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
