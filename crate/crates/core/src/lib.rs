pub mod audio;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod mil;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
