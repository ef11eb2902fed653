pub mod anchors;
pub mod assign;
pub mod checkpoint;
pub mod completion;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod pipeline;
pub mod synth;
pub mod taxonomy;
pub mod tensor;

pub use error::{Error, Result};
