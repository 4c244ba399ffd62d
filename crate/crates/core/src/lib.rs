//! Online video object segmentation on drifting feature streams, with a
//! replay-memory learner and an importance-weighted parameter regularizer.

pub mod curation;
pub mod error;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod stream;

pub use error::{Error, Result};
