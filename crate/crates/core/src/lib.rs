//! Selective uncertainty-based active learning for binary image
//! segmentation.
//!
//! Instead of summing a per-pixel uncertainty metric over every pixel of a
//! sample, the selective query restricts the aggregation to pixels the model
//! predicts as foreground (target-aware) and to pixels near the decision
//! boundary (boundary-driven), then merges the two TopK rankings into one
//! batch. The crate ships the query strategies, a toy pixelwise learner, a
//! seeded synthetic imbalanced benchmark, the full AL simulation loop, and
//! the on-disk formats that connect them.

pub mod dataio;
pub mod domain;
pub mod error;
pub mod learner;
pub mod report;
pub mod selection;
pub mod simulator;
pub mod study;
pub mod synthdata;
pub mod uncertainty;

pub use error::{Error, Result};
