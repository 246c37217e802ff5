//! Building blocks for tiny-object line-detection models: box geometry,
//! YOLO-format datasets, anchor clustering, attention and loss kernels, and
//! detection metrics.

pub mod anchors;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;

pub use error::{Error, Result};
