//! Bundle networks: invertible, neighborhood-conditioned generative models
//! that split the input space of a many-to-one task into label and fiber
//! coordinates, so that the fiber over any label can be sampled.

pub mod charts;
pub mod checkpoint;
pub mod datasets;
mod error;
pub mod eval;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
mod pointcloud;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use pointcloud::PointCloud;
