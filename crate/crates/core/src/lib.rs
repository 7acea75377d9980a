//! Two-phase point cloud completion.
//!
//! A partial scan is first completed at low resolution (with a learned
//! symmetry plane and residual refinement), then densified patch by patch.

pub mod assignment;
pub mod cloud;
pub mod data;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod training;

pub use cloud::{PointCloud, Point3, SymPlane, Normalization, PipelineConfig, Ablation};
pub use error::{Error, Result};
