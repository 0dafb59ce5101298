//! Multi-temporal point-cloud change analysis for building damage grading.
//!
//! The crate covers the full chain from two co-registered epochs of a scene to
//! per-building damage grades: spatial indexing, eigen-based geometric
//! features, feature change between epochs, a k-means changed/unchanged split
//! per building, aggregation to building vectors, and a random-forest grader
//! with evaluation metrics.

pub mod change;
pub mod classifier;
pub mod cloud;
pub mod cluster;
pub mod error;
pub mod features;
pub mod grade;
pub mod index;
pub mod metrics;
pub mod ply;
pub mod registration;
pub mod rng;
pub mod robustness;
pub mod subsample;

pub use change::{compute_change, ChangeTable};
pub use cloud::{Epoch, Point3, PointCloud};
pub use cluster::{extract_changed_points, kmeans2, ChangeLabel, ClusterResult, NoiseThreshold};
pub use error::{Error, Result};
pub use features::{compute_features, compute_features_at, FeatureId, FeatureTable};
pub use grade::DamageGrade;
pub use index::{QueryMode, SpatialIndex};
pub use registration::{align_icp, alignment_quality, RigidTransform};
pub use subsample::subsample_to_spacing;
