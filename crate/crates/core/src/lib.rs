//! Algorithmic core of a LiDAR 3D detection and tracking pipeline.
//!
//! The crate covers the non-neural stages around a point-cloud detector:
//!
//! * [`pointcloud`]: two-frame concatenation with a time channel, range
//!   cropping and the global augmentations (flip, scale, rotate).
//! * [`voxelizer`]: hard (capped) and dynamic (lossless) voxelization.
//! * [`assigner`]: fixed-threshold and adaptive (ATSS-style) anchor assignment.
//! * [`ensemble`]: NMS, soft-NMS, 3D box voting and greedy score-weighted
//!   ensembling of several detectors.
//! * [`tracker`]: constant-velocity Kalman tracking with Hungarian association.
//! * [`metrics`]: AP/APH detection metrics and CLEAR-MOT tracking metrics.
//! * [`io`] and [`config`]: JSONL box files, binary point files and the JSON
//!   configuration document.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod assigner;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pointcloud;
pub mod scalar;
pub mod tracker;
pub mod voxelizer;

pub use error::{Error, Result};
pub use geometry::{Box3D, IouKind, Label};
pub use scalar::Scalar;

/// Oriented box in double precision.
pub type Box3 = geometry::Box3D<f64>;
/// Oriented box in single precision.
pub type Box3f = geometry::Box3D<f32>;
pub type Point = pointcloud::TimedPoint<f64>;
pub type Pointf = pointcloud::TimedPoint<f32>;
pub type Cloud = pointcloud::PointCloud<f64>;
pub type Cloudf = pointcloud::PointCloud<f32>;
pub type Range = pointcloud::RangeSpec<f64>;
pub type Detections = ensemble::DetectionSet<f64>;
pub type Detectionsf = ensemble::DetectionSet<f32>;
pub type Grid = voxelizer::VoxelGrid<f64>;
pub type Tracker = tracker::Tracker<f64>;
pub type Trackerf = tracker::Tracker<f32>;
