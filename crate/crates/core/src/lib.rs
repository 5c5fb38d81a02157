//! Cooperative perception over V2V links: align and merge LiDAR scans from
//! two vehicles, pick what to send, size it for a DSRC-class channel and
//! measure what fusion buys a detector.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod detect;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod netsim;
pub mod pointcloud;
pub mod roi;
pub mod scenesim;

pub use codec::{parse_package, serialize_package, ExchangePackage};
pub use detect::{DetectionBox, Detector, DetectorParams, Difficulty, DistanceBand, GeometricDetector};
pub use fusion::{fuse, FusedCloud};
pub use geometry::{EulerAngles, GeodeticCoord, RigidTransform, RotationMatrix, Translation, Vec3, VehiclePose};
pub use harness::{run_cooper_experiment, ExperimentReport, FramePair};
pub use netsim::{simulate_exchange, ChannelModel, ExchangeScenario, TrafficReport};
pub use pointcloud::{BeamCount, Point, PointCloud};
pub use roi::RoiSpec;
