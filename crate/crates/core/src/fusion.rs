//! Merging a transmitter's cloud into the receiver's sensor frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, ExchangePackage};
use crate::geometry::{relative_pose, RigidTransform, Vec3, VehiclePose};
use crate::pointcloud::{voxel_downsample_labeled, Point, PointCloud, PointCloudError};
use crate::roi::RoiSpec;

pub const DEFAULT_DEDUP_LEAF: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cloud(#[from] PointCloudError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCloud {
    /// In the receiver's sensor frame.
    pub cloud: PointCloud,
    pub receiver_points: usize,
    pub transmitter_points: usize,
    /// Transmitter sensor frame -> receiver sensor frame.
    pub transform_used: RigidTransform,
    /// Per output point: [`RECEIVER`] or [`TRANSMITTER`].
    pub source: Vec<u8>,
}

pub const RECEIVER: u8 = 0;
pub const TRANSMITTER: u8 = 1;

impl FusedCloud {
    /// Sensor origins in the fused frame, indexed by source label.
    pub fn viewpoints(&self) -> [[f64; 3]; 2] {
        [[0.0; 3], self.transform_used.translation.0 .0]
    }
}

fn map_points(cloud: &PointCloud, t: &RigidTransform) -> Vec<Point> {
    cloud
        .points
        .iter()
        .map(|p| {
            let q = t.apply(Vec3(p.xyz_f64()));
            Point::new(q.0[0] as f32, q.0[1] as f32, q.0[2] as f32, p.reflectance)
        })
        .collect()
}

/// Sensor frame -> vehicle body frame.
pub fn apply_install_extrinsic(cloud: &PointCloud, pose: &VehiclePose) -> PointCloud {
    cloud.with_points(map_points(cloud, &pose.body_from_sensor()))
}

/// Receiver points followed by the transmitter's points mapped into the
/// receiver frame. With `dedup_leaf` set the union is voxel-thinned.
pub fn fuse(
    receiver_cloud: &PointCloud,
    receiver_pose: &VehiclePose,
    pkg: &ExchangePackage,
    dedup_leaf: Option<f64>,
) -> Result<FusedCloud, FusionError> {
    let tx_cloud = pkg.points()?;
    Ok(fuse_decoded(
        receiver_cloud,
        receiver_pose,
        &tx_cloud,
        &pkg.pose,
        dedup_leaf,
    )?)
}

/// [`fuse`] for a transmitter cloud that is already decoded (or never went
/// through the codec).
pub fn fuse_decoded(
    receiver_cloud: &PointCloud,
    receiver_pose: &VehiclePose,
    transmitter_cloud: &PointCloud,
    transmitter_pose: &VehiclePose,
    dedup_leaf: Option<f64>,
) -> Result<FusedCloud, PointCloudError> {
    let transform = relative_pose(receiver_pose, transmitter_pose);
    let mut points = Vec::with_capacity(receiver_cloud.len() + transmitter_cloud.len());
    points.extend_from_slice(&receiver_cloud.points);
    points.extend(map_points(transmitter_cloud, &transform));
    let mut cloud = receiver_cloud.with_points(points);
    let mut source = vec![RECEIVER; receiver_cloud.len()];
    source.resize(cloud.len(), TRANSMITTER);
    if let Some(leaf) = dedup_leaf {
        (cloud, source) = voxel_downsample_labeled(&cloud, &source, leaf)?;
    }
    Ok(FusedCloud {
        cloud,
        receiver_points: receiver_cloud.len(),
        transmitter_points: transmitter_cloud.len(),
        transform_used: transform,
        source,
    })
}

/// Inputs for one emulated two-vehicle exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatedPair {
    pub receiver_cloud: PointCloud,
    pub receiver_pose: VehiclePose,
    pub package: ExchangePackage,
}

/// Turns two frames of one moving vehicle into a cooperative pair: the
/// earlier frame becomes the transmitter's package, the later one the
/// receiver's own scan.
pub fn emulate_two_vehicle_from_sequence(
    frame_t1: &PointCloud,
    pose_t1: &VehiclePose,
    frame_t2: &PointCloud,
    pose_t2: &VehiclePose,
) -> Result<EmulatedPair, CodecError> {
    let package = ExchangePackage::new(1, 0, pose_t1, &RoiSpec::FullFrame, frame_t1)?;
    Ok(EmulatedPair {
        receiver_cloud: frame_t2.clone(),
        receiver_pose: *pose_t2,
        package,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{enu_to_geodetic, EulerAngles, GeodeticCoord};
    use crate::pointcloud::BeamCount;
    use std::f64::consts::PI;

    fn origin() -> GeodeticCoord {
        GeodeticCoord::new(0.0, 0.0, 0.0).unwrap()
    }

    fn pose(east: f64, north: f64, yaw: f64) -> VehiclePose {
        VehiclePose::new(
            enu_to_geodetic(&origin(), Vec3::new(east, north, 0.0)).unwrap(),
            EulerAngles::yaw_only(yaw).unwrap(),
        )
    }

    fn cloud(pts: &[(f32, f32, f32)]) -> PointCloud {
        PointCloud::new(
            pts.iter().map(|&(x, y, z)| Point::new(x, y, z, 0.5)).collect(),
            BeamCount::Beams16,
            "",
        )
    }

    fn pkg(c: &PointCloud, p: &VehiclePose) -> ExchangePackage {
        ExchangePackage::new(2, 0, p, &RoiSpec::FullFrame, c).unwrap()
    }

    #[test]
    fn extrinsic_cases() {
        let c = cloud(&[(1.0, 0.0, 0.0), (2.0, 3.0, 4.0)]);
        let p = pose(0.0, 0.0, 0.0);
        assert_eq!(apply_install_extrinsic(&c, &p), c);

        let lifted = p.with_install(Vec3::new(0.0, 0.0, 2.0), EulerAngles::zero());
        let out = apply_install_extrinsic(&c, &lifted);
        assert_eq!(out.points[1].z, 6.0);

        let turned = p.with_install(Vec3::new(1.0, 0.0, 0.0), EulerAngles::yaw_only(PI / 2.0).unwrap());
        let q = apply_install_extrinsic(&cloud(&[(1.0, 0.0, 0.0)]), &turned).points[0];
        assert!((q.x - 1.0).abs() < 1e-6 && (q.y - 1.0).abs() < 1e-6 && q.z.abs() < 1e-6);
    }

    #[test]
    fn identical_poses_concatenate() {
        let a = cloud(&[(1.0, 2.0, 0.0), (3.0, 1.0, 0.5)]);
        let b = cloud(&[(5.0, 5.0, 1.0)]);
        let p = pose(0.0, 0.0, 0.3);
        let f = fuse(&a, &p, &pkg(&b, &p), None).unwrap();
        assert_eq!(f.cloud.len(), 3);
        assert_eq!(f.receiver_points, 2);
        assert_eq!(f.transmitter_points, 1);
        assert_eq!(&f.cloud.points[..2], &a.points[..]);
        assert_eq!(f.cloud.points[2].x, 5.0);
    }

    #[test]
    fn transmitter_ahead() {
        let rx = pose(0.0, 0.0, 0.0);
        let tx = pose(10.0, 0.0, 0.0);
        let f = fuse(&cloud(&[]), &rx, &pkg(&cloud(&[(0.0, 0.0, 0.0)]), &tx), None).unwrap();
        let p = f.cloud.points[0];
        assert!((p.x - 10.0).abs() < 1e-4 && p.y.abs() < 1e-4);
    }

    #[test]
    fn transmitter_facing_back() {
        let rx = pose(0.0, 0.0, 0.0);
        let tx = pose(20.0, 0.0, PI);
        let f = fuse(&cloud(&[]), &rx, &pkg(&cloud(&[(1.0, 0.0, 0.0)]), &tx), None).unwrap();
        let p = f.cloud.points[0];
        assert!((p.x - 19.0).abs() < 1e-4 && p.y.abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn dedup_collapses_self_fusion() {
        let a = cloud(&[(1.0, 2.0, 0.0), (3.0, 1.0, 0.5), (8.0, -2.0, 0.25)]);
        let p = pose(5.0, 5.0, 1.0);
        let f = fuse_decoded(&a, &p, &a, &p, Some(0.01)).unwrap();
        assert_eq!(f.cloud.len(), 3);
    }

    #[test]
    fn emulation_wraps_t1_as_transmitter() {
        let a = cloud(&[(1.0, 2.0, 0.0)]);
        let p = pose(0.0, 0.0, 0.0);
        let pair = emulate_two_vehicle_from_sequence(&a, &p, &a, &p).unwrap();
        assert_eq!(pair.package.point_count(), 1);
        let f = fuse(&pair.receiver_cloud, &pair.receiver_pose, &pair.package, None).unwrap();
        assert_eq!(f.cloud.len(), 2);
    }
}
