//! Region-of-interest selection and static-background subtraction, used to
//! shrink what a vehicle puts on the air.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{voxel_key, Point, PointCloud, VoxelKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoiError {
    #[error("invalid ROI: {0}")]
    InvalidSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Which part of a frame to share. Angles in radians, distances in meters,
/// all in the sender's sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoiSpec {
    #[default]
    FullFrame,
    /// Azimuth sector of total `width` centered on `center_azimuth`.
    FovSector {
        center_azimuth: f64,
        width: f64,
    },
    /// Cone around +x with the given half angle, truncated at `max_range`.
    ForwardCone {
        half_angle: f64,
        max_range: f64,
    },
    BoxRegion {
        min: [f64; 3],
        max: [f64; 3],
    },
}

// boundary points are kept
const EDGE_EPS: f64 = 1e-12;

impl RoiSpec {
    /// The 120 degree driver's-view sector.
    pub fn junction_sector() -> Self {
        RoiSpec::FovSector {
            center_azimuth: 0.0,
            width: 2.0 * PI / 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), RoiError> {
        let bad = |m: String| Err(RoiError::InvalidSpec(m));
        match *self {
            RoiSpec::FullFrame => Ok(()),
            RoiSpec::FovSector { center_azimuth, width } => {
                if !center_azimuth.is_finite() {
                    return bad(format!("sector center {center_azimuth} is not finite"));
                }
                if !(width > 0.0 && width <= 2.0 * PI) {
                    return bad(format!("sector width {width} outside (0, 2pi]"));
                }
                Ok(())
            }
            RoiSpec::ForwardCone { half_angle, max_range } => {
                if !(half_angle > 0.0 && half_angle <= PI) {
                    return bad(format!("cone half angle {half_angle} outside (0, pi]"));
                }
                if !(max_range > 0.0) {
                    return bad(format!("cone range {max_range} must be positive"));
                }
                Ok(())
            }
            RoiSpec::BoxRegion { min, max } => {
                if min.iter().chain(max.iter()).any(|v| !v.is_finite()) {
                    return bad("box corner is not finite".into());
                }
                if (0..3).any(|i| min[i] >= max[i]) {
                    return bad(format!("box min {min:?} not below max {max:?}"));
                }
                Ok(())
            }
        }
    }

    /// Membership test; assumes the spec is valid.
    pub fn contains(&self, p: &Point) -> bool {
        let [x, y, z] = p.xyz_f64();
        match *self {
            RoiSpec::FullFrame => true,
            RoiSpec::FovSector { center_azimuth, width } => {
                if width >= 2.0 * PI {
                    return true;
                }
                let az = y.atan2(x);
                let diff = (az - center_azimuth + PI).rem_euclid(2.0 * PI) - PI;
                diff.abs() <= width / 2.0 + EDGE_EPS
            }
            RoiSpec::ForwardCone { half_angle, max_range } => {
                let r = (x * x + y * y + z * z).sqrt();
                if r > max_range {
                    return false;
                }
                if r == 0.0 {
                    return true;
                }
                let angle = (x / r).clamp(-1.0, 1.0).acos();
                angle <= half_angle + EDGE_EPS
            }
            RoiSpec::BoxRegion { min, max } => (0..3).all(|i| [x, y, z][i] >= min[i] && [x, y, z][i] <= max[i]),
        }
    }
}

/// Keeps the points inside `spec`, preserving order.
pub fn extract_roi(cloud: &PointCloud, spec: &RoiSpec) -> Result<PointCloud, RoiError> {
    spec.validate()?;
    if let RoiSpec::FullFrame = spec {
        return Ok(cloud.clone());
    }
    Ok(cloud.with_points(cloud.points.iter().filter(|p| spec.contains(p)).copied().collect()))
}

/// Per-voxel count of how many mapping passes saw something there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticMap {
    pub leaf: f64,
    pub frames_observed: u32,
    counts: HashMap<VoxelKey, u32>,
}

impl StaticMap {
    pub fn empty(leaf: f64) -> Self {
        Self {
            leaf,
            frames_observed: 0,
            counts: HashMap::new(),
        }
    }

    pub fn count(&self, key: &VoxelKey) -> u32 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn count_at(&self, p: &Point) -> u32 {
        self.count(&voxel_key(p, self.leaf))
    }

    pub fn occupied_voxels(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames_observed == 0 || self.counts.is_empty()
    }

    /// Folds one more mapping pass into the counts.
    pub fn observe(&mut self, frame: &PointCloud) {
        let seen: HashSet<VoxelKey> = frame.points.iter().map(|p| voxel_key(p, self.leaf)).collect();
        for k in seen {
            *self.counts.entry(k).or_insert(0) += 1;
        }
        self.frames_observed += 1;
    }
}

pub const DEFAULT_STATIC_LEAF: f64 = 0.2;
pub const DEFAULT_MIN_STATIC_FRACTION: f64 = 0.8;

/// Builds an occupancy map from frames that share one reference frame.
pub fn build_static_map(frames: &[PointCloud], leaf: f64) -> Result<StaticMap, RoiError> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(RoiError::InvalidParameter(format!("leaf must be positive, got {leaf}")));
    }
    if frames.is_empty() {
        return Err(RoiError::InvalidParameter("static map needs at least one frame".into()));
    }
    let mut map = StaticMap::empty(leaf);
    for f in frames {
        map.observe(f);
    }
    Ok(map)
}

/// Drops points whose voxel was occupied in at least `min_fraction` of the
/// mapping passes.
pub fn background_subtract(cloud: &PointCloud, map: &StaticMap, min_fraction: f64) -> Result<PointCloud, RoiError> {
    if !(min_fraction > 0.0 && min_fraction <= 1.0) {
        return Err(RoiError::InvalidParameter(format!(
            "min_fraction {min_fraction} outside (0, 1]"
        )));
    }
    if map.is_empty() {
        return Ok(cloud.clone());
    }
    let frames = map.frames_observed as f64;
    let kept = cloud
        .points
        .iter()
        .filter(|p| (map.count_at(p) as f64) / frames < min_fraction)
        .copied()
        .collect();
    Ok(cloud.with_points(kept))
}
