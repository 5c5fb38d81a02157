//! Point-cloud model, KITTI `.bin` I/O, voxel thinning and spherical
//! range-image projection.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointCloudError {
    #[error("malformed KITTI file: {len} bytes is not a multiple of 16")]
    MalformedFile { len: usize },
    #[error("non-finite value in point {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported beam count {0} (expected 16, 32 or 64)")]
    UnsupportedBeamCount(u32),
}

/// A single LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Normalized to `[0, 1]`.
    pub reflectance: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, reflectance: f32) -> Self {
        Self { x, y, z, reflectance }
    }

    pub fn xyz_f64(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    pub fn range(&self) -> f64 {
        let [x, y, z] = self.xyz_f64();
        (x * x + y * y + z * z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.reflectance.is_finite()
    }
}

/// Velodyne-class beam layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BeamCount {
    #[default]
    Beams16,
    Beams32,
    Beams64,
}

impl BeamCount {
    pub fn from_count(n: u32) -> Result<Self, PointCloudError> {
        match n {
            16 => Ok(BeamCount::Beams16),
            32 => Ok(BeamCount::Beams32),
            64 => Ok(BeamCount::Beams64),
            other => Err(PointCloudError::UnsupportedBeamCount(other)),
        }
    }

    pub fn count(&self) -> u32 {
        match self {
            BeamCount::Beams16 => 16,
            BeamCount::Beams32 => 32,
            BeamCount::Beams64 => 64,
        }
    }

    /// Vertical field of view `(min, max)` in degrees (VLP-16, HDL-32E, HDL-64E).
    pub fn elevation_span_deg(&self) -> (f64, f64) {
        match self {
            BeamCount::Beams16 => (-15.0, 15.0),
            BeamCount::Beams32 => (-30.67, 10.67),
            BeamCount::Beams64 => (-24.8, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub beam_count: BeamCount,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, beam_count: BeamCount, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            beam_count,
            frame_id: frame_id.into(),
        }
    }

    pub fn empty(beam_count: BeamCount) -> Self {
        Self::new(Vec::new(), beam_count, "")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, different points.
    pub fn with_points(&self, points: Vec<Point>) -> Self {
        Self {
            points,
            beam_count: self.beam_count,
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn stats(&self) -> CloudStats {
        let mut st = CloudStats {
            count: self.points.len(),
            ..Default::default()
        };
        if self.points.is_empty() {
            return st;
        }
        let mut sum = 0.0;
        st.min_range = f64::INFINITY;
        for p in &self.points {
            let r = p.range();
            sum += r;
            st.min_range = st.min_range.min(r);
            st.max_range = st.max_range.max(r);
        }
        st.mean_range = sum / self.points.len() as f64;
        st
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CloudStats {
    pub count: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub mean_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KittiReadStats {
    /// Records whose reflectance fell outside `[0, 1]` and was clamped.
    pub clamped_reflectance: usize,
}

/// Decodes a KITTI velodyne scan: little-endian `f32` quadruples
/// `(x, y, z, reflectance)` with no header.
pub fn read_kitti_bin(bytes: &[u8], beam_count: BeamCount) -> Result<PointCloud, PointCloudError> {
    read_kitti_bin_with_stats(bytes, beam_count).map(|(c, _)| c)
}

pub fn read_kitti_bin_with_stats(
    bytes: &[u8],
    beam_count: BeamCount,
) -> Result<(PointCloud, KittiReadStats), PointCloudError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(PointCloudError::MalformedFile { len: bytes.len() });
    }
    let mut stats = KittiReadStats::default();
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (index, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        let mut p = Point::new(f(0), f(4), f(8), f(12));
        if !p.is_finite() {
            return Err(PointCloudError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&p.reflectance) {
            stats.clamped_reflectance += 1;
            p.reflectance = p.reflectance.clamp(0.0, 1.0);
        }
        points.push(p);
    }
    if stats.clamped_reflectance > 0 {
        log::warn!("clamped {} out-of-range reflectance values", stats.clamped_reflectance);
    }
    Ok((PointCloud::new(points, beam_count, ""), stats))
}

/// Encodes a cloud in the KITTI velodyne layout.
pub fn write_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.points.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub type VoxelKey = (i64, i64, i64);

pub fn voxel_key(p: &Point, leaf: f64) -> VoxelKey {
    let [x, y, z] = p.xyz_f64();
    (
        (x / leaf).floor() as i64,
        (y / leaf).floor() as i64,
        (z / leaf).floor() as i64,
    )
}

/// Replaces the points of every occupied `leaf`-sized voxel by their
/// centroid. Output is ordered by voxel index.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud, PointCloudError> {
    Ok(voxel_downsample_labeled(cloud, &vec![0; cloud.len()], leaf)?.0)
}

/// [`voxel_downsample`] carrying a per-point label through; each output
/// point takes the label of the first input point in its voxel.
pub fn voxel_downsample_labeled(
    cloud: &PointCloud,
    labels: &[u8],
    leaf: f64,
) -> Result<(PointCloud, Vec<u8>), PointCloudError> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(PointCloudError::InvalidParameter(format!(
            "voxel leaf must be positive, got {leaf}"
        )));
    }
    if labels.len() != cloud.len() {
        return Err(PointCloudError::InvalidParameter(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    // (sum x, sum y, sum z, sum refl, count, first point, first label)
    let mut bins: BTreeMap<VoxelKey, ([f64; 4], usize, Point, u8)> = BTreeMap::new();
    for (p, &l) in cloud.points.iter().zip(labels) {
        let e = bins.entry(voxel_key(p, leaf)).or_insert(([0.0; 4], 0, *p, l));
        e.0[0] += p.x as f64;
        e.0[1] += p.y as f64;
        e.0[2] += p.z as f64;
        e.0[3] += p.reflectance as f64;
        e.1 += 1;
    }
    let (points, out_labels) = bins
        .into_iter()
        .map(|(key, (s, n, first, label))| {
            if n == 1 {
                return (first, label);
            }
            let k = n as f64;
            let c = Point::new(
                (s[0] / k) as f32,
                (s[1] / k) as f32,
                (s[2] / k) as f32,
                ((s[3] / k) as f32).clamp(0.0, 1.0),
            );
            // f32 rounding can push a centroid across the voxel boundary
            if voxel_key(&c, leaf) == key {
                (c, label)
            } else {
                (first, label)
            }
        })
        .unzip();
    Ok((cloud.with_points(points), out_labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeCell {
    pub range: f64,
    pub reflectance: f32,
}

/// Dense azimuth/elevation grid of nearest returns. Row 0 is the highest
/// elevation; column 0 starts at azimuth 0 (+x) and increases
/// counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<RangeCell>>,
    /// Points at the sensor origin, which have no direction.
    pub skipped_zero_norm: usize,
    /// Points outside the sensor's elevation span.
    pub skipped_out_of_span: usize,
}

impl RangeImage {
    pub fn get(&self, row: usize, col: usize) -> Option<&RangeCell> {
        self.cells.get(row * self.cols + col).and_then(|c| c.as_ref())
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

pub fn spherical_project(cloud: &PointCloud, rows: usize, cols: usize) -> Result<RangeImage, PointCloudError> {
    let (lo, hi) = cloud.beam_count.elevation_span_deg();
    spherical_project_span(cloud, rows, cols, lo.to_radians(), hi.to_radians())
}

/// Projection with an explicit elevation span in radians.
pub fn spherical_project_span(
    cloud: &PointCloud,
    rows: usize,
    cols: usize,
    min_elevation: f64,
    max_elevation: f64,
) -> Result<RangeImage, PointCloudError> {
    if rows == 0 || cols == 0 {
        return Err(PointCloudError::InvalidParameter(format!(
            "range image must be at least 1x1, got {rows}x{cols}"
        )));
    }
    if !(max_elevation > min_elevation) {
        return Err(PointCloudError::InvalidParameter("empty elevation span".into()));
    }
    let mut img = RangeImage {
        rows,
        cols,
        cells: vec![None; rows * cols],
        skipped_zero_norm: 0,
        skipped_out_of_span: 0,
    };
    let span = max_elevation - min_elevation;
    for p in &cloud.points {
        let r = p.range();
        if r == 0.0 {
            img.skipped_zero_norm += 1;
            continue;
        }
        let [x, y, z] = p.xyz_f64();
        let elevation = (z / r).clamp(-1.0, 1.0).asin();
        if elevation < min_elevation || elevation > max_elevation {
            img.skipped_out_of_span += 1;
            continue;
        }
        let row = (((max_elevation - elevation) / span) * rows as f64).floor() as usize;
        let row = row.min(rows - 1);
        let az = y.atan2(x).rem_euclid(2.0 * PI);
        let col = ((az / (2.0 * PI)) * cols as f64).floor() as usize % cols;
        let cell = &mut img.cells[row * cols + col];
        match cell {
            Some(c) if c.range <= r => {}
            _ => {
                *cell = Some(RangeCell {
                    range: r,
                    reflectance: p.reflectance,
                })
            }
        }
    }
    Ok(img)
}
