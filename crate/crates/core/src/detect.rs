//! Object detection interface plus a geometric baseline detector
//! (ground removal, single-linkage clustering, oriented box fit, density
//! score), distance bands and the easy/moderate/hard taxonomy.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedCloud;
use crate::pointcloud::PointCloud;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceBand {
    Near,
    Medium,
    Far,
}

/// `< 10 m` near, `10..=25 m` medium, `> 25 m` far.
pub fn distance_band(range: f64) -> Result<DistanceBand, DetectError> {
    if !(range >= 0.0) {
        return Err(DetectError::InvalidParameter(format!("range {range} must be >= 0")));
    }
    Ok(if range < 10.0 {
        DistanceBand::Near
    } else if range <= 25.0 {
        DistanceBand::Medium
    } else {
        DistanceBand::Far
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

/// Seen by both single shots: easy; by exactly one: moderate; by neither: hard.
pub fn classify_difficulty(detected_by_a: bool, detected_by_b: bool) -> Difficulty {
    match (detected_by_a, detected_by_b) {
        (true, true) => Difficulty::Easy,
        (true, false) | (false, true) => Difficulty::Moderate,
        (false, false) => Difficulty::Hard,
    }
}

/// Oriented 3D box, yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: [f64; 3],
    /// length (along yaw), width, height
    pub size: [f64; 3],
    pub yaw: f64,
    pub score: f64,
    pub distance_band: DistanceBand,
    /// Input points supporting the box; 0 for ground truth.
    #[serde(default)]
    pub num_points: usize,
}

impl DetectionBox {
    /// Box from geometry alone, with score 1.
    pub fn truth(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        let range = (center[0].powi(2) + center[1].powi(2) + center[2].powi(2)).sqrt();
        Self {
            center,
            size,
            yaw,
            score: 1.0,
            distance_band: distance_band(range).unwrap_or(DistanceBand::Far),
            num_points: 0,
        }
    }

    pub fn range(&self) -> f64 {
        let [x, y, z] = self.center;
        (x * x + y * y + z * z).sqrt()
    }

    /// Bird's-eye-view corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size[0] / 2.0;
        let hw = self.size[1] / 2.0;
        let [cx, cy, _] = self.center;
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| [cx + c * u - s * v, cy + s * u + c * v])
    }

    pub fn bev_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, boxes: &[DetectionBox]) -> Result<(), DetectError> {
    for b in boxes {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<DetectionBox>, DetectError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Ground plane height hint in the sensor frame (negative mounting height).
    pub ground_z: f64,
    pub ground_height_tolerance: f64,
    pub cluster_distance: f64,
    pub min_cluster_points: usize,
    /// Points per m^2 of `reference_area` expected at 10 m.
    pub expected_density: f64,
    pub reference_area: f64,
    /// Typical object footprint (length, width, height); partial views are
    /// grown to it away from the sensor.
    pub size_prior: Option<[f64; 3]>,
}

/// Mounting height of the simulated and KITTI-style roof LiDAR.
pub const DEFAULT_SENSOR_HEIGHT: f64 = 1.73;
pub const CAR_SIZE: [f64; 3] = [4.5, 1.8, 1.5];

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            ground_z: -DEFAULT_SENSOR_HEIGHT,
            ground_height_tolerance: 0.2,
            cluster_distance: 0.5,
            min_cluster_points: 20,
            // unoccluded car centered 10 m ahead, seen end-on by the default
            // 16-beam sensor (rear face 1.8 m x 1.5 m)
            expected_density: 124.0,
            reference_area: CAR_SIZE[1] * CAR_SIZE[2],
            size_prior: Some(CAR_SIZE),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let positive = [
            ("ground_height_tolerance", self.ground_height_tolerance),
            ("cluster_distance", self.cluster_distance),
            ("expected_density", self.expected_density),
            ("reference_area", self.reference_area),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DetectError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.min_cluster_points == 0 {
            return Err(DetectError::InvalidParameter(
                "min_cluster_points must be positive".into(),
            ));
        }
        if !self.ground_z.is_finite() {
            return Err(DetectError::InvalidParameter("ground_z must be finite".into()));
        }
        if let Some(s) = self.size_prior {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(DetectError::InvalidParameter(format!(
                    "size prior {s:?} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Points an unoccluded reference object should return at `range`.
    pub fn expected_points(&self, range: f64) -> f64 {
        let r = range.max(1.0);
        self.expected_density * self.reference_area * (10.0 / r).powi(2)
    }

    /// `min(1, observed / expected)`
    pub fn score(&self, points: usize, range: f64) -> f64 {
        (points as f64 / self.expected_points(range)).min(1.0)
    }
}

/// Anything that turns a cloud (sensor frame) into boxes.
pub trait Detector {
    fn detect(&self, cloud: &PointCloud) -> Vec<DetectionBox>;

    /// A fused cloud also records which sensor saw each point; detectors
    /// that can use that override this.
    fn detect_fused(&self, fused: &FusedCloud) -> Vec<DetectionBox> {
        self.detect(&fused.cloud)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometricDetector {
    pub params: DetectorParams,
}

impl GeometricDetector {
    pub fn new(params: DetectorParams) -> Result<Self, DetectError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Detector for GeometricDetector {
    fn detect(&self, cloud: &PointCloud) -> Vec<DetectionBox> {
        detect(cloud, &self.params)
    }

    fn detect_fused(&self, fused: &FusedCloud) -> Vec<DetectionBox> {
        detect_fused(fused, &self.params)
    }
}

/// Ground height: median z of points near the hint, or the hint itself when
/// too few points are there.
fn fit_ground(pts: &[[f64; 3]], hint: f64) -> f64 {
    let mut zs: Vec<f64> = pts.iter().map(|p| p[2]).filter(|z| (z - hint).abs() < 0.3).collect();
    if zs.len() < 10 {
        return hint;
    }
    let mid = zs.len() / 2;
    let (_, m, _) = zs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root, keeps labels order-stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage clusters at bird's-eye-view distance `d`, each as a list
/// of indices in ascending order; clusters ordered by their first index.
pub fn euclidean_clusters(pts: &[[f64; 3]], d: f64) -> Vec<Vec<usize>> {
    let cell = |p: &[f64; 3]| ((p[0] / d).floor() as i64, (p[1] / d).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let d2 = d * d;
    let mut uf = UnionFind::new(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    let q = &pts[j];
                    if (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= d2 {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..pts.len() {
        let r = uf.find(i);
        by_root.entry(r).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = by_root.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    clusters
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise, no repeated end point.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for &q in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a point set in the plane:
/// `(center, length, width, yaw)` with `length >= width` and yaw in
/// `(-pi/2, pi/2]`.
pub fn min_area_rect(points: &[[f64; 2]]) -> ([f64; 2], f64, f64, f64) {
    let hull = convex_hull(points);
    let edges: Vec<f64> = match hull.len() {
        0 => return ([0.0, 0.0], 0.0, 0.0, 0.0),
        1 => vec![0.0],
        2 => vec![(hull[1][1] - hull[0][1]).atan2(hull[1][0] - hull[0][0])],
        n => (0..n)
            .map(|i| {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                (b[1] - a[1]).atan2(b[0] - a[0])
            })
            .collect(),
    };
    let mut best: Option<(f64, [f64; 2], f64, f64, f64)> = None;
    for theta in edges {
        let (s, c) = theta.sin_cos();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = c * p[0] + s * p[1];
            let v = -s * p[0] + c * p[1];
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let area = (u1 - u0) * (v1 - v0);
        if best.as_ref().is_none_or(|b| area < b.0 - 1e-12) {
            let (uc, vc) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
            let center = [c * uc - s * vc, s * uc + c * vc];
            best = Some((area, center, u1 - u0, v1 - v0, theta));
        }
    }
    let (_, center, mut len, mut wid, mut yaw) = best.unwrap();
    if wid > len {
        std::mem::swap(&mut len, &mut wid);
        yaw += std::f64::consts::FRAC_PI_2;
    }
    (center, len, wid, wrap_half_pi(yaw))
}

/// Rectangle whose edges hug the points: among the hull edge directions,
/// the one minimizing the summed distance from each point to its nearest
/// rectangle edge. Unlike minimum area it is not fooled by L-shaped views
/// (two faces of a corner), where the diagonal ties on area. Same output
/// convention as [`min_area_rect`].
pub fn edge_fit_rect(points: &[[f64; 2]]) -> ([f64; 2], f64, f64, f64) {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return min_area_rect(points);
    }
    let n = hull.len();
    let mut best: Option<(f64, f64, [f64; 2], f64, f64, f64)> = None;
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
        let (s, c) = theta.sin_cos();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = c * p[0] + s * p[1];
            let v = -s * p[0] + c * p[1];
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let cost: f64 = points
            .iter()
            .map(|p| {
                let u = c * p[0] + s * p[1];
                let v = -s * p[0] + c * p[1];
                (u - u0).min(u1 - u).min(v - v0).min(v1 - v)
            })
            .sum();
        let area = (u1 - u0) * (v1 - v0);
        let better = match &best {
            None => true,
            Some(b) => cost < b.0 - 1e-9 || (cost <= b.0 + 1e-9 && area < b.1 - 1e-12),
        };
        if better {
            let (uc, vc) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
            best = Some((cost, area, [c * uc - s * vc, s * uc + c * vc], u1 - u0, v1 - v0, theta));
        }
    }
    let (_, _, center, mut len, mut wid, mut yaw) = best.unwrap();
    if wid > len {
        std::mem::swap(&mut len, &mut wid);
        yaw += std::f64::consts::FRAC_PI_2;
    }
    (center, len, wid, wrap_half_pi(yaw))
}

fn wrap_half_pi(a: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut a = a.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Grows `[lo, hi]` along an axis to `target` length, extending away from
/// the sensor at axis coordinate `sensor`.
fn grow_interval(lo: f64, hi: f64, target: f64, sensor: f64) -> (f64, f64) {
    if hi - lo >= target {
        return (lo, hi);
    }
    let mid = (lo + hi) / 2.0;
    if sensor <= lo {
        (lo, lo + target)
    } else if sensor >= hi {
        (hi - target, hi)
    } else {
        (mid - target / 2.0, mid + target / 2.0)
    }
}

const MIN_EXTENT: f64 = 0.1;
/// Half-width of the band around a rectangle edge counted as that face.
const FACE_BAND: f64 = 0.15;
/// Ground returns this close to a box edge are not counted against it.
const FREE_SPACE_INSET: f64 = 0.2;

fn covered_free(rect: &([f64; 2], f64, f64, f64), free: &[[f64; 2]]) -> usize {
    let (center, len, wid, yaw) = *rect;
    let (s, c) = yaw.sin_cos();
    let (hl, hw) = (len / 2.0 - FREE_SPACE_INSET, wid / 2.0 - FREE_SPACE_INSET);
    free.iter()
        .filter(|p| {
            let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
            (c * dx + s * dy).abs() < hl && (-s * dx + c * dy).abs() < hw
        })
        .count()
}

/// Fits one cluster. `free` holds the bird's-eye positions of ground
/// returns: a sensor cannot see ground where a car stands, so when a partial
/// view is ambiguous about which way the car runs, the completion covering
/// fewer ground returns wins.
fn fit_box(
    pts: &[[f64; 3]],
    labels: &[u8],
    viewpoints: &[[f64; 3]],
    free: &[[f64; 2]],
    ground: f64,
    params: &DetectorParams,
) -> DetectionBox {
    let mut per_view = vec![0usize; viewpoints.len()];
    for &l in labels {
        per_view[l as usize] += 1;
    }
    // partial views are completed away from the sensor that saw most of them
    let main = (0..per_view.len()).fold(0, |best, i| if per_view[i] > per_view[best] { i } else { best });
    let [sx, sy, _] = viewpoints[main];
    let bev: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
    let (mut center, mut len, mut wid, mut yaw) = edge_fit_rect(&bev);
    let top = pts.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
    let bottom = ground.min(pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min));
    let height = (top - bottom).max(MIN_EXTENT);
    if let Some(prior) = params.size_prior {
        // only car-scale clusters are completed to the prior
        if len <= prior[0] * 1.2 && wid <= prior[0] {
            let (s, c) = yaw.sin_cos();
            let uc = c * center[0] + s * center[1];
            let vc = -s * center[0] + c * center[1];
            let (su, sv) = (c * sx + s * sy, -s * sx + c * sy);
            let complete = |length_on_u: bool| {
                let (tu, tv) = if length_on_u {
                    (prior[0], prior[1])
                } else {
                    (prior[1], prior[0])
                };
                let (u0, u1) = grow_interval(uc - len / 2.0, uc + len / 2.0, tu, su);
                let (v0, v1) = grow_interval(vc - wid / 2.0, vc + wid / 2.0, tv, sv);
                let (nu, nv) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
                let center = [c * nu - s * nv, s * nu + c * nv];
                if length_on_u {
                    (center, u1 - u0, v1 - v0, yaw)
                } else {
                    (
                        center,
                        v1 - v0,
                        u1 - u0,
                        wrap_half_pi(yaw + std::f64::consts::FRAC_PI_2),
                    )
                }
            };
            // the best-populated edge is the face the sensor saw; a face no
            // longer than a car is wide is an end, and the car runs across it
            let (mut near_u, mut near_v) = (0usize, 0usize);
            for p in &bev {
                let u = c * p[0] + s * p[1] - uc;
                let v = -s * p[0] + c * p[1] - vc;
                if (u.abs() - len / 2.0).abs() < FACE_BAND {
                    near_u += 1;
                }
                if (v.abs() - wid / 2.0).abs() < FACE_BAND {
                    near_v += 1;
                }
            }
            let face_along_u = near_v >= near_u;
            let face_len = if face_along_u { len } else { wid };
            let is_end = face_len <= prior[1] * 1.3;
            let length_on_u = face_along_u != is_end;
            let mut pick = complete(length_on_u);
            if len <= prior[1] * 1.3 {
                let alt = complete(!length_on_u);
                if covered_free(&alt, free) < covered_free(&pick, free) {
                    pick = alt;
                }
            }
            (center, len, wid, yaw) = pick;
        }
    }
    let center3 = [center[0], center[1], bottom + height / 2.0];
    let range = (center3[0].powi(2) + center3[1].powi(2) + center3[2].powi(2)).sqrt();
    // each sensor's share is judged against what it should see at its range
    let coverage: f64 = viewpoints
        .iter()
        .zip(&per_view)
        .map(|(o, &n)| {
            let r = ((center3[0] - o[0]).powi(2) + (center3[1] - o[1]).powi(2) + (center3[2] - o[2]).powi(2)).sqrt();
            n as f64 / params.expected_points(r)
        })
        .sum();
    DetectionBox {
        center: center3,
        size: [len.max(MIN_EXTENT), wid.max(MIN_EXTENT), height],
        yaw,
        score: coverage.min(1.0),
        distance_band: distance_band(range).unwrap_or(DistanceBand::Far),
        num_points: pts.len(),
    }
}

/// Runs the geometric baseline on a sensor-frame cloud.
///
/// Output depends only on the multiset of input points, not their order.
pub fn detect(cloud: &PointCloud, params: &DetectorParams) -> Vec<DetectionBox> {
    detect_views(cloud, &vec![0; cloud.len()], &[[0.0; 3]], params)
}

/// [`detect`] on a fused cloud, using where each point was seen from.
pub fn detect_fused(fused: &FusedCloud, params: &DetectorParams) -> Vec<DetectionBox> {
    detect_views(&fused.cloud, &fused.source, &fused.viewpoints(), params)
}

/// `labels[i]` indexes `viewpoints`, the sensor origin point `i` was seen
/// from (in the cloud's frame). Size-prior growth runs away from the
/// dominant viewpoint of each cluster and the score sums each viewpoint's
/// coverage.
///
/// Panics if `labels` does not match the cloud or names a missing viewpoint.
pub fn detect_views(
    cloud: &PointCloud,
    labels: &[u8],
    viewpoints: &[[f64; 3]],
    params: &DetectorParams,
) -> Vec<DetectionBox> {
    assert_eq!(labels.len(), cloud.len(), "one label per point");
    assert!(
        labels.iter().all(|&l| (l as usize) < viewpoints.len()),
        "label without viewpoint"
    );
    if cloud.is_empty() {
        return Vec::new();
    }
    let mut tagged: Vec<([f64; 3], u8)> = cloud
        .points
        .iter()
        .map(|p| p.xyz_f64())
        .zip(labels.iter().copied())
        .collect();
    tagged.sort_by(|(a, la), (b, lb)| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
            .then(la.cmp(lb))
    });
    let all: Vec<[f64; 3]> = tagged.iter().map(|t| t.0).collect();
    let ground = fit_ground(&all, params.ground_z);
    let cut = ground + params.ground_height_tolerance;
    let free: Vec<[f64; 2]> = tagged
        .iter()
        .filter(|(p, _)| p[2] <= cut)
        .map(|(p, _)| [p[0], p[1]])
        .collect();
    tagged.retain(|(p, _)| p[2] > cut);
    let (pts, tags): (Vec<[f64; 3]>, Vec<u8>) = tagged.into_iter().unzip();
    let fit = |g: &[usize]| {
        let members: Vec<[f64; 3]> = g.iter().map(|&i| pts[i]).collect();
        let member_tags: Vec<u8> = g.iter().map(|&i| tags[i]).collect();
        fit_box(&members, &member_tags, viewpoints, &free, ground, params)
    };
    let mut groups: Vec<Vec<usize>> = euclidean_clusters(&pts, params.cluster_distance);
    let mut boxes: Vec<DetectionBox> = groups.iter().map(|g| fit(g)).collect();
    // clusters whose completed boxes overlap belong to one object (e.g. a
    // rear face and a detached strip of roof returns)
    loop {
        let mut merged = false;
        'scan: for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if bev_overlap_fraction(&boxes[i], &boxes[j]) > MERGE_OVERLAP {
                    let g = groups.remove(j);
                    boxes.remove(j);
                    groups[i].extend(g);
                    groups[i].sort_unstable();
                    boxes[i] = fit(&groups[i]);
                    merged = true;
                    break 'scan;
                }
            }
        }
        if !merged {
            break;
        }
    }
    groups
        .iter()
        .zip(boxes)
        .filter(|(g, _)| g.len() >= params.min_cluster_points)
        .map(|(_, b)| b)
        .collect()
}

/// Overlap area as a fraction of the smaller box's area.
const MERGE_OVERLAP: f64 = 0.1;

fn bev_overlap_fraction(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let inter = polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    let smaller = a.bev_area().min(b.bev_area());
    if smaller <= 0.0 {
        0.0
    } else {
        inter / smaller
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    s.abs() / 2.0
}

/// Sutherland-Hodgman clip of `subject` by convex CCW `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Bird's-eye-view intersection over union of two oriented boxes.
pub fn bev_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let inter = polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detection: usize,
    pub truth: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching, highest BEV IoU first; pairs below
/// `iou_threshold` are never matched.
pub fn match_detections(
    boxes: &[DetectionBox],
    truth: &[DetectionBox],
    iou_threshold: f64,
) -> Result<Vec<Match>, DetectError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(DetectError::InvalidParameter(format!(
            "iou threshold {iou_threshold} outside (0, 1)"
        )));
    }
    let mut cands = Vec::new();
    for (i, d) in boxes.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let iou = bev_iou(d, t);
            if iou >= iou_threshold {
                cands.push(Match {
                    detection: i,
                    truth: j,
                    iou,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.truth.cmp(&b.truth))
            .then(a.detection.cmp(&b.detection))
    });
    let mut used_d = vec![false; boxes.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for m in cands {
        if !used_d[m.detection] && !used_t[m.truth] {
            used_d[m.detection] = true;
            used_t[m.truth] = true;
            out.push(m);
        }
    }
    out.sort_by_key(|m| m.truth);
    Ok(out)
}
