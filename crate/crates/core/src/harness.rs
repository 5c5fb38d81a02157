//! Experiment orchestration: single-shot versus cooperative detection,
//! difficulty classes, improvement CDF, GPS-drift suite and timing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, ExchangePackage};
use crate::detect::{
    classify_difficulty, detect, detect_fused, distance_band, match_detections, DetectError, DetectionBox,
    DetectorParams, Difficulty, DistanceBand,
};
use crate::fusion::{fuse, FusionError};
use crate::geometry::{enu_to_geodetic, geodetic_to_enu, GeodeticCoord, GeometryError, Vec3, VehiclePose};
use crate::pointcloud::PointCloud;
use crate::roi::RoiSpec;
use crate::scenesim::{
    make_occlusion_scenario_variant, simulate_scan, OcclusionScenario, OcclusionVariant, SceneError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_DRIFT: f64 = 0.10;

/// Two scans plus ground truth in each sensor's frame. B transmits, A
/// receives and hosts the fused frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub pose_a: VehiclePose,
    pub pose_b: VehiclePose,
    pub truth_a: Vec<(u32, DetectionBox)>,
    pub truth_b: Vec<(u32, DetectionBox)>,
}

impl FramePair {
    /// Scans `scenario` from both vehicles.
    pub fn from_scenario(sc: &OcclusionScenario) -> Result<Self, HarnessError> {
        Ok(Self {
            cloud_a: simulate_scan(&sc.scene, &sc.sensor_a(), sc.seed)?,
            cloud_b: simulate_scan(&sc.scene, &sc.sensor_b(), sc.seed.wrapping_add(1))?,
            pose_a: sc.pose_a,
            pose_b: sc.pose_b,
            truth_a: sc.scene.truth_boxes(&sc.pose_a),
            truth_b: sc.scene.truth_boxes(&sc.pose_b),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub truth_id: u32,
    pub detected_a: bool,
    pub detected_b: bool,
    pub detected_fused: bool,
    /// 0 when undetected.
    pub score_a: f64,
    pub score_b: f64,
    pub score_fused: f64,
    pub difficulty: Difficulty,
    /// Band of the range from A's sensor.
    pub distance_band: DistanceBand,
    pub range_a: f64,
}

impl ObjectRecord {
    pub fn improvement(&self) -> f64 {
        self.score_fused - self.score_a.max(self.score_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCounts {
    /// Truth objects matched.
    pub detected: usize,
    /// All boxes the detector emitted.
    pub boxes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub median_single_ms: f64,
    pub median_fused_ms: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub records: Vec<ObjectRecord>,
    pub count_a: ConditionCounts,
    pub count_b: ConditionCounts,
    pub count_fused: ConditionCounts,
    pub fused_points: usize,
    /// Wall-clock data is kept out of seeded runs so reports stay
    /// reproducible byte for byte.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<TimingResult>,
}

impl ExperimentReport {
    pub fn record(&self, truth_id: u32) -> Option<&ObjectRecord> {
        self.records.iter().find(|r| r.truth_id == truth_id)
    }

    pub fn fused_ids(&self) -> BTreeSet<u32> {
        self.records
            .iter()
            .filter(|r| r.detected_fused)
            .map(|r| r.truth_id)
            .collect()
    }
}

/// Score per truth id (0 if unmatched).
fn match_scores(boxes: &[DetectionBox], truth: &[(u32, DetectionBox)]) -> Result<Vec<Option<f64>>, DetectError> {
    let t: Vec<DetectionBox> = truth.iter().map(|(_, b)| *b).collect();
    let mut out = vec![None; t.len()];
    for m in match_detections(boxes, &t, DEFAULT_IOU_THRESHOLD)? {
        out[m.truth] = Some(boxes[m.detection].score);
    }
    Ok(out)
}

/// Detects on A, on B and on B fused into A (B's scan goes through a
/// full-frame package), then matches each against truth.
pub fn run_cooper_experiment(
    pair: &FramePair,
    params: &DetectorParams,
    dedup_leaf: Option<f64>,
) -> Result<ExperimentReport, HarnessError> {
    run_with_transmitter_pose(pair, &pair.pose_b, params, dedup_leaf, "")
}

fn run_with_transmitter_pose(
    pair: &FramePair,
    reported_pose_b: &VehiclePose,
    params: &DetectorParams,
    dedup_leaf: Option<f64>,
    label: &str,
) -> Result<ExperimentReport, HarnessError> {
    params.validate()?;
    let pkg = ExchangePackage::new(2, 0, reported_pose_b, &RoiSpec::FullFrame, &pair.cloud_b)?;
    let fused = fuse(&pair.cloud_a, &pair.pose_a, &pkg, dedup_leaf)?;

    let boxes_a = detect(&pair.cloud_a, params);
    let boxes_b = detect(&pair.cloud_b, params);
    let boxes_f = detect_fused(&fused, params);
    let sa = match_scores(&boxes_a, &pair.truth_a)?;
    let sf = match_scores(&boxes_f, &pair.truth_a)?;
    let sb_raw = match_scores(&boxes_b, &pair.truth_b)?;

    let mut records = Vec::with_capacity(pair.truth_a.len());
    for (i, (id, truth)) in pair.truth_a.iter().enumerate() {
        let sb = pair
            .truth_b
            .iter()
            .position(|(bid, _)| bid == id)
            .and_then(|j| sb_raw[j]);
        let range_a = truth.range();
        records.push(ObjectRecord {
            truth_id: *id,
            detected_a: sa[i].is_some(),
            detected_b: sb.is_some(),
            detected_fused: sf[i].is_some(),
            score_a: sa[i].unwrap_or(0.0),
            score_b: sb.unwrap_or(0.0),
            score_fused: sf[i].unwrap_or(0.0),
            difficulty: classify_difficulty(sa[i].is_some(), sb.is_some()),
            distance_band: distance_band(range_a)?,
            range_a,
        });
    }
    let count = |boxes: &[DetectionBox], s: &[Option<f64>]| ConditionCounts {
        detected: s.iter().filter(|x| x.is_some()).count(),
        boxes: boxes.len(),
    };
    Ok(ExperimentReport {
        label: label.to_string(),
        count_a: count(&boxes_a, &sa),
        count_b: count(&boxes_b, &sb_raw),
        count_fused: count(&boxes_f, &sf),
        records,
        fused_points: fused.cloud.len(),
        timing: None,
    })
}

/// Seeded suite cycling through the occlusion variants.
pub fn suite_scenarios(n: usize, seed: u64) -> Result<Vec<OcclusionScenario>, HarnessError> {
    (0..n)
        .map(|i| {
            let variant = OcclusionVariant::ALL[i % OcclusionVariant::ALL.len()];
            Ok(make_occlusion_scenario_variant(seed.wrapping_add(i as u64), variant)?)
        })
        .collect()
}

/// Runs every scenario of `scenarios`, labelling reports `variant/seed`.
pub fn run_suite(
    scenarios: &[OcclusionScenario],
    params: &DetectorParams,
    dedup_leaf: Option<f64>,
) -> Result<Vec<ExperimentReport>, HarnessError> {
    scenarios
        .iter()
        .map(|sc| {
            let pair = FramePair::from_scenario(sc)?;
            let mut r = run_cooper_experiment(&pair, params, dedup_leaf)?;
            r.label = format!("{}/{}", sc.variant.as_str(), sc.seed);
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub improvement: f64,
    pub fraction: f64,
}

/// Empirical CDF of `score_fused - max(score_a, score_b)` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCdf {
    pub easy: Vec<CdfPoint>,
    pub moderate: Vec<CdfPoint>,
    pub hard: Vec<CdfPoint>,
}

impl ImprovementCdf {
    pub fn class(&self, d: Difficulty) -> &[CdfPoint] {
        match d {
            Difficulty::Easy => &self.easy,
            Difficulty::Moderate => &self.moderate,
            Difficulty::Hard => &self.hard,
        }
    }

    /// Lower median of the class, `None` if it is empty.
    pub fn median(&self, d: Difficulty) -> Option<f64> {
        let pts = self.class(d);
        if pts.is_empty() {
            return None;
        }
        Some(pts[(pts.len() - 1) / 2].improvement)
    }

    /// `difficulty,improvement,cdf`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("difficulty,improvement,cdf\n");
        for d in Difficulty::ALL {
            for p in self.class(d) {
                let _ = writeln!(out, "{},{:.6},{:.6}", d.as_str(), p.improvement, p.fraction);
            }
        }
        out
    }
}

fn cdf(mut values: Vec<f64>) -> Vec<CdfPoint> {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .into_iter()
        .enumerate()
        .map(|(i, improvement)| CdfPoint {
            improvement,
            fraction: (i + 1) as f64 / n,
        })
        .collect()
}

pub fn improvement_cdf(reports: &[ExperimentReport]) -> Result<ImprovementCdf, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::InvalidParameter("no reports".into()));
    }
    let of = |d: Difficulty| {
        cdf(reports
            .iter()
            .flat_map(|r| &r.records)
            .filter(|o| o.difficulty == d)
            .map(|o| o.improvement())
            .collect())
    };
    Ok(ImprovementCdf {
        easy: of(Difficulty::Easy),
        moderate: of(Difficulty::Moderate),
        hard: of(Difficulty::Hard),
    })
}

/// Offset applied to the transmitter's reported GPS, meters east/north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCase {
    pub label: String,
    pub dx: f64,
    pub dy: f64,
}

/// Baseline, both axes at the bound, each axis alone, and both axes at
/// twice the bound.
pub fn drift_cases(max_drift: f64) -> Vec<DriftCase> {
    let m = max_drift;
    let mut cases = vec![DriftCase {
        label: "baseline".into(),
        dx: 0.0,
        dy: 0.0,
    }];
    let mut push = |family: &str, dx: f64, dy: f64| {
        cases.push(DriftCase {
            label: format!("{family}({dx:+.2},{dy:+.2})"),
            dx,
            dy,
        })
    };
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        push("both", sx * m, sy * m);
    }
    for s in [1.0, -1.0] {
        push("x_only", s * m, 0.0);
    }
    for s in [1.0, -1.0] {
        push("y_only", 0.0, s * m);
    }
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        push("double", sx * 2.0 * m, sy * 2.0 * m);
    }
    cases
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOutcome {
    pub case: DriftCase,
    /// Truth ids matched in the fused frame.
    pub matched: Vec<u32>,
    pub lost: Vec<u32>,
    pub gained: Vec<u32>,
    pub same_as_baseline: bool,
    /// Mean fused-score change over objects matched in both.
    pub mean_score_delta: f64,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub label: String,
    pub max_drift: f64,
    pub outcomes: Vec<DriftOutcome>,
}

impl DriftReport {
    /// Cases whose offset stays within the configured bound.
    pub fn within_bound(&self) -> impl Iterator<Item = &DriftOutcome> {
        let m = self.max_drift + 1e-12;
        self.outcomes
            .iter()
            .filter(move |o| o.case.dx.abs() <= m && o.case.dy.abs() <= m)
    }

    /// `scenario,case,dx,dy,matched,lost,gained,same_as_baseline,mean_score_delta`
    pub fn csv_rows(&self, out: &mut String) {
        let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{},{},{},{},{:.6}",
                self.label,
                o.case.label,
                o.case.dx,
                o.case.dy,
                ids(&o.matched),
                ids(&o.lost),
                ids(&o.gained),
                o.same_as_baseline,
                o.mean_score_delta
            );
        }
    }
}

pub const DRIFT_CSV_HEADER: &str = "scenario,case,dx,dy,matched,lost,gained,same_as_baseline,mean_score_delta\n";

/// `pose` with its GPS moved by `(dx, dy)` meters east/north.
pub fn skew_gps(pose: &VehiclePose, dx: f64, dy: f64) -> Result<VehiclePose, GeometryError> {
    let origin: GeodeticCoord = pose.gps;
    let moved = enu_to_geodetic(&origin, Vec3::new(dx, dy, 0.0))?;
    debug_assert!((geodetic_to_enu(&origin, &moved).0[0] - dx).abs() < 1e-6);
    let mut p = *pose;
    p.gps = moved;
    Ok(p)
}

/// Reruns the experiment with the transmitter's reported GPS skewed per
/// [`drift_cases`].
pub fn gps_drift_suite(
    pair: &FramePair,
    max_drift: f64,
    params: &DetectorParams,
    label: &str,
) -> Result<DriftReport, HarnessError> {
    if !(max_drift > 0.0 && max_drift.is_finite()) {
        return Err(HarnessError::InvalidParameter(format!(
            "max drift {max_drift} must be positive"
        )));
    }
    let baseline = run_with_transmitter_pose(pair, &pair.pose_b, params, None, label)?;
    let base_ids = baseline.fused_ids();
    let mut outcomes = Vec::new();
    for case in drift_cases(max_drift) {
        let report = if case.dx == 0.0 && case.dy == 0.0 {
            baseline.clone()
        } else {
            let pose = skew_gps(&pair.pose_b, case.dx, case.dy)?;
            run_with_transmitter_pose(pair, &pose, params, None, label)?
        };
        let ids = report.fused_ids();
        let mut deltas = Vec::new();
        for r in &report.records {
            if let Some(b) = baseline.record(r.truth_id) {
                if r.detected_fused && b.detected_fused {
                    deltas.push(r.score_fused - b.score_fused);
                }
            }
        }
        let mean_score_delta = if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        };
        outcomes.push(DriftOutcome {
            matched: ids.iter().copied().collect(),
            lost: base_ids.difference(&ids).copied().collect(),
            gained: ids.difference(&base_ids).copied().collect(),
            same_as_baseline: ids == base_ids,
            mean_score_delta,
            case,
            report,
        });
    }
    Ok(DriftReport {
        label: label.to_string(),
        max_drift,
        outcomes,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub const MIN_TIMING_REPETITIONS: usize = 10;

/// Median wall-clock detect time on each cloud, runs interleaved.
pub fn timing_benchmark(
    single: &PointCloud,
    fused: &PointCloud,
    params: &DetectorParams,
    repetitions: usize,
) -> Result<TimingResult, HarnessError> {
    if repetitions < MIN_TIMING_REPETITIONS {
        return Err(HarnessError::InvalidParameter(format!(
            "need at least {MIN_TIMING_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    params.validate()?;
    let time = |c: &PointCloud| {
        let t = Instant::now();
        std::hint::black_box(detect(std::hint::black_box(c), params));
        t.elapsed().as_secs_f64() * 1e3
    };
    // warm-up
    time(single);
    time(fused);
    let mut s = Vec::with_capacity(repetitions);
    let mut f = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        s.push(time(single));
        f.push(time(fused));
    }
    Ok(TimingResult {
        median_single_ms: median(s),
        median_fused_ms: median(f),
        repetitions,
    })
}

pub const OBJECTS_CSV_HEADER: &str =
    "scenario,truth_id,detected_a,detected_b,detected_fused,score_a,score_b,score_fused,difficulty,distance_band,range_a\n";

/// Per-object rows for every report.
pub fn objects_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(OBJECTS_CSV_HEADER);
    for r in reports {
        for o in &r.records {
            let band = match o.distance_band {
                DistanceBand::Near => "near",
                DistanceBand::Medium => "medium",
                DistanceBand::Far => "far",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{:.3}",
                r.label,
                o.truth_id,
                o.detected_a,
                o.detected_b,
                o.detected_fused,
                o.score_a,
                o.score_b,
                o.score_fused,
                o.difficulty.as_str(),
                band,
                o.range_a
            );
        }
    }
    out
}

/// Names of suite-level properties that do not hold.
pub fn suite_violations(reports: &[ExperimentReport]) -> Vec<String> {
    let mut bad = Vec::new();
    for r in reports {
        if r.count_fused.detected < r.count_a.detected || r.count_fused.detected < r.count_b.detected {
            bad.push(format!("detection-count dominance ({})", r.label));
        }
        for o in &r.records {
            if o.difficulty != classify_difficulty(o.detected_a, o.detected_b) {
                bad.push(format!("difficulty partition ({} object {})", r.label, o.truth_id));
            }
        }
    }
    bad
}
