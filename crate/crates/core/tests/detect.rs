use coopfuse::detect::{
    bev_iou, detect, match_detections, DetectionBox, Detector, DetectorParams, DistanceBand, GeometricDetector,
};
use coopfuse::pointcloud::BeamCount;
use coopfuse::scenesim::{default_origin, simulate_scan, simulate_scan_labeled, Scene, SceneObject, SensorModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat_scene(cars: &[(f64, f64, f64)]) -> Scene {
    let mut s = Scene::new(default_origin(), Some(0.0), 80.0);
    for (i, &(x, y, yaw)) in cars.iter().enumerate() {
        s.objects.push(SceneObject::car(i as u32 + 1, x, y, yaw, 0.0));
    }
    s
}

fn bev_dist(a: &DetectionBox, b: &DetectionBox) -> f64 {
    (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
}

#[test]
fn single_car_at_twelve_meters() {
    let scene = flat_scene(&[(12.0, 0.0, 0.0)]);
    let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
    let sensor = SensorModel::velodyne(BeamCount::Beams64, pose);
    let scan = simulate_scan_labeled(&scene, &sensor, 0).unwrap();
    let on_car = scan.count_on(1);
    assert!(on_car >= 600, "only {on_car} car returns");
    let boxes = detect(&scan.cloud, &DetectorParams::default());
    assert_eq!(boxes.len(), 1, "{boxes:?}");
    let truth = scene.truth_boxes(&pose)[0].1;
    assert_eq!(boxes[0].distance_band, DistanceBand::Medium);
    assert!(
        bev_dist(&boxes[0], &truth) < 0.3,
        "{:?} vs {:?}",
        boxes[0].center,
        truth.center
    );
}

#[test]
fn two_cars_eight_meters_apart() {
    let scene = flat_scene(&[(12.0, -4.0, 0.0), (12.0, 4.0, 0.0)]);
    let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
    let scan = simulate_scan(&scene, &SensorModel::velodyne(BeamCount::Beams64, pose), 0).unwrap();
    let params = DetectorParams {
        cluster_distance: 0.5,
        ..DetectorParams::default()
    };
    let boxes = detect(&scan, &params);
    assert_eq!(boxes.len(), 2, "{boxes:?}");
    let truth: Vec<_> = scene.truth_boxes(&pose).into_iter().map(|t| t.1).collect();
    assert_eq!(match_detections(&boxes, &truth, 0.5).unwrap().len(), 2);
}

// The score normalization: a car centered 10 m ahead, seen end-on by the
// default 16-beam sensor, is the reference and should score ~1 with roughly
// the expected count.
#[test]
fn calibration_car_end_on_at_ten_meters() {
    let scene = flat_scene(&[(10.0, 0.0, 0.0)]);
    let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
    let scan = simulate_scan_labeled(&scene, &SensorModel::velodyne(BeamCount::Beams16, pose), 0).unwrap();
    let params = DetectorParams::default();
    let expected = params.expected_points(10.0);
    let ratio = scan.count_on(1) as f64 / expected;
    assert!(
        (0.85..=1.15).contains(&ratio),
        "{} returns vs {expected}",
        scan.count_on(1)
    );
    let boxes = detect(&scan.cloud, &params);
    assert_eq!(boxes.len(), 1);
    assert!(boxes[0].score > 0.85, "{}", boxes[0].score);
}

#[test]
fn bands_follow_box_range() {
    let params = DetectorParams::default();
    for (x, band) in [
        (8.0, DistanceBand::Near),
        (14.0, DistanceBand::Medium),
        (20.0, DistanceBand::Medium),
        (30.0, DistanceBand::Far),
    ] {
        let scene = flat_scene(&[(x, 0.0, 0.0)]);
        let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
        let scan = simulate_scan(&scene, &SensorModel::velodyne(BeamCount::Beams16, pose), 0).unwrap();
        let b = detect(&scan, &params);
        assert_eq!(b.len(), 1, "car at {x}");
        assert_eq!(b[0].distance_band, band, "car at {x}");
    }
}

/// Axis-aligned BEV rectangle overlap, computed from intervals.
fn aligned_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let overlap = |c1: f64, h1: f64, c2: f64, h2: f64| ((c1 + h1).min(c2 + h2) - (c1 - h1).max(c2 - h2)).max(0.0);
    let ix = overlap(a.center[0], a.size[0] / 2.0, b.center[0], b.size[0] / 2.0);
    let iy = overlap(a.center[1], a.size[1] / 2.0, b.center[1], b.size[1] / 2.0);
    let inter = ix * iy;
    inter / (a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter)
}

#[test]
fn one_detection_matches_the_overlapping_truth() {
    // 4 x 2 boxes shifted 1 m along x: inter 6, union 10 -> 0.6
    let t1 = DetectionBox::truth([10.0, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0);
    let t2 = DetectionBox::truth([10.0, 8.0, 0.0], [4.0, 2.0, 1.5], 0.0);
    let d = DetectionBox::truth([11.0, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0);
    assert!((aligned_iou(&d, &t1) - 0.6).abs() < 1e-12);
    assert!((bev_iou(&d, &t1) - 0.6).abs() < 1e-9);
    let m = match_detections(&[d], &[t1, t2], 0.5).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].truth, 0);
}

/// Area of overlap by dense sampling, for rotated boxes.
fn sampled_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let inside = |bx: &DetectionBox, x: f64, y: f64| {
        let (s, c) = bx.yaw.sin_cos();
        let (dx, dy) = (x - bx.center[0], y - bx.center[1]);
        (c * dx + s * dy).abs() <= bx.size[0] / 2.0 && (-s * dx + c * dy).abs() <= bx.size[1] / 2.0
    };
    let step = 0.02;
    let (mut inter, mut union) = (0usize, 0usize);
    let mut x = -6.0;
    while x < 6.0 {
        let mut y = -6.0;
        while y < 6.0 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
            y += step;
        }
        x += step;
    }
    inter as f64 / union.max(1) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iou_agrees_with_sampling(
        ax in -1.0..1.0f64, ay in -1.0..1.0f64, ayaw in -3.1..3.1f64,
        bx in -1.0..1.0f64, by in -1.0..1.0f64, byaw in -3.1..3.1f64,
        l in 1.0..4.5f64, w in 0.8..2.0f64,
    ) {
        let a = DetectionBox::truth([ax, ay, 0.0], [l, w, 1.5], ayaw);
        let b = DetectionBox::truth([bx, by, 0.0], [4.5, 1.8, 1.5], byaw);
        let exact = bev_iou(&a, &b);
        prop_assert!((exact - sampled_iou(&a, &b)).abs() < 0.03, "{exact}");
        prop_assert!((exact - bev_iou(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn detection_ignores_point_order(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = flat_scene(&[(9.0, -3.0, 0.7), (16.0, 5.0, -0.3)]);
        let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
        let scan = simulate_scan(&scene, &SensorModel::velodyne(BeamCount::Beams16, pose), seed).unwrap();
        let mut shuffled = scan.clone();
        shuffled.points.shuffle(&mut rng);
        let det = GeometricDetector::new(DetectorParams::default()).unwrap();
        prop_assert_eq!(det.detect(&scan), det.detect(&shuffled));
    }

    #[test]
    fn scores_stay_in_unit_interval(seed in 0u64..200, x in 6.0..30.0f64, y in -8.0..8.0f64, yaw in -3.1..3.1f64) {
        let scene = flat_scene(&[(x, y, yaw)]);
        let pose = scene.vehicle_pose(0.0, 0.0, 0.0);
        let scan = simulate_scan(&scene, &SensorModel::velodyne(BeamCount::Beams16, pose), seed).unwrap();
        for b in detect(&scan, &DetectorParams::default()) {
            prop_assert!(b.score > 0.0 && b.score <= 1.0);
        }
    }
}
