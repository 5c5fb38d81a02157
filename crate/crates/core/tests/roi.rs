use coopfuse::pointcloud::{voxel_key, BeamCount};
use coopfuse::roi::{background_subtract, build_static_map, extract_roi, RoiSpec};
use coopfuse::scenesim::{
    default_origin, simulate_scan_labeled, HitTarget, LabeledScan, ObjectLabel, Scene, SceneObject, SensorModel,
};
use proptest::prelude::*;

const WALL: u32 = 1;
const MOVER: u32 = 2;

/// Five scans from a parked sensor; the wall is always there, the mover only
/// in the first. The mover stands behind the sensor so it never shadows the
/// wall.
fn wall_and_mover() -> Vec<LabeledScan> {
    let mut static_scene = Scene::new(default_origin(), None, 60.0);
    static_scene.objects.push(SceneObject::block(
        WALL,
        ObjectLabel::Wall,
        15.0,
        0.0,
        [0.4, 20.0, 4.0],
        0.0,
        -1.73,
    ));
    let mut with_mover = static_scene.clone();
    with_mover.objects.push(SceneObject::car(MOVER, -9.0, 2.0, 0.0, -1.73));
    let sensor = SensorModel::velodyne(BeamCount::Beams16, static_scene.vehicle_pose(0.0, 0.0, 0.0));
    (0..5)
        .map(|i| {
            let scene = if i == 0 { &with_mover } else { &static_scene };
            simulate_scan_labeled(scene, &sensor, i).unwrap()
        })
        .collect()
}

#[test]
fn static_map_counts_follow_the_scene() {
    let scans = wall_and_mover();
    let leaf = 0.2;
    let map = build_static_map(&scans.iter().map(|s| s.cloud.clone()).collect::<Vec<_>>(), leaf).unwrap();
    let first = &scans[0];
    let mut seen_wall = 0;
    let mut seen_mover = 0;
    for (p, hit) in first.cloud.points.iter().zip(&first.hits) {
        match hit {
            HitTarget::Object(WALL) => {
                assert_eq!(map.count(&voxel_key(p, leaf)), 5);
                seen_wall += 1;
            }
            HitTarget::Object(MOVER) => {
                assert_eq!(map.count(&voxel_key(p, leaf)), 1);
                seen_mover += 1;
            }
            _ => {}
        }
    }
    assert!(seen_wall > 100 && seen_mover > 100, "{seen_wall} {seen_mover}");
}

#[test]
fn background_subtraction_leaves_only_the_mover() {
    let scans = wall_and_mover();
    let map = build_static_map(&scans.iter().map(|s| s.cloud.clone()).collect::<Vec<_>>(), 0.2).unwrap();
    let first = &scans[0];
    let kept = background_subtract(&first.cloud, &map, 0.8).unwrap();
    let mover: Vec<_> = first
        .cloud
        .points
        .iter()
        .zip(&first.hits)
        .filter(|(_, h)| **h == HitTarget::Object(MOVER))
        .map(|(p, _)| *p)
        .collect();
    assert_eq!(kept.points, mover);
}

proptest! {
    #[test]
    fn sector_keeps_exactly_points_within_half_width(
        pts in prop::collection::vec((-50.0..50.0f32, -50.0..50.0f32), 1..200),
        center in -3.1..3.1f64, width in 0.05..6.2f64,
    ) {
        let cloud = coopfuse::PointCloud::new(
            pts.iter().map(|&(x, y)| coopfuse::Point::new(x, y, 0.0, 0.5)).collect(),
            BeamCount::Beams16,
            "",
        );
        let spec = RoiSpec::FovSector { center_azimuth: center, width };
        let kept = extract_roi(&cloud, &spec).unwrap();
        let expect: Vec<_> = cloud.points.iter().filter(|p| {
            let az = (p.y as f64).atan2(p.x as f64);
            let mut d = (az - center).rem_euclid(std::f64::consts::TAU);
            if d > std::f64::consts::PI { d -= std::f64::consts::TAU; }
            // stay clear of the boundary where the two computations may round apart
            d.abs() <= width / 2.0 - 1e-9
        }).copied().collect();
        prop_assert!(kept.len() >= expect.len());
        for p in &expect { prop_assert!(kept.points.contains(p)); }
        for p in &kept.points {
            let az = (p.y as f64).atan2(p.x as f64);
            let mut d = (az - center).rem_euclid(std::f64::consts::TAU);
            if d > std::f64::consts::PI { d -= std::f64::consts::TAU; }
            prop_assert!(d.abs() <= width / 2.0 + 1e-9);
        }
    }

    #[test]
    fn roi_output_is_a_subsequence(pts in prop::collection::vec((-50.0..50.0f32, -50.0..50.0f32, -3.0..3.0f32), 0..200), half in 0.1..1.5f64, range in 1.0..80.0f64) {
        let cloud = coopfuse::PointCloud::new(
            pts.iter().map(|&(x, y, z)| coopfuse::Point::new(x, y, z, 0.5)).collect(),
            BeamCount::Beams16,
            "",
        );
        let kept = extract_roi(&cloud, &RoiSpec::ForwardCone { half_angle: half, max_range: range }).unwrap();
        let mut it = cloud.points.iter();
        for p in &kept.points {
            prop_assert!(it.any(|q| q == p));
        }
    }
}
