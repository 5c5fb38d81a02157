use coopfuse::codec::{
    decode_points, encode_points, package_size, parse_package, serialize_package, ExchangePackage, HEADER_LEN,
};
use coopfuse::geometry::{EulerAngles, GeodeticCoord, Vec3, VehiclePose};
use coopfuse::pointcloud::{BeamCount, Point, PointCloud};
use coopfuse::roi::RoiSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(0.0..=1.0),
            )
        })
        .collect();
    PointCloud::new(pts, BeamCount::Beams16, "r")
}

fn random_pose(rng: &mut ChaCha8Rng) -> VehiclePose {
    VehiclePose::new(
        GeodeticCoord::new(
            rng.random_range(-89.0..89.0),
            rng.random_range(-179.0..179.0),
            rng.random_range(-50.0..900.0),
        )
        .unwrap(),
        EulerAngles::new(
            rng.random_range(-3.1..3.1),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        )
        .unwrap(),
    )
    .with_install(
        Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..3.0),
        ),
        EulerAngles::new(rng.random_range(-0.1..0.1), 0.0, 0.0).unwrap(),
    )
}

fn random_roi(rng: &mut ChaCha8Rng) -> RoiSpec {
    match rng.random_range(0..4) {
        0 => RoiSpec::FullFrame,
        1 => RoiSpec::FovSector {
            center_azimuth: rng.random_range(-3.0..3.0),
            width: rng.random_range(0.1..6.2),
        },
        2 => RoiSpec::ForwardCone {
            half_angle: rng.random_range(0.1..1.5),
            max_range: rng.random_range(1.0..100.0),
        },
        _ => RoiSpec::BoxRegion {
            min: [-10.0, -5.0, -2.0],
            max: [rng.random_range(0.0..30.0), 5.0, 3.0],
        },
    }
}

/// Half a centimeter, plus the rounding of the decoded value back to `f32`.
fn quantization_bound(v: f64) -> f64 {
    0.005 + 2.0 * v.abs() * f32::EPSILON as f64
}

#[test]
fn ten_thousand_packages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..10_000 {
        let n = rng.random_range(0..40);
        let cloud = random_cloud(&mut rng, n);
        let pkg = ExchangePackage::new(i, rng.random(), &random_pose(&mut rng), &random_roi(&mut rng), &cloud).unwrap();
        let wire = serialize_package(&pkg);
        assert_eq!(wire.len(), HEADER_LEN + 7 * n);
        let back = parse_package(&wire).unwrap();
        assert_eq!(back, pkg, "package {i}");
        assert_eq!(serialize_package(&back), wire);
        let pts = back.points().unwrap();
        for (a, b) in cloud.points.iter().zip(&pts.points) {
            for (u, v) in a.xyz_f64().iter().zip(b.xyz_f64()) {
                assert!((u - v).abs() <= quantization_bound(*u), "{u} -> {v}");
            }
            assert!((a.reflectance - b.reflectance).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn point_round_trip_within_half_centimeter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cloud = random_cloud(&mut rng, 10_000);
    let back = decode_points(&encode_points(&cloud).unwrap(), BeamCount::Beams16).unwrap();
    let worst = cloud
        .points
        .iter()
        .zip(&back.points)
        .flat_map(|(a, b)| {
            a.xyz_f64()
                .into_iter()
                .zip(b.xyz_f64())
                .map(|(u, v)| (u - v).abs() - quantization_bound(u))
        })
        .fold(f64::MIN, f64::max);
    assert!(worst <= 0.0, "worst excess {worst}");
    let p = decode_points(
        &encode_points(&PointCloud::new(
            vec![Point::new(1.234, 5.678, -9.012, 0.4)],
            BeamCount::Beams16,
            "",
        ))
        .unwrap(),
        BeamCount::Beams16,
    )
    .unwrap()
    .points[0];
    assert!((p.x - 1.234).abs() <= 0.005 && (p.y - 5.678).abs() <= 0.005 && (p.z + 9.012).abs() <= 0.005);
    assert!((p.reflectance - 0.4).abs() <= 1.0 / 255.0);
}

#[test]
fn frame_size_targets() {
    assert_eq!(package_size(30_000), 210_128);
    assert!(package_size(32_000) <= 225_000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 30_000);
    let pkg = ExchangePackage::new(1, 0, &random_pose(&mut rng), &RoiSpec::FullFrame, &cloud).unwrap();
    assert_eq!(serialize_package(&pkg).len(), 210_128);
}

proptest! {
    #[test]
    fn size_is_header_plus_seven_per_point(n in 0usize..2000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let pkg = ExchangePackage::new(0, 0, &random_pose(&mut rng), &RoiSpec::FullFrame, &cloud).unwrap();
        prop_assert_eq!(serialize_package(&pkg).len(), 128 + 7 * n);
    }

    #[test]
    fn truncated_wire_never_parses(seed in any::<u64>(), cut in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, 8);
        let pkg = ExchangePackage::new(0, 0, &random_pose(&mut rng), &RoiSpec::FullFrame, &cloud).unwrap();
        let wire = serialize_package(&pkg);
        prop_assert!(parse_package(&wire[..wire.len() - cut]).is_err());
    }
}
