use std::f64::consts::PI;

use coopfuse::geometry::{
    enu_to_geodetic, geodetic_to_enu, relative_pose, rotation_matrix, transform_point, EulerAngles, GeodeticCoord,
    RotationMatrix, Translation, Vec3, VehiclePose, WGS84_A, WGS84_F,
};
use proptest::prelude::*;

type M3 = [[f64; 3]; 3];

// Independent of the library: textbook elementary rotations and a naive
// triple loop.
fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn oracle_r(yaw: f64, pitch: f64, roll: f64) -> M3 {
    let rz = [
        [yaw.cos(), -yaw.sin(), 0.0],
        [yaw.sin(), yaw.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ];
    let ry = [
        [pitch.cos(), 0.0, pitch.sin()],
        [0.0, 1.0, 0.0],
        [-pitch.sin(), 0.0, pitch.cos()],
    ];
    let rx = [
        [1.0, 0.0, 0.0],
        [0.0, roll.cos(), -roll.sin()],
        [0.0, roll.sin(), roll.cos()],
    ];
    mul(&mul(&rz, &ry), &rx)
}

fn max_diff(a: &M3, b: &M3) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            d = d.max((a[i][j] - b[i][j]).abs());
        }
    }
    d
}

#[test]
fn rotation_matches_triple_product() {
    let r = rotation_matrix(&EulerAngles::new(0.3, -0.2, 0.7).unwrap());
    assert!(max_diff(&r.0, &oracle_r(0.3, -0.2, 0.7)) < 1e-12);
}

#[test]
fn reverse_order_inverse_composes_to_identity() {
    let (y, p, r) = (1.1, -0.4, 2.3);
    let fwd = rotation_matrix(&EulerAngles::new(y, p, r).unwrap());
    // R^-1 = Rx(-r) Ry(-p) Rz(-y)
    let inv = mul(
        &mul(&oracle_r(0.0, 0.0, -r), &oracle_r(0.0, -p, 0.0)),
        &oracle_r(-y, 0.0, 0.0),
    );
    let id = mul(&fwd.0, &inv);
    assert!(max_diff(&id, &RotationMatrix::identity().0) < 1e-9);
}

#[test]
fn north_step_at_equator_matches_meridian_arc() {
    let o = GeodeticCoord::new(0.0, 0.0, 0.0).unwrap();
    let p = GeodeticCoord::new(1e-5, 0.0, 0.0).unwrap();
    let enu = geodetic_to_enu(&o, &p);
    // meridian radius of curvature M = a(1-e^2)/(1-e^2 sin^2 phi)^1.5, phi = 0
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let arc = WGS84_A * (1.0 - e2) * 1e-5_f64.to_radians();
    assert!((enu.y() - arc).abs() < 1e-3, "north {} vs arc {arc}", enu.y());
    assert!(enu.x().abs() < 1e-9 && enu.z().abs() < 1e-6);
}

#[test]
fn east_step_at_mid_latitude_matches_parallel_arc() {
    let lat: f64 = 42.0;
    let o = GeodeticCoord::new(lat, 10.0, 0.0).unwrap();
    let p = GeodeticCoord::new(lat, 10.0 + 1e-4, 0.0).unwrap();
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let phi = lat.to_radians();
    let n = WGS84_A / (1.0 - e2 * phi.sin().powi(2)).sqrt();
    let arc = n * phi.cos() * 1e-4_f64.to_radians();
    let enu = geodetic_to_enu(&o, &p);
    assert!((enu.x() - arc).abs() < 1e-3, "east {} vs {arc}", enu.x());
}

fn pose_at(origin: &GeodeticCoord, e: f64, n: f64, yaw: f64) -> VehiclePose {
    let gps = enu_to_geodetic(origin, Vec3::new(e, n, 0.0)).unwrap();
    VehiclePose::new(gps, EulerAngles::yaw_only(yaw).unwrap())
}

// Hand-built world: a few landmarks in ENU, each expressed by hand in both
// vehicle frames; relative_pose must carry one onto the other.
#[test]
fn opposed_vehicles_two_frame_scene() {
    let origin = GeodeticCoord::new(48.1, 11.5, 500.0).unwrap();
    let rx = pose_at(&origin, 0.0, 0.0, 0.0);
    let tx = pose_at(&origin, 20.0, 0.0, PI);
    let t = relative_pose(&rx, &tx);
    assert!(
        t.rotation
            .max_abs_diff(&rotation_matrix(&EulerAngles::yaw_only(PI).unwrap()))
            < 1e-9
    );
    assert!((t.translation.0.x() - 20.0).abs() < 1e-3);
    let landmarks = [[5.0, 2.0, 1.0], [19.0, 0.0, 0.0], [25.0, -4.0, 0.5], [10.0, 10.0, 2.0]];
    for w in landmarks {
        let in_tx = Vec3::new(20.0 - w[0], -w[1], w[2]);
        let got = t.apply(in_tx);
        for k in 0..3 {
            assert!((got.0[k] - w[k]).abs() < 2e-3, "{w:?} -> {got:?}");
        }
    }
}

#[test]
fn quarter_turn_then_shift() {
    let r = rotation_matrix(&EulerAngles::yaw_only(PI / 2.0).unwrap());
    let p = transform_point(&r, &Translation::new(10.0, 0.0, 0.0).unwrap(), Vec3::new(1.0, 0.0, 0.0));
    assert!((p.x() - 10.0).abs() < 1e-12 && (p.y() - 1.0).abs() < 1e-12);
}

fn angles() -> impl Strategy<Value = (f64, f64, f64)> {
    (-PI..PI, -PI / 2.0..PI / 2.0, -PI..PI)
}

proptest! {
    #[test]
    fn rotation_is_orthonormal((y, p, r) in angles()) {
        let m = rotation_matrix(&EulerAngles::new(y, p, r).unwrap());
        prop_assert!(m.orthonormality_error() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(max_diff(&m.0, &oracle_r(y, p, r)) < 1e-12);
    }

    #[test]
    fn enu_round_trip(lat in -80.0..80.0f64, lon in -179.0..179.0f64, e in -500.0..500.0f64, n in -500.0..500.0f64, u in -50.0..50.0f64) {
        let o = GeodeticCoord::new(lat, lon, 100.0).unwrap();
        let g = enu_to_geodetic(&o, Vec3::new(e, n, u)).unwrap();
        let back = geodetic_to_enu(&o, &g);
        prop_assert!((back.x() - e).abs() < 1e-6 && (back.y() - n).abs() < 1e-6 && (back.z() - u).abs() < 1e-6);
    }

    #[test]
    fn relative_pose_inverts_when_roles_swap(
        (y1, p1, r1) in angles(), (y2, p2, r2) in angles(),
        e in -200.0..200.0f64, n in -200.0..200.0f64,
    ) {
        let origin = GeodeticCoord::new(37.0, -122.0, 10.0).unwrap();
        let a = VehiclePose::new(origin, EulerAngles::new(y1, p1, r1).unwrap());
        let b = VehiclePose::new(enu_to_geodetic(&origin, Vec3::new(e, n, 0.0)).unwrap(), EulerAngles::new(y2, p2, r2).unwrap());
        let ab = relative_pose(&a, &b);
        let ba = relative_pose(&b, &a);
        let id = ab.compose(&ba);
        prop_assert!(id.rotation.max_abs_diff(&RotationMatrix::identity()) < 1e-9);
        // origins differ between the two calls, so only tangent-plane accuracy holds
        prop_assert!(id.translation.0.norm() < 0.05);
    }
}
