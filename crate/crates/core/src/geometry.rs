//! Rigid-body math for aligning one vehicle's LiDAR frame with another's.
//!
//! Conventions used throughout the crate:
//!
//! * rotations act on column vectors, `p' = R p`;
//! * an attitude `(yaw, pitch, roll)` builds `R = Rz(yaw) * Ry(pitch) * Rx(roll)`;
//! * the local metric frame is East-North-Up, tangent at a reference GPS fix,
//!   with yaw measured counter-clockwise from East;
//! * angles are radians. Degrees only appear at file boundaries.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid angle: {name} = {value} is not finite")]
    InvalidAngle { name: &'static str, value: f64 },
    #[error("invalid geodetic coordinate: lat {lat}, lon {lon}, alt {alt}")]
    InvalidGeodetic { lat: f64, lon: f64, alt: f64 },
    #[error("non-finite translation component")]
    InvalidTranslation,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -pi for inputs like -3*pi
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Vehicle or sensor attitude. Stored normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    yaw: f64,
    pitch: f64,
    roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self, GeometryError> {
        for (name, value) in [("yaw", yaw), ("pitch", pitch), ("roll", roll)] {
            if !value.is_finite() {
                return Err(GeometryError::InvalidAngle { name, value });
            }
        }
        Ok(Self {
            yaw: normalize_angle(yaw),
            pitch: normalize_angle(pitch),
            roll: normalize_angle(roll),
        })
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Result<Self, GeometryError> {
        Self::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }

    pub fn yaw_only(yaw: f64) -> Result<Self, GeometryError> {
        Self::new(yaw, 0.0, 0.0)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn roll(&self) -> f64 {
        self.roll
    }
}

/// Plain 3-vector in meters (double precision).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3(a)
    }
}

/// 3x3 rotation, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation about +z by `a`.
    pub fn rz(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        RotationMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation about +y by `b`.
    pub fn ry(b: f64) -> Self {
        let (s, c) = b.sin_cos();
        RotationMatrix([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    /// Rotation about +x by `g`.
    pub fn rx(g: f64) -> Self {
        let (s, c) = g.sin_cos();
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        let [x, y, z] = v.0;
        Vec3([
            m[0][0] * x + m[0][1] * y + m[0][2] * z,
            m[1][0] * x + m[1][1] * y + m[1][2] * z,
            m[2][0] * x + m[2][1] * y + m[2][2] * z,
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `max |(R^T R - I)_ij|`
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose() * *self;
        let id = Self::identity();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((p.0[i][j] - id.0[i][j]).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &RotationMatrix) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }

    /// Heading of the rotated +x axis in the xy-plane.
    pub fn heading(&self) -> f64 {
        self.0[1][0].atan2(self.0[0][0])
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, o: RotationMatrix) -> RotationMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        RotationMatrix(out)
    }
}

/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_matrix(angles: &EulerAngles) -> RotationMatrix {
    let (sa, ca) = angles.yaw.sin_cos();
    let (sb, cb) = angles.pitch.sin_cos();
    let (sg, cg) = angles.roll.sin_cos();
    // expanded product; agrees with rz*ry*rx to rounding
    RotationMatrix([
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ])
}

/// Translation offset in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Translation(pub Vec3);

impl Translation {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let v = Vec3::new(x, y, z);
        if !v.is_finite() {
            return Err(GeometryError::InvalidTranslation);
        }
        Ok(Translation(v))
    }

    pub fn zero() -> Self {
        Translation(Vec3::ZERO)
    }

    pub fn vector(&self) -> Vec3 {
        self.0
    }
}

/// `R p + d`
pub fn transform_point(r: &RotationMatrix, d: &Translation, p: Vec3) -> Vec3 {
    r.apply(p) + d.0
}

/// A rotation followed by a translation, `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Translation,
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Translation) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        transform_point(&self.rotation, &self.translation, p)
    }

    /// `(R^T, -R^T t)`
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: Translation(-rt.apply(self.translation.0)),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: Translation(self.apply(other.translation.0)),
        }
    }
}

/// WGS-84 fix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeodeticCoord {
    lat: f64,
    lon: f64,
    alt: f64,
}

impl GeodeticCoord {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, GeometryError> {
        let ok = lat.is_finite() && lon.is_finite() && alt.is_finite() && lat.abs() <= 90.0 && lon.abs() <= 180.0;
        if !ok {
            return Err(GeometryError::InvalidGeodetic { lat, lon, alt });
        }
        Ok(Self { lat, lon, alt })
    }

    pub fn latitude(&self) -> f64 {
        self.lat
    }

    pub fn longitude(&self) -> f64 {
        self.lon
    }

    pub fn altitude(&self) -> f64 {
        self.alt
    }
}

pub const WGS84_A: f64 = 6_378_137.0;
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

fn wgs84_e2() -> f64 {
    WGS84_F * (2.0 - WGS84_F)
}

/// Meters per radian of latitude and of longitude at `origin`.
fn local_scales(origin: &GeodeticCoord) -> (f64, f64) {
    let e2 = wgs84_e2();
    let phi = origin.lat.to_radians();
    let s = phi.sin();
    let w = (1.0 - e2 * s * s).sqrt();
    let meridian = WGS84_A * (1.0 - e2) / (w * w * w);
    let prime_vertical = WGS84_A / w;
    (meridian + origin.alt, (prime_vertical + origin.alt) * phi.cos())
}

fn wrap_lon_deg(d: f64) -> f64 {
    let mut d = d;
    while d > 180.0 {
        d -= 360.0;
    }
    while d < -180.0 {
        d += 360.0;
    }
    d
}

/// East-North-Up offset of `point` on the tangent plane at `origin`.
///
/// Uses the local meridian and prime-vertical radii of the origin, so the
/// map is affine in (lat, lon, alt) and [`enu_to_geodetic`] inverts it
/// exactly. Accurate to well under a centimeter for separations up to ~1 km.
pub fn geodetic_to_enu(origin: &GeodeticCoord, point: &GeodeticCoord) -> Vec3 {
    let (m_lat, m_lon) = local_scales(origin);
    let dlat = (point.lat - origin.lat).to_radians();
    let dlon = wrap_lon_deg(point.lon - origin.lon).to_radians();
    Vec3([dlon * m_lon, dlat * m_lat, point.alt - origin.alt])
}

/// Inverse of [`geodetic_to_enu`] for the same origin.
pub fn enu_to_geodetic(origin: &GeodeticCoord, enu: Vec3) -> Result<GeodeticCoord, GeometryError> {
    let (m_lat, m_lon) = local_scales(origin);
    let lat = origin.lat + (enu.0[1] / m_lat).to_degrees();
    let lon = if m_lon.abs() > 0.0 {
        wrap_lon_deg(origin.lon + (enu.0[0] / m_lon).to_degrees())
    } else {
        origin.lon
    };
    GeodeticCoord::new(lat, lon, origin.alt + enu.0[2])
}

/// GPS fix, IMU attitude and LiDAR mounting of one vehicle.
///
/// The body frame is x-forward, y-left, z-up; `imu` rotates body vectors into
/// the local ENU frame. The LiDAR extrinsic maps sensor coordinates into the
/// body frame as `p_body = R(install_rotation) p_sensor + install_translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehiclePose {
    pub gps: GeodeticCoord,
    pub imu: EulerAngles,
    pub install_translation: Vec3,
    pub install_rotation: EulerAngles,
}

impl VehiclePose {
    pub fn new(gps: GeodeticCoord, imu: EulerAngles) -> Self {
        Self {
            gps,
            imu,
            install_translation: Vec3::ZERO,
            install_rotation: EulerAngles::zero(),
        }
    }

    pub fn with_install(mut self, translation: Vec3, rotation: EulerAngles) -> Self {
        self.install_translation = translation;
        self.install_rotation = rotation;
        self
    }

    /// Sensor frame -> body frame.
    pub fn body_from_sensor(&self) -> RigidTransform {
        RigidTransform::new(
            rotation_matrix(&self.install_rotation),
            Translation(self.install_translation),
        )
    }

    /// Body frame -> ENU frame anchored at `origin`.
    pub fn local_from_body(&self, origin: &GeodeticCoord) -> RigidTransform {
        RigidTransform::new(
            rotation_matrix(&self.imu),
            Translation(geodetic_to_enu(origin, &self.gps)),
        )
    }

    /// Sensor frame -> ENU frame anchored at `origin`.
    pub fn local_from_sensor(&self, origin: &GeodeticCoord) -> RigidTransform {
        self.local_from_body(origin).compose(&self.body_from_sensor())
    }
}

/// Transform taking transmitter LiDAR coordinates into receiver LiDAR
/// coordinates.
///
/// The rotation is `R_rx^-1 * R_tx` of the two sensor attitudes (IMU composed
/// with the mounting rotation); the translation is the transmitter's LiDAR
/// center expressed in the receiver's sensor frame, with the GPS offset taken
/// on the ENU plane at the receiver's fix.
pub fn relative_pose(receiver: &VehiclePose, transmitter: &VehiclePose) -> RigidTransform {
    let origin = receiver.gps;
    let rx = receiver.local_from_sensor(&origin);
    let tx = transmitter.local_from_sensor(&origin);
    rx.inverse().compose(&tx)
}

/// Pose as stored in files: degrees for every angle, install fields
/// optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    /// Sensor position in the body frame, meters.
    #[serde(default)]
    pub install_translation: [f64; 3],
    /// Sensor attitude in the body frame as (yaw, pitch, roll), degrees.
    #[serde(default)]
    pub install_rotation_deg: [f64; 3],
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<VehiclePose, GeometryError> {
        let t = Vec3(self.install_translation);
        if !t.is_finite() {
            return Err(GeometryError::InvalidTranslation);
        }
        let [iy, ip, ir] = self.install_rotation_deg;
        Ok(VehiclePose::new(
            GeodeticCoord::new(self.latitude, self.longitude, self.altitude)?,
            EulerAngles::from_degrees(self.yaw_deg, self.pitch_deg, self.roll_deg)?,
        )
        .with_install(t, EulerAngles::from_degrees(iy, ip, ir)?))
    }

    pub fn from_pose(pose: &VehiclePose) -> Self {
        let ir = pose.install_rotation;
        Self {
            latitude: pose.gps.latitude(),
            longitude: pose.gps.longitude(),
            altitude: pose.gps.altitude(),
            yaw_deg: pose.imu.yaw().to_degrees(),
            pitch_deg: pose.imu.pitch().to_degrees(),
            roll_deg: pose.imu.roll().to_degrees(),
            install_translation: pose.install_translation.0,
            install_rotation_deg: [ir.yaw().to_degrees(), ir.pitch().to_degrees(), ir.roll().to_degrees()],
        }
    }
}
