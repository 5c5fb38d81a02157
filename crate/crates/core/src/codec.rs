//! The V2V exchange package and its wire format.
//!
//! A package is a fixed 128-byte little-endian header followed by
//! `point_count` 7-byte point records:
//!
//! | offset | size | field                                     |
//! |-------:|-----:|-------------------------------------------|
//! |      0 |    4 | magic `"COOP"`                            |
//! |      4 |    2 | version (`u16`, currently 1)              |
//! |      6 |    2 | flags (`u16`, see [`PackageFlags`])       |
//! |      8 |    8 | sender id (`u64`)                         |
//! |     16 |    8 | timestamp, µs since epoch (`i64`)         |
//! |     24 |   24 | latitude, longitude (deg), altitude (m), `f64` |
//! |     48 |   24 | IMU yaw, pitch, roll (rad), `f64`         |
//! |     72 |   12 | LiDAR install translation (m), 3×`f32`    |
//! |     84 |   12 | LiDAR install yaw, pitch, roll (rad), 3×`f32` |
//! |     96 |    1 | ROI tag                                   |
//! |     97 |   19 | ROI parameters, zero padded               |
//! |    116 |    4 | point count (`u32`)                       |
//! |    120 |    8 | reserved, zero                            |
//!
//! ROI tags: 0 full frame (no parameters); 1 FOV sector (center, width as
//! `f64` radians); 2 forward cone (half angle rad, max range m, `f64`);
//! 3 box region (min xyz, max xyz as `i16` centimeters).
//!
//! Point record: x, y, z as `i16` centimeters, reflectance as `u8`
//! (`round(r * 255)`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EulerAngles, GeodeticCoord, GeometryError, Vec3};
use crate::pointcloud::{BeamCount, Point, PointCloud};
use crate::roi::RoiSpec;

pub use crate::geometry::VehiclePose;

pub const MAGIC: [u8; 4] = *b"COOP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 128;
pub const POINT_RECORD_LEN: usize = 7;
/// Largest coordinate magnitude representable in `i16` centimeters.
pub const MAX_COORD_M: f64 = 327.67;

const ROI_OFFSET: usize = 96;
const ROI_PARAM_LEN: usize = 19;
const COUNT_OFFSET: usize = 116;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("point {index}: coordinate {value} outside +-327.67 m")]
    OutOfRange { index: usize, value: f32 },
    #[error("malformed payload: {len} bytes is not a multiple of 7")]
    MalformedPayload { len: usize },
    #[error("truncated package: {len} bytes, header needs 128")]
    Truncated { len: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("header declares {declared} points but payload holds {payload_bytes} bytes")]
    PointCountMismatch { declared: u32, payload_bytes: usize },
    #[error("unknown ROI tag {0}")]
    UnknownRoiTag(u8),
    #[error("unknown beam code in flags {0:#06x}")]
    UnknownBeamCode(u16),
    #[error("invalid ROI in header: {0}")]
    InvalidRoi(String),
    #[error("invalid pose in header: {0}")]
    InvalidPose(#[from] GeometryError),
    #[error("too many points for one package: {0}")]
    TooManyPoints(usize),
}

/// Header flag bits.
///
/// Bits 0-1 carry the beam layout (0 = 16, 1 = 32, 2 = 64); bit 2 marks a
/// payload with static background removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PackageFlags {
    pub beam_count: BeamCount,
    pub background_subtracted: bool,
}

impl PackageFlags {
    pub fn to_bits(self) -> u16 {
        let beams = match self.beam_count {
            BeamCount::Beams16 => 0,
            BeamCount::Beams32 => 1,
            BeamCount::Beams64 => 2,
        };
        beams | if self.background_subtracted { 1 << 2 } else { 0 }
    }

    pub fn from_bits(bits: u16) -> Result<Self, CodecError> {
        let beam_count = match bits & 0b11 {
            0 => BeamCount::Beams16,
            1 => BeamCount::Beams32,
            2 => BeamCount::Beams64,
            _ => return Err(CodecError::UnknownBeamCode(bits)),
        };
        if bits & !0b111 != 0 {
            return Err(CodecError::UnknownBeamCode(bits));
        }
        Ok(Self {
            beam_count,
            background_subtracted: bits & (1 << 2) != 0,
        })
    }
}

fn quantize_cm(v: f32) -> Option<i16> {
    if !v.is_finite() {
        return None;
    }
    let cm = (v as f64 * 100.0).round();
    if cm.abs() > i16::MAX as f64 {
        return None;
    }
    Some(cm as i16)
}

/// Quantizes points to 7-byte records.
pub fn encode_points(cloud: &PointCloud) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(cloud.points.len() * POINT_RECORD_LEN);
    for (index, p) in cloud.points.iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            let cm = quantize_cm(v).ok_or(CodecError::OutOfRange { index, value: v })?;
            out.extend_from_slice(&cm.to_le_bytes());
        }
        let r = (p.reflectance.clamp(0.0, 1.0) as f64 * 255.0).round() as u8;
        out.push(r);
    }
    Ok(out)
}

pub fn decode_points(bytes: &[u8], beam_count: BeamCount) -> Result<PointCloud, CodecError> {
    if !bytes.len().is_multiple_of(POINT_RECORD_LEN) {
        return Err(CodecError::MalformedPayload { len: bytes.len() });
    }
    let points = bytes
        .chunks_exact(POINT_RECORD_LEN)
        .map(|r| {
            let cm = |i: usize| i16::from_le_bytes([r[i], r[i + 1]]) as f32 / 100.0;
            Point::new(cm(0), cm(2), cm(4), r[6] as f32 / 255.0)
        })
        .collect();
    Ok(PointCloud::new(points, beam_count, ""))
}

/// Size on the wire of a package carrying `points` points.
pub fn package_size(points: usize) -> usize {
    HEADER_LEN + POINT_RECORD_LEN * points
}

fn snap_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Nearest `f32` angle that stays inside `(-pi, pi]`.
fn snap_angle(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut f = a as f32;
    if f as f64 > pi {
        f = f32::from_bits(f.to_bits() - 1);
    }
    if f as f64 <= -pi {
        // negative floats: decreasing the bit pattern moves toward zero
        f = f32::from_bits(f.to_bits() - 1);
    }
    f as f64
}

fn snap_cm(v: f64) -> f64 {
    ((v * 100.0).round() as i16) as f64 / 100.0
}

/// Rounds pose fields to their wire precision.
pub fn wire_pose(pose: &VehiclePose) -> VehiclePose {
    let r = pose.install_rotation;
    let t = pose.install_translation.0;
    VehiclePose {
        gps: pose.gps,
        imu: pose.imu,
        install_translation: Vec3([snap_f32(t[0]), snap_f32(t[1]), snap_f32(t[2])]),
        install_rotation: EulerAngles::new(snap_angle(r.yaw()), snap_angle(r.pitch()), snap_angle(r.roll()))
            .unwrap_or(r),
    }
}

/// Rounds ROI parameters to their wire precision.
pub fn wire_roi(roi: &RoiSpec) -> RoiSpec {
    match *roi {
        RoiSpec::BoxRegion { min, max } => RoiSpec::BoxRegion {
            min: min.map(snap_cm),
            max: max.map(snap_cm),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangePackage {
    pub sender_id: u64,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: i64,
    pub flags: PackageFlags,
    pub pose: VehiclePose,
    pub roi: RoiSpec,
    /// Encoded point records, `7 * point_count` bytes.
    pub payload: Vec<u8>,
}

impl ExchangePackage {
    /// Encodes `cloud` (already ROI-filtered by the caller) into a package.
    /// Pose and ROI are rounded to wire precision so the package survives a
    /// serialize/parse round trip unchanged.
    pub fn new(
        sender_id: u64,
        timestamp_us: i64,
        pose: &VehiclePose,
        roi: &RoiSpec,
        cloud: &PointCloud,
    ) -> Result<Self, CodecError> {
        if cloud.points.len() > u32::MAX as usize {
            return Err(CodecError::TooManyPoints(cloud.points.len()));
        }
        Ok(Self {
            sender_id,
            timestamp_us,
            flags: PackageFlags {
                beam_count: cloud.beam_count,
                background_subtracted: false,
            },
            pose: wire_pose(pose),
            roi: wire_roi(roi),
            payload: encode_points(cloud)?,
        })
    }

    pub fn point_count(&self) -> usize {
        self.payload.len() / POINT_RECORD_LEN
    }

    pub fn wire_size(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn points(&self) -> Result<PointCloud, CodecError> {
        let mut c = decode_points(&self.payload, self.flags.beam_count)?;
        c.frame_id = format!("{}@{}", self.sender_id, self.timestamp_us);
        Ok(c)
    }
}

fn put_f64(buf: &mut [u8], at: usize, v: f64) {
    buf[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_f64(buf: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn get_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn encode_roi(roi: &RoiSpec, out: &mut [u8]) {
    let (tag, rest) = out.split_at_mut(1);
    let params = &mut rest[..ROI_PARAM_LEN];
    match *roi {
        RoiSpec::FullFrame => tag[0] = 0,
        RoiSpec::FovSector { center_azimuth, width } => {
            tag[0] = 1;
            put_f64(params, 0, center_azimuth);
            put_f64(params, 8, width);
        }
        RoiSpec::ForwardCone { half_angle, max_range } => {
            tag[0] = 2;
            put_f64(params, 0, half_angle);
            put_f64(params, 8, max_range);
        }
        RoiSpec::BoxRegion { min, max } => {
            tag[0] = 3;
            for (i, v) in min.iter().chain(max.iter()).enumerate() {
                let cm = (v * 100.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                params[2 * i..2 * i + 2].copy_from_slice(&cm.to_le_bytes());
            }
        }
    }
}

fn decode_roi(field: &[u8]) -> Result<RoiSpec, CodecError> {
    let params = &field[1..1 + ROI_PARAM_LEN];
    let roi = match field[0] {
        0 => RoiSpec::FullFrame,
        1 => RoiSpec::FovSector {
            center_azimuth: get_f64(params, 0),
            width: get_f64(params, 8),
        },
        2 => RoiSpec::ForwardCone {
            half_angle: get_f64(params, 0),
            max_range: get_f64(params, 8),
        },
        3 => {
            let cm = |i: usize| i16::from_le_bytes([params[2 * i], params[2 * i + 1]]) as f64 / 100.0;
            RoiSpec::BoxRegion {
                min: [cm(0), cm(1), cm(2)],
                max: [cm(3), cm(4), cm(5)],
            }
        }
        tag => return Err(CodecError::UnknownRoiTag(tag)),
    };
    roi.validate().map_err(|e| CodecError::InvalidRoi(e.to_string()))?;
    Ok(roi)
}

pub fn serialize_package(pkg: &ExchangePackage) -> Vec<u8> {
    let mut buf = vec![0u8; HEADER_LEN + pkg.payload.len()];
    buf[0..4].copy_from_slice(&MAGIC);
    buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
    buf[6..8].copy_from_slice(&pkg.flags.to_bits().to_le_bytes());
    buf[8..16].copy_from_slice(&pkg.sender_id.to_le_bytes());
    buf[16..24].copy_from_slice(&pkg.timestamp_us.to_le_bytes());
    let p = &pkg.pose;
    put_f64(&mut buf, 24, p.gps.latitude());
    put_f64(&mut buf, 32, p.gps.longitude());
    put_f64(&mut buf, 40, p.gps.altitude());
    put_f64(&mut buf, 48, p.imu.yaw());
    put_f64(&mut buf, 56, p.imu.pitch());
    put_f64(&mut buf, 64, p.imu.roll());
    for i in 0..3 {
        put_f32(&mut buf, 72 + 4 * i, p.install_translation.0[i] as f32);
    }
    let r = p.install_rotation;
    for (i, a) in [r.yaw(), r.pitch(), r.roll()].into_iter().enumerate() {
        put_f32(&mut buf, 84 + 4 * i, a as f32);
    }
    encode_roi(&pkg.roi, &mut buf[ROI_OFFSET..ROI_OFFSET + 1 + ROI_PARAM_LEN]);
    let count = (pkg.payload.len() / POINT_RECORD_LEN) as u32;
    buf[COUNT_OFFSET..COUNT_OFFSET + 4].copy_from_slice(&count.to_le_bytes());
    buf[HEADER_LEN..].copy_from_slice(&pkg.payload);
    buf
}

pub fn parse_package(bytes: &[u8]) -> Result<ExchangePackage, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated { len: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let flags = PackageFlags::from_bits(u16::from_le_bytes([bytes[6], bytes[7]]))?;
    let sender_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let timestamp_us = i64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let gps = GeodeticCoord::new(get_f64(bytes, 24), get_f64(bytes, 32), get_f64(bytes, 40))?;
    let imu = EulerAngles::new(get_f64(bytes, 48), get_f64(bytes, 56), get_f64(bytes, 64))?;
    let t: [f64; 3] = std::array::from_fn(|i| get_f32(bytes, 72 + 4 * i) as f64);
    if t.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidTranslation.into());
    }
    let r: [f64; 3] = std::array::from_fn(|i| get_f32(bytes, 84 + 4 * i) as f64);
    let install_rotation = EulerAngles::new(r[0], r[1], r[2])?;
    let roi = decode_roi(&bytes[ROI_OFFSET..ROI_OFFSET + 1 + ROI_PARAM_LEN])?;
    let declared = u32::from_le_bytes(bytes[COUNT_OFFSET..COUNT_OFFSET + 4].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != declared as usize * POINT_RECORD_LEN {
        return Err(CodecError::PointCountMismatch {
            declared,
            payload_bytes: payload.len(),
        });
    }
    Ok(ExchangePackage {
        sender_id,
        timestamp_us,
        flags,
        pose: VehiclePose {
            gps,
            imu,
            install_translation: Vec3(t),
            install_rotation,
        },
        roi,
        payload: payload.to_vec(),
    })
}
