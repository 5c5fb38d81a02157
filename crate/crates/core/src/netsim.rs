//! Two-vehicle exchange over a capacity-limited channel: per-second traffic
//! accounting and DSRC feasibility.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{serialize_package, CodecError, ExchangePackage};
use crate::geometry::VehiclePose;
use crate::pointcloud::{BeamCount, Point, PointCloud};
use crate::roi::{extract_roi, RoiError, RoiSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetsimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frame source for vehicle {vehicle} ran out at tick {tick}")]
    Truncated {
        vehicle: Vehicle,
        tick: usize,
        partial: Box<TrafficReport>,
    },
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
    /// Per-message drop probability.
    pub loss_rate: f64,
}

pub const DSRC_DEFAULT_BPS: f64 = 6.0e6;
pub const DSRC_MAX_BPS: f64 = 27.0e6;

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            bandwidth_bps: DSRC_DEFAULT_BPS,
            latency_s: 0.002,
            loss_rate: 0.0,
        }
    }
}

impl ChannelModel {
    pub fn new(bandwidth_bps: f64, latency_s: f64, loss_rate: f64) -> Result<Self, NetsimError> {
        let c = Self {
            bandwidth_bps,
            latency_s,
            loss_rate,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return Err(NetsimError::InvalidParameter(format!(
                "bandwidth {} must be positive",
                self.bandwidth_bps
            )));
        }
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(NetsimError::InvalidParameter(format!(
                "latency {} must be >= 0",
                self.latency_s
            )));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(NetsimError::InvalidParameter(format!(
                "loss rate {} outside [0, 1)",
                self.loss_rate
            )));
        }
        Ok(())
    }

    /// Time the message occupies the medium.
    pub fn airtime(&self, message_bytes: usize) -> f64 {
        8.0 * message_bytes as f64 / self.bandwidth_bps
    }
}

/// Latency plus serialization time.
pub fn transmission_time(message_bytes: usize, channel: &ChannelModel) -> f64 {
    channel.latency_s + channel.airtime(message_bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vehicle {
    A,
    B,
}

impl Vehicle {
    pub const BOTH: [Vehicle; 2] = [Vehicle::A, Vehicle::B];

    fn index(self) -> usize {
        match self {
            Vehicle::A => 0,
            Vehicle::B => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Vehicle::A => "A",
            Vehicle::B => "B",
        }
    }
}

impl std::fmt::Display for Vehicle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeScenario {
    /// Full frames both ways.
    OppositeLanes,
    /// 120 degree forward sector both ways.
    Junction,
    /// Forward cone from the leading car (A) to the follower only.
    Following,
}

/// Half angle of the following-scenario cone; keeps it inside the
/// junction sector.
pub const FOLLOWING_CONE_HALF_ANGLE: f64 = PI / 3.0;
pub const FOLLOWING_CONE_RANGE: f64 = 60.0;

impl ExchangeScenario {
    pub const ALL: [ExchangeScenario; 3] = [
        ExchangeScenario::OppositeLanes,
        ExchangeScenario::Junction,
        ExchangeScenario::Following,
    ];

    pub fn roi(&self) -> RoiSpec {
        match self {
            ExchangeScenario::OppositeLanes => RoiSpec::FullFrame,
            ExchangeScenario::Junction => RoiSpec::junction_sector(),
            ExchangeScenario::Following => RoiSpec::ForwardCone {
                half_angle: FOLLOWING_CONE_HALF_ANGLE,
                max_range: FOLLOWING_CONE_RANGE,
            },
        }
    }

    pub fn senders(&self) -> &'static [Vehicle] {
        match self {
            ExchangeScenario::Following => &[Vehicle::A],
            _ => &Vehicle::BOTH,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExchangeScenario::OppositeLanes => "opposite",
            ExchangeScenario::Junction => "junction",
            ExchangeScenario::Following => "following",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "opposite" | "opposite_lanes" => Some(ExchangeScenario::OppositeLanes),
            "junction" => Some(ExchangeScenario::Junction),
            "following" => Some(ExchangeScenario::Following),
            _ => None,
        }
    }
}

/// Supplies each vehicle's frame at each sample tick; `None` means the
/// source is exhausted.
pub trait FrameSource {
    fn frame(&mut self, vehicle: Vehicle, tick: usize) -> Option<PointCloud>;
}

/// The same frame at every tick.
#[derive(Debug, Clone)]
pub struct ConstantFrames {
    pub a: PointCloud,
    pub b: PointCloud,
}

impl FrameSource for ConstantFrames {
    fn frame(&mut self, vehicle: Vehicle, _tick: usize) -> Option<PointCloud> {
        Some(match vehicle {
            Vehicle::A => self.a.clone(),
            Vehicle::B => self.b.clone(),
        })
    }
}

/// Recorded frames per vehicle, consumed in order.
#[derive(Debug, Clone, Default)]
pub struct RecordedFrames {
    pub a: Vec<PointCloud>,
    pub b: Vec<PointCloud>,
}

impl FrameSource for RecordedFrames {
    fn frame(&mut self, vehicle: Vehicle, tick: usize) -> Option<PointCloud> {
        match vehicle {
            Vehicle::A => self.a.get(tick).cloned(),
            Vehicle::B => self.b.get(tick).cloned(),
        }
    }
}

/// `n` points with uniformly distributed azimuth, 3-60 m out, heights of a
/// typical street scene.
pub fn uniform_azimuth_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let az: f64 = rng.random_range(-PI..PI);
            let r: f64 = rng.random_range(3.0..60.0);
            let z: f64 = rng.random_range(-1.8..2.0);
            Point::new(
                (r * az.cos()) as f32,
                (r * az.sin()) as f32,
                z as f32,
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    PointCloud::new(points, BeamCount::Beams32, format!("uniform-{seed}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub tick: usize,
    pub time_s: f64,
    pub vehicle: Vehicle,
    pub points: usize,
    pub bytes: usize,
    /// Medium occupancy.
    pub airtime_s: f64,
    /// Latency plus airtime.
    pub transmission_s: f64,
    pub lost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondTraffic {
    pub second: usize,
    /// Indexed by vehicle (A, B); lost messages included.
    pub bytes: [u64; 2],
    pub airtime_s: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub scenario: ExchangeScenario,
    pub sample_rate_hz: f64,
    pub window_s: f64,
    pub channel: ChannelModel,
    pub per_second: Vec<SecondTraffic>,
    pub totals: [u64; 2],
    pub messages: Vec<MessageRecord>,
    pub feasible: bool,
}

impl TrafficReport {
    fn empty(scenario: ExchangeScenario, sample_rate_hz: f64, window_s: f64, channel: ChannelModel) -> Self {
        let seconds = window_s.ceil() as usize;
        Self {
            scenario,
            sample_rate_hz,
            window_s,
            channel,
            per_second: (0..seconds)
                .map(|second| SecondTraffic {
                    second,
                    bytes: [0; 2],
                    airtime_s: [0.0; 2],
                })
                .collect(),
            totals: [0; 2],
            messages: Vec::new(),
            feasible: true,
        }
    }

    fn record(&mut self, m: MessageRecord) {
        let second = m.time_s.floor() as usize;
        if second >= self.per_second.len() {
            self.per_second.resize_with(second + 1, || SecondTraffic {
                second: 0,
                bytes: [0; 2],
                airtime_s: [0.0; 2],
            });
            for (i, s) in self.per_second.iter_mut().enumerate() {
                s.second = i;
            }
        }
        let v = m.vehicle.index();
        self.per_second[second].bytes[v] += m.bytes as u64;
        self.per_second[second].airtime_s[v] += m.airtime_s;
        self.totals[v] += m.bytes as u64;
        self.messages.push(m);
    }

    pub fn total_bytes(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn messages_from(&self, vehicle: Vehicle) -> usize {
        self.messages.iter().filter(|m| m.vehicle == vehicle).count()
    }

    /// `second,vehicle,bytes,airtime_ms`, one row per second per vehicle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("second,vehicle,bytes,airtime_ms\n");
        for s in &self.per_second {
            for v in Vehicle::BOTH {
                let i = v.index();
                let _ = writeln!(out, "{},{},{},{:.3}", s.second, v, s.bytes[i], s.airtime_s[i] * 1e3);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// Worst per-second airtime over channel capacity (both directions).
    pub worst_utilization: f64,
    pub worst_second: Option<usize>,
}

/// Feasible iff no second needs more than one second of airtime.
pub fn feasibility_check(report: &TrafficReport, channel: &ChannelModel) -> Feasibility {
    let mut worst = 0.0;
    let mut worst_second = None;
    for s in &report.per_second {
        let bits = 8.0 * s.bytes.iter().sum::<u64>() as f64;
        let u = bits / channel.bandwidth_bps;
        if u > worst {
            worst = u;
            worst_second = Some(s.second);
        }
    }
    Feasibility {
        feasible: worst <= 1.0,
        worst_utilization: worst,
        worst_second,
    }
}

/// Sender pose and id stamped into each package; only sizes matter here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeSetup {
    pub pose_a: VehiclePose,
    pub pose_b: VehiclePose,
}

impl Default for ExchangeSetup {
    fn default() -> Self {
        let origin = crate::geometry::GeodeticCoord::new(0.0, 0.0, 0.0).expect("valid");
        let pose = VehiclePose::new(origin, crate::geometry::EulerAngles::zero());
        Self {
            pose_a: pose,
            pose_b: pose,
        }
    }
}

/// Runs `window_s * sample_rate` ticks. At each tick every sending vehicle
/// cuts its frame to the scenario ROI, encodes a package and puts it on the
/// air. Lost messages still consume airtime.
pub fn simulate_exchange(
    scenario: ExchangeScenario,
    frames: &mut dyn FrameSource,
    sample_rate_hz: f64,
    channel: &ChannelModel,
    window_s: f64,
    seed: u64,
) -> Result<TrafficReport, NetsimError> {
    simulate_exchange_with(
        scenario,
        frames,
        sample_rate_hz,
        channel,
        window_s,
        seed,
        &ExchangeSetup::default(),
    )
}

pub fn simulate_exchange_with(
    scenario: ExchangeScenario,
    frames: &mut dyn FrameSource,
    sample_rate_hz: f64,
    channel: &ChannelModel,
    window_s: f64,
    seed: u64,
    setup: &ExchangeSetup,
) -> Result<TrafficReport, NetsimError> {
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(NetsimError::InvalidParameter(format!(
            "sample rate {sample_rate_hz} must be positive"
        )));
    }
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(NetsimError::InvalidParameter(format!(
            "window {window_s} must be positive"
        )));
    }
    channel.validate()?;
    let roi = scenario.roi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TrafficReport::empty(scenario, sample_rate_hz, window_s, *channel);
    let ticks = (window_s * sample_rate_hz + 1e-9).floor() as usize;
    for tick in 0..ticks {
        let time_s = tick as f64 / sample_rate_hz;
        for &vehicle in scenario.senders() {
            let Some(frame) = frames.frame(vehicle, tick) else {
                report.feasible = feasibility_check(&report, channel).feasible;
                return Err(NetsimError::Truncated {
                    vehicle,
                    tick,
                    partial: Box::new(report),
                });
            };
            let cut = extract_roi(&frame, &roi)?;
            let pose = match vehicle {
                Vehicle::A => &setup.pose_a,
                Vehicle::B => &setup.pose_b,
            };
            let pkg = ExchangePackage::new(vehicle.index() as u64, (time_s * 1e6).round() as i64, pose, &roi, &cut)?;
            let bytes = serialize_package(&pkg).len();
            let lost = channel.loss_rate > 0.0 && rng.random_bool(channel.loss_rate);
            report.record(MessageRecord {
                tick,
                time_s,
                vehicle,
                points: cut.len(),
                bytes,
                airtime_s: channel.airtime(bytes),
                transmission_s: transmission_time(bytes, channel),
                lost,
            });
        }
    }
    report.feasible = feasibility_check(&report, channel).feasible;
    Ok(report)
}
