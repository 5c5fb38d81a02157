//! Synthetic worlds and a LiDAR ray caster.
//!
//! Worlds live in an ENU frame anchored at `Scene::origin`; the ground is
//! the plane `z = ground_z`. Objects are boxes, upright, rotated by `yaw`
//! about their center. Vehicles carrying sensors are not themselves objects.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DetectionBox, DetectorParams, DEFAULT_SENSOR_HEIGHT};
use crate::geometry::{
    enu_to_geodetic, geodetic_to_enu, EulerAngles, GeodeticCoord, RigidTransform, RotationMatrix, Vec3, VehiclePose,
};
use crate::pointcloud::{BeamCount, Point, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid sensor: {0}")]
    InvalidSensor(String),
    #[error("could not build a valid scenario for seed {seed} after {attempts} attempts")]
    ScenarioExhausted { seed: u64, attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectLabel {
    Car,
    Occluder,
    Wall,
}

impl ObjectLabel {
    fn reflectance(&self) -> f32 {
        match self {
            ObjectLabel::Car => 0.6,
            ObjectLabel::Occluder => 0.35,
            ObjectLabel::Wall => 0.25,
        }
    }
}

const GROUND_REFLECTANCE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub label: ObjectLabel,
    /// Box center in world ENU meters.
    pub center: [f64; 3],
    /// length (along yaw), width, height
    pub size: [f64; 3],
    pub yaw: f64,
}

impl SceneObject {
    /// Car of standard size resting on ground height `ground`.
    pub fn car(id: u32, x: f64, y: f64, yaw: f64, ground: f64) -> Self {
        let size = crate::detect::CAR_SIZE;
        Self {
            id,
            label: ObjectLabel::Car,
            center: [x, y, ground + size[2] / 2.0],
            size,
            yaw,
        }
    }

    pub fn block(id: u32, label: ObjectLabel, x: f64, y: f64, size: [f64; 3], yaw: f64, ground: f64) -> Self {
        Self {
            id,
            label,
            center: [x, y, ground + size[2] / 2.0],
            size,
            yaw,
        }
    }

    /// Radius of the footprint's bounding circle.
    pub fn footprint_radius(&self) -> f64 {
        (self.size[0].powi(2) + self.size[1].powi(2)).sqrt() / 2.0
    }

    fn local_point(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let d = p - Vec3(self.center);
        Vec3([c * d.0[0] + s * d.0[1], -s * d.0[0] + c * d.0[1], d.0[2]])
    }

    fn dir_to_local(&self, v: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3([c * v.0[0] + s * v.0[1], -s * v.0[0] + c * v.0[1], v.0[2]])
    }

    /// Entry distance of a ray (slab method); `None` if missed or if the
    /// ray starts inside the box.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let o = self.local_point(origin);
        let d = self.dir_to_local(dir);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let h = self.size[i] / 2.0;
            if d.0[i].abs() < 1e-15 {
                if o.0[i] < -h || o.0[i] > h {
                    return None;
                }
                continue;
            }
            let a = (-h - o.0[i]) / d.0[i];
            let b = (h - o.0[i]) / d.0[i];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }

    /// Unsigned distance from `p` to the box surface.
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let q = self.local_point(p);
        let mut outside = 0.0;
        let mut inside = f64::INFINITY;
        for i in 0..3 {
            let h = self.size[i] / 2.0;
            let e = q.0[i].abs() - h;
            if e > 0.0 {
                outside += e * e;
            }
            inside = inside.min(-e);
        }
        if outside > 0.0 {
            outside.sqrt()
        } else {
            inside.max(0.0)
        }
    }

    /// Ground-truth box in a sensor frame given `sensor_from_world`.
    pub fn truth_box(&self, sensor_from_world: &RigidTransform) -> DetectionBox {
        let c = sensor_from_world.apply(Vec3(self.center));
        let heading = sensor_from_world.rotation.heading();
        DetectionBox::truth(c.0, self.size, crate::geometry::normalize_angle(self.yaw + heading))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub origin: GeodeticCoord,
    /// World z of the ground plane; `None` for no ground.
    pub ground_z: Option<f64>,
    /// Half-width of the square world, meters.
    pub extent: f64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(origin: GeodeticCoord, ground_z: Option<f64>, extent: f64) -> Self {
        Self {
            origin,
            ground_z,
            extent,
            objects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.extent > 0.0) {
            return Err(SceneError::InvalidScene("extent must be positive".into()));
        }
        for o in &self.objects {
            if o.size.iter().any(|s| !(*s > 0.0)) {
                return Err(SceneError::InvalidScene(format!(
                    "object {} has non-positive size",
                    o.id
                )));
            }
            let reach = o.center[0].abs().max(o.center[1].abs()) + o.footprint_radius();
            if reach > self.extent {
                return Err(SceneError::InvalidScene(format!(
                    "object {} leaves the world extent",
                    o.id
                )));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn cars(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.label == ObjectLabel::Car)
    }

    /// Car ground truth in the frame of the sensor mounted per `pose`.
    pub fn truth_boxes(&self, pose: &VehiclePose) -> Vec<(u32, DetectionBox)> {
        let sensor_from_world = pose.local_from_sensor(&self.origin).inverse();
        self.cars().map(|o| (o.id, o.truth_box(&sensor_from_world))).collect()
    }

    /// Distance from a world point to the nearest surface (object or ground).
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let mut best = self.ground_z.map_or(f64::INFINITY, |g| (p.0[2] - g).abs());
        for o in &self.objects {
            best = best.min(o.surface_distance(p));
        }
        best
    }

    /// World pose of a vehicle at ENU `(x, y)` with heading `yaw`, LiDAR on
    /// the roof at the default mounting height.
    pub fn vehicle_pose(&self, x: f64, y: f64, yaw: f64) -> VehiclePose {
        let gz = self.ground_z.unwrap_or(0.0);
        let gps = enu_to_geodetic(&self.origin, Vec3::new(x, y, gz)).expect("pose inside valid geodetic range");
        VehiclePose::new(gps, EulerAngles::yaw_only(yaw).expect("finite yaw"))
            .with_install(Vec3::new(0.0, 0.0, DEFAULT_SENSOR_HEIGHT), EulerAngles::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub beams: BeamCount,
    /// `(min, max)` elevation, degrees.
    pub elevation_span_deg: (f64, f64),
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub pose: VehiclePose,
    /// Gaussian range noise, meters. 0 disables noise.
    #[serde(default)]
    pub range_noise_sigma: f64,
}

impl SensorModel {
    /// Velodyne-style defaults for the beam layout: 0.2 degree azimuth step,
    /// 100 m range, no noise.
    pub fn velodyne(beams: BeamCount, pose: VehiclePose) -> Self {
        Self {
            beams,
            elevation_span_deg: beams.elevation_span_deg(),
            azimuth_step_deg: 0.2,
            max_range: 100.0,
            pose,
            range_noise_sigma: 0.0,
        }
    }

    pub fn azimuth_steps(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let steps = 360.0 / self.azimuth_step_deg;
        if !(self.azimuth_step_deg > 0.0) || (steps - steps.round()).abs() > 1e-6 {
            return Err(SceneError::InvalidSensor(format!(
                "azimuth step {} does not divide 360",
                self.azimuth_step_deg
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(SceneError::InvalidSensor("max_range must be positive".into()));
        }
        let (lo, hi) = self.elevation_span_deg;
        if !(hi >= lo) || lo < -90.0 || hi > 90.0 {
            return Err(SceneError::InvalidSensor(format!("bad elevation span {lo}..{hi}")));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err(SceneError::InvalidSensor("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn beam_elevations_rad(&self) -> Vec<f64> {
        let n = self.beams.count() as usize;
        let (lo, hi) = self.elevation_span_deg;
        (0..n)
            .map(|i| {
                let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
                (lo + f * (hi - lo)).to_radians()
            })
            .collect()
    }
}

/// What each returned point hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitTarget {
    Ground,
    Object(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub cloud: PointCloud,
    pub hits: Vec<HitTarget>,
}

impl LabeledScan {
    pub fn count_on(&self, id: u32) -> usize {
        self.hits.iter().filter(|h| **h == HitTarget::Object(id)).count()
    }
}

/// One ray per (azimuth step, beam); nearest hit within range becomes a
/// sensor-frame point.
pub fn simulate_scan(scene: &Scene, sensor: &SensorModel, seed: u64) -> Result<PointCloud, SceneError> {
    simulate_scan_labeled(scene, sensor, seed).map(|s| s.cloud)
}

pub fn simulate_scan_labeled(scene: &Scene, sensor: &SensorModel, seed: u64) -> Result<LabeledScan, SceneError> {
    scene.validate()?;
    sensor.validate()?;
    let world_from_sensor = sensor.pose.local_from_sensor(&scene.origin);
    let origin = world_from_sensor.translation.0;
    let rot: RotationMatrix = world_from_sensor.rotation;
    let elevations: Vec<(f64, f64)> = sensor.beam_elevations_rad().iter().map(|e| e.sin_cos()).collect();
    let steps = sensor.azimuth_steps();
    let noise =
        (sensor.range_noise_sigma > 0.0).then(|| Normal::new(0.0, sensor.range_noise_sigma).expect("sigma checked"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut points = Vec::new();
    let mut hits = Vec::new();
    for j in 0..steps {
        let az = (j as f64 * sensor.azimuth_step_deg).to_radians();
        let (sa, ca) = az.sin_cos();
        for &(se, ce) in &elevations {
            let d_sensor = Vec3([ce * ca, ce * sa, se]);
            let d_world = rot.apply(d_sensor);
            let mut best: Option<(f64, HitTarget, f32)> = None;
            if let Some(g) = scene.ground_z {
                if d_world.0[2] < 0.0 {
                    let t = (g - origin.0[2]) / d_world.0[2];
                    if t > 0.0 {
                        best = Some((t, HitTarget::Ground, GROUND_REFLECTANCE));
                    }
                }
            }
            for o in &scene.objects {
                if let Some(t) = o.intersect(origin, d_world) {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, HitTarget::Object(o.id), o.label.reflectance()));
                    }
                }
            }
            let Some((mut t, target, refl)) = best else { continue };
            if t > sensor.max_range {
                continue;
            }
            if let Some(n) = &noise {
                t = (t + n.sample(&mut rng)).max(0.0);
            }
            let p = d_sensor.scale(t);
            points.push(Point::new(p.0[0] as f32, p.0[1] as f32, p.0[2] as f32, refl));
            hits.push(target);
        }
    }
    Ok(LabeledScan {
        cloud: PointCloud::new(points, sensor.beams, format!("scan-{seed}")),
        hits,
    })
}

/// Which occlusion pattern a scenario exhibits for its hidden car.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionVariant {
    /// Blocked from A, in clear view of B.
    Occluded,
    /// A low barrier and distance leave each vehicle only a sliver too small
    /// to detect; together the slivers form one detectable cluster.
    BothPartial,
    /// Nothing in the way.
    NoOccluder,
}

impl OcclusionVariant {
    pub const ALL: [OcclusionVariant; 3] = [
        OcclusionVariant::Occluded,
        OcclusionVariant::BothPartial,
        OcclusionVariant::NoOccluder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OcclusionVariant::Occluded => "occluded",
            OcclusionVariant::BothPartial => "both_partial",
            OcclusionVariant::NoOccluder => "no_occluder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionScenario {
    pub seed: u64,
    pub variant: OcclusionVariant,
    pub scene: Scene,
    pub pose_a: VehiclePose,
    pub pose_b: VehiclePose,
    pub hidden_id: u32,
}

impl OcclusionScenario {
    pub fn sensor_a(&self) -> SensorModel {
        SensorModel::velodyne(BeamCount::Beams16, self.pose_a)
    }

    pub fn sensor_b(&self) -> SensorModel {
        SensorModel::velodyne(BeamCount::Beams16, self.pose_b)
    }
}

/// Default geodetic anchor for generated worlds.
pub fn default_origin() -> GeodeticCoord {
    GeodeticCoord::new(42.2808, -83.7430, 260.0).expect("valid constant")
}

/// Hidden object occluded from A and visible to B.
pub fn make_occlusion_scenario(seed: u64) -> Result<OcclusionScenario, SceneError> {
    make_occlusion_scenario_variant(seed, OcclusionVariant::Occluded)
}

const MAX_ATTEMPTS: usize = 200;
/// Hidden-car returns required from the vehicle that is meant to see it.
pub const MIN_CLEAR_VIEW_POINTS: usize = 100;
const HIDDEN_ID: u32 = 1;

pub fn make_occlusion_scenario_variant(seed: u64, variant: OcclusionVariant) -> Result<OcclusionScenario, SceneError> {
    let limit = DetectorParams::default().min_cluster_points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0cc1_0000_0000);
    for _ in 0..MAX_ATTEMPTS {
        let cand = match variant {
            OcclusionVariant::Occluded | OcclusionVariant::NoOccluder => {
                flanking_layout(&mut rng, variant == OcclusionVariant::Occluded)
            }
            OcclusionVariant::BothPartial => trailing_layout(&mut rng),
        };
        let Some((scene, pose_a, pose_b)) = cand else { continue };
        let mut scenario = OcclusionScenario {
            seed,
            variant,
            scene,
            pose_a,
            pose_b,
            hidden_id: HIDDEN_ID,
        };
        add_clutter(&mut rng, &mut scenario);
        if scenario.scene.validate().is_err() {
            continue;
        }
        let a = simulate_scan_labeled(&scenario.scene, &scenario.sensor_a(), seed)?;
        let b = simulate_scan_labeled(&scenario.scene, &scenario.sensor_b(), seed.wrapping_add(1))?;
        let (na, nb) = (a.count_on(HIDDEN_ID), b.count_on(HIDDEN_ID));
        let ok = match variant {
            OcclusionVariant::Occluded => na == 0 && nb >= MIN_CLEAR_VIEW_POINTS,
            OcclusionVariant::NoOccluder => na >= MIN_CLEAR_VIEW_POINTS && nb >= MIN_CLEAR_VIEW_POINTS,
            OcclusionVariant::BothPartial => {
                na >= 3 && nb >= 3 && na < limit && nb < limit && na + nb >= limit + limit / 3
            }
        };
        if ok {
            return Ok(scenario);
        }
    }
    Err(SceneError::ScenarioExhausted {
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

fn new_scene() -> Scene {
    Scene::new(default_origin(), Some(0.0), 80.0)
}

/// A at the origin heading east; hidden car 14-22 m ahead; B on a cross
/// street looking at the car's flank. With `occlude`, a truck-sized block
/// sits on the line of sight from A.
fn flanking_layout(rng: &mut ChaCha8Rng, occlude: bool) -> Option<(Scene, VehiclePose, VehiclePose)> {
    let mut scene = new_scene();
    let d = rng.random_range(14.0..22.0);
    let bearing = rng.random_range(-0.17..0.17);
    let (sb, cb) = f64::sin_cos(bearing);
    let hx = d * cb;
    let hy = d * sb;
    let hyaw = rng.random_range(-PI / 2.0..PI / 2.0);
    scene.objects.push(SceneObject::car(HIDDEN_ID, hx, hy, hyaw, 0.0));

    if occlude {
        let f = rng.random_range(0.4..0.55);
        let od = f * d;
        let depth = 1.0;
        let near = od - depth / 2.0;
        let half_angle = (2.6 / (d - 2.6)).atan();
        let half_width = near * half_angle.tan() + 0.6;
        scene.objects.push(SceneObject::block(
            2,
            ObjectLabel::Occluder,
            od * cb,
            od * sb,
            [depth, 2.0 * half_width, 3.2],
            bearing,
            0.0,
        ));
    }

    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let lateral = rng.random_range(9.0..14.0);
    let along = rng.random_range(-3.0..3.0);
    let bx = hx + along * cb - side * lateral * sb;
    let by = hy + along * sb + side * lateral * cb;
    let look = (hy - by).atan2(hx - bx);
    let byaw = look + rng.random_range(-0.4..0.4);

    let pose_a = scene.vehicle_pose(0.0, 0.0, 0.0);
    let pose_b = scene.vehicle_pose(bx, by, byaw);
    Some((scene, pose_a, pose_b))
}

/// Both vehicles trail the hidden car by 24-34 m in neighboring lanes, with
/// a low barrier in front of it. Each sees only the top band of its rear.
fn trailing_layout(rng: &mut ChaCha8Rng) -> Option<(Scene, VehiclePose, VehiclePose)> {
    let mut scene = new_scene();
    let d = rng.random_range(24.0..34.0);
    let hy = rng.random_range(-1.5..1.5);
    let hyaw = rng.random_range(-0.08..0.08);
    scene.objects.push(SceneObject::car(HIDDEN_ID, d, hy, hyaw, 0.0));
    let gap = rng.random_range(2.0..3.5);
    let barrier_h = rng.random_range(0.7..1.1);
    let bx = d - 2.25 - gap - 0.25;
    scene.objects.push(SceneObject::block(
        2,
        ObjectLabel::Wall,
        bx,
        hy,
        [0.5, 4.0, barrier_h],
        0.0,
        0.0,
    ));
    let b_lat = rng.random_range(3.0..4.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let b_along = rng.random_range(-4.0..4.0);
    let pose_a = scene.vehicle_pose(0.0, 0.0, rng.random_range(-0.03..0.03));
    let pose_b = scene.vehicle_pose(b_along, b_lat, rng.random_range(-0.03..0.03));
    Some((scene, pose_a, pose_b))
}

fn sensor_xy(scene: &Scene, pose: &VehiclePose) -> [f64; 2] {
    let p = pose.local_from_sensor(&scene.origin).translation.0;
    [p.0[0], p.0[1]]
}

/// Adds 0-3 road-side cars at least 2 m (footprint gap) from everything
/// and at least 5 m from both sensors.
fn add_clutter(rng: &mut ChaCha8Rng, sc: &mut OcclusionScenario) {
    let n = rng.random_range(0..=3u32);
    let a = sensor_xy(&sc.scene, &sc.pose_a);
    let b = sensor_xy(&sc.scene, &sc.pose_b);
    let mut next_id = sc.scene.objects.iter().map(|o| o.id).max().unwrap_or(0) + 1;
    for _ in 0..n {
        for _ in 0..20 {
            let x = rng.random_range(-12.0..30.0);
            let y = rng.random_range(-18.0..18.0);
            let yaw = if rng.random_bool(0.7) {
                rng.random_range(-0.15..0.15)
            } else {
                rng.random_range(-PI / 2.0..PI / 2.0)
            };
            let car = SceneObject::car(next_id, x, y, yaw, 0.0);
            let clear = sc.scene.objects.iter().all(|o| {
                let dx = o.center[0] - x;
                let dy = o.center[1] - y;
                (dx * dx + dy * dy).sqrt() >= o.footprint_radius() + car.footprint_radius() + 2.0
            });
            let far_enough = [a, b].iter().all(|s| {
                let r = ((s[0] - x).powi(2) + (s[1] - y).powi(2)).sqrt();
                (5.0..=35.0).contains(&r)
            });
            if clear && far_enough {
                sc.scene.objects.push(car);
                next_id += 1;
                break;
            }
        }
    }
}

/// Random world for fusion-geometry checks: 3-8 cars and blocks with
/// arbitrary yaw, two vehicles 8-30 m apart.
pub fn random_world(seed: u64) -> (Scene, VehiclePose, VehiclePose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0077_0a1d);
    let mut scene = new_scene();
    let ax = rng.random_range(-5.0..5.0);
    let ay = rng.random_range(-5.0..5.0);
    let sep = rng.random_range(8.0..30.0);
    let dir = rng.random_range(-PI..PI);
    let bx = ax + sep * dir.cos();
    let by = ay + sep * dir.sin();
    let pose_a = scene.vehicle_pose(ax, ay, rng.random_range(-PI..PI));
    let pose_b = scene.vehicle_pose(bx, by, rng.random_range(-PI..PI));
    let n = rng.random_range(3..=8);
    let mut id = 1;
    let mut tries = 0;
    while scene.objects.len() < n && tries < 500 {
        tries += 1;
        let x = rng.random_range(-35.0..35.0);
        let y = rng.random_range(-35.0..35.0);
        let yaw = rng.random_range(-PI..PI);
        let obj = if rng.random_bool(0.6) {
            SceneObject::car(id, x, y, yaw, 0.0)
        } else {
            let size = [
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
                rng.random_range(1.0..4.0),
            ];
            SceneObject::block(id, ObjectLabel::Occluder, x, y, size, yaw, 0.0)
        };
        let clear = scene.objects.iter().all(|o| {
            let d = ((o.center[0] - x).powi(2) + (o.center[1] - y).powi(2)).sqrt();
            d >= o.footprint_radius() + obj.footprint_radius() + 1.0
        });
        let off_vehicles = [(ax, ay), (bx, by)]
            .iter()
            .all(|(vx, vy)| ((vx - x).powi(2) + (vy - y).powi(2)).sqrt() >= obj.footprint_radius() + 3.0);
        if clear && off_vehicles {
            scene.objects.push(obj);
            id += 1;
        }
    }
    (scene, pose_a, pose_b)
}

/// Scene description file. Positions are world ENU meters relative to the
/// geodetic `origin`; angles are degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub origin: OriginRecord,
    /// World z of the ground plane; omit for no ground.
    #[serde(default)]
    pub ground_z: Option<f64>,
    pub extent: f64,
    pub objects: Vec<ObjectRecord>,
    pub sensors: Vec<SensorRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: u32,
    pub label: ObjectLabel,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw_deg: f64,
}

/// A roof-mounted LiDAR on a vehicle standing on the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
    #[serde(default = "default_beams")]
    pub beams: u32,
    #[serde(default = "default_azimuth_step")]
    pub azimuth_step_deg: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(default)]
    pub range_noise_sigma: f64,
    #[serde(default = "default_mount_height")]
    pub mount_height: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_beams() -> u32 {
    16
}

fn default_azimuth_step() -> f64 {
    0.2
}

fn default_max_range() -> f64 {
    100.0
}

fn default_mount_height() -> f64 {
    DEFAULT_SENSOR_HEIGHT
}

/// A sensor from a scene file, ready to scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSensor {
    pub name: String,
    pub model: SensorModel,
    pub seed: u64,
}

impl SceneFile {
    pub fn build(&self) -> Result<(Scene, Vec<NamedSensor>), SceneError> {
        let o = self.origin;
        let origin = GeodeticCoord::new(o.latitude, o.longitude, o.altitude)
            .map_err(|e| SceneError::InvalidScene(e.to_string()))?;
        let mut scene = Scene::new(origin, self.ground_z, self.extent);
        for r in &self.objects {
            scene.objects.push(SceneObject {
                id: r.id,
                label: r.label,
                center: r.center,
                size: r.size,
                yaw: crate::geometry::normalize_angle(r.yaw_deg.to_radians()),
            });
        }
        scene.validate()?;
        let mut sensors = Vec::with_capacity(self.sensors.len());
        for s in &self.sensors {
            let beams = BeamCount::from_count(s.beams).map_err(|e| SceneError::InvalidSensor(e.to_string()))?;
            if !(s.x.is_finite() && s.y.is_finite() && s.yaw_deg.is_finite() && s.mount_height.is_finite()) {
                return Err(SceneError::InvalidSensor(format!(
                    "sensor {} has non-finite placement",
                    s.name
                )));
            }
            let mut pose = scene.vehicle_pose(s.x, s.y, s.yaw_deg.to_radians());
            pose.install_translation = Vec3::new(0.0, 0.0, s.mount_height);
            let model = SensorModel {
                azimuth_step_deg: s.azimuth_step_deg,
                max_range: s.max_range,
                range_noise_sigma: s.range_noise_sigma,
                ..SensorModel::velodyne(beams, pose)
            };
            model.validate()?;
            sensors.push(NamedSensor {
                name: s.name.clone(),
                model,
                seed: s.seed,
            });
        }
        Ok((scene, sensors))
    }

    /// The scenario as a file with sensors `a` and `b`, seeded as the
    /// harness scans them.
    pub fn from_scenario(sc: &OcclusionScenario) -> Self {
        let scene = &sc.scene;
        let sensor = |name: &str, pose: &VehiclePose, seed: u64| {
            let p = geodetic_to_enu(&scene.origin, &pose.gps);
            SensorRecord {
                name: name.to_string(),
                x: p.0[0],
                y: p.0[1],
                yaw_deg: pose.imu.yaw().to_degrees(),
                beams: BeamCount::Beams16.count(),
                azimuth_step_deg: default_azimuth_step(),
                max_range: default_max_range(),
                range_noise_sigma: 0.0,
                mount_height: pose.install_translation.0[2],
                seed,
            }
        };
        Self {
            origin: OriginRecord {
                latitude: scene.origin.latitude(),
                longitude: scene.origin.longitude(),
                altitude: scene.origin.altitude(),
            },
            ground_z: scene.ground_z,
            extent: scene.extent,
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    label: o.label,
                    center: o.center,
                    size: o.size,
                    yaw_deg: o.yaw.to_degrees(),
                })
                .collect(),
            sensors: vec![
                sensor("a", &sc.pose_a, sc.seed),
                sensor("b", &sc.pose_b, sc.seed.wrapping_add(1)),
            ],
        }
    }
}
