//! Command implementations behind the `coopfuse` binary. Each `cmd_*`
//! takes fully resolved arguments so tests can call it next to the
//! library functions it wraps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use coopfuse::codec::{parse_package, serialize_package, ExchangePackage};
use coopfuse::detect::{detect, write_jsonl, DetectionBox, DetectorParams, Difficulty};
use coopfuse::fusion::{fuse, DEFAULT_DEDUP_LEAF};
use coopfuse::geometry::{PoseRecord, RigidTransform, VehiclePose};
use coopfuse::harness::{
    gps_drift_suite, improvement_cdf, objects_csv, run_suite, suite_scenarios, suite_violations, timing_benchmark,
    DriftReport, ExperimentReport, FramePair, ImprovementCdf, TimingResult, DEFAULT_MAX_DRIFT, DRIFT_CSV_HEADER,
};
use coopfuse::netsim::{
    feasibility_check, simulate_exchange, uniform_azimuth_cloud, ChannelModel, ConstantFrames, ExchangeScenario,
    Feasibility, TrafficReport,
};
use coopfuse::pointcloud::{read_kitti_bin, write_kitti_bin, BeamCount, PointCloud};
use coopfuse::roi::{extract_roi, RoiSpec};
use coopfuse::scenesim::{make_occlusion_scenario_variant, simulate_scan, OcclusionVariant, SceneFile};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 20_190_707;
pub const SEED_ENV: &str = "COOPFUSE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Io(String),
    /// A checked property did not hold.
    Property(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Property(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Property(names) => write!(f, "property check failed: {}", names.join("; ")),
        }
    }
}

impl std::error::Error for CliError {}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Io(format!("{what} not found: {}", path.display()))
    } else {
        CliError::Io(format!("{what} {}: {e}", path.display()))
    }
}

fn read_file(what: &str, path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_err(what, path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err("output directory", dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err("output file", path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

pub fn read_pose(path: &Path) -> Result<VehiclePose, CliError> {
    let bytes = read_file("pose file", path)?;
    let rec: PoseRecord =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Io(format!("pose file {}: {e}", path.display())))?;
    rec.to_pose()
        .map_err(|e| CliError::Io(format!("pose file {}: {e}", path.display())))
}

pub fn read_frame(path: &Path, beams: BeamCount) -> Result<PointCloud, CliError> {
    let bytes = read_file("frame file", path)?;
    let mut cloud =
        read_kitti_bin(&bytes, beams).map_err(|e| CliError::Io(format!("frame file {}: {e}", path.display())))?;
    cloud.frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(cloud)
}

/// `full`, `junction`, `sector:<center_deg>:<width_deg>`,
/// `cone:<half_angle_deg>:<max_range_m>`, `box:x0,y0,z0,x1,y1,z1`, or a
/// JSON object in the `RoiSpec` schema.
pub fn parse_roi(s: &str) -> Result<RoiSpec, CliError> {
    let s = s.trim();
    let bad = || usage(format!("unrecognized ROI '{s}'"));
    let nums = |body: &str, sep: char| -> Result<Vec<f64>, CliError> {
        body.split(sep)
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    let spec = if s.starts_with('{') {
        serde_json::from_str(s).map_err(|e| usage(format!("ROI JSON: {e}")))?
    } else if s == "full" {
        RoiSpec::FullFrame
    } else if s == "junction" {
        RoiSpec::junction_sector()
    } else if let Some(body) = s.strip_prefix("sector:") {
        match nums(body, ':')?[..] {
            [c, w] => RoiSpec::FovSector {
                center_azimuth: c.to_radians(),
                width: w.to_radians(),
            },
            _ => return Err(bad()),
        }
    } else if let Some(body) = s.strip_prefix("cone:") {
        match nums(body, ':')?[..] {
            [h, r] => RoiSpec::ForwardCone {
                half_angle: h.to_radians(),
                max_range: r,
            },
            _ => return Err(bad()),
        }
    } else if let Some(body) = s.strip_prefix("box:") {
        match nums(body, ',')?[..] {
            [x0, y0, z0, x1, y1, z1] => RoiSpec::BoxRegion {
                min: [x0, y0, z0],
                max: [x1, y1, z1],
            },
            _ => return Err(bad()),
        }
    } else {
        return Err(bad());
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn parse_beams(n: u32) -> Result<BeamCount, CliError> {
    BeamCount::from_count(n).map_err(|e| usage(e.to_string()))
}

/// Optional TOML config; every key mirrors a flag and flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub window: Option<f64>,
    pub rate: Option<f64>,
    pub bandwidth: Option<f64>,
    pub latency: Option<f64>,
    pub loss: Option<f64>,
    pub points: Option<usize>,
    pub roi: Option<String>,
    pub dedup_leaf: Option<f64>,
    pub max_drift: Option<f64>,
    pub suite: Option<String>,
    pub n: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err("config file", path, e))?;
        toml::from_str(&text).map_err(|e| usage(format!("config file {}: {e}", path.display())))
    }
}

/// Flag, then config file, then `COOPFUSE_SEED`, then the built-in seed.
pub fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64, CliError> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[derive(Debug, Parser)]
#[command(name = "coopfuse", version, about = "Cooperative LiDAR perception toolkit")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge a transmitter frame into a receiver frame via an exchange package.
    Fuse(FuseFlags),
    /// Cut a frame to a region of interest.
    Roi(RoiFlags),
    /// Run the geometric detector on a frame (JSON lines out).
    Detect(DetectFlags),
    /// Write a generated occlusion scenario as a scene file.
    Scenario(ScenarioFlags),
    /// Ray-cast every sensor of a scene file.
    Scan(ScanFlags),
    /// Simulate a two-vehicle exchange and report per-second traffic.
    Simulate(SimulateFlags),
    /// Run seeded experiment suites and write reports.
    Experiment(ExperimentFlags),
}

#[derive(Debug, Args)]
pub struct FuseFlags {
    #[arg(long)]
    pub receiver: PathBuf,
    #[arg(long)]
    pub receiver_pose: PathBuf,
    #[arg(long)]
    pub transmitter: PathBuf,
    #[arg(long)]
    pub transmitter_pose: PathBuf,
    /// ROI the transmitter applies before sending.
    #[arg(long)]
    pub roi: Option<String>,
    /// Voxel leaf for de-duplicating the union (off when absent).
    #[arg(long)]
    pub dedup_leaf: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub beams: u32,
    /// Fused frame, KITTI .bin layout.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON; printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoiFlags {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub roi: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub beams: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectFlags {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub beams: u32,
    /// JSON-lines report; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioFlags {
    /// occluded | both_partial | no_occluder
    #[arg(long, default_value = "occluded")]
    pub variant: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScanFlags {
    #[arg(long)]
    pub scene: PathBuf,
    /// Receives `<sensor>.bin` and `<sensor>.pose.json` per sensor.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateFlags {
    /// opposite | junction | following
    #[arg(long)]
    pub scenario: Option<String>,
    /// Seconds.
    #[arg(long)]
    pub window: Option<f64>,
    /// Frames per second.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Bits per second.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Seconds.
    #[arg(long)]
    pub latency: Option<f64>,
    #[arg(long)]
    pub loss: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Points per synthetic frame.
    #[arg(long)]
    pub points: Option<usize>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentFlags {
    /// occlusion | mixed | drift | timing | all
    #[arg(long)]
    pub suite: Option<String>,
    /// Scenario count.
    #[arg(short = 'n', long = "scenarios")]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_drift: Option<f64>,
    #[arg(long)]
    pub dedup_leaf: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub receiver_points: usize,
    pub transmitter_points: usize,
    /// After the transmitter's ROI cut.
    pub transmitted_points: usize,
    pub package_bytes: usize,
    pub fused_points: usize,
    pub roi: RoiSpec,
    /// Transmitter sensor frame -> receiver sensor frame.
    pub transform: RigidTransform,
}

pub struct FuseInput<'a> {
    pub receiver: &'a PointCloud,
    pub receiver_pose: &'a VehiclePose,
    pub transmitter: &'a PointCloud,
    pub transmitter_pose: &'a VehiclePose,
    pub roi: RoiSpec,
    pub dedup_leaf: Option<f64>,
}

/// The transmitter's frame goes through ROI cut, package, wire bytes and
/// parse before it is fused, exactly as on a real link.
pub fn fuse_frames(input: &FuseInput) -> Result<(PointCloud, FuseSummary), CliError> {
    let cut = extract_roi(input.transmitter, &input.roi).map_err(|e| usage(e.to_string()))?;
    let pkg = ExchangePackage::new(2, 0, input.transmitter_pose, &input.roi, &cut)
        .map_err(|e| CliError::Io(format!("cannot package transmitter frame: {e}")))?;
    let wire = serialize_package(&pkg);
    let received = parse_package(&wire).map_err(|e| CliError::Io(e.to_string()))?;
    let fused =
        fuse(input.receiver, input.receiver_pose, &received, input.dedup_leaf).map_err(|e| usage(e.to_string()))?;
    let summary = FuseSummary {
        receiver_points: input.receiver.len(),
        transmitter_points: input.transmitter.len(),
        transmitted_points: cut.len(),
        package_bytes: wire.len(),
        fused_points: fused.cloud.len(),
        roi: received.roi,
        transform: fused.transform_used,
    };
    Ok((fused.cloud, summary))
}

pub fn cmd_fuse(f: &FuseFlags, cfg: &FileConfig) -> Result<FuseSummary, CliError> {
    let beams = parse_beams(f.beams)?;
    let receiver_pose = read_pose(&f.receiver_pose)?;
    let transmitter_pose = read_pose(&f.transmitter_pose)?;
    let receiver = read_frame(&f.receiver, beams)?;
    let transmitter = read_frame(&f.transmitter, beams)?;
    let roi = match f.roi.as_deref().or(cfg.roi.as_deref()) {
        Some(s) => parse_roi(s)?,
        None => RoiSpec::FullFrame,
    };
    let dedup_leaf = f.dedup_leaf.or(cfg.dedup_leaf);
    if let Some(l) = dedup_leaf {
        if !(l > 0.0 && l.is_finite()) {
            return Err(usage(format!("--dedup-leaf {l} must be positive")));
        }
    }
    let (cloud, summary) = fuse_frames(&FuseInput {
        receiver: &receiver,
        receiver_pose: &receiver_pose,
        transmitter: &transmitter,
        transmitter_pose: &transmitter_pose,
        roi,
        dedup_leaf,
    })?;
    write_file(&f.out, &write_kitti_bin(&cloud))?;
    match &f.summary {
        Some(p) => write_file(p, to_json(&summary).as_bytes())?,
        None => print!("{}", to_json(&summary)),
    }
    Ok(summary)
}

pub fn cmd_roi(f: &RoiFlags, cfg: &FileConfig) -> Result<usize, CliError> {
    let cloud = read_frame(&f.input, parse_beams(f.beams)?)?;
    let roi = match f.roi.as_deref().or(cfg.roi.as_deref()) {
        Some(s) => parse_roi(s)?,
        None => return Err(usage("--roi is required")),
    };
    let cut = extract_roi(&cloud, &roi).map_err(|e| usage(e.to_string()))?;
    write_file(&f.out, &write_kitti_bin(&cut))?;
    Ok(cut.len())
}

pub fn cmd_detect(f: &DetectFlags) -> Result<Vec<DetectionBox>, CliError> {
    let cloud = read_frame(&f.input, parse_beams(f.beams)?)?;
    let boxes = detect(&cloud, &DetectorParams::default());
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &boxes).map_err(|e| CliError::Io(e.to_string()))?;
    match &f.out {
        Some(p) => write_file(p, &buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(boxes)
}

fn parse_variant(s: &str) -> Result<OcclusionVariant, CliError> {
    OcclusionVariant::ALL
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| usage(format!("unknown variant '{s}' (occluded | both_partial | no_occluder)")))
}

pub fn cmd_scenario(f: &ScenarioFlags, cfg: &FileConfig) -> Result<SceneFile, CliError> {
    let variant = parse_variant(&f.variant)?;
    let seed = resolve_seed(f.seed, cfg)?;
    let sc = make_occlusion_scenario_variant(seed, variant).map_err(|e| CliError::Property(vec![e.to_string()]))?;
    let file = SceneFile::from_scenario(&sc);
    write_file(&f.out, to_json(&file).as_bytes())?;
    Ok(file)
}

pub fn load_scene(path: &Path) -> Result<SceneFile, CliError> {
    let bytes = read_file("scene file", path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Io(format!("scene file {}: {e}", path.display())))
}

/// Scans every sensor; returns `(name, cloud, pose)` in file order.
pub fn scan_scene(file: &SceneFile) -> Result<Vec<(String, PointCloud, VehiclePose)>, CliError> {
    let (scene, sensors) = file.build().map_err(|e| usage(e.to_string()))?;
    sensors
        .into_iter()
        .map(|s| {
            let mut cloud = simulate_scan(&scene, &s.model, s.seed).map_err(|e| usage(e.to_string()))?;
            cloud.frame_id = s.name.clone();
            Ok((s.name, cloud, s.model.pose))
        })
        .collect()
}

pub fn cmd_scan(f: &ScanFlags) -> Result<Vec<(String, usize)>, CliError> {
    let file = load_scene(&f.scene)?;
    let mut out = Vec::new();
    for (name, cloud, pose) in scan_scene(&file)? {
        write_file(&f.out.join(format!("{name}.bin")), &write_kitti_bin(&cloud))?;
        write_file(
            &f.out.join(format!("{name}.pose.json")),
            to_json(&PoseRecord::from_pose(&pose)).as_bytes(),
        )?;
        out.push((name, cloud.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub scenario: ExchangeScenario,
    pub window: f64,
    pub rate: f64,
    pub channel: ChannelModel,
    pub seed: u64,
    pub points: usize,
}

impl SimulateSettings {
    pub fn resolve(f: &SimulateFlags, cfg: &FileConfig) -> Result<Self, CliError> {
        let name = f
            .scenario
            .clone()
            .or(cfg.scenario.clone())
            .unwrap_or_else(|| "opposite".into());
        let scenario = ExchangeScenario::parse(&name)
            .ok_or_else(|| usage(format!("unknown scenario '{name}' (opposite | junction | following)")))?;
        let window = f.window.or(cfg.window).unwrap_or(8.0);
        let rate = f.rate.or(cfg.rate).unwrap_or(1.0);
        if !(window > 0.0 && window.is_finite()) {
            return Err(usage(format!("--window {window} must be positive")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(usage(format!("--rate {rate} must be positive")));
        }
        let defaults = ChannelModel::default();
        let channel = ChannelModel::new(
            f.bandwidth.or(cfg.bandwidth).unwrap_or(defaults.bandwidth_bps),
            f.latency.or(cfg.latency).unwrap_or(defaults.latency_s),
            f.loss.or(cfg.loss).unwrap_or(defaults.loss_rate),
        )
        .map_err(|e| usage(e.to_string()))?;
        Ok(Self {
            scenario,
            window,
            rate,
            channel,
            seed: resolve_seed(f.seed, cfg)?,
            points: f.points.or(cfg.points).unwrap_or(30_000),
        })
    }
}

/// Both vehicles send the same-sized synthetic frame every tick.
pub fn run_simulation(s: &SimulateSettings) -> Result<(TrafficReport, Feasibility), CliError> {
    let mut frames = ConstantFrames {
        a: uniform_azimuth_cloud(s.points, s.seed),
        b: uniform_azimuth_cloud(s.points, s.seed.wrapping_add(1)),
    };
    let report = simulate_exchange(s.scenario, &mut frames, s.rate, &s.channel, s.window, s.seed)
        .map_err(|e| usage(e.to_string()))?;
    let feas = feasibility_check(&report, &s.channel);
    Ok((report, feas))
}

pub fn simulation_csv(report: &TrafficReport, feas: &Feasibility) -> String {
    let mut out = report.to_csv();
    out.push_str(&format!(
        "# feasible={} worst_utilization={:.6}\n",
        feas.feasible, feas.worst_utilization
    ));
    out
}

pub fn cmd_simulate(f: &SimulateFlags, cfg: &FileConfig) -> Result<(TrafficReport, Feasibility), CliError> {
    let settings = SimulateSettings::resolve(f, cfg)?;
    let (report, feas) = run_simulation(&settings)?;
    let csv = simulation_csv(&report, &feas);
    match &f.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok((report, feas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Occlusion,
    Mixed,
    Drift,
    Timing,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "occlusion" => Suite::Occlusion,
            "mixed" => Suite::Mixed,
            "drift" => Suite::Drift,
            "timing" => Suite::Timing,
            "all" => Suite::All,
            _ => {
                return Err(usage(format!(
                    "unknown suite '{s}' (occlusion | mixed | drift | timing | all)"
                )))
            }
        })
    }

    fn default_n(self) -> usize {
        match self {
            Suite::Occlusion => 10,
            Suite::Drift => 20,
            Suite::Timing => 1,
            Suite::Mixed | Suite::All => 51,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub suite: Suite,
    pub n: usize,
    pub seed: u64,
    pub max_drift: f64,
    pub dedup_leaf: Option<f64>,
}

impl ExperimentSettings {
    pub fn resolve(f: &ExperimentFlags, cfg: &FileConfig) -> Result<Self, CliError> {
        let suite = Suite::parse(f.suite.as_deref().or(cfg.suite.as_deref()).unwrap_or("all"))?;
        let n = f.n.or(cfg.n).unwrap_or(suite.default_n());
        if n == 0 {
            return Err(usage("-n must be at least 1"));
        }
        let max_drift = f.max_drift.or(cfg.max_drift).unwrap_or(DEFAULT_MAX_DRIFT);
        if !(max_drift > 0.0 && max_drift.is_finite()) {
            return Err(usage(format!("--max-drift {max_drift} must be positive")));
        }
        let dedup_leaf = f.dedup_leaf.or(cfg.dedup_leaf);
        if let Some(l) = dedup_leaf {
            if !(l > 0.0 && l.is_finite()) {
                return Err(usage(format!("--dedup-leaf {l} must be positive")));
            }
        }
        Ok(Self {
            suite,
            n,
            seed: resolve_seed(f.seed, cfg)?,
            max_drift,
            dedup_leaf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub scenario: String,
    pub hidden_id: u32,
    pub missed_by_a: bool,
    pub detected_fused: bool,
    /// Single-shot scores for the hidden object, 0 when missed.
    pub score_a: f64,
    pub score_b: f64,
    pub score_fused: f64,
}

/// Fused-frame totals over a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FusedTotals {
    pub points: usize,
    pub detected: usize,
    pub boxes: usize,
}

impl FusedTotals {
    fn of(reports: &[ExperimentReport]) -> Self {
        reports.iter().fold(Self::default(), |t, r| Self {
            points: t.points + r.fused_points,
            detected: t.detected + r.count_fused.detected,
            boxes: t.boxes + r.count_fused.boxes,
        })
    }
}

/// The mixed suite run with and without voxel de-duplication of the union.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupComparison {
    pub leaf: f64,
    pub raw: FusedTotals,
    pub deduplicated: FusedTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub suite: Suite,
    pub seed: u64,
    pub n: usize,
    pub max_drift: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<ExperimentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdf: Option<ImprovementCdf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupComparison>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occlusion: Vec<OcclusionRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<DriftReport>,
    /// Wall-clock medians; only the timing suite fills this, and it is the
    /// one output that differs between runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingResult>,
    pub checks: Vec<Check>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn occlusion_part(s: &ExperimentSettings, params: &DetectorParams, out: &mut ExperimentOutput) -> Result<(), CliError> {
    let mut recovered = 0;
    let mut raised = 0;
    for i in 0..s.n {
        let seed = s.seed.wrapping_add(i as u64);
        let sc = make_occlusion_scenario_variant(seed, OcclusionVariant::Occluded)
            .map_err(|e| CliError::Property(vec![e.to_string()]))?;
        let pair = FramePair::from_scenario(&sc).map_err(|e| usage(e.to_string()))?;
        let r =
            coopfuse::harness::run_cooper_experiment(&pair, params, s.dedup_leaf).map_err(|e| usage(e.to_string()))?;
        let h = r.record(sc.hidden_id).expect("hidden object is a car");
        if !h.detected_a && h.detected_fused {
            recovered += 1;
        }
        if h.score_fused > h.score_a {
            raised += 1;
        }
        out.occlusion.push(OcclusionRow {
            scenario: format!("occluded/{seed}"),
            hidden_id: sc.hidden_id,
            missed_by_a: !h.detected_a,
            detected_fused: h.detected_fused,
            score_a: h.score_a,
            score_b: h.score_b,
            score_fused: h.score_fused,
        });
    }
    out.checks.push(check(
        "occlusion recovery",
        recovered == s.n,
        format!("{recovered}/{} hidden objects missed by A and found in fusion", s.n),
    ));
    out.checks.push(check(
        "fusion raises the receiver's score for the hidden object",
        raised == s.n,
        format!("{raised}/{} fused scores above A's single shot", s.n),
    ));
    Ok(())
}

fn mixed_part(s: &ExperimentSettings, params: &DetectorParams, out: &mut ExperimentOutput) -> Result<(), CliError> {
    let scenarios = suite_scenarios(s.n, s.seed).map_err(|e| CliError::Property(vec![e.to_string()]))?;
    let reports = run_suite(&scenarios, params, s.dedup_leaf).map_err(|e| usage(e.to_string()))?;
    let violations = suite_violations(&reports);
    out.checks.push(check(
        "detection-count dominance and difficulty partition",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{} scenarios", reports.len())
        } else {
            violations.join(", ")
        },
    ));
    let cdf = improvement_cdf(&reports).map_err(|e| usage(e.to_string()))?;
    let monotone = Difficulty::ALL.iter().all(|&d| {
        let pts = cdf.class(d);
        pts.windows(2)
            .all(|w| w[0].improvement <= w[1].improvement && w[0].fraction <= w[1].fraction)
            && pts.iter().all(|p| (0.0..=1.0).contains(&p.fraction))
    });
    out.checks.push(check("cdf monotone", monotone, String::new()));
    if let (Some(h), Some(e)) = (cdf.median(Difficulty::Hard), cdf.median(Difficulty::Easy)) {
        out.checks.push(check(
            "hard improves more than easy",
            h > e && e <= 0.15,
            format!("median improvement hard {h:.4}, easy {e:.4}"),
        ));
    }
    // the same scenarios with de-duplication toggled the other way
    let leaf = s.dedup_leaf.unwrap_or(DEFAULT_DEDUP_LEAF);
    let toggled = match s.dedup_leaf {
        Some(_) => None,
        None => Some(leaf),
    };
    let other = run_suite(&scenarios, params, toggled).map_err(|e| usage(e.to_string()))?;
    let (raw, deduplicated) = match s.dedup_leaf {
        None => (FusedTotals::of(&reports), FusedTotals::of(&other)),
        Some(_) => (FusedTotals::of(&other), FusedTotals::of(&reports)),
    };
    out.dedup = Some(DedupComparison {
        leaf,
        raw,
        deduplicated,
    });
    out.reports = reports;
    out.cdf = Some(cdf);
    Ok(())
}

fn drift_part(s: &ExperimentSettings, params: &DetectorParams, out: &mut ExperimentOutput) -> Result<(), CliError> {
    let scenarios = suite_scenarios(s.n, s.seed).map_err(|e| CliError::Property(vec![e.to_string()]))?;
    let mut stable = 0;
    for sc in &scenarios {
        let pair = FramePair::from_scenario(sc).map_err(|e| usage(e.to_string()))?;
        let label = format!("{}/{}", sc.variant.as_str(), sc.seed);
        let report = gps_drift_suite(&pair, s.max_drift, params, &label).map_err(|e| usage(e.to_string()))?;
        if report.within_bound().all(|o| o.same_as_baseline) {
            stable += 1;
        }
        out.drift.push(report);
    }
    out.checks.push(check(
        "drift within bound keeps matches",
        stable == scenarios.len(),
        format!(
            "{stable}/{} scenarios unchanged at <= {} m",
            scenarios.len(),
            s.max_drift
        ),
    ));
    Ok(())
}

/// Detection cost on A's scan versus the fused frame of the first suite
/// scenario.
pub fn timing_part(seed: u64, params: &DetectorParams, repetitions: usize) -> Result<TimingResult, CliError> {
    let sc = make_occlusion_scenario_variant(seed, OcclusionVariant::NoOccluder)
        .map_err(|e| CliError::Property(vec![e.to_string()]))?;
    let pair = FramePair::from_scenario(&sc).map_err(|e| usage(e.to_string()))?;
    let pkg = ExchangePackage::new(2, 0, &pair.pose_b, &RoiSpec::FullFrame, &pair.cloud_b)
        .map_err(|e| usage(e.to_string()))?;
    let fused = fuse(&pair.cloud_a, &pair.pose_a, &pkg, None).map_err(|e| usage(e.to_string()))?;
    timing_benchmark(&pair.cloud_a, &fused.cloud, params, repetitions).map_err(|e| usage(e.to_string()))
}

pub fn run_experiment(s: &ExperimentSettings) -> Result<ExperimentOutput, CliError> {
    let params = DetectorParams::default();
    let mut out = ExperimentOutput {
        suite: s.suite,
        seed: s.seed,
        n: s.n,
        max_drift: s.max_drift,
        reports: Vec::new(),
        cdf: None,
        dedup: None,
        occlusion: Vec::new(),
        drift: Vec::new(),
        timing: None,
        checks: Vec::new(),
    };
    match s.suite {
        Suite::Occlusion => occlusion_part(s, &params, &mut out)?,
        Suite::Mixed => mixed_part(s, &params, &mut out)?,
        Suite::Drift => drift_part(s, &params, &mut out)?,
        Suite::Timing => {
            let t = timing_part(s.seed, &params, 30)?;
            out.checks.push(check(
                "fused detect within 4x single",
                t.median_fused_ms <= 4.0 * t.median_single_ms,
                format!("single {:.3} ms, fused {:.3} ms", t.median_single_ms, t.median_fused_ms),
            ));
            out.timing = Some(t);
        }
        Suite::All => {
            mixed_part(s, &params, &mut out)?;
            occlusion_part(&ExperimentSettings { n: 10, ..s.clone() }, &params, &mut out)?;
            drift_part(&ExperimentSettings { n: 20, ..s.clone() }, &params, &mut out)?;
        }
    }
    Ok(out)
}

/// Report files written by `experiment`, relative to the output directory.
pub const REPORT_JSON: &str = "report.json";
pub const OBJECTS_CSV: &str = "objects.csv";
pub const CDF_CSV: &str = "cdf.csv";
pub const DRIFT_CSV: &str = "drift.csv";

pub fn write_experiment(dir: &Path, out: &ExperimentOutput) -> Result<Vec<PathBuf>, CliError> {
    let mut files = vec![(REPORT_JSON, to_json(out))];
    if !out.reports.is_empty() {
        files.push((OBJECTS_CSV, objects_csv(&out.reports)));
    }
    if let Some(cdf) = &out.cdf {
        files.push((CDF_CSV, cdf.to_csv()));
    }
    if !out.drift.is_empty() {
        let mut csv = String::from(DRIFT_CSV_HEADER);
        for d in &out.drift {
            d.csv_rows(&mut csv);
        }
        files.push((DRIFT_CSV, csv));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        write_file(&p, body.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

pub fn cmd_experiment(f: &ExperimentFlags, cfg: &FileConfig) -> Result<ExperimentOutput, CliError> {
    let settings = ExperimentSettings::resolve(f, cfg)?;
    let out = run_experiment(&settings)?;
    write_experiment(&f.out, &out)?;
    for c in &out.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failures = out.failures();
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Property(failures))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.to_string().trim_start_matches("error: ").trim_end())),
    };
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Fuse(f) => cmd_fuse(f, &cfg).map(|_| ()),
        Command::Roi(f) => cmd_roi(f, &cfg).map(|_| ()),
        Command::Detect(f) => cmd_detect(f).map(|_| ()),
        Command::Scenario(f) => cmd_scenario(f, &cfg).map(|_| ()),
        Command::Scan(f) => cmd_scan(f).map(|_| ()),
        Command::Simulate(f) => cmd_simulate(f, &cfg).map(|_| ()),
        Command::Experiment(f) => cmd_experiment(f, &cfg).map(|_| ()),
    }
}
