use std::fs;
use std::path::Path;
use std::process::Command;

use coopfuse::codec::ExchangePackage;
use coopfuse::fusion::fuse;
use coopfuse::geometry::{GeodeticCoord, PoseRecord, VehiclePose};
use coopfuse::pointcloud::{read_kitti_bin, write_kitti_bin, BeamCount, Point, PointCloud};
use coopfuse::roi::RoiSpec;
use coopfuse::scenesim::{make_occlusion_scenario_variant, OcclusionVariant};
use coopfuse_cli::{parse_roi, resolve_seed, CliError, FileConfig, FuseSummary, DEFAULT_SEED};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coopfuse"));
    c.env_remove("COOPFUSE_SEED");
    c
}

fn write_pose(path: &Path, pose: &VehiclePose) {
    fs::write(path, serde_json::to_string(&PoseRecord::from_pose(pose)).unwrap()).unwrap();
}

#[test]
fn two_single_point_files_fuse_to_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let one = |x: f32| PointCloud::new(vec![Point::new(x, 0.0, 0.0, 0.5)], BeamCount::Beams64, "");
    fs::write(d.join("a.bin"), write_kitti_bin(&one(1.0))).unwrap();
    fs::write(d.join("b.bin"), write_kitti_bin(&one(2.0))).unwrap();
    let pose = VehiclePose::new(GeodeticCoord::new(10.0, 20.0, 0.0).unwrap(), Default::default());
    write_pose(&d.join("a.json"), &pose);
    write_pose(&d.join("b.json"), &pose);
    let st = bin()
        .args(["fuse", "--receiver"])
        .arg(d.join("a.bin"))
        .arg("--receiver-pose")
        .arg(d.join("a.json"))
        .arg("--transmitter")
        .arg(d.join("b.bin"))
        .arg("--transmitter-pose")
        .arg(d.join("b.json"))
        .arg("--out")
        .arg(d.join("f.bin"))
        .arg("--summary")
        .arg(d.join("s.json"))
        .status()
        .unwrap();
    assert!(st.success());
    let out = read_kitti_bin(&fs::read(d.join("f.bin")).unwrap(), BeamCount::Beams64).unwrap();
    assert_eq!(out.len(), 2);
    assert!((out.points[1].x - 2.0).abs() < 1e-6);
}

#[test]
fn missing_pose_file_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.bin"), []).unwrap();
    let out = bin()
        .args(["fuse", "--receiver"])
        .arg(d.join("a.bin"))
        .arg("--receiver-pose")
        .arg(d.join("nope.json"))
        .arg("--transmitter")
        .arg(d.join("a.bin"))
        .arg("--transmitter-pose")
        .arg(d.join("nope.json"))
        .arg("--out")
        .arg(d.join("f.bin"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pose file not found"));
}

#[test]
fn flagship_scenario_fuse_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let st = bin().current_dir(d).args(args).status().unwrap();
        assert!(st.success(), "{args:?}");
    };
    run(&[
        "scenario",
        "--variant",
        "occluded",
        "--seed",
        "5",
        "--out",
        "scene.json",
    ]);
    run(&["scan", "--scene", "scene.json", "--out", "scans"]);
    run(&[
        "fuse",
        "--receiver",
        "scans/a.bin",
        "--receiver-pose",
        "scans/a.pose.json",
        "--transmitter",
        "scans/b.bin",
        "--transmitter-pose",
        "scans/b.pose.json",
        "--beams",
        "16",
        "--out",
        "fused.bin",
        "--summary",
        "summary.json",
    ]);
    let summary: FuseSummary = serde_json::from_slice(&fs::read(d.join("summary.json")).unwrap()).unwrap();

    // same frames straight from the library
    let sc = make_occlusion_scenario_variant(5, OcclusionVariant::Occluded).unwrap();
    let a = coopfuse::scenesim::simulate_scan(&sc.scene, &sc.sensor_a(), sc.seed).unwrap();
    let b = coopfuse::scenesim::simulate_scan(&sc.scene, &sc.sensor_b(), sc.seed + 1).unwrap();
    let pkg = ExchangePackage::new(2, 0, &sc.pose_b, &RoiSpec::FullFrame, &b).unwrap();
    let fused = fuse(&a, &sc.pose_a, &pkg, None).unwrap();
    assert_eq!(summary.receiver_points, a.len());
    assert_eq!(summary.transmitter_points, b.len());
    assert_eq!(summary.fused_points, fused.cloud.len());
    assert_eq!(summary.package_bytes, pkg.wire_size());
    let cli_cloud = read_kitti_bin(&fs::read(d.join("fused.bin")).unwrap(), BeamCount::Beams16).unwrap();
    assert_eq!(cli_cloud.points.len(), fused.cloud.points.len());
    // poses went through the degree-based pose files
    let worst = cli_cloud
        .points
        .iter()
        .zip(&fused.cloud.points)
        .flat_map(|(p, q)| p.xyz_f64().into_iter().zip(q.xyz_f64()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

fn simulate(args: &[&str]) -> (Option<i32>, String) {
    let out = bin().arg("simulate").args(args).output().unwrap();
    (out.status.code(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn simulate_following_is_one_way() {
    let (code, csv) = simulate(&[
        "--scenario",
        "following",
        "--window",
        "8",
        "--rate",
        "1",
        "--points",
        "5000",
    ]);
    assert_eq!(code, Some(0));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').collect())
        .collect();
    let a: Vec<_> = rows.iter().filter(|r| r[1] == "A").collect();
    let b: Vec<_> = rows.iter().filter(|r| r[1] == "B").collect();
    assert_eq!(a.len(), 8);
    assert!(a.iter().all(|r| r[2] != "0"));
    assert!(!b.is_empty() && b.iter().all(|r| r[2] == "0"));
}

#[test]
fn simulate_opposite_rows_carry_full_frames() {
    let (code, csv) = simulate(&["--scenario", "opposite", "--rate", "1"]);
    assert_eq!(code, Some(0));
    let rows: Vec<_> = csv.lines().skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("210128")));
    assert!(csv.contains("# feasible=true"));
}

#[test]
fn simulate_rate_zero_is_usage_error() {
    assert_eq!(simulate(&["--rate", "0"]).0, Some(2));
    assert_eq!(simulate(&["--scenario", "sideways"]).0, Some(2));
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "scenario = \"following\"\nwindow = 3.0\npoints = 1000\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).args(["simulate"]).output().unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",A,")).count(), 3);
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--window", "5"])
        .output()
        .unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",A,")).count(), 5);

    fs::write(&cfg, "colour = 1\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).args(["simulate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_precedence() {
    let cfg = FileConfig {
        seed: Some(9),
        ..FileConfig::default()
    };
    assert_eq!(resolve_seed(Some(3), &cfg).unwrap(), 3);
    assert_eq!(resolve_seed(None, &cfg).unwrap(), 9);
    // environment lookups are process-wide, so exercise them via the binary
    let dir = tempfile::tempdir().unwrap();
    let scene = |env: Option<&str>, name: &str| {
        let mut c = bin();
        if let Some(v) = env {
            c.env("COOPFUSE_SEED", v);
        }
        assert!(c
            .args(["scenario", "--out"])
            .arg(dir.path().join(name))
            .status()
            .unwrap()
            .success());
        fs::read(dir.path().join(name)).unwrap()
    };
    let from_env = scene(Some("77"), "env.json");
    let explicit = {
        assert!(bin()
            .args(["scenario", "--seed", "77", "--out"])
            .arg(dir.path().join("x.json"))
            .status()
            .unwrap()
            .success());
        fs::read(dir.path().join("x.json")).unwrap()
    };
    assert_eq!(from_env, explicit);
    let default = scene(None, "default.json");
    assert!(bin()
        .args(["scenario", "--seed", &DEFAULT_SEED.to_string(), "--out"])
        .arg(dir.path().join("d.json"))
        .status()
        .unwrap()
        .success());
    assert_eq!(default, fs::read(dir.path().join("d.json")).unwrap());
    let bad = bin()
        .env("COOPFUSE_SEED", "abc")
        .args(["scenario", "--out"])
        .arg(dir.path().join("e.json"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn roi_strings() {
    assert_eq!(parse_roi("full").unwrap(), RoiSpec::FullFrame);
    assert_eq!(parse_roi("junction").unwrap(), RoiSpec::junction_sector());
    assert!(matches!(parse_roi("cone:60:40").unwrap(), RoiSpec::ForwardCone { max_range, .. } if max_range == 40.0));
    assert!(matches!(
        parse_roi(r#"{"kind":"full_frame"}"#).unwrap(),
        RoiSpec::FullFrame
    ));
    for bad in ["", "sector:1", "box:1,2,3", "cone:x:1", "sector:0:0"] {
        assert!(matches!(parse_roi(bad), Err(CliError::Usage(_))), "{bad}");
    }
}

#[test]
fn roi_and_detect_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| bin().current_dir(d).args(args).output().unwrap();
    assert!(
        run(&["scenario", "--variant", "no_occluder", "--seed", "2", "--out", "s.json"])
            .status
            .success()
    );
    assert!(run(&["scan", "--scene", "s.json", "--out", "scans"]).status.success());
    assert!(run(&[
        "roi",
        "--input",
        "scans/a.bin",
        "--beams",
        "16",
        "--roi",
        "junction",
        "--out",
        "cut.bin"
    ])
    .status
    .success());
    let full = fs::metadata(d.join("scans/a.bin")).unwrap().len();
    let cut = fs::metadata(d.join("cut.bin")).unwrap().len();
    assert!(cut < full && cut > 0);
    let out = run(&["detect", "--input", "scans/a.bin", "--beams", "16"]);
    assert!(out.status.success());
    let boxes = coopfuse::detect::read_jsonl(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(!boxes.is_empty());
    assert_eq!(run(&["detect", "--input", "missing.bin"]).status.code(), Some(2));
}

#[test]
fn experiment_drift_table_has_all_case_families() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "experiment",
            "--suite",
            "drift",
            "-n",
            "2",
            "--max-drift",
            "0.10",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("drift.csv")).unwrap();
    for family in ["baseline", "both(", "x_only(", "y_only(", "double("] {
        assert!(csv.contains(family), "{family}");
    }
    assert_eq!(csv.lines().count(), 1 + 2 * 13);
}

#[test]
fn experiment_occlusion_recovers_all() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["experiment", "--suite", "occlusion", "-n", "10", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("10/10"));
}

#[test]
fn experiment_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["one", "two"] {
        let out = bin()
            .args(["experiment", "--suite", "mixed", "-n", "6", "--out"])
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(out.status.code().is_some());
    }
    for f in ["report.json", "objects.csv", "cdf.csv"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(f)).unwrap(),
            fs::read(dir.path().join("two").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn experiment_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        bin()
            .arg("experiment")
            .args(args)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(code(&["--suite", "bogus"]), Some(2));
    assert_eq!(code(&["-n", "0"]), Some(2));
    assert_eq!(code(&["--max-drift=-1"]), Some(2));
    assert_eq!(code(&["--dedup-leaf=0"]), Some(2));
}
