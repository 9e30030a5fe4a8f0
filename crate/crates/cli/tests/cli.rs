use std::path::Path;
use std::process::{Command, Output};

use handeye::model::Dataset;
use handeye::pipeline::CalibrationResult;

fn handeye(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handeye"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// (trans_err_m, rot_err_rad, converged) per row
fn read_rows(path: &Path) -> Vec<(f64, f64, bool)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[5].parse().unwrap(), f[6].parse().unwrap(), f[8].parse().unwrap())
        })
        .collect()
}

#[test]
fn simulate_paper_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = handeye(&["simulate", "--preset", "paper-scale", "--seed", "7", "--out", "."], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let d = Dataset::load(&dir.path().join("dataset.json")).unwrap();
    assert_eq!(d.cameras.len(), 5);
    assert_eq!(d.robot_poses.len(), 150);
    assert!(dir.path().join("truth.json").exists());
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = handeye(
            &["simulate", "--seed", "3", "--pixel-sigma", "0.5", "--rot-sigma", "0.001", "--out", sub],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["dataset.json", "truth.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn bad_scene_arguments_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = handeye(&["simulate", "--cameras", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("dataset.json").exists());
}

#[test]
fn missing_dataset_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = handeye(&["calibrate", "--dataset", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dataset not found"));
}

#[test]
fn invalid_dataset_lists_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    assert!(handeye(&["simulate", "--seed", "1"], dir.path()).status.success());
    let path = dir.path().join("dataset.json");
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let dets = json["detections"].as_array_mut().unwrap();
    dets[0]["corners"].as_array_mut().unwrap().pop();
    dets[1]["camera_id"] = serde_json::json!(99);
    std::fs::write(&path, json.to_string()).unwrap();

    let out = handeye(&["calibrate", "--dataset", "dataset.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("corner count"), "{err}");
    assert!(err.contains("unknown camera id"), "{err}");
    assert!(!dir.path().join("result.json").exists());
}

#[test]
fn single_mode_needs_a_camera() {
    let dir = tempfile::tempdir().unwrap();
    assert!(handeye(&["simulate"], dir.path()).status.success());
    let out = handeye(&["calibrate", "--dataset", "dataset.json", "--mode", "single"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = handeye(&["calibrate", "--dataset", "dataset.json", "--mode", "multi", "--camera", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn calibrate_single_camera_writes_result() {
    let dir = tempfile::tempdir().unwrap();
    assert!(handeye(&["simulate", "--seed", "4"], dir.path()).status.success());
    let out = handeye(
        &["calibrate", "--dataset", "dataset.json", "--camera", "1", "--init", "pnp", "--linear-solver", "dense"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Average"), "{stdout}");
    let r: CalibrationResult =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(r.calibration.cameras.len(), 1);
    assert_eq!(r.calibration.cameras[0].camera_id, 1);
    assert!(r.reprojection.average.rms < 1e-6);
    assert!(r.consistency.is_empty());
}

#[test]
fn visual_sweep_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = handeye(
        &["sweep", "--axis", "visual", "--levels", "0,0.5,1,2", "--trials", "10", "--out", "s.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_rows(&dir.path().join("s.csv"));
    // 4 levels x 10 trials x (3 single + 3 multi camera rows)
    assert_eq!(rows.len(), 240);
}

#[test]
fn rotation_sweep_at_zero_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = handeye(
        &["sweep", "--axis", "rotation", "--levels", "0", "--trials", "3", "--out", "s.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_rows(&dir.path().join("s.csv"));
    assert!(!rows.is_empty());
    for (t, r, converged) in rows {
        assert!(t < 1e-6 && r < 1e-6, "{t} {r}");
        assert!(converged);
    }
}

#[test]
fn inspect_reports_covisibility() {
    let dir = tempfile::tempdir().unwrap();
    assert!(handeye(&["simulate", "--seed", "2"], dir.path()).status.success());
    let out = handeye(&["inspect", "--dataset", "dataset.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = Dataset::load(&dir.path().join("dataset.json")).unwrap();
    assert_eq!(
        v["covisible_pairs_per_timestep"].as_array().unwrap().len(),
        d.robot_poses.len()
    );
    assert!(v["summary"].is_object());
}
