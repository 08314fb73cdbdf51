use std::path::Path;
use std::process::Command;

fn voxscale() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voxscale"))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_manifest.toml");
    let out = voxscale()
        .args(["fit", "--manifest", path(&missing), "--out", path(&dir.path().join("fit"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("no_such_manifest.toml"));
}

#[test]
fn unknown_flag_exits_2_with_json() {
    let out = voxscale().args(["score", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn computation_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sim = voxscale()
        .args(["simulate", "--out", path(&data), "--preset", "noiseless", "--voxels-per-space", "4"])
        .status()
        .unwrap();
    assert!(sim.success());
    let out = voxscale()
        .args(["stack", "--manifest", path(&data.join("manifest.toml")), "--out", path(&dir.path().join("s"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn noiseless_simulate_fit_score() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fit = dir.path().join("fit");
    let scores = dir.path().join("scores");
    let manifest = data.join("manifest.toml");
    let steps: [Vec<&str>; 3] = [
        vec!["simulate", "--out", path(&data), "--preset", "noiseless", "--seed", "4", "--voxels-per-space", "30"],
        vec!["fit", "--manifest", path(&manifest), "--out", path(&fit)],
        vec!["score", "--manifest", path(&manifest), "--models", path(&fit), "--out", path(&scores)],
    ];
    for step in &steps {
        let out = voxscale().args(step).output().unwrap();
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let summary = std::fs::read_to_string(scores.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("space,mean_r,n_voxels"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "audio");
    let mean_r: f64 = row[1].parse().unwrap();
    assert!(mean_r >= 0.999, "mean r {mean_r}");

    let header = std::fs::read_to_string(scores.join("scores.csv")).unwrap();
    assert!(header.starts_with("voxel,space,r,r_signed_sq\n"));
    for dir in [&data, &fit, &scores] {
        let record: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
        assert!(record["parameters"].is_object());
        assert_eq!(record["version"], env!("CARGO_PKG_VERSION"));
    }
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fit.join("run.json")).unwrap()).unwrap();
    let digest = run["inputs"].as_object().unwrap().values().next().unwrap().as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn ceiling_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("ceiling");
    assert!(voxscale()
        .args(["simulate", "--out", path(&data), "--voxels-per-space", "3", "--train-stories", "2"])
        .status()
        .unwrap()
        .success());
    assert!(voxscale()
        .args(["ceiling", "--manifest", path(&data.join("manifest.toml")), "--out", path(&out)])
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(out.join("ceiling.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("voxel,signal_power,noise_power,cc_max,cc_max_clamped,flagged,display")
    );
    assert_eq!(csv.lines().count(), 7);
}
