use std::path::Path;
use std::process::Command;

use logismos::run::{sha256_hex, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_logismos"))
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{:?}: {}", cmd, String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check_hashes(dir: &Path, m: &RunManifest) {
    for o in &m.outputs {
        let b = std::fs::read(dir.join(&o.path)).unwrap();
        assert_eq!(sha256_hex(&b), o.sha256, "{}", o.path);
    }
}

#[test]
fn phantom_segment_metrics_subplates() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    ok(bin().args(["phantom", "--small", "--seed", "4", "--out"]).arg(&case));
    let m = manifest(&case);
    assert!(m.outputs.iter().any(|o| o.path == "volume.vol"));
    check_hashes(&case, &m);

    let run = tmp.path().join("seg");
    ok(bin().args(["segment3d", "--mode", "gradient", "--case"]).arg(&case).arg("--out").arg(&run));
    let m = manifest(&run);
    check_hashes(&run, &m);
    for f in ["solution.json", "report.json", "report.csv", "graph.lgsg", "violations.json", "meshes/t0_o0_s1.json"] {
        assert!(m.outputs.iter().any(|o| o.path == f), "{f} missing");
    }
    let v: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(run.join("violations.json")).unwrap()).unwrap();
    assert!(v.is_empty());
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert!(reports[0]["cartilage_unsigned_mm"].as_f64().unwrap() < 0.6);

    // the same run again gives the same bytes
    let run2 = tmp.path().join("seg2");
    ok(bin().args(["segment3d", "--mode", "gradient", "--case"]).arg(&case).arg("--out").arg(&run2));
    assert_eq!(manifest(&run2).outputs, m.outputs);

    let mesh = run.join("meshes/t0_o0_s1.json");
    let out = bin().args(["metrics", "--reference"]).arg(&mesh).arg("--test").arg(&mesh).output().unwrap();
    assert!(out.status.success());
    let d: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(d["mean_mm"].as_f64(), Some(0.0));
    assert_eq!(d["max_mm"].as_f64(), Some(0.0));

    let sp = tmp.path().join("subplates.json");
    ok(bin()
        .args(["subplates", "--case"])
        .arg(&case)
        .arg("--femur-bone")
        .arg(case.join("truth_o0_s0.json"))
        .arg("--tibia-bone")
        .arg(case.join("truth_o1_s0.json"))
        .arg("--femur-cartilage")
        .arg(case.join("truth_o0_s1.json"))
        .arg("--tibia-cartilage")
        .arg(case.join("truth_o1_s1.json"))
        .arg("--out")
        .arg(&sp));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&sp).unwrap()).unwrap();
    let tibia = r["tibia"].as_object().unwrap();
    assert_eq!(tibia.len(), 10);
    assert_eq!(r["femur"].as_object().unwrap().len(), 2);
    assert!(tibia.values().all(|v| v["mean_thickness_mm"].as_f64().unwrap() > 0.0));
}

#[test]
fn longitudinal_phantom_and_segment4d() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("series");
    ok(bin().args(["phantom", "--small", "--times", "2", "--seed", "2", "--out"]).arg(&series));
    assert!(series.join("t1/volume.vol").exists());
    assert!(series.join("transforms.json").exists());
    let run = tmp.path().join("seg4d");
    ok(bin()
        .args(["segment4d", "--mode", "gradient", "--case"])
        .arg(series.join("t0"))
        .arg(series.join("t1"))
        .arg("--out")
        .arg(&run));
    assert!(run.join("meshes/t1_o1_s1.json").exists());
    let v: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(run.join("violations.json")).unwrap()).unwrap();
    assert!(v.is_empty());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    ok(bin().args(["phantom", "--small", "--out"]).arg(&case));

    // learned mode without a model
    let out = bin().args(["segment3d", "--mode", "naf+rf", "--case"]).arg(&case).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));

    let out = bin().args(["segment3d", "--mode", "fancy", "--case"]).arg(&case).arg("--out").arg(tmp.path().join("y")).output().unwrap();
    assert!(!out.status.success());

    let man = tmp.path().join("manifest.json");
    std::fs::write(&man, r#"{"split1": ["case"], "split2": ["case"]}"#).unwrap();
    let out = bin().args(["train", "--mode", "naf+rf", "--manifest"]).arg(&man).arg("--out").arg(tmp.path().join("z")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("case"));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[learned]\nn_nodes = 3\n").unwrap();
    let out = bin().args(["segment3d", "--config"]).arg(&cfg).arg("--case").arg(&case).arg("--out").arg(tmp.path().join("w")).output().unwrap();
    assert!(!out.status.success());
}
