use std::path::Path;
use std::process::{Command, Output};

use lidartwin::app::RunManifest;

fn lidartwin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidartwin"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> RunManifest {
    let out = lidartwin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is the run manifest")
}

fn synth(dir: &Path) {
    ok(&["synth", "--seed", "3", "--frames", "4", "--complexity", "small", "--out", dir.to_str().unwrap()]);
}

#[test]
fn synth_then_pipeline_produces_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    for f in ["world.json", "pipeline.toml", "source/manifest.json", "target/cuboids.jsonl", "oracle/manifest.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let out = tmp.path().join("run");
    let config = data.join("pipeline.toml");
    let m = ok(&["pipeline", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(m.command, "pipeline");
    for stage in ["scenes/000", "meshes/000", "trace", "inject", "fuse", "eval"] {
        assert!(out.join(stage).join("run.json").exists(), "{stage}");
    }
    assert!(out.join("meshes/000/mesh.ply").exists());
    assert!(out.join("eval/report.json").exists());
    let miou = m.report["eval"]["miou"].as_f64().or_else(|| {
        let r: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("eval/report.json")).unwrap()).unwrap();
        r["miou"].as_f64()
    });
    assert!(miou.unwrap() > 0.8, "{miou:?}");
    // Every listed output is present and matches its digest.
    let stage = RunManifest::load(&out.join("trace/run.json")).unwrap();
    assert!(!stage.outputs.is_empty());
    for f in &stage.outputs {
        let bytes = std::fs::read(out.join("trace").join(&f.path)).unwrap();
        use sha2::Digest;
        assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), f.sha256);
    }
}

#[test]
fn eval_of_a_sequence_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let seq = data.join("target/manifest.json");
    let s = seq.to_str().unwrap();
    let m = ok(&["eval", "--gt", s, "--pred", s]);
    assert_eq!(m.report["miou"].as_f64(), Some(1.0));
}

#[test]
fn trace_with_missing_mesh_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let missing = tmp.path().join("nope/mesh.ply");
    let out = lidartwin(&[
        "trace",
        "--mesh",
        missing.to_str().unwrap(),
        "--poses",
        data.join("source/manifest.json").to_str().unwrap(),
        "--sensor",
        "hdl32e",
        "--out",
        tmp.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mesh artifact not found"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let config = data.join("pipeline.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, format!("bogus = 1\n{text}")).unwrap();
    let out = lidartwin(&["pipeline", "--config", config.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown field `bogus`"), "{err}");
}

#[test]
fn bad_rate_argument_is_a_usage_error() {
    let out = lidartwin(&["inject", "--frames", "x", "--bank", "y", "--rate", "car", "--out", "z"]);
    assert!(!out.status.success());
}
