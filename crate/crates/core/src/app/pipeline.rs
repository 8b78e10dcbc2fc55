//! `pipeline`: aggregate and mesh per window, trace, inject, fuse, eval.
//! Every stage writes to its own subdirectory and the next one reads from
//! disk.

use anyhow::{Context, Result};
use log::info;
use serde_json::json;

use super::config::PipelineConfig;
use super::run::{digest_sequence, finish_run, RunManifest};
use super::stages::{self, BankSource, MeshAssignment, Matching};
use crate::aggregate::windows;
use crate::ingest::Sequence;

/// Attaches the stage name to an error.
fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.with_context(|| format!("stage '{name}' failed"))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    stage("config", cfg.validate())?;
    let catalog = cfg.catalog()?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let source = stage("aggregate", Sequence::load(&cfg.source.sequence).map_err(Into::into))?;
    let wins = windows(source.len(), cfg.aggregate.window_length, cfg.aggregate.window_overlap)?;
    let mut report = serde_json::Map::new();

    let mut meshes = Vec::with_capacity(wins.len());
    for (k, w) in wins.iter().enumerate() {
        info!("window {k}: frames {}..{}", w.start, w.end);
        let scene_dir = out.join(format!("scenes/{k:03}"));
        let mesh_dir = out.join(format!("meshes/{k:03}"));
        let agg = stages::AggregateOptions {
            sequence: cfg.source.sequence.clone(),
            frames: Some([w.start, w.end]),
            params: cfg.aggregate.params(),
        };
        let r = stage("aggregate", stages::aggregate(&agg, &catalog, &scene_dir))?;
        report.insert(format!("aggregate_{k:03}"), r.report);
        let m = stages::MeshOptions {
            scene: scene_dir,
            sensor: None,
            params: cfg.reconstruct,
        };
        let r = stage("mesh", stages::mesh(&m, &catalog, &mesh_dir))?;
        report.insert(format!("mesh_{k:03}"), r.report);
        meshes.push(mesh_dir.join("mesh.ply"));
    }

    let trace_dir = out.join("trace");
    let t = stages::TraceOptions {
        poses: cfg.source.sequence.clone(),
        meshes: stages::frame_assignment(&wins, source.len())
            .into_iter()
            .map(|(w, r)| MeshAssignment {
                mesh: meshes[w].clone(),
                frames: [r.start, r.end],
            })
            .collect(),
        sensor: cfg.target.sensor.clone(),
        pose_stride: cfg.trace.pose_stride,
        params: cfg.trace.params(),
        dump_ply: cfg.dump_ply,
    };
    let r = stage("trace", stages::trace(&t, &catalog, &trace_dir))?;
    report.insert("trace".into(), r.report);
    let mut generated = trace_dir.join("manifest.json");

    let policy = cfg.inject.policy(cfg.seed)?;
    if cfg.inject.enabled && policy.rates.values().any(|&r| r > 0.0) {
        let dir = out.join("inject");
        let opts = stages::InjectOptions {
            frames: generated.clone(),
            bank: BankSource::Extract {
                frames: cfg.target.sequence.clone().expect("checked by validate"),
                cuboids: cfg.target.cuboids.clone().expect("checked by validate"),
            },
            policy,
            dump_ply: cfg.dump_ply,
        };
        let r = stage("inject", stages::inject(&opts, &catalog, &dir))?;
        report.insert("inject".into(), r.report);
        generated = dir.join("frames/manifest.json");
    }

    if let (true, Some(real)) = (cfg.fuse.enabled, &cfg.target.sequence) {
        let dir = out.join("fuse");
        let opts = stages::FuseOptions {
            generated: generated.clone(),
            real: real.clone(),
            pseudo_labels: cfg.target.pseudo_labels.clone(),
            params: cfg.fuse.params(cfg.seed),
            dump_ply: cfg.dump_ply,
        };
        let r = stage("fuse", stages::fuse(&opts, &catalog, &dir))?;
        report.insert("fuse".into(), r.report);
    }

    if let Some(reference) = &cfg.eval.reference {
        let opts = stages::EvalOptions {
            gt: reference.clone(),
            pred: trace_dir.join("manifest.json"),
            gt_map: cfg.eval.gt_map.clone(),
            pred_map: cfg.eval.pred_map.clone(),
            matching: Matching::Cells,
        };
        let r = stage("eval", stages::eval(&opts, &catalog, Some(&out.join("eval"))))?;
        report.insert("eval".into(), r.report);
    }

    let mut inputs = digest_sequence(&cfg.source.sequence)?;
    if let Some(real) = &cfg.target.sequence {
        inputs.extend(digest_sequence(real)?);
    }
    // The output directory is where the manifest lives, not a parameter.
    let mut params = serde_json::to_value(cfg).expect("config serializes");
    params.as_object_mut().expect("config is a table").remove("output");
    params["windows"] = json!(wins.iter().map(|w| [w.start, w.end]).collect::<Vec<_>>());
    finish_run(out, "pipeline", params, inputs, serde_json::Value::Object(report))
}
