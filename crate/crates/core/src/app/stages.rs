//! One function per pipeline stage. Each reads its inputs from disk, writes
//! its artifacts plus a `run.json` into an output directory, and returns the
//! run manifest.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::run::{digest, digest_sequence, finish_run, load_all, write_frame_set, FrameOut, RunManifest};
use crate::aggregate::{accumulate_range, read_scene, write_scene, AggregateParams};
use crate::eval::{ClassMap, ConfusionMatrix, JointClasses};
use crate::fuse::{build_mixed_dataset, filter_pseudo, FusionParams};
use crate::ingest::cuboids::{format_cuboids, read_cuboids, Cuboid};
use crate::ingest::pseudo::{apply_pseudo_labels, read_pseudo_labels};
use crate::ingest::Sequence;
use crate::inject::{inject_instances, InjectionPolicy, InstanceBank};
use crate::pose::PoseSE3;
use crate::range_image::build_range_image;
use crate::reconstruct::{read_ply, reconstruct, write_ply, ReconstructParams};
use crate::sensor::{SensorCatalog, SensorModel};
use crate::synthworld::{self, generate_world, raytrace_analytic, Complexity, FRAME_PERIOD};
use crate::trace::{trace_sensor, TraceParams};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load_sequence(path: &Path, what: &str) -> Result<Sequence> {
    ensure!(path.is_file(), "{what} manifest not found: {}", path.display());
    Ok(Sequence::load(path)?)
}

fn sensor<'a>(catalog: &'a SensorCatalog, name: &str) -> Result<&'a SensorModel> {
    Ok(catalog.get(name)?)
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("params serialize")
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub seed: u64,
    pub frames: usize,
    pub complexity: Complexity,
    pub source_sensor: String,
    pub target_sensor: String,
    /// Meters between consecutive poses.
    pub spacing: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            frames: 20,
            complexity: Complexity::Medium,
            source_sensor: "hdl64e".into(),
            target_sensor: "hdl32e".into(),
            spacing: 1.0,
        }
    }
}

/// A sensor-frame copy of a world cuboid seen from `sensor_pose`.
fn cuboid_in_sensor(c: &Cuboid, sensor_pose: &PoseSE3) -> Cuboid {
    let inv = sensor_pose.inverse();
    let heading = inv.transform_vector(&nalgebra::Vector3::new(c.yaw.cos(), c.yaw.sin(), 0.0));
    Cuboid {
        center: inv.transform_point(&Point3::from(c.center)).coords,
        yaw: heading.y.atan2(heading.x),
        ..*c
    }
}

/// Simulates a synthetic world and writes:
/// `world.json`; `source/` (source sensor, dynamic objects included);
/// `target/` (target sensor frames with dynamic objects, the target-domain
/// "real" data) with `target/cuboids.jsonl`; `oracle/` (target sensor over
/// the static world, a reference for generated frames); and a ready
/// `pipeline.toml`.
pub fn synth(opts: &SynthOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    ensure!(opts.frames > 0, "frame count must be >= 1");
    ensure!(opts.spacing > 0.0, "pose spacing must be > 0");
    let source = sensor(catalog, &opts.source_sensor)?;
    let target = sensor(catalog, &opts.target_sensor)?;
    create_dir(out)?;
    let world = generate_world(opts.seed, opts.complexity);
    std::fs::write(out.join("world.json"), world.to_json() + "\n")?;
    let static_world = world.static_only();
    let poses = synthworld::trajectory(opts.frames, opts.spacing);
    let dynamic: BTreeSet<u32> = world.dynamic_instance_ids().into_iter().collect();

    let simulate = |s: &SensorModel, w: &synthworld::SynthWorld| -> Vec<FrameOut> {
        poses
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let t = i as f64 * FRAME_PERIOD;
                FrameOut {
                    cloud: raytrace_analytic(w, s, &v.compose(s.mount()), t),
                    pose: Some(*v),
                    timestamp: t,
                }
            })
            .collect()
    };
    write_frame_set(&out.join("source"), source.name(), &simulate(source, &world), &dynamic, false)?;
    info!("synth: {} source frames", opts.frames);
    write_frame_set(&out.join("target"), target.name(), &simulate(target, &world), &dynamic, false)?;
    write_frame_set(
        &out.join("oracle"),
        target.name(),
        &simulate(target, &static_world),
        &BTreeSet::new(),
        false,
    )?;
    let cuboids: Vec<(usize, Cuboid)> = poses
        .iter()
        .enumerate()
        .flat_map(|(i, v)| {
            let sp = v.compose(target.mount());
            world
                .dynamic_cuboids(i as f64 * FRAME_PERIOD)
                .into_iter()
                .map(move |c| (i, cuboid_in_sensor(&c, &sp)))
        })
        .collect();
    std::fs::write(out.join("target/cuboids.jsonl"), format_cuboids(&cuboids))?;
    std::fs::write(
        out.join("pipeline.toml"),
        super::config::synth_config_template(opts),
    )?;
    info!("synth: wrote {} target frames, {} cuboids", opts.frames, cuboids.len());
    let report = json!({
        "primitives": world.primitives.len(),
        "dynamic_instances": dynamic.len(),
        "frames": opts.frames,
        "cuboids": cuboids.len(),
    });
    finish_run(out, "synth", to_json(opts), Vec::new(), report)
}

// ------------------------------------------------------------ aggregate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub sequence: PathBuf,
    /// Half-open frame range; the whole sequence when absent.
    pub frames: Option<[usize; 2]>,
    pub params: AggregateParams,
}

/// Accumulates static points of a sequence into `scene.{bin,label,json}`.
pub fn aggregate(opts: &AggregateOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    let seq = load_sequence(&opts.sequence, "sequence")?;
    let s = sensor(catalog, &seq.manifest.sensor)?;
    let range = match opts.frames {
        Some([a, b]) => {
            ensure!(a < b && b <= seq.len(), "frame range {a}..{b} outside 0..{}", seq.len());
            a..b
        }
        None => 0..seq.len(),
    };
    let inputs = digest_sequence(&opts.sequence)?;
    let scene = accumulate_range(&seq, s.mount(), range.clone(), &opts.params)?;
    ensure!(!scene.is_empty(), "no static points left in frames {range:?}");
    create_dir(out)?;
    write_scene(&scene, out)?;
    info!("aggregate: {} scans, {} points", scene.scans.len(), scene.len());
    let mut params = to_json(opts);
    params["sensor"] = json!(s.name());
    let report = json!({ "scans": scene.scans.len(), "points": scene.len() });
    finish_run(out, "aggregate", params, inputs, report)
}

// ----------------------------------------------------------------- mesh

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshOptions {
    /// Directory written by `aggregate`.
    pub scene: PathBuf,
    /// Sensor that recorded the scene; read from the scene's run manifest
    /// when absent.
    pub sensor: Option<String>,
    pub params: ReconstructParams,
}

/// Reconstructs a labeled mesh from an aggregated scene into `mesh.ply`.
pub fn mesh(opts: &MeshOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    let scene_file = opts.scene.join("scene.json");
    ensure!(scene_file.is_file(), "scene artifact not found: {}", scene_file.display());
    let sensor_name = match &opts.sensor {
        Some(s) => s.clone(),
        None => {
            let run = RunManifest::load(&opts.scene.join(super::run::RUN_MANIFEST))
                .context("scene has no run manifest; pass the sensor explicitly")?;
            run.params["sensor"]
                .as_str()
                .context("scene run manifest names no sensor")?
                .to_string()
        }
    };
    let s = sensor(catalog, &sensor_name)?;
    let inputs = ["scene.json", "scene.bin", "scene.label"]
        .iter()
        .map(|f| digest(&opts.scene.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let scene = read_scene(&opts.scene)?;
    let (mesh, stats) = reconstruct(&scene, s, &opts.params)?;
    drop(scene);
    create_dir(out)?;
    write_ply(&mesh, &out.join("mesh.ply"))?;
    info!("mesh: {} vertices, {} triangles", stats.vertices, stats.triangles);
    let mut params = to_json(opts);
    params["sensor"] = json!(sensor_name);
    finish_run(out, "mesh", params, inputs, to_json(&stats))
}

// ---------------------------------------------------------------- trace

/// Frames `frames` of the pose sequence are traced in `mesh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshAssignment {
    pub mesh: PathBuf,
    pub frames: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Sequence providing vehicle poses and timestamps.
    pub poses: PathBuf,
    pub meshes: Vec<MeshAssignment>,
    pub sensor: String,
    /// Every `pose_stride`-th pose is traced.
    pub pose_stride: usize,
    pub params: TraceParams,
    pub dump_ply: bool,
}

/// Traces each assigned pose with the target sensor mounted on the vehicle.
pub fn trace(opts: &TraceOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    ensure!(opts.pose_stride >= 1, "pose stride must be >= 1");
    ensure!(!opts.meshes.is_empty(), "no mesh given");
    for m in &opts.meshes {
        ensure!(m.mesh.is_file(), "mesh artifact not found: {}", m.mesh.display());
    }
    opts.params.validate()?;
    let s = sensor(catalog, &opts.sensor)?;
    let seq = load_sequence(&opts.poses, "pose sequence")?;
    let mut inputs = vec![digest(&opts.poses)?];
    let mut frames = Vec::new();
    for m in &opts.meshes {
        let [a, b] = m.frames;
        ensure!(a < b && b <= seq.len(), "frame range {a}..{b} outside 0..{}", seq.len());
        inputs.push(digest(&m.mesh)?);
        let mesh = read_ply(&m.mesh)?;
        ensure!(mesh.has_attributes(), "mesh {} carries no labels", m.mesh.display());
        let selected: Vec<usize> = (a..b).filter(|i| i % opts.pose_stride == 0).collect();
        let traced = selected
            .par_iter()
            .map(|&i| {
                let v = seq.manifest.pose(i)?;
                let params = opts.params.with_pose(v.compose(s.mount()));
                let (cloud, _) = trace_sensor(&mesh, s, &params)?;
                Ok(FrameOut {
                    cloud,
                    pose: Some(v),
                    timestamp: seq.manifest.frames[i].timestamp,
                })
            })
            .collect::<crate::Result<Vec<_>>>()?;
        frames.extend(traced);
    }
    create_dir(out)?;
    write_frame_set(out, s.name(), &frames, &BTreeSet::new(), opts.dump_ply)?;
    let points: usize = frames.iter().map(|f| f.cloud.len()).sum();
    info!("trace: {} frames, {} points", frames.len(), points);
    let report = json!({ "frames": frames.len(), "points": points });
    finish_run(out, "trace", to_json(opts), inputs, report)
}

// --------------------------------------------------------------- inject

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BankSource {
    /// A bank directory saved by a previous run.
    Saved(PathBuf),
    /// Extract a bank from labeled target frames and their cuboids
    /// (sensor frame, one JSON record per line).
    Extract { frames: PathBuf, cuboids: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectOptions {
    /// Generated frames to inject into.
    pub frames: PathBuf,
    pub bank: BankSource,
    pub policy: InjectionPolicy,
    pub dump_ply: bool,
}

/// Injects bank instances into every generated frame. An extracted bank is
/// saved under `bank/`.
pub fn inject(opts: &InjectOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    opts.policy.validate()?;
    let seq = load_sequence(&opts.frames, "generated frame")?;
    let s = sensor(catalog, &seq.manifest.sensor)?;
    let mut inputs = digest_sequence(&opts.frames)?;
    create_dir(out)?;
    let (bank, extracted) = match &opts.bank {
        BankSource::Saved(dir) => {
            let index = dir.join("index.json");
            ensure!(index.is_file(), "instance bank not found: {}", dir.display());
            inputs.push(digest(&index)?);
            (InstanceBank::load(dir)?, None)
        }
        BankSource::Extract { frames, cuboids } => {
            ensure!(cuboids.is_file(), "cuboid file not found: {}", cuboids.display());
            let real = load_sequence(frames, "target frame")?;
            if real.manifest.sensor != seq.manifest.sensor {
                bail!(
                    "bank frames come from '{}' but generated frames are for '{}'",
                    real.manifest.sensor,
                    seq.manifest.sensor
                );
            }
            inputs.extend(digest_sequence(frames)?);
            inputs.push(digest(cuboids)?);
            let mut by_frame: Vec<Vec<Cuboid>> = vec![Vec::new(); real.len()];
            for (f, c) in read_cuboids(cuboids)? {
                ensure!(f < real.len(), "cuboid for frame {f}, sequence has {}", real.len());
                by_frame[f].push(c);
            }
            let clouds = load_all(&real)?;
            let items: Vec<_> = clouds
                .into_iter()
                .zip(by_frame)
                .enumerate()
                .map(|(i, (c, b))| (i, c, b))
                .collect();
            let (bank, stats) = InstanceBank::from_frames(&items, &opts.policy.extract_params());
            bank.save(&out.join("bank"))?;
            (bank, Some(stats))
        }
    };
    info!("inject: bank holds {} instances", bank.len());
    let clouds = load_all(&seq)?;
    let injected = clouds
        .par_iter()
        .enumerate()
        .map(|(i, c)| inject_instances(c, s, &bank, &opts.policy, i as u64))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut drawn = 0;
    let mut visible = 0;
    let frames: Vec<FrameOut> = injected
        .into_iter()
        .enumerate()
        .map(|(i, (cloud, st))| {
            drawn += st.drawn.values().sum::<usize>();
            visible += st.visible_points;
            FrameOut {
                cloud,
                pose: seq.manifest.frames[i].pose,
                timestamp: seq.manifest.frames[i].timestamp,
            }
        })
        .collect();
    write_frame_set(&out.join("frames"), s.name(), &frames, &BTreeSet::new(), opts.dump_ply)?;
    let report = json!({
        "bank_instances": bank.len(),
        "extracted": extracted,
        "drawn": drawn,
        "visible_points": visible,
    });
    finish_run(out, "inject", to_json(opts), inputs, report)
}

// ----------------------------------------------------------------- fuse

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseOptions {
    pub generated: PathBuf,
    pub real: PathBuf,
    /// Directory of `NNNNNN.pseudo` files for the real frames; when given,
    /// real points take the pseudo labels and those below the confidence
    /// threshold are dropped.
    pub pseudo_labels: Option<PathBuf>,
    pub params: FusionParams,
    pub dump_ply: bool,
}

/// Builds the mixed dataset: every generated frame fused with a drawn real
/// frame, followed by the real frames.
pub fn fuse(opts: &FuseOptions, catalog: &SensorCatalog, out: &Path) -> Result<RunManifest> {
    opts.params.validate()?;
    let gen_seq = load_sequence(&opts.generated, "generated frame")?;
    let real_seq = load_sequence(&opts.real, "real frame")?;
    let s = sensor(catalog, &gen_seq.manifest.sensor)?;
    let mut inputs = digest_sequence(&opts.generated)?;
    inputs.extend(digest_sequence(&opts.real)?);
    let gen = load_all(&gen_seq)?;
    let mut real = load_all(&real_seq)?;
    if let Some(dir) = &opts.pseudo_labels {
        ensure!(dir.is_dir(), "pseudo-label directory not found: {}", dir.display());
        for (i, cloud) in real.iter_mut().enumerate() {
            let path = dir.join(format!("{i:06}.pseudo"));
            inputs.push(digest(&path)?);
            let labels = read_pseudo_labels(&path, cloud.len())?;
            apply_pseudo_labels(cloud, &labels)?;
            *cloud = filter_pseudo(cloud, opts.params.confidence_threshold);
        }
    }
    let (frames, mixed) = build_mixed_dataset(&gen, &real, s, &opts.params)?;
    // Fused frame i sits at generated pose i; real frames follow.
    let poses = gen_seq
        .manifest
        .frames
        .iter()
        .chain(&real_seq.manifest.frames)
        .map(|f| (f.pose, f.timestamp));
    let frames: Vec<FrameOut> = frames
        .into_iter()
        .zip(poses)
        .map(|(cloud, (pose, timestamp))| FrameOut { cloud, pose, timestamp })
        .collect();
    create_dir(out)?;
    write_frame_set(&out.join("frames"), s.name(), &frames, &BTreeSet::new(), opts.dump_ply)?;
    std::fs::write(
        out.join("mixed.json"),
        serde_json::to_string_pretty(&mixed).expect("mixed manifest serializes") + "\n",
    )?;
    info!("fuse: {} output frames", frames.len());
    let report = json!({ "generated": gen.len(), "real": real.len(), "frames": frames.len() });
    finish_run(out, "fuse", to_json(opts), inputs, report)
}

// ----------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// Point i of a ground-truth frame pairs with point i of the prediction.
    Index,
    /// Points pair by range-image cell of the ground-truth sensor; cells
    /// empty in either frame are skipped.
    Cells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub gt: PathBuf,
    pub pred: PathBuf,
    /// Built-in map name (`joint`, `semantickitti`, `nuscenes`) or a file.
    pub gt_map: String,
    pub pred_map: String,
    pub matching: Matching,
}

/// Scores predicted labels against ground truth over the joint classes.
/// With an output directory the report is also written as `report.json`
/// and `report.txt`.
pub fn eval(opts: &EvalOptions, catalog: &SensorCatalog, out: Option<&Path>) -> Result<RunManifest> {
    let gt = load_sequence(&opts.gt, "ground-truth")?;
    let pred = load_sequence(&opts.pred, "prediction")?;
    ensure!(
        gt.len() == pred.len(),
        "{} ground-truth frames vs {} predicted frames",
        gt.len(),
        pred.len()
    );
    let map_gt = ClassMap::resolve(&opts.gt_map)?;
    let map_pred = ClassMap::resolve(&opts.pred_map)?;
    let cell_sensor = match opts.matching {
        Matching::Cells => Some(sensor(catalog, &gt.manifest.sensor)?.clone()),
        Matching::Index => None,
    };
    let mut inputs = digest_sequence(&opts.gt)?;
    inputs.extend(digest_sequence(&opts.pred)?);
    let matrices = (0..gt.len())
        .into_par_iter()
        .map(|i| -> Result<ConfusionMatrix> {
            let g = gt.load_frame(i)?;
            let p = pred.load_frame(i)?;
            let (gl, pl): (Vec<u32>, Vec<u32>) = match &cell_sensor {
                None => (
                    g.iter().map(|x| x.semantic_class).collect(),
                    p.iter().map(|x| x.semantic_class).collect(),
                ),
                Some(s) => {
                    let gi = build_range_image(s, &g).image;
                    let pi = build_range_image(s, &p).image;
                    gi.iter_valid()
                        .filter_map(|(r, c, cell)| {
                            pi.get(r, c).map(|q| (cell.point.semantic_class, q.point.semantic_class))
                        })
                        .unzip()
                }
            };
            let mut m = ConfusionMatrix::new(JointClasses::default());
            m.accumulate(&gl, &pl, &map_gt, &map_pred)
                .with_context(|| format!("frame {i}"))?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::new(JointClasses::default());
    for m in &matrices {
        total.merge(m)?;
    }
    let report = total.report()?;
    info!("eval: mIoU {:.4} over {} points", report.miou, report.scored_points);
    let params = to_json(opts);
    match out {
        Some(dir) => {
            create_dir(dir)?;
            std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
            std::fs::write(dir.join("report.txt"), report.to_table("pred"))?;
            finish_run(dir, "eval", params, inputs, to_json(&report))
        }
        None => Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: "eval".into(),
            param_hash: super::run::param_hash(&params),
            params,
            inputs,
            outputs: Vec::new(),
            report: to_json(&report),
        }),
    }
}

/// Groups consecutive frames by the window that owns them.
pub fn frame_assignment(windows: &[Range<usize>], frames: usize) -> Vec<(usize, Range<usize>)> {
    let mut out: Vec<(usize, Range<usize>)> = Vec::new();
    for f in 0..frames {
        let w = crate::aggregate::window_for_frame(windows, f);
        match out.last_mut() {
            Some((lw, r)) if *lw == w => r.end = f + 1,
            _ => out.push((w, f..f + 1)),
        }
    }
    out
}
