//! Argument parsing and dispatch.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use super::config::PipelineConfig;
use super::run::RunManifest;
use super::stages::{self, BankSource, Matching, MeshAssignment};
use crate::aggregate::{AggregateParams, DEFAULT_WORLD_RADIUS};
use crate::fuse::{FusionParams, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::ingest::Sequence;
use crate::inject::{InjectionPolicy, DEFAULT_MIN_POINTS, DEFAULT_SCORE_THRESHOLD};
use crate::reconstruct::ReconstructParams;
use crate::sensor::SensorCatalog;
use crate::synthworld::Complexity;
use crate::trace::{TraceParams, DEFAULT_SUPERSAMPLING};

#[derive(Debug, Parser)]
#[command(name = "lidartwin", version, about = "Rebuild labeled lidar sequences as meshes and resample them for other sensors")]
pub struct Cli {
    /// Sensor catalog file (TOML); the built-in catalog when omitted.
    #[arg(long, global = true)]
    pub sensors: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic world with source, target and oracle frames.
    Synth(SynthArgs),
    /// Accumulate the static points of a sequence into a scene cloud.
    Aggregate(AggregateArgs),
    /// Reconstruct a labeled mesh from an aggregated scene.
    Mesh(MeshArgs),
    /// Trace a mesh with a target sensor along a pose sequence.
    Trace(TraceArgs),
    /// Inject bank instances into generated frames.
    Inject(InjectArgs),
    /// Fuse generated frames with real frames into a mixed dataset.
    Fuse(FuseArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value = "medium")]
    pub complexity: Complexity,
    #[arg(long, default_value = "hdl64e")]
    pub source_sensor: String,
    #[arg(long, default_value = "hdl32e")]
    pub target_sensor: String,
    /// Meters between consecutive poses.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Half-open frame range written `START:END`.
fn parse_range(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected START:END, got '{s}'"))?;
    let a = a.parse().map_err(|e| format!("{a}: {e}"))?;
    let b = b.parse().map_err(|e| format!("{b}: {e}"))?;
    Ok([a, b])
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Sequence manifest.
    #[arg(long)]
    pub sequence: PathBuf,
    /// Frame range START:END (end exclusive).
    #[arg(long, value_parser = parse_range)]
    pub frames: Option<[usize; 2]>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = DEFAULT_WORLD_RADIUS)]
    pub world_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Directory written by `aggregate`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Sensor that recorded the scene (read from the scene's run manifest
    /// by default).
    #[arg(long)]
    pub sensor: Option<String>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub truncation: Option<f64>,
    #[arg(long)]
    pub band: Option<f64>,
    #[arg(long)]
    pub normal_k: Option<usize>,
    #[arg(long)]
    pub transfer_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Mesh written by `mesh`.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Sequence manifest supplying vehicle poses.
    #[arg(long)]
    pub poses: PathBuf,
    /// Target sensor name.
    #[arg(long)]
    pub sensor: String,
    #[arg(long, value_parser = parse_range)]
    pub frames: Option<[usize; 2]>,
    #[arg(long, default_value_t = 1)]
    pub pose_stride: usize,
    #[arg(long, default_value_t = DEFAULT_SUPERSAMPLING)]
    pub supersampling: usize,
    #[arg(long)]
    pub dump_ply: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// `CLASS=RATE`.
fn parse_rate(s: &str) -> std::result::Result<(u32, f64), String> {
    let (c, r) = s.split_once('=').ok_or_else(|| format!("expected CLASS=RATE, got '{s}'"))?;
    Ok((
        c.parse().map_err(|e| format!("{c}: {e}"))?,
        r.parse().map_err(|e| format!("{r}: {e}"))?,
    ))
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Generated frames (sequence manifest).
    #[arg(long)]
    pub frames: PathBuf,
    /// Saved instance bank directory.
    #[arg(long, conflicts_with_all = ["real", "cuboids"])]
    pub bank: Option<PathBuf>,
    /// Labeled target frames to extract a bank from.
    #[arg(long, requires = "cuboids")]
    pub real: Option<PathBuf>,
    /// Cuboids of the target frames, one JSON record per line.
    #[arg(long, requires = "real")]
    pub cuboids: Option<PathBuf>,
    /// Expected instances of a class per frame, `CLASS=RATE`; repeatable.
    #[arg(long = "rate", value_parser = parse_rate)]
    pub rates: Vec<(u32, f64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    pub score_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
    pub min_points: usize,
    #[arg(long)]
    pub dump_ply: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub real: PathBuf,
    /// Directory of `NNNNNN.pseudo` files for the real frames.
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    pub threshold: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dump_ply: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Built-in class map name or a map file.
    #[arg(long, default_value = "joint")]
    pub gt_map: String,
    #[arg(long, default_value = "joint")]
    pub pred_map: String,
    #[arg(long, value_enum, default_value_t = Matching::Index)]
    pub matching: Matching,
    /// Also write the report and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `reconstruct.tsdf.voxel_size`.
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Overrides `trace.supersampling`.
    #[arg(long)]
    pub supersampling: Option<usize>,
    #[arg(long)]
    pub dump_ply: bool,
}

fn init_workers(n: usize) {
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn catalog(path: &Option<PathBuf>) -> Result<SensorCatalog> {
    Ok(match path {
        Some(p) => SensorCatalog::load(p).with_context(|| format!("sensor catalog {}", p.display()))?,
        None => SensorCatalog::builtin(),
    })
}

fn named<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.with_context(|| format!("stage '{stage}' failed"))
}

/// Runs one command and returns its run manifest.
pub fn run_cli(cli: Cli) -> Result<RunManifest> {
    if let Command::Pipeline(a) = &cli.command {
        let mut cfg = named("config", PipelineConfig::load(&a.config))?;
        if let Some(o) = &a.out {
            cfg.output = o.clone();
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(v) = a.voxel_size {
            cfg.reconstruct.tsdf.voxel_size = v;
        }
        if let Some(s) = a.supersampling {
            cfg.trace.supersampling = s;
        }
        if let Some(w) = cli.workers {
            cfg.workers = w;
        }
        if let Some(s) = &cli.sensors {
            cfg.sensor_catalog = Some(s.clone());
        }
        cfg.dump_ply |= a.dump_ply;
        init_workers(cfg.workers);
        return super::pipeline::run_pipeline(&cfg);
    }
    init_workers(cli.workers.unwrap_or(0));
    let catalog = catalog(&cli.sensors)?;
    match cli.command {
        Command::Synth(a) => {
            let opts = stages::SynthOptions {
                seed: a.seed,
                frames: a.frames,
                complexity: a.complexity,
                source_sensor: a.source_sensor,
                target_sensor: a.target_sensor,
                spacing: a.spacing,
            };
            named("synth", stages::synth(&opts, &catalog, &a.out))
        }
        Command::Aggregate(a) => {
            let opts = stages::AggregateOptions {
                sequence: a.sequence,
                frames: a.frames,
                params: AggregateParams {
                    stride: a.stride,
                    world_radius: a.world_radius,
                },
            };
            named("aggregate", stages::aggregate(&opts, &catalog, &a.out))
        }
        Command::Mesh(a) => {
            let mut params = ReconstructParams::default();
            if let Some(v) = a.voxel_size {
                params.tsdf.voxel_size = v;
            }
            if let Some(v) = a.truncation {
                params.tsdf.truncation = v;
            }
            if let Some(v) = a.band {
                params.tsdf.band = v;
            }
            if let Some(v) = a.normal_k {
                params.normal_k = v;
            }
            if let Some(v) = a.transfer_k {
                params.transfer.k = v;
            }
            let opts = stages::MeshOptions {
                scene: a.scene,
                sensor: a.sensor,
                params,
            };
            named("mesh", stages::mesh(&opts, &catalog, &a.out))
        }
        Command::Trace(a) => named("trace", trace(a, &catalog)),
        Command::Inject(a) => {
            let bank = match (a.bank, a.real, a.cuboids) {
                (Some(b), _, _) => BankSource::Saved(b),
                (None, Some(frames), Some(cuboids)) => BankSource::Extract { frames, cuboids },
                _ => bail!("inject needs --bank or both --real and --cuboids"),
            };
            let opts = stages::InjectOptions {
                frames: a.frames,
                bank,
                policy: InjectionPolicy {
                    rates: a.rates.into_iter().collect::<BTreeMap<_, _>>(),
                    score_threshold: a.score_threshold,
                    min_points: a.min_points,
                    seed: a.seed,
                },
                dump_ply: a.dump_ply,
            };
            named("inject", stages::inject(&opts, &catalog, &a.out))
        }
        Command::Fuse(a) => {
            let opts = stages::FuseOptions {
                generated: a.generated,
                real: a.real,
                pseudo_labels: a.pseudo,
                params: FusionParams {
                    confidence_threshold: a.threshold,
                    pairing_seed: a.seed,
                    ..FusionParams::default()
                },
                dump_ply: a.dump_ply,
            };
            named("fuse", stages::fuse(&opts, &catalog, &a.out))
        }
        Command::Eval(a) => {
            let opts = stages::EvalOptions {
                gt: a.gt,
                pred: a.pred,
                gt_map: a.gt_map,
                pred_map: a.pred_map,
                matching: a.matching,
            };
            named("eval", stages::eval(&opts, &catalog, a.out.as_deref()))
        }
        Command::Pipeline(_) => unreachable!("handled above"),
    }
}

fn trace(a: TraceArgs, catalog: &SensorCatalog) -> Result<RunManifest> {
    anyhow::ensure!(a.mesh.is_file(), "mesh artifact not found: {}", a.mesh.display());
    anyhow::ensure!(a.poses.is_file(), "pose sequence manifest not found: {}", a.poses.display());
    let frames = match a.frames {
        Some(f) => f,
        None => [0, Sequence::load(&a.poses)?.len()],
    };
    let opts = stages::TraceOptions {
        poses: a.poses,
        meshes: vec![MeshAssignment { mesh: a.mesh, frames }],
        sensor: a.sensor,
        pose_stride: a.pose_stride,
        params: TraceParams {
            supersampling: a.supersampling,
            ..TraceParams::default()
        },
        dump_ply: a.dump_ply,
    };
    stages::trace(&opts, catalog, &a.out)
}
