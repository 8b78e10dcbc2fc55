//! Shared oracle harness: simulate a source dataset from an analytic world,
//! run it through aggregation, reconstruction and tracing, and compare the
//! traced frames cell by cell with analytic returns of the target sensor.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use lidartwin::aggregate::{accumulate_scans, AggregateParams, ScanInput};
use lidartwin::ingest::DynamicSet;
use lidartwin::reconstruct::{reconstruct, ReconstructParams};
use lidartwin::synthworld::{self, raytrace_image, SynthWorld, FRAME_PERIOD};
use lidartwin::trace::{trace_range_image, TraceParams};
use lidartwin::{PoseSE3, SensorCatalog, SensorModel};
use nalgebra::Point3;

pub fn sensor(name: &str) -> SensorModel {
    SensorCatalog::builtin().get(name).unwrap().clone()
}

#[derive(Debug, Default, Clone)]
pub struct RoundTrip {
    pub generated: usize,
    pub within_tolerance: usize,
    /// Generated points whose cell has no analytic return.
    pub spurious: usize,
    pub label_scored: usize,
    pub label_correct: usize,
    pub oracle_returns: usize,
    pub mesh_triangles: usize,
    pub elapsed: Duration,
    pub worst: Vec<(f64, u32, u32)>,
}

impl RoundTrip {
    pub fn range_fraction(&self) -> f64 {
        self.within_tolerance as f64 / self.generated.max(1) as f64
    }
    pub fn label_accuracy(&self) -> f64 {
        self.label_correct as f64 / self.label_scored.max(1) as f64
    }
}

/// Source frames are traced from the full world, dynamic objects included;
/// the reference frames come from the static world, since dynamic objects
/// are removed before reconstruction.
pub fn round_trip(
    world: &SynthWorld,
    source: &SensorModel,
    target: &SensorModel,
    frames: usize,
    voxel: f64,
    range_tol: f64,
    boundary_margin: f64,
) -> RoundTrip {
    let start = Instant::now();
    let poses = synthworld::trajectory(frames, 1.0);
    let dynamic = DynamicSet {
        instance_ids: world.dynamic_instance_ids().into_iter().collect::<BTreeSet<u32>>(),
        classes: BTreeSet::new(),
    };
    let scans: Vec<ScanInput> = poses
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let sp = v.compose(source.mount());
            ScanInput {
                frame: i,
                cloud: raytrace_image(world, source, &sp, i as f64 * FRAME_PERIOD).to_cloud(),
                pose: *v,
                dynamic: dynamic.clone(),
            }
        })
        .collect();
    let scene = accumulate_scans(&scans, source.mount(), &AggregateParams::default()).unwrap();
    drop(scans);
    let mut params = ReconstructParams::default();
    params.tsdf.voxel_size = voxel;
    let (mesh, _) = reconstruct(&scene, source, &params).unwrap();
    drop(scene);
    let static_world = world.static_only();
    let mut out = RoundTrip {
        mesh_triangles: mesh.triangles.len(),
        ..Default::default()
    };
    for v in &poses {
        let sp: PoseSE3 = v.compose(target.mount());
        let (gen, _) = trace_range_image(&mesh, target, &TraceParams::default().with_pose(sp)).unwrap();
        let oracle = raytrace_image(&static_world, target, &sp, 0.0);
        out.oracle_returns += oracle.valid_count();
        let origin = Point3::from(*sp.translation());
        for (r, c, g) in gen.iter_valid() {
            out.generated += 1;
            let Some(o) = oracle.get(r, c) else {
                out.spurious += 1;
                continue;
            };
            let err = (g.range - o.range).abs();
            if err <= range_tol {
                out.within_tolerance += 1;
            } else if out.worst.len() < 40 {
                out.worst.push((g.range - o.range, r as u32, c as u32));
            }
            let dir = sp.transform_vector(&target.beam_direction(r, c).unwrap());
            let class = o.point.semantic_class;
            if !static_world.near_class_boundary(&origin, &dir, o.range, class, boundary_margin, 0.0) {
                out.label_scored += 1;
                if g.point.semantic_class == class {
                    out.label_correct += 1;
                }
            }
        }
    }
    out.elapsed = start.elapsed();
    out
}
