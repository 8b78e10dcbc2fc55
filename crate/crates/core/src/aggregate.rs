//! Static scene accumulation: drop dynamic instances, move every frame into
//! the world by its ego pose and concatenate.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::kitti::{read_kitti_frame, write_kitti_frame};
use crate::ingest::manifest::{DynamicSet, Sequence};
use crate::point::{CloudFrame, PointCloud};
use crate::pose::PoseSE3;

pub const DEFAULT_WORLD_RADIUS: f64 = 120.0;
pub const DEFAULT_WINDOW_LENGTH: usize = 200;
pub const DEFAULT_WINDOW_OVERLAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateParams {
    pub stride: usize,
    /// Points farther than this from every sensor origin are discarded.
    pub world_radius: f64,
}

impl Default for AggregateParams {
    fn default() -> Self {
        AggregateParams {
            stride: 1,
            world_radius: DEFAULT_WORLD_RADIUS,
        }
    }
}

impl AggregateParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("aggregate params", "stride must be >= 1"));
        }
        if !(self.world_radius > 0.0) {
            return Err(Error::invalid("aggregate params", "world_radius must be > 0"));
        }
        Ok(())
    }
}

/// One accumulated scan: its sequence index, the sensor pose in the world
/// and the contiguous slice of scene points it contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOrigin {
    pub frame: usize,
    pub sensor_pose: PoseSE3,
    pub first_point: usize,
    pub point_count: usize,
}

impl ScanOrigin {
    pub fn points(&self) -> Range<usize> {
        self.first_point..self.first_point + self.point_count
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(*self.sensor_pose.translation())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneCloud {
    pub cloud: PointCloud,
    /// Sequence frame index of every point.
    pub source_frame_ids: Vec<u32>,
    pub scans: Vec<ScanOrigin>,
}

impl SceneCloud {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn sensor_origins(&self) -> Vec<Point3<f64>> {
        self.scans.iter().map(ScanOrigin::origin).collect()
    }

    /// Sensor origin of every point.
    pub fn viewpoints(&self) -> Vec<Point3<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.scans {
            out.extend(std::iter::repeat(s.origin()).take(s.point_count));
        }
        out
    }
}

/// Exactly the points whose instance id is not in `dynamic_ids`, in order.
pub fn remove_dynamic(cloud: &PointCloud, dynamic_ids: &BTreeSet<u32>) -> PointCloud {
    PointCloud::new(
        cloud
            .points
            .iter()
            .filter(|p| !dynamic_ids.contains(&p.instance_id))
            .copied()
            .collect(),
        cloud.frame.clone(),
    )
}

/// Like [`remove_dynamic`] but also drops points of dynamic classes.
pub fn remove_dynamic_set(cloud: &PointCloud, set: &DynamicSet) -> PointCloud {
    PointCloud::new(
        cloud.points.iter().filter(|p| !set.is_dynamic(p)).copied().collect(),
        cloud.frame.clone(),
    )
}

/// A loaded scan ready for accumulation.
#[derive(Debug, Clone)]
pub struct ScanInput {
    pub frame: usize,
    pub cloud: PointCloud,
    /// Vehicle pose in the world.
    pub pose: PoseSE3,
    pub dynamic: DynamicSet,
}

/// Accumulates already loaded scans in the given order.
pub fn accumulate_scans(scans: &[ScanInput], mount: &PoseSE3, params: &AggregateParams) -> Result<SceneCloud> {
    params.validate()?;
    let sensor_poses: Vec<PoseSE3> = scans.iter().map(|s| s.pose.compose(mount)).collect();
    let origins: Vec<Vector3<f64>> = sensor_poses.iter().map(|p| *p.translation()).collect();
    let r2 = params.world_radius * params.world_radius;
    let parts: Vec<PointCloud> = scans
        .par_iter()
        .zip(sensor_poses.par_iter())
        .map(|(s, sp)| {
            let own = *sp.translation();
            let mut world = sp.apply_to_world(&remove_dynamic_set(&s.cloud, &s.dynamic));
            world.points.retain(|p| {
                (p.position.coords - own).norm_squared() <= r2
                    || origins.iter().any(|o| (p.position.coords - o).norm_squared() <= r2)
            });
            world
        })
        .collect();
    let total: usize = parts.iter().map(PointCloud::len).sum();
    let mut scene = SceneCloud {
        cloud: PointCloud::new(Vec::with_capacity(total), CloudFrame::World),
        source_frame_ids: Vec::with_capacity(total),
        scans: Vec::with_capacity(scans.len()),
    };
    for ((s, sp), part) in scans.iter().zip(&sensor_poses).zip(parts) {
        scene.scans.push(ScanOrigin {
            frame: s.frame,
            sensor_pose: *sp,
            first_point: scene.cloud.len(),
            point_count: part.len(),
        });
        scene
            .source_frame_ids
            .extend(std::iter::repeat(s.frame as u32).take(part.len()));
        scene.cloud.points.extend(part.points);
    }
    Ok(scene)
}

/// Frame indices selected by `stride` within `frames`.
pub fn select_frames(frames: Range<usize>, stride: usize) -> Vec<usize> {
    frames.step_by(stride.max(1)).collect()
}

/// Loads and accumulates every `stride`-th frame of `frames`.
pub fn accumulate_range(
    seq: &Sequence,
    mount: &PoseSE3,
    frames: Range<usize>,
    params: &AggregateParams,
) -> Result<SceneCloud> {
    params.validate()?;
    let selected = select_frames(frames, params.stride);
    let scans = selected
        .par_iter()
        .map(|&i| {
            let pose = seq.manifest.pose(i)?;
            Ok(ScanInput {
                frame: i,
                cloud: seq.load_frame(i)?,
                pose,
                dynamic: seq.manifest.dynamic_set(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    accumulate_scans(&scans, mount, params)
}

pub fn accumulate(seq: &Sequence, mount: &PoseSE3, params: &AggregateParams) -> Result<SceneCloud> {
    accumulate_range(seq, mount, 0..seq.len(), params)
}

/// Splits `n` frames into windows of `length` overlapping by `overlap`.
/// The last window is clipped to `n`; short sequences form one window.
pub fn windows(n: usize, length: usize, overlap: usize) -> Result<Vec<Range<usize>>> {
    if length == 0 || overlap >= length {
        return Err(Error::invalid(
            "window",
            format!("need 0 <= overlap < length, got length {length}, overlap {overlap}"),
        ));
    }
    if n <= length {
        return Ok(vec![0..n]);
    }
    let step = length - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + length).min(n);
        out.push(start..end);
        if end == n {
            break;
        }
        start += step;
    }
    Ok(out)
}

/// Index of the window whose center is nearest to `frame` (first on ties).
pub fn window_for_frame(windows: &[Range<usize>], frame: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, w) in windows.iter().enumerate() {
        let c = (w.start + w.end) as f64 / 2.0;
        let d = (frame as f64 + 0.5 - c).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneSidecar {
    point_count: usize,
    scans: Vec<ScanOrigin>,
}

/// Writes `scene.bin`, `scene.label` and `scene.json` into `dir`.
pub fn write_scene(scene: &SceneCloud, dir: &Path) -> Result<()> {
    write_kitti_frame(&scene.cloud, &dir.join("scene.bin"), &dir.join("scene.label"))?;
    let side = SceneSidecar {
        point_count: scene.len(),
        scans: scene.scans.clone(),
    };
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&side).unwrap()).map_err(|e| Error::io(&path, e))
}

pub fn read_scene(dir: &Path) -> Result<SceneCloud> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let side: SceneSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    let mut cloud = read_kitti_frame(&dir.join("scene.bin"), Some(&dir.join("scene.label")))?;
    cloud.frame = CloudFrame::World;
    if cloud.len() != side.point_count {
        return Err(Error::CountMismatch {
            points: cloud.len(),
            labels: side.point_count,
        });
    }
    let mut ids = Vec::with_capacity(cloud.len());
    for s in &side.scans {
        if s.first_point != ids.len() {
            return Err(Error::format("scene.json", "scan slices are not contiguous"));
        }
        ids.extend(std::iter::repeat(s.frame as u32).take(s.point_count));
    }
    if ids.len() != cloud.len() {
        return Err(Error::format("scene.json", "scan slices do not cover the cloud"));
    }
    Ok(SceneCloud {
        cloud,
        source_frame_ids: ids,
        scans: side.scans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SemanticPoint;

    fn cloud(insts: &[u32]) -> PointCloud {
        PointCloud::sensor(
            insts
                .iter()
                .enumerate()
                .map(|(i, &inst)| SemanticPoint::new(i as f64, 0.0, 0.0).with_labels(1, inst))
                .collect(),
        )
    }

    #[test]
    fn remove_dynamic_examples() {
        let c = cloud(&[0, 5, 7, 5]);
        assert_eq!(remove_dynamic(&c, &BTreeSet::new()), c);
        let out = remove_dynamic(&c, &[5].into_iter().collect());
        assert_eq!(
            out.points.iter().map(|p| p.instance_id).collect::<Vec<_>>(),
            vec![0, 7]
        );
        let out = remove_dynamic(&c, &[5, 7].into_iter().collect());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn two_frame_translation() {
        let scans = vec![
            ScanInput {
                frame: 0,
                cloud: cloud(&[0]),
                pose: PoseSE3::identity(),
                dynamic: DynamicSet::default(),
            },
            ScanInput {
                frame: 1,
                cloud: cloud(&[0]),
                pose: PoseSE3::from_translation(Vector3::new(10.0, 0.0, 0.0)),
                dynamic: DynamicSet::default(),
            },
        ];
        let s = accumulate_scans(&scans, &PoseSE3::identity(), &AggregateParams::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.cloud.points[1].position, Point3::new(10.0, 0.0, 0.0));
        assert_eq!(s.source_frame_ids, vec![0, 1]);
        assert_eq!(s.scans[1].origin(), Point3::new(10.0, 0.0, 0.0));
        assert_eq!(s.cloud.frame, CloudFrame::World);
    }

    #[test]
    fn world_radius_bounds_points() {
        let scans = vec![ScanInput {
            frame: 0,
            cloud: PointCloud::sensor(vec![
                SemanticPoint::new(5.0, 0.0, 0.0),
                SemanticPoint::new(50.0, 0.0, 0.0),
            ]),
            pose: PoseSE3::identity(),
            dynamic: DynamicSet::default(),
        }];
        let p = AggregateParams {
            stride: 1,
            world_radius: 20.0,
        };
        assert_eq!(accumulate_scans(&scans, &PoseSE3::identity(), &p).unwrap().len(), 1);
    }

    #[test]
    fn window_layout() {
        assert_eq!(windows(50, 200, 50).unwrap(), vec![0..50]);
        assert_eq!(windows(500, 200, 50).unwrap(), vec![0..200, 150..350, 300..500]);
        let w = windows(500, 200, 50).unwrap();
        assert_eq!(window_for_frame(&w, 0), 0);
        assert_eq!(window_for_frame(&w, 250), 1);
        assert_eq!(window_for_frame(&w, 499), 2);
        assert!(windows(10, 5, 5).is_err());
    }

    #[test]
    fn scene_persistence_round_trip() {
        let scans = vec![
            ScanInput {
                frame: 3,
                cloud: cloud(&[0, 1]),
                pose: PoseSE3::from_yaw(0.5, Vector3::new(1.0, 2.0, 0.0)),
                dynamic: DynamicSet::default(),
            },
            ScanInput {
                frame: 4,
                cloud: cloud(&[2]),
                pose: PoseSE3::identity(),
                dynamic: DynamicSet::default(),
            },
        ];
        let s = accumulate_scans(&scans, &PoseSE3::identity(), &AggregateParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&s, dir.path()).unwrap();
        let back = read_scene(dir.path()).unwrap();
        assert_eq!(back.source_frame_ids, s.source_frame_ids);
        for (a, b) in back.scans.iter().zip(&s.scans) {
            assert_eq!((a.frame, a.first_point, a.point_count), (b.frame, b.first_point, b.point_count));
            assert!(a.sensor_pose.max_abs_diff(&b.sensor_pose) < 1e-12);
        }
        for (a, b) in back.cloud.points.iter().zip(&s.cloud.points) {
            assert!((a.position - b.position).norm() < 1e-5);
        }
    }
}
