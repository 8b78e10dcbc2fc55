//! Generic sequence manifest (JSON).
//!
//! ```json
//! {
//!   "sensor": "hdl64e",
//!   "intensity_divisor": 1.0,
//!   "dynamic_instance_ids": [3, 4],
//!   "dynamic_classes": [252, 253],
//!   "frames": [
//!     {"points": "velodyne/000000.bin", "labels": "labels/000000.label",
//!      "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0], "timestamp": 0.0,
//!      "dynamic_instance_ids": [9]}
//!   ]
//! }
//! ```
//!
//! Frame paths are relative to the manifest's directory. `pose` is the
//! vehicle pose in the world; the sensor mount is applied on top of it.
//! Raw intensities are divided by `intensity_divisor` and must land in
//! `[0, 1]`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::kitti::read_kitti_frame;
use crate::ingest::poses::read_poses;
use crate::point::{PointCloud, SemanticPoint};
use crate::pose::PoseSE3;

/// SemanticKITTI "moving-*" raw classes.
pub const SEMANTIC_KITTI_MOVING_CLASSES: [u32; 8] = [252, 253, 254, 255, 256, 257, 258, 259];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub points: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseSE3>,
    #[serde(default)]
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub dynamic_instance_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub sensor: String,
    #[serde(default = "one")]
    pub intensity_divisor: f64,
    #[serde(default)]
    pub dynamic_instance_ids: BTreeSet<u32>,
    /// Classes whose points are always dynamic. Defaults to the
    /// SemanticKITTI moving classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_classes: Option<BTreeSet<u32>>,
    pub frames: Vec<FrameEntry>,
}

fn one() -> f64 {
    1.0
}

/// What counts as dynamic in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicSet {
    pub instance_ids: BTreeSet<u32>,
    pub classes: BTreeSet<u32>,
}

impl DynamicSet {
    pub fn is_dynamic(&self, p: &SemanticPoint) -> bool {
        self.instance_ids.contains(&p.instance_id) || self.classes.contains(&p.semantic_class)
    }
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("manifest", "frame list is empty"));
        }
        if !(self.intensity_divisor.is_finite() && self.intensity_divisor > 0.0) {
            return Err(Error::invalid(
                "manifest",
                format!("intensity_divisor {} must be > 0", self.intensity_divisor),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: SequenceManifest = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "sequence manifest".into(),
            source: e,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn dynamic_set(&self, frame: usize) -> DynamicSet {
        let mut ids = self.dynamic_instance_ids.clone();
        if let Some(f) = self.frames.get(frame) {
            ids.extend(f.dynamic_instance_ids.iter().copied());
        }
        let classes = match &self.dynamic_classes {
            Some(c) => c.clone(),
            None => SEMANTIC_KITTI_MOVING_CLASSES.into_iter().collect(),
        };
        DynamicSet {
            instance_ids: ids,
            classes,
        }
    }

    pub fn pose(&self, frame: usize) -> Result<PoseSE3> {
        self.frames
            .get(frame)
            .and_then(|f| f.pose)
            .ok_or(Error::MissingPose(frame))
    }
}

/// A manifest bound to the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub base_dir: PathBuf,
}

impl Sequence {
    pub fn new(manifest: SequenceManifest, base_dir: impl Into<PathBuf>) -> Result<Self> {
        manifest.validate()?;
        Ok(Sequence {
            manifest,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = SequenceManifest::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Sequence {
            manifest,
            base_dir: base,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads frame `i` in the sensor frame with normalized intensity.
    pub fn load_frame(&self, i: usize) -> Result<PointCloud> {
        let entry = self
            .manifest
            .frames
            .get(i)
            .ok_or_else(|| Error::invalid("frame index", format!("{i} >= {}", self.len())))?;
        let points = self.resolve(&entry.points);
        let labels = entry.labels.as_ref().map(|l| self.resolve(l));
        let mut cloud = read_kitti_frame(&points, labels.as_deref())?;
        let div = self.manifest.intensity_divisor;
        if div != 1.0 {
            for p in &mut cloud.points {
                p.intensity = (p.intensity as f64 / div) as f32;
            }
        }
        cloud
            .validate()
            .map_err(|e| Error::invalid("frame", format!("{}: {e}", points.display())))?;
        cloud.frame = crate::point::CloudFrame::SensorNamed(self.manifest.sensor.clone());
        Ok(cloud)
    }
}

/// Builds a manifest for a SemanticKITTI sequence directory
/// (`velodyne/*.bin`, optional `labels/*.label`, `poses.txt`, optional
/// `calib.txt` and `times.txt`).
///
/// KITTI poses are camera poses; with a `Tr` entry in `calib.txt` they are
/// converted to lidar poses `Tr⁻¹·P·Tr`. The vehicle pose stored in the
/// manifest is the lidar pose composed with the inverse sensor mount.
pub fn kitti_sequence_manifest(dir: &Path, sensor: &str, mount: &PoseSE3) -> Result<SequenceManifest> {
    let velo = dir.join("velodyne");
    let mut bins: Vec<PathBuf> = std::fs::read_dir(&velo)
        .map_err(|e| Error::io(&velo, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    let poses = read_poses(&dir.join("poses.txt"))?;
    let tr = read_calib_tr(&dir.join("calib.txt"))?;
    let times = match std::fs::read_to_string(dir.join("times.txt")) {
        Ok(t) => t
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().unwrap_or(0.0))
            .collect(),
        Err(_) => Vec::new(),
    };
    let mount_inv = mount.inverse();
    let mut frames = Vec::with_capacity(bins.len());
    for (i, bin) in bins.iter().enumerate() {
        let stem = bin.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let label = dir.join("labels").join(format!("{stem}.label"));
        let pose = poses.get(i).map(|p| {
            let lidar = match &tr {
                Some(tr) => tr.inverse().compose(p).compose(tr),
                None => *p,
            };
            lidar.compose(&mount_inv)
        });
        frames.push(FrameEntry {
            points: PathBuf::from("velodyne").join(bin.file_name().unwrap()),
            labels: label
                .exists()
                .then(|| PathBuf::from("labels").join(format!("{stem}.label"))),
            pose,
            timestamp: times.get(i).copied().unwrap_or(i as f64 * 0.1),
            dynamic_instance_ids: BTreeSet::new(),
        });
    }
    let m = SequenceManifest {
        sensor: sensor.to_string(),
        intensity_divisor: 1.0,
        dynamic_instance_ids: BTreeSet::new(),
        dynamic_classes: None,
        frames,
    };
    m.validate()?;
    Ok(m)
}

fn read_calib_tr(path: &Path) -> Result<Option<PoseSE3>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(_) => return Ok(None),
    };
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            let v: Vec<f64> = rest
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("calib.txt", e.to_string()))?;
            let m: [f64; 12] = v
                .try_into()
                .map_err(|_| Error::format("calib.txt", "Tr needs 12 values"))?;
            return PoseSE3::from_row_major_lenient(&m, 1e-4).map(Some);
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_manifest() {
        let m = SequenceManifest::parse(
            r#"{"sensor": "hdl64e", "frames": [{"points": "a.bin", "pose": [1,0,0,0,0,1,0,0,0,0,1,0]}]}"#,
        )
        .unwrap();
        assert_eq!(m.intensity_divisor, 1.0);
        assert_eq!(m.pose(0).unwrap(), PoseSE3::identity());
        assert!(m.dynamic_set(0).classes.contains(&252));
    }

    #[test]
    fn empty_frames_rejected() {
        assert!(SequenceManifest::parse(r#"{"sensor": "x", "frames": []}"#).is_err());
    }

    #[test]
    fn missing_pose_names_frame() {
        let m = SequenceManifest::parse(r#"{"sensor": "x", "frames": [{"points": "a.bin"}]}"#)
            .unwrap();
        assert!(matches!(m.pose(0), Err(Error::MissingPose(0))));
    }

    #[test]
    fn dynamic_sets_union() {
        let m = SequenceManifest::parse(
            r#"{"sensor": "x", "dynamic_instance_ids": [1], "dynamic_classes": [],
                "frames": [{"points": "a.bin", "dynamic_instance_ids": [2]}, {"points": "b.bin"}]}"#,
        )
        .unwrap();
        let d0 = m.dynamic_set(0);
        assert_eq!(d0.instance_ids.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert!(d0.classes.is_empty());
        assert_eq!(m.dynamic_set(1).instance_ids.len(), 1);
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = SequenceManifest::parse(
            r#"{"sensor": "x", "intensity_divisor": 255, "frames": [{"points": "a.bin", "labels": "a.label", "pose": [1,0,0,3,0,1,0,0,0,0,1,0], "timestamp": 0.5}]}"#,
        )
        .unwrap();
        assert_eq!(SequenceManifest::parse(&m.to_json()).unwrap(), m);
    }
}
