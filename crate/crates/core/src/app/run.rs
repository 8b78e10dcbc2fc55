//! Run manifests, file digests and frame-set directories.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ingest::kitti::write_kitti_frame;
use crate::ingest::{FrameEntry, Sequence, SequenceManifest};
use crate::point::PointCloud;
use crate::pose::PoseSE3;
use crate::reconstruct::{write_ply, LabeledMesh};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a stage and check its outputs. Contains no
/// timestamps, so identical runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: Value,
    pub param_hash: String,
    pub inputs: Vec<FileDigest>,
    /// Files under the run directory, relative to it, sorted.
    pub outputs: Vec<FileDigest>,
    pub report: Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hash of the canonical (key-sorted) JSON form of `params`.
pub fn param_hash(params: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(params).expect("json value serializes")))
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Digests of a sequence manifest and every frame file it lists.
pub fn digest_sequence(manifest: &Path) -> Result<Vec<FileDigest>> {
    let seq = Sequence::load(manifest)?;
    let mut out = vec![digest(manifest)?];
    for f in &seq.manifest.frames {
        out.push(digest(&seq.base_dir.join(&f.points))?);
        if let Some(l) = &f.labels {
            out.push(digest(&seq.base_dir.join(l))?);
        }
    }
    Ok(out)
}

/// Digests of every file in a directory tree except its run manifest.
pub fn digest_dir(dir: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    files
        .into_iter()
        .filter(|rel| rel != RUN_MANIFEST)
        .map(|rel| {
            Ok(FileDigest {
                sha256: sha256_file(&dir.join(&rel))?,
                path: rel,
            })
        })
        .collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let parts: Vec<String> = rel.iter().map(|c| c.to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

/// Writes `run.json` for a finished stage and returns it.
pub fn finish_run(
    out_dir: &Path,
    command: &str,
    params: Value,
    inputs: Vec<FileDigest>,
    report: Value,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        param_hash: param_hash(&params),
        params,
        inputs,
        outputs: digest_dir(out_dir)?,
        report,
    };
    let path = out_dir.join(RUN_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

/// One frame of a frame set.
pub struct FrameOut {
    pub cloud: PointCloud,
    pub pose: Option<PoseSE3>,
    pub timestamp: f64,
}

/// Writes frames as `velodyne/NNNNNN.bin` and `labels/NNNNNN.label` plus a
/// `manifest.json` readable by [`Sequence::load`]. Optional PLY dumps go
/// to `ply/NNNNNN.ply`.
pub fn write_frame_set(
    dir: &Path,
    sensor: &str,
    frames: &[FrameOut],
    dynamic_instance_ids: &std::collections::BTreeSet<u32>,
    dump_ply: bool,
) -> Result<PathBuf> {
    for sub in ["velodyne", "labels"] {
        std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.display()))?;
    }
    if dump_ply {
        std::fs::create_dir_all(dir.join("ply"))?;
    }
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let points = PathBuf::from(format!("velodyne/{i:06}.bin"));
        let labels = PathBuf::from(format!("labels/{i:06}.label"));
        write_kitti_frame(&f.cloud, &dir.join(&points), &dir.join(&labels))?;
        if dump_ply {
            write_ply(&cloud_as_mesh(&f.cloud), &dir.join(format!("ply/{i:06}.ply")))?;
        }
        entries.push(FrameEntry {
            points,
            labels: Some(labels),
            pose: f.pose,
            timestamp: f.timestamp,
            dynamic_instance_ids: Default::default(),
        });
    }
    let manifest = SequenceManifest {
        sensor: sensor.to_string(),
        intensity_divisor: 1.0,
        dynamic_instance_ids: dynamic_instance_ids.clone(),
        dynamic_classes: Some(Default::default()),
        frames: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// A point cloud as a triangle-free mesh, for PLY inspection dumps.
pub fn cloud_as_mesh(cloud: &PointCloud) -> LabeledMesh {
    LabeledMesh {
        vertices: cloud
            .iter()
            .map(|p| [p.position.x as f32, p.position.y as f32, p.position.z as f32])
            .collect(),
        triangles: Vec::new(),
        semantic_class: cloud.iter().map(|p| p.semantic_class).collect(),
        instance_id: cloud.iter().map(|p| p.instance_id).collect(),
        intensity: cloud.iter().map(|p| p.intensity).collect(),
    }
}

/// Loads every frame of a sequence, in order and in parallel.
pub fn load_all(seq: &Sequence) -> Result<Vec<PointCloud>> {
    use rayon::prelude::*;
    (0..seq.len())
        .into_par_iter()
        .map(|i| seq.load_frame(i).map_err(anyhow::Error::from))
        .collect()
}
