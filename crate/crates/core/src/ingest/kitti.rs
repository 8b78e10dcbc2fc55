//! SemanticKITTI point and label files.
//!
//! Points are packed little-endian `f32` quadruples `(x, y, z, intensity)`.
//! Labels are little-endian `u32`: the semantic class in the low 16 bits and
//! the instance id in the high 16 bits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::point::{PointCloud, SemanticPoint};

pub const POINT_RECORD_BYTES: usize = 16;
pub const LABEL_RECORD_BYTES: usize = 4;

pub fn pack_label(semantic_class: u32, instance_id: u32) -> Result<u32> {
    if semantic_class > 0xFFFF {
        return Err(Error::LabelOverflow {
            field: "semantic_class",
            value: semantic_class,
        });
    }
    if instance_id > 0xFFFF {
        return Err(Error::LabelOverflow {
            field: "instance_id",
            value: instance_id,
        });
    }
    Ok(semantic_class | (instance_id << 16))
}

pub fn unpack_label(label: u32) -> (u32, u32) {
    (label & 0xFFFF, label >> 16)
}

/// Parses a frame from in-memory file contents.
pub fn decode_frame(points: &[u8], labels: Option<&[u8]>) -> Result<PointCloud> {
    if points.len() % POINT_RECORD_BYTES != 0 {
        return Err(Error::format(
            "point file",
            format!(
                "{} bytes is not a multiple of {POINT_RECORD_BYTES}",
                points.len()
            ),
        ));
    }
    let n = points.len() / POINT_RECORD_BYTES;
    let labels = match labels {
        Some(bytes) => {
            if bytes.len() % LABEL_RECORD_BYTES != 0 {
                return Err(Error::format(
                    "label file",
                    format!("{} bytes is not a multiple of {LABEL_RECORD_BYTES}", bytes.len()),
                ));
            }
            let m = bytes.len() / LABEL_RECORD_BYTES;
            if m != n {
                return Err(Error::CountMismatch {
                    points: n,
                    labels: m,
                });
            }
            Some(bytes)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(n);
    for (i, rec) in points.chunks_exact(POINT_RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let (class, instance) = match labels {
            Some(l) => unpack_label(u32::from_le_bytes(
                l[4 * i..4 * i + 4].try_into().unwrap(),
            )),
            None => (0, 0),
        };
        out.push(SemanticPoint {
            position: nalgebra::Point3::new(f(0) as f64, f(1) as f64, f(2) as f64),
            intensity: f(3),
            semantic_class: class,
            instance_id: instance,
            confidence: 1.0,
            source: Default::default(),
        });
    }
    Ok(PointCloud::sensor(out))
}

/// Serializes a frame to `(point bytes, label bytes)`. Coordinates are
/// narrowed to `f32`.
pub fn encode_frame(cloud: &PointCloud) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut pts = Vec::with_capacity(cloud.len() * POINT_RECORD_BYTES);
    let mut lbl = Vec::with_capacity(cloud.len() * LABEL_RECORD_BYTES);
    for p in &cloud.points {
        let label = pack_label(p.semantic_class, p.instance_id)?;
        for v in [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.intensity,
        ] {
            pts.extend_from_slice(&v.to_le_bytes());
        }
        lbl.extend_from_slice(&label.to_le_bytes());
    }
    Ok((pts, lbl))
}

pub fn read_kitti_frame(point_file: &Path, label_file: Option<&Path>) -> Result<PointCloud> {
    let points = std::fs::read(point_file).map_err(|e| Error::io(point_file, e))?;
    let labels = match label_file {
        Some(p) => Some(std::fs::read(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    decode_frame(&points, labels.as_deref())
}

pub fn write_kitti_frame(cloud: &PointCloud, point_file: &Path, label_file: &Path) -> Result<()> {
    let (pts, lbl) = encode_frame(cloud)?;
    for (path, bytes) in [(point_file, &pts), (label_file, &lbl)] {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Label-only reader for evaluation.
pub fn read_labels(label_file: &Path) -> Result<Vec<u32>> {
    let bytes = std::fs::read(label_file).map_err(|e| Error::io(label_file, e))?;
    if bytes.len() % LABEL_RECORD_BYTES != 0 {
        return Err(Error::format(
            "label file",
            format!("{}: {} bytes", label_file.display(), bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_files_give_empty_cloud() {
        let c = decode_frame(&[], Some(&[])).unwrap();
        assert!(c.is_empty());
        let (p, l) = encode_frame(&c).unwrap();
        assert!(p.is_empty() && l.is_empty());
    }

    #[test]
    fn hand_packed_record() {
        let mut pts = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            pts.extend_from_slice(&v.to_le_bytes());
        }
        let lbl = 0x0005_0001u32.to_le_bytes();
        let c = decode_frame(&pts, Some(&lbl)).unwrap();
        let p = c.points[0];
        assert_eq!(
            (p.position.x, p.position.y, p.position.z),
            (1.0, 2.0, 3.0)
        );
        assert_eq!(p.intensity, 0.5);
        assert_eq!(p.semantic_class, 1);
        assert_eq!(p.instance_id, 5);
    }

    #[test]
    fn count_mismatch_and_truncation() {
        let pts = vec![0u8; 32];
        let lbl = vec![0u8; 4];
        assert!(matches!(
            decode_frame(&pts, Some(&lbl)),
            Err(Error::CountMismatch {
                points: 2,
                labels: 1
            })
        ));
        assert!(matches!(
            decode_frame(&pts[..20], None),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode_frame(&pts, Some(&lbl[..3])),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn missing_labels_default_to_zero() {
        let c = decode_frame(&[0u8; 16], None).unwrap();
        assert_eq!(c.points[0].semantic_class, 0);
        assert_eq!(c.points[0].instance_id, 0);
    }

    #[test]
    fn label_overflow() {
        let c = PointCloud::sensor(vec![SemanticPoint::new(0.0, 0.0, 0.0).with_labels(1, 70000)]);
        assert!(matches!(
            encode_frame(&c),
            Err(Error::LabelOverflow {
                field: "instance_id",
                value: 70000
            })
        ));
    }

    proptest! {
        #[test]
        // NaN coordinates are excluded: widening to f64 may quiet a signaling NaN.
        fn encode_decode_identity(
            recs in prop::collection::vec(
                (
                    prop::array::uniform3(any::<f32>().prop_filter("nan", |v| !v.is_nan())),
                    any::<f32>(),
                    0u32..0x10000,
                    0u32..0x10000,
                ),
                0..200,
            )
        ) {
            let cloud = PointCloud::sensor(recs.iter().map(|(v, inten, c, i)| {
                SemanticPoint {
                    position: nalgebra::Point3::new(v[0] as f64, v[1] as f64, v[2] as f64),
                    intensity: *inten,
                    semantic_class: *c,
                    instance_id: *i,
                    confidence: 1.0,
                    source: Default::default(),
                }
            }).collect());
            let (p, l) = encode_frame(&cloud).unwrap();
            let back = decode_frame(&p, Some(&l)).unwrap();
            prop_assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.points.iter().zip(&back.points) {
                prop_assert!(a.bit_eq(b));
            }
            let (p2, l2) = encode_frame(&back).unwrap();
            prop_assert_eq!(p, p2);
            prop_assert_eq!(l, l2);
        }
    }
}
