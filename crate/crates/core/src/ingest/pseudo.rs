//! Pseudo-label files: packed little-endian `{u16 class, f32 confidence}`
//! records, one per point of the companion point file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::point::PointCloud;

pub const PSEUDO_RECORD_BYTES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub semantic_class: u16,
    pub confidence: f32,
}

pub fn decode_pseudo_labels(bytes: &[u8], point_count: usize) -> Result<Vec<PseudoLabel>> {
    if bytes.len() % PSEUDO_RECORD_BYTES != 0 {
        return Err(Error::format(
            "pseudo-label file",
            format!("{} bytes is not a multiple of {PSEUDO_RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / PSEUDO_RECORD_BYTES;
    if n != point_count {
        return Err(Error::CountMismatch {
            points: point_count,
            labels: n,
        });
    }
    Ok(bytes
        .chunks_exact(PSEUDO_RECORD_BYTES)
        .map(|r| PseudoLabel {
            semantic_class: u16::from_le_bytes([r[0], r[1]]),
            confidence: f32::from_le_bytes([r[2], r[3], r[4], r[5]]),
        })
        .collect())
}

pub fn encode_pseudo_labels(labels: &[PseudoLabel]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * PSEUDO_RECORD_BYTES);
    for l in labels {
        out.extend_from_slice(&l.semantic_class.to_le_bytes());
        out.extend_from_slice(&l.confidence.to_le_bytes());
    }
    out
}

pub fn read_pseudo_labels(path: &Path, point_count: usize) -> Result<Vec<PseudoLabel>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pseudo_labels(&bytes, point_count)
}

/// Overwrites class and confidence of each point with its pseudo label.
pub fn apply_pseudo_labels(cloud: &mut PointCloud, labels: &[PseudoLabel]) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(Error::CountMismatch {
            points: cloud.len(),
            labels: labels.len(),
        });
    }
    for (p, l) in cloud.points.iter_mut().zip(labels) {
        p.semantic_class = l.semantic_class as u32;
        p.confidence = l.confidence;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty() {
        assert!(decode_pseudo_labels(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn single_record() {
        let mut b = 3u16.to_le_bytes().to_vec();
        b.extend_from_slice(&0.9f32.to_le_bytes());
        let v = decode_pseudo_labels(&b, 1).unwrap();
        assert_eq!(
            v,
            vec![PseudoLabel {
                semantic_class: 3,
                confidence: 0.9
            }]
        );
        assert_eq!(encode_pseudo_labels(&v), b);
    }

    #[test]
    fn count_mismatch() {
        let b = vec![0u8; 12];
        assert!(matches!(
            decode_pseudo_labels(&b, 3),
            Err(Error::CountMismatch { points: 3, labels: 2 })
        ));
        assert!(decode_pseudo_labels(&b[..7], 1).is_err());
    }
}
