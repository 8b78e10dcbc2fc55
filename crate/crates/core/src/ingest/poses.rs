//! KITTI odometry pose files: one pose per line, 12 numbers forming the
//! row-major 3×4 matrix `[R | t]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::PoseSE3;

/// Rotations further than this from orthonormal are rejected; closer ones
/// are snapped to the nearest rotation.
pub const POSE_FILE_TOLERANCE: f64 = 1e-4;

pub fn parse_poses(text: &str) -> Result<Vec<PoseSE3>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(Error::PoseLine {
                line: line_no,
                detail: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let mut m = [0.0; 12];
        for (slot, f) in m.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|e| Error::PoseLine {
                line: line_no,
                detail: format!("'{f}': {e}"),
            })?;
        }
        let pose =
            PoseSE3::from_row_major_lenient(&m, POSE_FILE_TOLERANCE).map_err(|e| Error::PoseLine {
                line: line_no,
                detail: e.to_string(),
            })?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseSE3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

/// Formats poses with round-trippable float printing.
pub fn format_poses(poses: &[PoseSE3]) -> String {
    let mut out = String::new();
    for p in poses {
        let m = p.to_row_major();
        let line: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn identity_line() {
        let p = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(p, vec![PoseSE3::identity()]);
    }

    #[test]
    fn translation_only_line() {
        let p = parse_poses("1 0 0 4.5 0 1 0 -2 0 0 1 0.25").unwrap();
        assert_eq!(p[0], PoseSE3::from_translation(Vector3::new(4.5, -2.0, 0.25)));
    }

    #[test]
    fn short_line_reports_line_number() {
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
        match parse_poses(text) {
            Err(Error::PoseLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_non_rotation() {
        assert!(matches!(
            parse_poses("1 0 0 0 0 1 0 0 0 0 x 0"),
            Err(Error::PoseLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_poses("2 0 0 0 0 1 0 0 0 0 1 0"),
            Err(Error::PoseLine { line: 1, .. })
        ));
    }

    #[test]
    fn format_round_trip() {
        let poses = vec![
            PoseSE3::from_euler(0.01, -0.02, 1.3, Vector3::new(100.25, -3.5, 0.7)),
            PoseSE3::identity(),
        ];
        let back = parse_poses(&format_poses(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }
}
