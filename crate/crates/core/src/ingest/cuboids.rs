//! Cuboid annotations and detections, one JSON object per line:
//!
//! ```text
//! {"frame": 3, "center": [10.0, 0.0, 0.9], "size": [4.0, 2.0, 1.5], "yaw": 1.57,
//!  "class": 1, "instance": 12, "score": 0.8}
//! ```
//!
//! `frame`, `center`, `size`, `yaw` and `class` are mandatory. `instance`
//! defaults to 0 and `score` to 1.0 (ground truth).

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub center: Vector3<f64>,
    /// (length along heading, width, height).
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub semantic_class: u32,
    pub instance_id: u32,
    pub score: f64,
}

impl Cuboid {
    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid(
                "cuboid",
                format!("size components must be > 0, got {:?}", self.size.as_slice()),
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(
                "cuboid",
                format!("score {} outside [0, 1]", self.score),
            ));
        }
        if !(self.center.iter().all(|v| v.is_finite()) && self.yaw.is_finite()) {
            return Err(Error::invalid("cuboid", "non-finite center or yaw"));
        }
        Ok(())
    }

    /// Expresses a point in cuboid-local coordinates: `R_yawᵀ (p − center)`.
    pub fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p.coords - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn to_sensor(&self, local: &Vector3<f64>) -> Point3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(
            c * local.x - s * local.y + self.center.x,
            s * local.x + c * local.y + self.center.y,
            local.z + self.center.z,
        )
    }

    /// Component-wise `|local| <= size / 2`.
    pub fn contains_local(&self, local: &Vector3<f64>) -> bool {
        let h = self.size * 0.5;
        local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.contains_local(&self.to_local(p))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuboidRecord {
    pub frame: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: u32,
    #[serde(default)]
    pub instance: u32,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    1.0
}

impl CuboidRecord {
    pub fn from_cuboid(frame: usize, c: &Cuboid) -> Self {
        CuboidRecord {
            frame,
            center: c.center.into(),
            size: c.size.into(),
            yaw: c.yaw,
            class: c.semantic_class,
            instance: c.instance_id,
            score: c.score,
        }
    }

    pub fn to_cuboid(&self) -> Cuboid {
        Cuboid {
            center: Vector3::from(self.center),
            size: Vector3::from(self.size),
            yaw: self.yaw,
            semantic_class: self.class,
            instance_id: self.instance,
            score: self.score,
        }
    }
}

pub fn parse_cuboids(text: &str) -> Result<Vec<(usize, Cuboid)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CuboidRecord = serde_json::from_str(line).map_err(|e| Error::Json {
            context: format!("cuboid line {}", i + 1),
            source: e,
        })?;
        let c = rec.to_cuboid();
        c.validate().map_err(|e| Error::invalid("cuboid", format!("line {}: {e}", i + 1)))?;
        out.push((rec.frame, c));
    }
    Ok(out)
}

pub fn read_cuboids(path: &Path) -> Result<Vec<(usize, Cuboid)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cuboids(&text)
}

pub fn format_cuboids(cuboids: &[(usize, Cuboid)]) -> String {
    let mut out = String::new();
    for (f, c) in cuboids {
        out.push_str(&serde_json::to_string(&CuboidRecord::from_cuboid(*f, c)).unwrap());
        out.push('\n');
    }
    out
}
