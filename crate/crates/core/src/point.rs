//! Labeled lidar points and point clouds.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which pipeline stage a point came from. Carried through range-image
/// competition so mixed frames keep per-point provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum SourceTag {
    #[default]
    Unknown = 0,
    Generated = 1,
    Real = 2,
    Injected = 3,
}

impl SourceTag {
    pub fn from_u8(v: u8) -> SourceTag {
        match v {
            1 => SourceTag::Generated,
            2 => SourceTag::Real,
            3 => SourceTag::Injected,
            _ => SourceTag::Unknown,
        }
    }
}

/// One labeled lidar return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoint {
    pub position: Point3<f64>,
    /// Reflectance, normalized to `[0, 1]`.
    pub intensity: f32,
    pub semantic_class: u32,
    /// 0 means "no instance".
    pub instance_id: u32,
    /// Label confidence in `[0, 1]`; 1.0 for ground truth.
    pub confidence: f32,
    pub source: SourceTag,
}

impl SemanticPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        SemanticPoint {
            position: Point3::new(x, y, z),
            intensity: 0.0,
            semantic_class: 0,
            instance_id: 0,
            confidence: 1.0,
            source: SourceTag::Unknown,
        }
    }

    pub fn with_labels(mut self, semantic_class: u32, instance_id: u32) -> Self {
        self.semantic_class = semantic_class;
        self.instance_id = instance_id;
        self
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn with_confidence(mut self, confidence: f32) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn with_source(mut self, source: SourceTag) -> Self {
        self.source = source;
        self
    }

    pub fn range(&self) -> f64 {
        self.position.coords.norm()
    }

    /// Equality on everything except the provenance tag, comparing floats
    /// by bit pattern.
    pub fn bit_eq(&self, other: &SemanticPoint) -> bool {
        self.position.x.to_bits() == other.position.x.to_bits()
            && self.position.y.to_bits() == other.position.y.to_bits()
            && self.position.z.to_bits() == other.position.z.to_bits()
            && self.intensity.to_bits() == other.intensity.to_bits()
            && self.confidence.to_bits() == other.confidence.to_bits()
            && self.semantic_class == other.semantic_class
            && self.instance_id == other.instance_id
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.position;
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::invalid("point", format!("non-finite coordinates {p:?}")));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::invalid(
                "point",
                format!("intensity {} outside [0, 1]", self.intensity),
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(
                "point",
                format!("confidence {} outside [0, 1]", self.confidence),
            ));
        }
        Ok(())
    }
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CloudFrame {
    /// Sensor frame, optionally tagged with the sensor model name.
    #[default]
    Sensor,
    SensorNamed(String),
    World,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<SemanticPoint>,
    pub frame: CloudFrame,
}

impl PointCloud {
    pub fn new(points: Vec<SemanticPoint>, frame: CloudFrame) -> Self {
        PointCloud { points, frame }
    }

    pub fn sensor(points: Vec<SemanticPoint>) -> Self {
        PointCloud::new(points, CloudFrame::Sensor)
    }

    pub fn world(points: Vec<SemanticPoint>) -> Self {
        PointCloud::new(points, CloudFrame::World)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SemanticPoint> {
        self.points.iter()
    }

    pub fn validate(&self) -> Result<()> {
        self.points.iter().try_for_each(SemanticPoint::validate)
    }

    pub fn set_source(&mut self, source: SourceTag) {
        for p in &mut self.points {
            p.source = source;
        }
    }

    pub fn max_instance_id(&self) -> u32 {
        self.points.iter().map(|p| p.instance_id).max().unwrap_or(0)
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p.position.x, p.position.y, p.position.z])
            .collect()
    }
}

impl FromIterator<SemanticPoint> for PointCloud {
    fn from_iter<I: IntoIterator<Item = SemanticPoint>>(iter: I) -> Self {
        PointCloud::sensor(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_points() {
        assert!(SemanticPoint::new(1.0, 2.0, 3.0).validate().is_ok());
        assert!(SemanticPoint::new(f64::NAN, 0.0, 0.0).validate().is_err());
        assert!(SemanticPoint::new(0.0, f64::INFINITY, 0.0).validate().is_err());
        assert!(SemanticPoint::new(0.0, 0.0, 0.0)
            .with_intensity(1.5)
            .validate()
            .is_err());
        assert!(SemanticPoint::new(0.0, 0.0, 0.0)
            .with_confidence(-0.1)
            .validate()
            .is_err());
    }

    #[test]
    fn bit_eq_ignores_source_tag() {
        let a = SemanticPoint::new(1.0, 2.0, 3.0).with_labels(4, 5);
        let b = a.with_source(SourceTag::Real);
        assert!(a.bit_eq(&b));
        let c = SemanticPoint::new(1.0, 2.0, 3.0 + 1e-15).with_labels(4, 5);
        assert!(!a.bit_eq(&c));
    }
}
