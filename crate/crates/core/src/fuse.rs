//! Mixing generated and real frames by per-cell range competition, and the
//! pseudo-label confidence filter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{CloudFrame, PointCloud, SourceTag};
use crate::range_image::{build_range_image, RangeCell};
use crate::sensor::SensorModel;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f32 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    pub confidence_threshold: f32,
    /// Tag given to generated donors that carry no tag yet.
    pub generated_tag: SourceTag,
    /// Tag given to every real donor.
    pub real_tag: SourceTag,
    pub pairing_seed: u64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            generated_tag: SourceTag::Generated,
            real_tag: SourceTag::Real,
            pairing_seed: 0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid(
                "fusion params",
                format!("confidence threshold {} outside [0, 1]", self.confidence_threshold),
            ));
        }
        Ok(())
    }
}

/// Keeps exactly the points with `confidence >= threshold`, in order.
pub fn filter_pseudo(cloud: &PointCloud, threshold: f32) -> PointCloud {
    PointCloud::new(
        cloud.iter().filter(|p| p.confidence >= threshold).copied().collect(),
        cloud.frame.clone(),
    )
}

fn check_frame(cloud: &PointCloud, sensor: &SensorModel, role: &str) -> Result<()> {
    match &cloud.frame {
        CloudFrame::World => Err(Error::SensorMismatch(format!(
            "{role} frame is in world coordinates, expected sensor '{}'",
            sensor.name()
        ))),
        CloudFrame::SensorNamed(name) if name != sensor.name() => Err(Error::SensorMismatch(format!(
            "{role} frame was recorded by '{name}', fusing for '{}'",
            sensor.name()
        ))),
        _ => Ok(()),
    }
}

/// Per cell, the nearer of the generated and the real return; a lone valid
/// return is kept, equal ranges keep the generated point. Donor points are
/// copied verbatim except for the provenance tag.
pub fn fuse_frames(
    gen: &PointCloud,
    real: &PointCloud,
    sensor: &SensorModel,
    params: &FusionParams,
) -> Result<PointCloud> {
    params.validate()?;
    check_frame(gen, sensor, "generated")?;
    check_frame(real, sensor, "real")?;
    let mut image = build_range_image(sensor, gen).image;
    for cell in image.cells_mut() {
        if cell.is_valid() && cell.point.source == SourceTag::Unknown {
            cell.point.source = params.generated_tag;
        }
    }
    let real_image = build_range_image(sensor, real).image;
    for (r, c, cell) in real_image.iter_valid() {
        let mut point = cell.point;
        point.source = params.real_tag;
        image.offer(
            r,
            c,
            RangeCell {
                point,
                ..*cell
            },
        );
    }
    let mut out = image.to_cloud();
    out.frame = CloudFrame::SensorNamed(sensor.name().to_string());
    Ok(out)
}

/// Real frame index for each generated frame, drawn uniformly with `seed`.
pub fn pair_frames(generated: usize, real: usize, seed: u64) -> Result<Vec<usize>> {
    if generated == 0 || real == 0 {
        return Err(Error::invalid(
            "mixed dataset",
            format!("empty pool ({generated} generated, {real} real frames)"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..generated).map(|_| rng.gen_range(0..real)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MixedSource {
    Fused { generated: usize, real: usize },
    Real { real: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedManifest {
    pub sensor: String,
    pub params: FusionParams,
    /// Provenance of output frame `i`.
    pub frames: Vec<MixedSource>,
}

/// Fuses every generated frame with a seeded uniformly drawn real frame,
/// then appends the real pool unchanged. Output frame count is
/// `gen.len() + real.len()`.
pub fn build_mixed_dataset(
    gen: &[PointCloud],
    real: &[PointCloud],
    sensor: &SensorModel,
    params: &FusionParams,
) -> Result<(Vec<PointCloud>, MixedManifest)> {
    use rayon::prelude::*;
    let pairing = pair_frames(gen.len(), real.len(), params.pairing_seed)?;
    let mut frames: Vec<PointCloud> = gen
        .par_iter()
        .zip(pairing.par_iter())
        .map(|(g, &r)| fuse_frames(g, &real[r], sensor, params))
        .collect::<Result<_>>()?;
    let mut sources: Vec<MixedSource> = pairing
        .iter()
        .enumerate()
        .map(|(g, &r)| MixedSource::Fused { generated: g, real: r })
        .collect();
    for (i, r) in real.iter().enumerate() {
        frames.push(r.clone());
        sources.push(MixedSource::Real { real: i });
    }
    Ok((
        frames,
        MixedManifest {
            sensor: sensor.name().to_string(),
            params: *params,
            frames: sources,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SemanticPoint;
    use crate::pose::PoseSE3;
    use crate::range_image::reproject;

    fn sensor() -> SensorModel {
        SensorModel::new(
            "t",
            vec![5.0, 0.0, -5.0],
            [-180.0, 180.0],
            36,
            [0.5, 100.0],
            PoseSE3::identity(),
        )
        .unwrap()
    }

    fn beam_point(s: &SensorModel, r: usize, c: usize, range: f64, class: u32) -> SemanticPoint {
        let v = s.backproject(r, c, range).unwrap();
        SemanticPoint::new(v.x, v.y, v.z).with_labels(class, 0)
    }

    #[test]
    fn pseudo_threshold_boundary() {
        let cloud = PointCloud::sensor(vec![
            SemanticPoint::new(1.0, 0.0, 0.0).with_confidence(0.9),
            SemanticPoint::new(2.0, 0.0, 0.0).with_confidence(0.84),
            SemanticPoint::new(3.0, 0.0, 0.0).with_confidence(0.85),
        ]);
        let kept = filter_pseudo(&cloud, 0.85);
        assert_eq!(kept.points, vec![cloud.points[0], cloud.points[2]]);
        assert_eq!(filter_pseudo(&cloud, 0.0), cloud);
        assert!(filter_pseudo(&cloud, 1.0).is_empty());
    }

    #[test]
    fn nearer_real_point_wins() {
        let s = sensor();
        let gen = PointCloud::sensor(vec![beam_point(&s, 1, 3, 7.0, 1)]);
        let real = PointCloud::sensor(vec![beam_point(&s, 1, 3, 4.0, 2)]);
        let out = fuse_frames(&gen, &real, &s, &FusionParams::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.points[0].semantic_class, 2);
        assert_eq!(out.points[0].source, SourceTag::Real);
        assert!(out.points[0].bit_eq(&real.points[0]));
    }

    #[test]
    fn empty_real_is_projection() {
        let s = sensor();
        let gen = PointCloud::sensor(vec![beam_point(&s, 0, 0, 3.0, 1), beam_point(&s, 0, 0, 5.0, 1)]);
        let out = fuse_frames(&gen, &PointCloud::default(), &s, &FusionParams::default()).unwrap();
        let proj = reproject(&s, &gen);
        assert_eq!(out.len(), proj.len());
        assert!(out.points.iter().zip(&proj.points).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn sensor_mismatch_is_an_error() {
        let s = sensor();
        let mut gen = PointCloud::sensor(vec![]);
        gen.frame = CloudFrame::SensorNamed("other".into());
        assert!(matches!(
            fuse_frames(&gen, &PointCloud::default(), &s, &FusionParams::default()),
            Err(Error::SensorMismatch(_))
        ));
        assert!(fuse_frames(&PointCloud::default(), &PointCloud::world(vec![]), &s, &FusionParams::default()).is_err());
    }

    #[test]
    fn mixed_dataset_counts_and_determinism() {
        let s = sensor();
        let frame = |k: usize| PointCloud::sensor(vec![beam_point(&s, k % 3, k % 36, 2.0 + k as f64, 1)]);
        let gen: Vec<_> = (0..10).map(frame).collect();
        let real: Vec<_> = (0..2).map(|k| frame(k + 20)).collect();
        let p = FusionParams {
            pairing_seed: 5,
            ..Default::default()
        };
        let (a, ma) = build_mixed_dataset(&gen, &real, &s, &p).unwrap();
        let (b, mb) = build_mixed_dataset(&gen, &real, &s, &p).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(ma, mb);
        assert_eq!(a, b);
        let (one, _) = build_mixed_dataset(&gen[..1], &real[..1], &s, &p).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(pair_frames(200, 100, 1).unwrap().len() + 100, 300);
        assert!(pair_frames(0, 3, 0).is_err());
    }
}
