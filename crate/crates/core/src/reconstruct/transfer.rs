//! Mesh vertex labelling from the k nearest scene points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::LabeledMesh;
use crate::error::{Error, Result};
use crate::point::PointCloud;
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributeTransferParams {
    pub k: usize,
    /// Distance floor for inverse-distance weights, meters.
    pub epsilon: f64,
}

impl Default for AttributeTransferParams {
    fn default() -> Self {
        AttributeTransferParams { k: 10, epsilon: 1e-6 }
    }
}

/// One neighbour's contribution to a vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub semantic_class: u32,
    pub instance_id: u32,
    pub intensity: f32,
    pub distance: f64,
}

/// Most frequent value; ties go to the smallest.
pub fn mode(values: impl IntoIterator<Item = u32>) -> Option<u32> {
    let mut v: Vec<u32> = values.into_iter().collect();
    v.sort_unstable();
    let mut best: Option<(u32, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if best.is_none_or(|(_, c)| j - i > c) {
            best = Some((v[i], j - i));
        }
        i = j;
    }
    best.map(|b| b.0)
}

/// `Σ wᵢ·Iᵢ / Σ wᵢ` with `wᵢ = 1 / max(dᵢ, ε)`.
pub fn weighted_intensity(neigh: &[Neighbour], epsilon: f64) -> f32 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for n in neigh {
        let w = 1.0 / n.distance.max(epsilon);
        num += w * n.intensity as f64;
        den += w;
    }
    if den > 0.0 {
        (num / den) as f32
    } else {
        0.0
    }
}

/// `(class, instance, intensity)` for one vertex.
pub fn vote(neigh: &[Neighbour], epsilon: f64) -> (u32, u32, f32) {
    let class = mode(neigh.iter().map(|n| n.semantic_class)).unwrap_or(0);
    let inst = mode(neigh.iter().map(|n| n.instance_id)).unwrap_or(0);
    let mut inten = weighted_intensity(neigh, epsilon);
    // Keep the result inside the neighbours' hull despite rounding to f32.
    let lo = neigh.iter().map(|n| n.intensity).fold(f32::INFINITY, f32::min);
    let hi = neigh.iter().map(|n| n.intensity).fold(f32::NEG_INFINITY, f32::max);
    if lo <= hi {
        inten = inten.clamp(lo, hi);
    }
    (class, inst, inten)
}

pub fn transfer_attributes(
    mesh: &LabeledMesh,
    scene: &PointCloud,
    params: &AttributeTransferParams,
) -> Result<LabeledMesh> {
    if scene.is_empty() {
        return Err(Error::invalid("attribute transfer", "scene cloud is empty"));
    }
    let index = PointIndex::new(&scene.positions());
    transfer_attributes_with_index(mesh, scene, &index, params)
}

pub fn transfer_attributes_with_index(
    mesh: &LabeledMesh,
    scene: &PointCloud,
    index: &PointIndex,
    params: &AttributeTransferParams,
) -> Result<LabeledMesh> {
    if params.k == 0 {
        return Err(Error::invalid("attribute transfer", "k must be >= 1"));
    }
    if scene.is_empty() {
        return Err(Error::invalid("attribute transfer", "scene cloud is empty"));
    }
    let attrs: Vec<(u32, u32, f32)> = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let q = [v[0] as f64, v[1] as f64, v[2] as f64];
            let neigh: Vec<Neighbour> = index
                .knn(&q, params.k)
                .into_iter()
                .map(|(i, d)| {
                    let p = &scene.points[i];
                    Neighbour {
                        semantic_class: p.semantic_class,
                        instance_id: p.instance_id,
                        intensity: p.intensity,
                        distance: d,
                    }
                })
                .collect();
            vote(&neigh, params.epsilon)
        })
        .collect();
    let mut out = mesh.clone();
    out.semantic_class = attrs.iter().map(|a| a.0).collect();
    out.instance_id = attrs.iter().map(|a| a.1).collect();
    out.intensity = attrs.iter().map(|a| a.2).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SemanticPoint;

    fn n(class: u32, intensity: f32, distance: f64) -> Neighbour {
        Neighbour {
            semantic_class: class,
            instance_id: 0,
            intensity,
            distance,
        }
    }

    #[test]
    fn unanimous_and_majority() {
        let all4: Vec<_> = (0..10).map(|i| n(4, 0.1, 1.0 + i as f64)).collect();
        assert_eq!(vote(&all4, 1e-6).0, 4);
        let mut mixed: Vec<_> = (0..6).map(|_| n(1, 0.1, 1.0)).collect();
        mixed.extend((0..4).map(|_| n(2, 0.1, 0.1)));
        assert_eq!(vote(&mixed, 1e-6).0, 1);
    }

    #[test]
    fn tie_goes_to_smallest_id() {
        assert_eq!(mode([5, 3, 5, 3]), Some(3));
        assert_eq!(mode([]), None);
    }

    #[test]
    fn inverse_distance_intensity() {
        let v = vote(&[n(0, 0.2, 1.0), n(0, 0.8, 1.0)], 1e-6);
        assert!((v.2 - 0.5).abs() < 1e-7);
        // Coincident neighbour dominates through the epsilon floor.
        let v = vote(&[n(0, 0.2, 0.0), n(0, 0.8, 1.0)], 1e-6);
        assert!((v.2 - 0.2).abs() < 1e-5);
    }

    #[test]
    fn transfer_on_mesh() {
        let scene = PointCloud::world(vec![
            SemanticPoint::new(0.0, 0.0, 0.0).with_labels(3, 1).with_intensity(0.4),
            SemanticPoint::new(0.1, 0.0, 0.0).with_labels(3, 1).with_intensity(0.6),
            SemanticPoint::new(9.0, 0.0, 0.0).with_labels(7, 2).with_intensity(1.0),
        ]);
        let mesh = LabeledMesh::new(vec![[0.05, 0.0, 0.0], [9.0, 0.1, 0.0]], vec![]);
        let out = transfer_attributes(&mesh, &scene, &AttributeTransferParams { k: 2, epsilon: 1e-6 }).unwrap();
        assert_eq!(out.semantic_class, vec![3, 3]);
        assert!((out.intensity[0] - 0.5).abs() < 1e-6);
        assert!(transfer_attributes(&mesh, &PointCloud::default(), &Default::default()).is_err());
    }
}
