//! Iso-surface extraction from a sparse TSDF.

use std::collections::HashMap;

use nalgebra::Point3;
use rayon::prelude::*;

use super::mc_tables::{CORNERS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::mesh::LabeledMesh;
use super::tsdf::{TsdfVolume, BLOCK_EDGE};

/// A mesh vertex is identified by the grid edge it lies on: the lower grid
/// point and the axis of the edge.
type EdgeKey = ([i32; 3], u8);

/// Extracts the `sdf = 0` surface. A cube emits triangles only when all of
/// its corners are observed. Triangles wind counter-clockwise seen from the
/// positive (free-space) side.
pub fn marching_cubes(vol: &TsdfVolume) -> LabeledMesh {
    let keys = vol.block_keys();
    let parts: Vec<(Vec<(EdgeKey, [f64; 3])>, Vec<[EdgeKey; 3]>)> = keys
        .par_iter()
        .map(|key| polygonise_block(vol, *key))
        .collect();

    let mut verts: Vec<(EdgeKey, [f64; 3])> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
    verts.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    verts.dedup_by(|a, b| a.0 == b.0);
    let index: HashMap<EdgeKey, u32> = verts
        .iter()
        .enumerate()
        .map(|(i, v)| (v.0, i as u32))
        .collect();
    let mut triangles = Vec::new();
    for (_, tris) in &parts {
        for t in tris {
            triangles.push([index[&t[0]], index[&t[1]], index[&t[2]]]);
        }
    }
    LabeledMesh::new(
        verts
            .iter()
            .map(|v| [v.1[0] as f32, v.1[1] as f32, v.1[2] as f32])
            .collect(),
        triangles,
    )
}

fn polygonise_block(vol: &TsdfVolume, key: [i32; 3]) -> (Vec<(EdgeKey, [f64; 3])>, Vec<[EdgeKey; 3]>) {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for z in 0..BLOCK_EDGE {
        for y in 0..BLOCK_EDGE {
            for x in 0..BLOCK_EDGE {
                let base = [key[0] * BLOCK_EDGE + x, key[1] * BLOCK_EDGE + y, key[2] * BLOCK_EDGE + z];
                let mut vals = [0.0f64; 8];
                let mut complete = true;
                for (c, off) in CORNERS.iter().enumerate() {
                    match vol.get([base[0] + off[0], base[1] + off[1], base[2] + off[2]]) {
                        Some((s, _)) => vals[c] = s,
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if !complete {
                    continue;
                }
                let mut case = 0usize;
                for (c, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut edge_keys = [([0i32; 3], 0u8); 12];
                for (e, [c0, c1]) in EDGE_CORNERS.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = if CORNERS[*c0] < CORNERS[*c1] { (*c0, *c1) } else { (*c1, *c0) };
                    let axis = (0..3).find(|&a| CORNERS[lo][a] != CORNERS[hi][a]).unwrap() as u8;
                    let g = [base[0] + CORNERS[lo][0], base[1] + CORNERS[lo][1], base[2] + CORNERS[lo][2]];
                    let (s0, s1) = (vals[lo], vals[hi]);
                    let t = if s0 == s1 { 0.5 } else { s0 / (s0 - s1) };
                    let p0 = vol.position(g);
                    let mut p1 = p0;
                    p1[axis as usize] += vol.voxel_size();
                    let p: Point3<f64> = p0 + (p1 - p0) * t;
                    edge_keys[e] = (g, axis);
                    verts.push(((g, axis), [p.x, p.y, p.z]));
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let k = [
                        edge_keys[tri[0] as usize],
                        edge_keys[tri[2] as usize],
                        edge_keys[tri[1] as usize],
                    ];
                    tris.push(k);
                }
            }
        }
    }
    (verts, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::tsdf::TsdfParams;
    use nalgebra::Vector3;
    use std::collections::HashMap;

    fn volume_from(f: impl Fn(&Point3<f64>) -> f64, lo: i32, hi: i32, voxel: f64) -> TsdfVolume {
        let mut vol = TsdfVolume::new(TsdfParams {
            voxel_size: voxel,
            truncation: 1.0,
            band: 1.0,
            footprint_scale: 1.0,
        })
        .unwrap();
        for z in lo..=hi {
            for y in lo..=hi {
                for x in lo..=hi {
                    let p = vol.position([x, y, z]);
                    let d = f(&p);
                    if d.abs() <= 0.3 {
                        vol.update([x, y, z], d);
                    }
                }
            }
        }
        vol
    }

    #[test]
    fn uniform_positive_field_is_empty() {
        let vol = volume_from(|_| 0.2, -3, 3, 0.1);
        let m = marching_cubes(&vol);
        assert!(m.vertices.is_empty() && m.triangles.is_empty());
    }

    #[test]
    fn plane_vertices_lie_on_plane() {
        let vol = volume_from(|p| p.z - 0.237, -8, 8, 0.1);
        let m = marching_cubes(&vol);
        assert!(!m.triangles.is_empty());
        for v in &m.vertices {
            assert!((v[2] as f64 - 0.237).abs() < 0.05);
        }
    }

    #[test]
    fn small_sphere_is_closed_and_outward() {
        let r = 1.0;
        let vol = volume_from(|p| p.coords.norm() - r, -14, 14, 0.1);
        let m = marching_cubes(&vol);
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &m.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
            let p: Vec<Vector3<f64>> = t
                .iter()
                .map(|&i| {
                    let v = m.vertices[i as usize];
                    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
                })
                .collect();
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let c = (p[0] + p[1] + p[2]) / 3.0;
            assert!(n.dot(&c) >= 0.0, "inward-facing triangle");
        }
        assert!(edges.values().all(|&c| c == 2));
        let euler = m.vertices.len() as i64 - edges.len() as i64 + m.triangles.len() as i64;
        assert_eq!(euler, 2);
    }
}
