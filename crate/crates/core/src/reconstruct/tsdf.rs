//! Sparse truncated signed distance volume.
//!
//! Grid point `i` sits at world position `i · voxel_size`. Storage is a hash
//! of 8³ blocks allocated on first touch, so only the band around observed
//! surfaces costs memory.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseSE3;
use crate::range_image::RangeImage;
use crate::sensor::SensorModel;

pub const BLOCK_EDGE: i32 = 8;
const BLOCK_VOXELS: usize = (BLOCK_EDGE * BLOCK_EDGE * BLOCK_EDGE) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsdfParams {
    pub voxel_size: f64,
    pub truncation: f64,
    /// Half-thickness of the slab updated around each measurement. At most
    /// `truncation`.
    pub band: f64,
    /// Lateral footprint of a measurement, as a multiple of the beam
    /// spacing at its range, clamped to `[1, 3]` voxels.
    pub footprint_scale: f64,
}

impl Default for TsdfParams {
    fn default() -> Self {
        TsdfParams {
            voxel_size: 0.1,
            truncation: 0.3,
            band: 0.2,
            footprint_scale: 0.75,
        }
    }
}

impl TsdfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.voxel_size > 0.0
            && self.truncation > 0.0
            && self.band > 0.0
            && self.band <= self.truncation
            && self.footprint_scale >= 0.0;
        if !ok {
            return Err(Error::invalid(
                "tsdf params",
                format!("{self:?}: need voxel_size, truncation > 0 and 0 < band <= truncation"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Block {
    sdf: [f64; BLOCK_VOXELS],
    weight: [f32; BLOCK_VOXELS],
}

impl Block {
    fn new() -> Box<Block> {
        Box::new(Block {
            sdf: [0.0; BLOCK_VOXELS],
            weight: [0.0; BLOCK_VOXELS],
        })
    }
}

fn split(idx: [i32; 3]) -> ([i32; 3], usize) {
    let key = [
        idx[0].div_euclid(BLOCK_EDGE),
        idx[1].div_euclid(BLOCK_EDGE),
        idx[2].div_euclid(BLOCK_EDGE),
    ];
    let l = [
        idx[0].rem_euclid(BLOCK_EDGE),
        idx[1].rem_euclid(BLOCK_EDGE),
        idx[2].rem_euclid(BLOCK_EDGE),
    ];
    (key, ((l[2] * BLOCK_EDGE + l[1]) * BLOCK_EDGE + l[0]) as usize)
}

#[derive(Clone)]
pub struct TsdfVolume {
    params: TsdfParams,
    blocks: HashMap<[i32; 3], Box<Block>>,
}

/// Per-frame integration statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub cells: usize,
    pub skipped_degenerate: usize,
    pub voxel_updates: usize,
}

impl TsdfVolume {
    pub fn new(params: TsdfParams) -> Result<Self> {
        params.validate()?;
        Ok(TsdfVolume {
            params,
            blocks: HashMap::new(),
        })
    }

    pub fn params(&self) -> &TsdfParams {
        &self.params
    }

    pub fn voxel_size(&self) -> f64 {
        self.params.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.params.truncation
    }

    pub fn position(&self, idx: [i32; 3]) -> Point3<f64> {
        let v = self.params.voxel_size;
        Point3::new(idx[0] as f64 * v, idx[1] as f64 * v, idx[2] as f64 * v)
    }

    /// Nearest grid index of a world position.
    pub fn index_of(&self, p: &Point3<f64>) -> [i32; 3] {
        let v = self.params.voxel_size;
        [
            (p.x / v).round() as i32,
            (p.y / v).round() as i32,
            (p.z / v).round() as i32,
        ]
    }

    /// `(sdf, weight)` of an observed voxel.
    pub fn get(&self, idx: [i32; 3]) -> Option<(f64, f32)> {
        let (key, i) = split(idx);
        let b = self.blocks.get(&key)?;
        (b.weight[i] > 0.0).then(|| (b.sdf[i], b.weight[i]))
    }

    /// Folds one observation into a voxel: running average with unit
    /// weight, clamped to `±truncation`. Observations behind the surface
    /// beyond the truncation distance are ignored.
    pub fn update(&mut self, idx: [i32; 3], d: f64) -> bool {
        let t = self.params.truncation;
        if d < -t || !d.is_finite() {
            return false;
        }
        let d = d.min(t);
        let (key, i) = split(idx);
        let b = self.blocks.entry(key).or_insert_with(Block::new);
        let w = b.weight[i] as f64;
        b.sdf[i] = (b.sdf[i] * w + d) / (w + 1.0);
        b.weight[i] += 1.0;
        true
    }

    /// Block keys in sorted order.
    pub fn block_keys(&self) -> Vec<[i32; 3]> {
        let mut k: Vec<[i32; 3]> = self.blocks.keys().copied().collect();
        k.sort_unstable();
        k
    }

    pub fn observed_voxels(&self) -> usize {
        self.blocks
            .values()
            .map(|b| b.weight.iter().filter(|w| **w > 0.0).count())
            .sum()
    }

    /// All observed voxels as `(index, sdf, weight)`, sorted by index.
    pub fn voxels(&self) -> Vec<([i32; 3], f64, f32)> {
        let mut out = Vec::new();
        for key in self.block_keys() {
            let b = &self.blocks[&key];
            for z in 0..BLOCK_EDGE {
                for y in 0..BLOCK_EDGE {
                    for x in 0..BLOCK_EDGE {
                        let i = ((z * BLOCK_EDGE + y) * BLOCK_EDGE + x) as usize;
                        if b.weight[i] > 0.0 {
                            let idx = [
                                key[0] * BLOCK_EDGE + x,
                                key[1] * BLOCK_EDGE + y,
                                key[2] * BLOCK_EDGE + z,
                            ];
                            out.push((idx, b.sdf[i], b.weight[i]));
                        }
                    }
                }
            }
        }
        out.sort_unstable_by_key(|v| v.0);
        out
    }

    /// Smallest and largest observed grid index (the volume's origin and
    /// extent), or `None` when nothing was observed.
    pub fn bounds(&self) -> Option<([i32; 3], [i32; 3])> {
        let v = self.voxels();
        let first = v.first()?.0;
        let (mut lo, mut hi) = (first, first);
        for (idx, _, _) in &v {
            for a in 0..3 {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
        Some((lo, hi))
    }

    /// Integrates one range image taken from `sensor_pose` (sensor in the
    /// world frame).
    ///
    /// With `normals` (world frame, indexed by each cell's `source_index`)
    /// a measurement updates the voxels of a slab `|n·(v − p)| <= band`
    /// around its point with the point-to-plane distance, over a lateral
    /// footprint matching the beam spacing; cells with a degenerate normal
    /// are skipped. Without normals the voxels along the beam get the
    /// projective distance `measured_range − |v − origin|`.
    pub fn integrate_frame(
        &mut self,
        sensor: &SensorModel,
        sensor_pose: &PoseSE3,
        image: &RangeImage,
        normals: Option<&[Option<Vector3<f64>>]>,
    ) -> IntegrationStats {
        let mut stats = IntegrationStats::default();
        let origin = Point3::from(*sensor_pose.translation());
        let az_step = sensor.azimuth_step_deg().to_radians();
        for (row, _col, cell) in image.iter_valid() {
            stats.cells += 1;
            let p = sensor_pose.transform_point(&cell.point.position);
            match normals {
                Some(ns) => {
                    let Some(n) = ns.get(cell.source_index as usize).copied().flatten() else {
                        stats.skipped_degenerate += 1;
                        continue;
                    };
                    let gap = sensor
                        .gap_above_deg(row)
                        .max(sensor.gap_below_deg(row))
                        .to_radians();
                    let spacing = cell.range * az_step.max(gap);
                    let v = self.params.voxel_size;
                    let radius = (self.params.footprint_scale * spacing).clamp(v, 3.0 * v);
                    stats.voxel_updates += self.splat_plane(&p, &n, radius);
                }
                None => {
                    stats.voxel_updates += self.splat_beam(&origin, &p, cell.range);
                }
            }
        }
        stats
    }

    fn splat_plane(&mut self, p: &Point3<f64>, n: &Vector3<f64>, radius: f64) -> usize {
        let v = self.params.voxel_size;
        let band = self.params.band;
        let c = n.iamax();
        let (a, b) = ((c + 1) % 3, (c + 2) % 3);
        let nc = n[c];
        let range = |axis: usize| {
            let lo = ((p[axis] - radius) / v).ceil() as i32;
            let hi = ((p[axis] + radius) / v).floor() as i32;
            lo..=hi
        };
        let mut count = 0;
        for ia in range(a) {
            let xa = ia as f64 * v - p[a];
            for ib in range(b) {
                let xb = ib as f64 * v - p[b];
                let base = n[a] * xa + n[b] * xb;
                // n·(x − p) = t  ⇒  x_c − p_c = (t − base) / n_c
                let e0 = (-band - base) / nc;
                let e1 = (band - base) / nc;
                let lo = ((p[c] + e0.min(e1)) / v).ceil() as i32;
                let hi = ((p[c] + e0.max(e1)) / v).floor() as i32;
                for ic in lo..=hi {
                    let xc = ic as f64 * v - p[c];
                    let d = base + nc * xc;
                    let mut idx = [0; 3];
                    idx[a] = ia;
                    idx[b] = ib;
                    idx[c] = ic;
                    if self.update(idx, d) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    fn splat_beam(&mut self, origin: &Point3<f64>, p: &Point3<f64>, range: f64) -> usize {
        let v = self.params.voxel_size;
        let band = self.params.band;
        let dir = (p - origin).normalize();
        let steps = (2.0 * band / (0.25 * v)).ceil() as i32;
        let mut last = None;
        let mut count = 0;
        for s in 0..=steps {
            let t = -band + 2.0 * band * s as f64 / steps as f64;
            let idx = self.index_of(&(p + dir * t));
            if last == Some(idx) {
                continue;
            }
            last = Some(idx);
            let d = range - (self.position(idx) - origin).norm();
            if d.abs() <= band + 0.5 * v * 3f64.sqrt() && self.update(idx, d) {
                count += 1;
            }
        }
        count
    }
}
