//! Virtual lidar sampling: spherical depth rasterization of a labelled mesh
//! at a multiple of the target sensor's resolution, then subsampling to one
//! return per beam.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{CloudFrame, PointCloud, SemanticPoint, SourceTag};
use crate::pose::PoseSE3;
use crate::range_image::{RangeCell, RangeImage};
use crate::reconstruct::LabeledMesh;
use crate::sensor::SensorModel;

pub const DEFAULT_SUPERSAMPLING: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceParams {
    pub supersampling: usize,
    /// Virtual sensor pose in the world frame.
    pub virtual_pose: PoseSE3,
    /// Samples farther than this behind the nearest sample of a block are
    /// ignored when subsampling (2 × voxel size by default).
    pub bleed_band: f64,
    /// Triangles subtending more azimuth than this are rejected.
    pub max_azimuth_span_deg: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            supersampling: DEFAULT_SUPERSAMPLING,
            virtual_pose: PoseSE3::identity(),
            bleed_band: 0.2,
            max_azimuth_span_deg: 90.0,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        if self.supersampling == 0 {
            return Err(Error::invalid("trace params", "supersampling must be >= 1"));
        }
        if !(self.bleed_band >= 0.0) || !(self.max_azimuth_span_deg > 0.0) {
            return Err(Error::invalid("trace params", format!("{self:?}")));
        }
        Ok(())
    }

    pub fn with_pose(mut self, pose: PoseSE3) -> Self {
        self.virtual_pose = pose;
        self
    }
}

/// Angular sample positions of the supersampled grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub supersampling: usize,
    /// Elevation of each sample row, degrees, descending.
    pub elevation_deg: Vec<f64>,
    /// Azimuth of each sample column, degrees, ascending.
    pub azimuth_deg: Vec<f64>,
    azimuth_min: f64,
    azimuth_step: f64,
    full_circle: bool,
    max_row_spacing: f64,
    el_trig: Vec<(f64, f64)>,
    az_trig: Vec<(f64, f64)>,
}

impl SampleGrid {
    /// Channel `r` contributes elevations `el_r + o·gap` with offsets
    /// `o = ((ss−1)/2 − k)/ss`, using the gap above for positive offsets
    /// and below for negative ones. Columns are refined uniformly.
    pub fn new(sensor: &SensorModel, ss: usize) -> Self {
        let mut elevation_deg = Vec::with_capacity(sensor.rows() * ss);
        let mut max_row_spacing: f64 = 0.0;
        for (r, el) in sensor.elevation_deg().iter().enumerate() {
            for k in 0..ss {
                let o = ((ss as f64 - 1.0) / 2.0 - k as f64) / ss as f64;
                let gap = if o > 0.0 {
                    sensor.gap_above_deg(r)
                } else {
                    sensor.gap_below_deg(r)
                };
                max_row_spacing = max_row_spacing.max(gap / ss as f64);
                elevation_deg.push(el + o * gap);
            }
        }
        let step = sensor.azimuth_step_deg() / ss as f64;
        let az_min = sensor.azimuth_fov_deg()[0];
        let azimuth_deg: Vec<f64> = (0..sensor.columns() * ss)
            .map(|j| az_min + (j as f64 + 0.5) * step)
            .collect();
        let el_trig = elevation_deg.iter().map(|e| e.to_radians().sin_cos()).collect();
        let az_trig = azimuth_deg.iter().map(|a| a.to_radians().sin_cos()).collect();
        SampleGrid {
            supersampling: ss,
            elevation_deg,
            azimuth_deg,
            azimuth_min: az_min,
            azimuth_step: step,
            full_circle: sensor.is_full_circle(),
            max_row_spacing,
            el_trig,
            az_trig,
        }
    }

    pub fn rows(&self) -> usize {
        self.elevation_deg.len()
    }

    pub fn cols(&self) -> usize {
        self.azimuth_deg.len()
    }

    pub fn direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let (se, ce) = self.el_trig[row];
        let (sa, ca) = self.az_trig[col];
        Vector3::new(ce * ca, ce * sa, se)
    }

    /// Sample rows whose elevation lies in `[lo, hi]` (degrees).
    fn rows_between(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.elevation_deg.partition_point(|&e| e > hi);
        let end = self.elevation_deg.partition_point(|&e| e >= lo);
        start..end.max(start)
    }

    /// Sample columns whose azimuth lies in `[lo, hi]` (degrees).
    fn cols_between(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let n = self.cols() as i64;
        let a = ((lo - self.azimuth_min) / self.azimuth_step - 0.5).ceil() as i64;
        let b = ((hi - self.azimuth_min) / self.azimuth_step - 0.5).floor() as i64;
        let a = a.clamp(0, n);
        let b = (b + 1).clamp(0, n);
        a as usize..(b.max(a)) as usize
    }
}

/// Supersampled depth buffer: per sample the nearest range and the id of
/// the triangle that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    pub grid: SampleGrid,
    pub range: Vec<f64>,
    pub triangle: Vec<u32>,
    /// Supporting plane `(n, c)` with `n·x = c`, unit `n`, of every triangle
    /// that won at least one sample.
    pub planes: HashMap<u32, (Vector3<f64>, f64)>,
    /// Triangles rejected for subtending too much azimuth or touching the
    /// sensor origin.
    pub rejected: usize,
}

pub const NO_TRIANGLE: u32 = u32::MAX;

impl DepthBuffer {
    fn empty(grid: SampleGrid) -> Self {
        let n = grid.rows() * grid.cols();
        DepthBuffer {
            grid,
            range: vec![f64::INFINITY; n],
            triangle: vec![NO_TRIANGLE; n],
            planes: HashMap::new(),
            rejected: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<(f64, u32)> {
        let i = row * self.grid.cols() + col;
        (self.triangle[i] != NO_TRIANGLE).then(|| (self.range[i], self.triangle[i]))
    }

    pub fn valid_count(&self) -> usize {
        self.triangle.iter().filter(|t| **t != NO_TRIANGLE).count()
    }

    #[inline]
    fn offer(&mut self, i: usize, t: f64, tri: u32) {
        if t < self.range[i] || (t == self.range[i] && tri < self.triangle[i]) {
            self.range[i] = t;
            self.triangle[i] = tri;
        }
    }

    fn merge(&mut self, other: &DepthBuffer) {
        for i in 0..self.range.len() {
            if other.triangle[i] != NO_TRIANGLE {
                self.offer(i, other.range[i], other.triangle[i]);
            }
        }
        self.rejected += other.rejected;
    }
}

/// Mesh vertices in the virtual sensor frame.
pub fn vertices_in_sensor_frame(mesh: &LabeledMesh, virtual_pose: &PoseSE3) -> Vec<Vector3<f64>> {
    let inv = virtual_pose.inverse();
    mesh.vertices
        .iter()
        .map(|v| {
            inv.transform_point(&Point3::new(v[0] as f64, v[1] as f64, v[2] as f64))
                .coords
        })
        .collect()
}

pub fn rasterize_spherical(mesh: &LabeledMesh, sensor: &SensorModel, params: &TraceParams) -> Result<DepthBuffer> {
    params.validate()?;
    let verts = vertices_in_sensor_frame(mesh, &params.virtual_pose);
    Ok(rasterize_vertices(&verts, &mesh.triangles, sensor, params))
}

fn rasterize_vertices(
    verts: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    sensor: &SensorModel,
    params: &TraceParams,
) -> DepthBuffer {
    let mut buf = rasterize_triangles(verts, triangles, sensor, params);
    for &id in &buf.triangle {
        if id == NO_TRIANGLE || buf.planes.contains_key(&id) {
            continue;
        }
        let [a, b, c] = triangles[id as usize].map(|v| verts[v as usize]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            let n = n / len;
            buf.planes.insert(id, (n, n.dot(&a)));
        }
    }
    buf
}

fn rasterize_triangles(
    verts: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    sensor: &SensorModel,
    params: &TraceParams,
) -> DepthBuffer {
    let grid = SampleGrid::new(sensor, params.supersampling);
    let threads = rayon::current_num_threads().max(1);
    if threads == 1 || triangles.len() < 4096 {
        let mut buf = DepthBuffer::empty(grid);
        for (id, tri) in triangles.iter().enumerate() {
            raster_triangle(&mut buf, verts, *tri, id as u32, sensor, params);
        }
        return buf;
    }
    let chunk = triangles.len().div_ceil(threads);
    let parts: Vec<DepthBuffer> = triangles
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, tris)| {
            let mut buf = DepthBuffer::empty(grid.clone());
            for (k, tri) in tris.iter().enumerate() {
                raster_triangle(&mut buf, verts, *tri, (ci * chunk + k) as u32, sensor, params);
            }
            buf
        })
        .collect();
    let mut out = DepthBuffer::empty(grid);
    for p in &parts {
        out.merge(p);
    }
    out
}

fn raster_triangle(
    buf: &mut DepthBuffer,
    verts: &[Vector3<f64>],
    tri: [u32; 3],
    id: u32,
    sensor: &SensorModel,
    params: &TraceParams,
) {
    let [rmin, rmax] = sensor.range_m();
    let p = [verts[tri[0] as usize], verts[tri[1] as usize], verts[tri[2] as usize]];
    let r = [p[0].norm(), p[1].norm(), p[2].norm()];
    let longest = (p[1] - p[0]).norm().max((p[2] - p[1]).norm()).max((p[0] - p[2]).norm());
    let nearest = r[0].min(r[1]).min(r[2]);
    if nearest - longest > rmax || r[0].max(r[1]).max(r[2]) < rmin {
        return;
    }
    if nearest < 1e-9 {
        buf.rejected += 1;
        return;
    }
    // Azimuth interval, unwrapped across the ±180° seam.
    let mut az = [0.0f64; 3];
    for k in 0..3 {
        az[k] = p[k].y.atan2(p[k].x).to_degrees();
    }
    let (mut a0, mut a1) = (az[0].min(az[1]).min(az[2]), az[0].max(az[1]).max(az[2]));
    if a1 - a0 > 180.0 {
        for a in &mut az {
            if *a < 0.0 {
                *a += 360.0;
            }
        }
        a0 = az[0].min(az[1]).min(az[2]);
        a1 = az[0].max(az[1]).max(az[2]);
    }
    if a1 - a0 > params.max_azimuth_span_deg {
        buf.rejected += 1;
        return;
    }
    // Elevation interval; edges are sampled because a straight edge can
    // bulge in elevation between its endpoints.
    let (mut e0, mut e1) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..3 {
        let (u, v) = (p[k], p[(k + 1) % 3]);
        let ang = ((v - u).norm() / r[k].min(r[(k + 1) % 3])).to_degrees();
        let n = ((ang / 0.5).ceil() as usize).clamp(1, 64);
        for s in 0..n {
            let q = u + (v - u) * (s as f64 / n as f64);
            let el = (q.z / q.norm()).clamp(-1.0, 1.0).asin().to_degrees();
            e0 = e0.min(el);
            e1 = e1.max(el);
        }
    }
    let grid = &buf.grid;
    let el_pad = grid.max_row_spacing;
    let az_pad = grid.azimuth_step;
    let rows = grid.rows_between(e0 - el_pad, e1 + el_pad);
    if rows.is_empty() {
        return;
    }
    let mut col_ranges = vec![grid.cols_between(a0 - az_pad, a1 + az_pad)];
    if grid.full_circle && a1 + az_pad > 180.0 {
        col_ranges.push(grid.cols_between(a0 - az_pad - 360.0, a1 + az_pad - 360.0));
    }
    if grid.full_circle && a0 - az_pad < -180.0 {
        col_ranges.push(grid.cols_between(a0 - az_pad + 360.0, a1 + az_pad + 360.0));
    }
    // Möller–Trumbore with the ray origin at the sensor.
    let e1v = p[1] - p[0];
    let e2v = p[2] - p[0];
    let s = -p[0];
    let q = s.cross(&e1v);
    let cols = grid.cols();
    const EDGE_EPS: f64 = 1e-9;
    for cr in col_ranges {
        for row in rows.clone() {
            for col in cr.clone() {
                let d = buf.grid.direction(row, col);
                let pv = d.cross(&e2v);
                let det = e1v.dot(&pv);
                if det.abs() < 1e-15 {
                    continue;
                }
                let inv = 1.0 / det;
                let u = s.dot(&pv) * inv;
                if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
                    continue;
                }
                let v = d.dot(&q) * inv;
                if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
                    continue;
                }
                let t = e2v.dot(&q) * inv;
                if t < rmin || t > rmax {
                    continue;
                }
                buf.offer(row * cols + col, t, id);
            }
        }
    }
}

/// One return per beam from a depth buffer. A sample of the cell's block
/// is a candidate when it lies within `bleed_band` of the nearest sample,
/// measured either in raw range or along its own ray from the plane of the
/// nearest sample's triangle. The second test keeps samples on the same
/// surface eligible on grazing slopes, where range changes quickly across
/// the block, while background seen past a silhouette still drops out.
/// Among candidates the one angularly closest to the beam direction wins
/// (first in row-major order on ties). Cells hold the point on the exact
/// beam direction at that range; `source_index` is the hit triangle.
pub fn subsample_to_sensor(buf: &DepthBuffer, sensor: &SensorModel, params: &TraceParams) -> RangeImage {
    let ss = buf.grid.supersampling;
    let mut image = RangeImage::for_sensor(sensor);
    let cols = buf.grid.cols();
    for r in 0..sensor.rows() {
        for c in 0..sensor.columns() {
            let mut min = f64::INFINITY;
            let mut min_tri = NO_TRIANGLE;
            for i in 0..ss {
                for j in 0..ss {
                    let k = (r * ss + i) * cols + c * ss + j;
                    if buf.triangle[k] != NO_TRIANGLE && buf.range[k] < min {
                        min = buf.range[k];
                        min_tri = buf.triangle[k];
                    }
                }
            }
            if !min.is_finite() {
                continue;
            }
            let plane = buf.planes.get(&min_tri);
            let beam = sensor.beam_direction(r, c).expect("cell in range");
            let mut best: Option<(f64, usize)> = None;
            for i in 0..ss {
                for j in 0..ss {
                    let k = (r * ss + i) * cols + c * ss + j;
                    if buf.triangle[k] == NO_TRIANGLE {
                        continue;
                    }
                    let dir = buf.grid.direction(r * ss + i, c * ss + j);
                    let near = buf.range[k] <= min + params.bleed_band
                        || plane.is_some_and(|(n, off)| {
                            let t = off / n.dot(&dir);
                            t > 0.0 && buf.range[k] <= t + params.bleed_band
                        });
                    if !near {
                        continue;
                    }
                    let cos = dir.dot(&beam);
                    if best.is_none_or(|(b, _)| cos > b) {
                        best = Some((cos, k));
                    }
                }
            }
            let (_, k) = best.expect("block minimum is a candidate");
            let range = buf.range[k];
            let pos = beam * range;
            image.offer(
                r,
                c,
                RangeCell {
                    range,
                    point: SemanticPoint::new(pos.x, pos.y, pos.z).with_source(SourceTag::Generated),
                    source_index: buf.triangle[k],
                },
            );
        }
    }
    image
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub points: usize,
    pub rejected_triangles: usize,
}

/// Traces the mesh into the sensor's cells and labels every return from
/// the hit triangle's vertex nearest to the hit point. The range image's
/// `source_index` keeps the hit triangle.
pub fn trace_range_image(
    mesh: &LabeledMesh,
    sensor: &SensorModel,
    params: &TraceParams,
) -> Result<(RangeImage, TraceStats)> {
    params.validate()?;
    mesh.validate()?;
    let verts = vertices_in_sensor_frame(mesh, &params.virtual_pose);
    let buf = rasterize_vertices(&verts, &mesh.triangles, sensor, params);
    let mut image = subsample_to_sensor(&buf, sensor, params);
    let attrs = mesh.has_attributes();
    for row in 0..image.rows() {
        for col in 0..image.cols() {
            let Some(cell) = image.get(row, col).copied() else {
                continue;
            };
            let tri = mesh.triangles[cell.source_index as usize];
            let hit = cell.point.position.coords;
            let mut best = tri[0] as usize;
            let mut best_d = f64::INFINITY;
            for v in tri {
                let d = (verts[v as usize] - hit).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = v as usize;
                }
            }
            let mut p = cell.point;
            if attrs {
                p.semantic_class = mesh.semantic_class[best];
                p.instance_id = mesh.instance_id[best];
                p.intensity = mesh.intensity[best];
            }
            image.set(row, col, RangeCell { point: p, ..cell });
        }
    }
    let stats = TraceStats {
        points: image.valid_count(),
        rejected_triangles: buf.rejected,
    };
    Ok((image, stats))
}

/// [`trace_range_image`] flattened to a sensor-frame cloud, one point per
/// valid cell in row-major order.
pub fn trace_sensor(mesh: &LabeledMesh, sensor: &SensorModel, params: &TraceParams) -> Result<(PointCloud, TraceStats)> {
    let (image, stats) = trace_range_image(mesh, sensor, params)?;
    let mut cloud = image.to_cloud();
    cloud.frame = CloudFrame::SensorNamed(sensor.name().to_string());
    Ok((cloud, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::range_image::build_range_image;

    fn sensor() -> SensorModel {
        SensorModel::new(
            "grid",
            SensorModel::uniform_elevations(15.0, -15.0, 31),
            [-180.0, 180.0],
            720,
            [0.5, 100.0],
            PoseSE3::identity(),
        )
        .unwrap()
    }

    /// Quad at x = `x` spanning y, z in [-h, h], facing the origin.
    fn wall(x: f32, h: f32, class: u32) -> LabeledMesh {
        LabeledMesh {
            vertices: vec![[x, -h, -h], [x, h, -h], [x, h, h], [x, -h, h]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            semantic_class: vec![class; 4],
            instance_id: vec![0; 4],
            intensity: vec![0.5; 4],
        }
    }

    fn merge(a: &LabeledMesh, b: &LabeledMesh) -> LabeledMesh {
        let mut m = a.clone();
        let off = a.vertices.len() as u32;
        m.vertices.extend(&b.vertices);
        m.triangles
            .extend(b.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        m.semantic_class.extend(&b.semantic_class);
        m.instance_id.extend(&b.instance_id);
        m.intensity.extend(&b.intensity);
        m
    }

    #[test]
    fn empty_mesh_gives_nothing() {
        let s = sensor();
        let buf = rasterize_spherical(&LabeledMesh::default(), &s, &TraceParams::default()).unwrap();
        assert_eq!(buf.valid_count(), 0);
        let (cloud, _) = trace_sensor(&LabeledMesh::default(), &s, &TraceParams::default()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn wall_ranges_match_plane_intersection() {
        let s = sensor();
        let (img, _) = trace_range_image(&wall(10.0, 3.0, 7), &s, &TraceParams::default()).unwrap();
        assert!(img.valid_count() > 100);
        for (r, c, cell) in img.iter_valid() {
            let d = s.beam_direction(r, c).unwrap();
            let expected = 10.0 / d.x;
            let on_wall = d * expected;
            if on_wall.y.abs() > 2.9 || on_wall.z.abs() > 2.9 {
                // silhouette cell: an off-axis sample supplied the range
                continue;
            }
            assert!((cell.range - expected).abs() < 1e-6, "{} vs {expected}", cell.range);
            assert_eq!(cell.point.semantic_class, 7);
        }
    }

    #[test]
    fn nearer_wall_occludes() {
        let s = sensor();
        let mesh = merge(&wall(10.0, 3.0, 1), &wall(5.0, 1.0, 2));
        let buf = rasterize_spherical(&mesh, &s, &TraceParams::default()).unwrap();
        let g = &buf.grid;
        let mut both = 0;
        for row in 0..g.rows() {
            for col in 0..g.cols() {
                let d = g.direction(row, col);
                if d.x <= 0.0 {
                    continue;
                }
                let near = (5.0 / d.x * d).map(f64::abs);
                if near.y < 0.99 && near.z < 0.99 {
                    both += 1;
                    let (range, tri) = buf.get(row, col).unwrap();
                    assert!(tri >= 2, "far wall reported");
                    assert!((range - 5.0 / d.x).abs() < 1e-9);
                }
            }
        }
        assert!(both > 0);
    }

    #[test]
    fn seam_spanning_triangle_is_split() {
        let s = sensor();
        let mesh = wall(-10.0, 2.0, 3);
        let (img, stats) = trace_range_image(&mesh, &s, &TraceParams::default()).unwrap();
        assert_eq!(stats.rejected_triangles, 0);
        let cols: Vec<usize> = img.iter_valid().map(|(_, c, _)| c).collect();
        assert!(cols.iter().any(|&c| c < 10) && cols.iter().any(|&c| c > 710));
    }

    #[test]
    fn wide_triangle_is_rejected() {
        let s = sensor();
        let mesh = LabeledMesh::new(
            vec![[10.0, -1.0, 0.0], [-10.0, -1.0, 0.0], [0.0, 10.0, 0.0]],
            vec![[0, 1, 2]],
        );
        let buf = rasterize_spherical(&mesh, &s, &TraceParams::default()).unwrap();
        assert_eq!(buf.rejected, 1);
    }

    fn block_buffer(ranges: &[(usize, usize, f64)]) -> (DepthBuffer, SensorModel) {
        let s = sensor();
        let mut buf = DepthBuffer::empty(SampleGrid::new(&s, 3));
        let cols = buf.grid.cols();
        for &(i, j, r) in ranges {
            let k = (15 * 3 + i) * cols + 360 * 3 + j;
            buf.range[k] = r;
            buf.triangle[k] = 0;
        }
        (buf, s)
    }

    #[test]
    fn subsample_rules() {
        let all: Vec<_> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j, 10.0))).collect();
        let (buf, s) = block_buffer(&all);
        let img = subsample_to_sensor(&buf, &s, &TraceParams::default());
        assert_eq!(img.get(15, 360).unwrap().range, 10.0);

        let (buf, s) = block_buffer(&[(1, 1, 10.0), (0, 0, 50.0)]);
        let img = subsample_to_sensor(&buf, &s, &TraceParams::default());
        assert_eq!(img.get(15, 360).unwrap().range, 10.0);

        // Off-center samples only: the nearer band wins over the closer direction.
        let (buf, s) = block_buffer(&[(0, 1, 50.0), (2, 2, 10.0)]);
        let img = subsample_to_sensor(&buf, &s, &TraceParams::default());
        assert_eq!(img.get(15, 360).unwrap().range, 10.0);

        let (buf, s) = block_buffer(&[]);
        let img = subsample_to_sensor(&buf, &s, &TraceParams::default());
        assert!(img.get(15, 360).is_none());
    }

    #[test]
    fn output_reprojects_to_same_cells() {
        let s = sensor();
        let mesh = merge(&wall(10.0, 3.0, 1), &wall(-6.0, 2.0, 2));
        let (img, _) = trace_range_image(&mesh, &s, &TraceParams::default()).unwrap();
        let cloud = img.to_cloud();
        let re = build_range_image(&s, &cloud);
        assert_eq!(re.dropped + re.occluded, 0);
        for (a, b) in img.cells().iter().zip(re.image.cells()) {
            assert_eq!(a.is_valid(), b.is_valid());
        }
    }

    #[test]
    fn trace_is_deterministic_and_posed() {
        let s = sensor();
        let mesh = wall(10.0, 3.0, 1);
        let p = TraceParams::default().with_pose(PoseSE3::from_translation(Vector3::new(4.0, 0.0, 0.0)));
        let (a, _) = trace_sensor(&mesh, &s, &p).unwrap();
        let (b, _) = trace_sensor(&mesh, &s, &p).unwrap();
        assert_eq!(a, b);
        let min_range = a.iter().map(|q| q.range()).fold(f64::INFINITY, f64::min);
        assert!((min_range - 6.0).abs() < 0.01);
    }
}
