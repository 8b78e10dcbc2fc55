//! Scene cloud to labelled mesh.

pub mod marching_cubes;
pub mod mc_tables;
pub mod mesh;
pub mod normals;
pub mod transfer;
pub mod tsdf;

use log::{debug, info};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::aggregate::SceneCloud;
use crate::error::{Error, Result};
use crate::range_image::build_range_image;
use crate::sensor::SensorModel;
use crate::spatial::PointIndex;

pub use marching_cubes::marching_cubes;
pub use mesh::{read_ply, write_ply, LabeledMesh};
pub use normals::estimate_normals;
pub use transfer::{transfer_attributes, AttributeTransferParams};
pub use tsdf::{TsdfParams, TsdfVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructParams {
    pub tsdf: TsdfParams,
    /// Neighbourhood size for normal estimation.
    pub normal_k: usize,
    pub transfer: AttributeTransferParams,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams {
            tsdf: TsdfParams::default(),
            normal_k: 12,
            transfer: AttributeTransferParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructStats {
    pub scene_points: usize,
    pub degenerate_normals: usize,
    pub integrated_cells: usize,
    pub observed_voxels: usize,
    pub vertices: usize,
    pub triangles: usize,
}

/// A surface reconstruction method.
pub trait SurfaceBackend {
    /// Builds an unlabelled surface from the scene and its per-point normals.
    fn surface(
        &self,
        scene: &SceneCloud,
        normals: &[Option<Vector3<f64>>],
        stats: &mut ReconstructStats,
    ) -> Result<LabeledMesh>;
}

/// TSDF fusion of the per-scan range images followed by marching cubes.
pub struct TsdfBackend<'a> {
    pub sensor: &'a SensorModel,
    pub params: TsdfParams,
}

impl SurfaceBackend for TsdfBackend<'_> {
    fn surface(
        &self,
        scene: &SceneCloud,
        normals: &[Option<Vector3<f64>>],
        stats: &mut ReconstructStats,
    ) -> Result<LabeledMesh> {
        let clock = std::time::Instant::now();
        let mut vol = TsdfVolume::new(self.params)?;
        for scan in &scene.scans {
            let range = scan.points();
            let to_sensor = scan.sensor_pose.inverse();
            let local = to_sensor.apply(&crate::point::PointCloud::sensor(
                scene.cloud.points[range.clone()].to_vec(),
            ));
            let image = build_range_image(self.sensor, &local).image;
            let st = vol.integrate_frame(self.sensor, &scan.sensor_pose, &image, Some(&normals[range]));
            stats.integrated_cells += st.cells - st.skipped_degenerate;
        }
        stats.observed_voxels = vol.observed_voxels();
        debug!(
            "integrated {} scans into {} voxels ({:.1?})",
            scene.scans.len(),
            stats.observed_voxels,
            clock.elapsed()
        );
        Ok(marching_cubes(&vol))
    }
}

/// Normals, surface, then attribute transfer.
pub fn reconstruct_with(
    backend: &dyn SurfaceBackend,
    scene: &SceneCloud,
    params: &ReconstructParams,
) -> Result<(LabeledMesh, ReconstructStats)> {
    if scene.is_empty() {
        return Err(Error::invalid("reconstruct", "scene cloud is empty"));
    }
    let mut stats = ReconstructStats {
        scene_points: scene.len(),
        ..Default::default()
    };
    let clock = std::time::Instant::now();
    let positions = scene.cloud.positions();
    let index = PointIndex::new(&positions);
    debug!("index built in {:.1?}", clock.elapsed());
    let normals =
        normals::estimate_normals_with_index(&index, &positions, params.normal_k, &scene.viewpoints())?;
    stats.degenerate_normals = normals.iter().filter(|n| n.is_none()).count();
    info!(
        "normals: {} points, {} degenerate ({:.1?})",
        positions.len(),
        stats.degenerate_normals,
        clock.elapsed()
    );
    drop(positions);
    let surface = backend.surface(scene, &normals, &mut stats)?;
    drop(normals);
    info!(
        "surface: {} vertices, {} triangles ({:.1?})",
        surface.vertices.len(),
        surface.triangles.len(),
        clock.elapsed()
    );
    let mesh = transfer::transfer_attributes_with_index(&surface, &scene.cloud, &index, &params.transfer)?;
    debug!("attributes transferred ({:.1?})", clock.elapsed());
    stats.vertices = mesh.vertices.len();
    stats.triangles = mesh.triangles.len();
    Ok((mesh, stats))
}

pub fn reconstruct(
    scene: &SceneCloud,
    sensor: &SensorModel,
    params: &ReconstructParams,
) -> Result<(LabeledMesh, ReconstructStats)> {
    let backend = TsdfBackend {
        sensor,
        params: params.tsdf,
    };
    reconstruct_with(&backend, scene, params)
}
