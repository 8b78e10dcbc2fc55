//! Range images: one return per (channel, column) cell.
//!
//! Cells keep the donor point verbatim so that range competition between
//! clouds selects points without modifying them.

use crate::point::{PointCloud, SemanticPoint};
use crate::sensor::SensorModel;

/// Sentinel range of an empty cell. Serialized files use 0 instead.
pub const INVALID_RANGE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCell {
    /// Range in meters, or [`INVALID_RANGE`].
    pub range: f64,
    pub point: SemanticPoint,
    /// Index of the donor point in the cloud the image was built from.
    pub source_index: u32,
}

impl RangeCell {
    const EMPTY: RangeCell = RangeCell {
        range: INVALID_RANGE,
        point: SemanticPoint {
            position: nalgebra::Point3::new(0.0, 0.0, 0.0),
            intensity: 0.0,
            semantic_class: 0,
            instance_id: 0,
            confidence: 0.0,
            source: crate::point::SourceTag::Unknown,
        },
        source_index: u32::MAX,
    };

    pub fn is_valid(&self) -> bool {
        self.range >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    rows: usize,
    cols: usize,
    cells: Vec<RangeCell>,
}

/// Result of projecting a cloud into a range image.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub image: RangeImage,
    /// Points that fell outside the sensor's view.
    pub dropped: usize,
    /// Points that lost the per-cell range competition.
    pub occluded: usize,
}

impl RangeImage {
    pub fn empty(rows: usize, cols: usize) -> Self {
        RangeImage {
            rows,
            cols,
            cells: vec![RangeCell::EMPTY; rows * cols],
        }
    }

    pub fn for_sensor(sensor: &SensorModel) -> Self {
        RangeImage::empty(sensor.rows(), sensor.columns())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell(&self, row: usize, col: usize) -> &RangeCell {
        &self.cells[self.index(row, col)]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&RangeCell> {
        let c = self.cell(row, col);
        c.is_valid().then_some(c)
    }

    pub fn cells(&self) -> &[RangeCell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [RangeCell] {
        &mut self.cells
    }

    /// Offers a candidate to a cell; the nearer return wins and ties keep
    /// the incumbent. Returns true if the candidate was stored.
    pub fn offer(&mut self, row: usize, col: usize, candidate: RangeCell) -> bool {
        let idx = self.index(row, col);
        let cur = &mut self.cells[idx];
        if !cur.is_valid() || candidate.range < cur.range {
            *cur = candidate;
            true
        } else {
            false
        }
    }

    /// Overwrites a cell unconditionally.
    pub fn set(&mut self, row: usize, col: usize, cell: RangeCell) {
        let idx = self.index(row, col);
        self.cells[idx] = cell;
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        let idx = self.index(row, col);
        self.cells[idx] = RangeCell::EMPTY;
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_valid()).count()
    }

    /// Valid cells as `(row, col, cell)` in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, &RangeCell)> {
        let cols = self.cols;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_valid())
            .map(move |(i, c)| (i / cols, i % cols, c))
    }

    /// Donor points of all valid cells, row-major.
    pub fn to_cloud(&self) -> PointCloud {
        PointCloud::sensor(self.iter_valid().map(|(_, _, c)| c.point).collect())
    }

    /// Ranges with 0 for empty cells, row-major.
    pub fn ranges(&self) -> Vec<f32> {
        self.cells
            .iter()
            .map(|c| if c.is_valid() { c.range as f32 } else { 0.0 })
            .collect()
    }
}

/// Projects a sensor-frame cloud into the sensor's cells. Each point goes
/// to its cell; conflicts keep the smaller range (the earlier point on a
/// tie); out-of-view points are dropped and counted.
pub fn build_range_image(sensor: &SensorModel, cloud: &PointCloud) -> Projection {
    let mut image = RangeImage::for_sensor(sensor);
    let mut dropped = 0;
    let mut occluded = 0;
    for (i, p) in cloud.points.iter().enumerate() {
        match sensor.project_point(&p.position) {
            Ok(b) => {
                let cell = RangeCell {
                    range: b.range,
                    point: *p,
                    source_index: i as u32,
                };
                let was_valid = image.cell(b.row, b.col).is_valid();
                if image.offer(b.row, b.col, cell) {
                    if was_valid {
                        occluded += 1;
                    }
                } else {
                    occluded += 1;
                }
            }
            Err(_) => dropped += 1,
        }
    }
    Projection {
        image,
        dropped,
        occluded,
    }
}

/// `build_range_image` followed by flattening: at most one point per cell.
pub fn reproject(sensor: &SensorModel, cloud: &PointCloud) -> PointCloud {
    let mut out = build_range_image(sensor, cloud).image.to_cloud();
    out.frame = cloud.frame.clone();
    out
}
