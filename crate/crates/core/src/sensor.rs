//! Lidar beam geometry and the spherical projection between Cartesian points
//! and (channel, column, range) cells.
//!
//! Channels are assigned by nearest elevation angle. A point above the top
//! channel or below the bottom channel is rejected once it is more than half
//! the local inter-channel gap away. Columns are floor-binned from the left
//! edge of the azimuth field of view; a direction that falls exactly on a
//! bin edge goes to the lower column.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::pose::PoseSE3;

const BUILTIN_CATALOG: &str = include_str!("../data/sensors.toml");

/// Beam layout of a rotating or directional lidar.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    name: String,
    elevation_deg: Vec<f64>,
    elevation_rad: Vec<f64>,
    /// `gaps_deg[i]` = elevation_deg[i] - elevation_deg[i + 1].
    gaps_deg: Vec<f64>,
    azimuth_fov_deg: [f64; 2],
    columns: usize,
    range_m: [f64; 2],
    mount: PoseSE3,
}

/// Why a point could not be assigned to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfView {
    Range,
    Azimuth,
    Elevation,
}

/// A point expressed in beam coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamCoord {
    pub row: usize,
    pub col: usize,
    pub range: f64,
}

impl SensorModel {
    pub fn new(
        name: impl Into<String>,
        elevation_deg: Vec<f64>,
        azimuth_fov_deg: [f64; 2],
        columns: usize,
        range_m: [f64; 2],
        mount: PoseSE3,
    ) -> Result<Self> {
        let name = name.into();
        if elevation_deg.is_empty() {
            return Err(Error::invalid("sensor", format!("{name}: no channels")));
        }
        for w in elevation_deg.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::invalid(
                    "sensor",
                    format!("{name}: elevations must be strictly decreasing"),
                ));
            }
        }
        if elevation_deg
            .iter()
            .any(|e| !e.is_finite() || *e <= -90.0 || *e >= 90.0)
        {
            return Err(Error::invalid(
                "sensor",
                format!("{name}: elevations must lie in (-90, 90)"),
            ));
        }
        if columns == 0 {
            return Err(Error::invalid("sensor", format!("{name}: columns must be >= 1")));
        }
        let [az_min, az_max] = azimuth_fov_deg;
        if !(az_min >= -180.0 && az_max <= 180.0 && az_min < az_max) {
            return Err(Error::invalid(
                "sensor",
                format!("{name}: azimuth FOV must satisfy -180 <= min < max <= 180"),
            ));
        }
        let [rmin, rmax] = range_m;
        if !(rmin > 0.0 && rmin < rmax && rmax.is_finite()) {
            return Err(Error::invalid(
                "sensor",
                format!("{name}: range limits must satisfy 0 < min < max"),
            ));
        }
        let elevation_rad = elevation_deg.iter().map(|e| e.to_radians()).collect();
        let gaps_deg = elevation_deg.windows(2).map(|w| w[0] - w[1]).collect();
        Ok(SensorModel {
            name,
            elevation_deg,
            elevation_rad,
            gaps_deg,
            azimuth_fov_deg,
            columns,
            range_m,
            mount,
        })
    }

    /// Evenly spaced channels from `top` down to `bottom` (inclusive).
    pub fn uniform_elevations(top: f64, bottom: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![top];
        }
        let step = (top - bottom) / (count - 1) as f64;
        (0..count).map(|i| top - step * i as f64).collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elevation_deg(&self) -> &[f64] {
        &self.elevation_deg
    }

    pub fn azimuth_fov_deg(&self) -> [f64; 2] {
        self.azimuth_fov_deg
    }

    pub fn range_m(&self) -> [f64; 2] {
        self.range_m
    }

    pub fn mount(&self) -> &PoseSE3 {
        &self.mount
    }

    pub fn with_mount(mut self, mount: PoseSE3) -> Self {
        self.mount = mount;
        self
    }

    pub fn with_range(mut self, range_m: [f64; 2]) -> Result<Self> {
        SensorModel::new(
            self.name.clone(),
            std::mem::take(&mut self.elevation_deg),
            self.azimuth_fov_deg,
            self.columns,
            range_m,
            self.mount,
        )
    }

    pub fn rows(&self) -> usize {
        self.elevation_deg.len()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn cell_count(&self) -> usize {
        self.rows() * self.columns
    }

    pub fn azimuth_step_deg(&self) -> f64 {
        (self.azimuth_fov_deg[1] - self.azimuth_fov_deg[0]) / self.columns as f64
    }

    pub fn is_full_circle(&self) -> bool {
        self.azimuth_fov_deg[1] - self.azimuth_fov_deg[0] >= 360.0 - 1e-9
    }

    /// Gap to the channel above `row` (towards smaller indices). The top
    /// channel borrows the gap below it; a single-channel sensor uses the
    /// azimuth step.
    pub fn gap_above_deg(&self, row: usize) -> f64 {
        if self.gaps_deg.is_empty() {
            return self.azimuth_step_deg();
        }
        if row == 0 {
            self.gaps_deg[0]
        } else {
            self.gaps_deg[row - 1]
        }
    }

    /// Gap to the channel below `row`. See [`gap_above_deg`](Self::gap_above_deg).
    pub fn gap_below_deg(&self, row: usize) -> f64 {
        if self.gaps_deg.is_empty() {
            return self.azimuth_step_deg();
        }
        if row >= self.gaps_deg.len() {
            self.gaps_deg[self.gaps_deg.len() - 1]
        } else {
            self.gaps_deg[row]
        }
    }

    /// Azimuth (degrees) of the center of column `col`.
    pub fn column_center_deg(&self, col: usize) -> f64 {
        self.azimuth_fov_deg[0] + (col as f64 + 0.5) * self.azimuth_step_deg()
    }

    /// Column for an azimuth in degrees, `None` outside the field of view.
    pub fn column_of(&self, azimuth_deg: f64) -> Option<usize> {
        let [az_min, az_max] = self.azimuth_fov_deg;
        if !self.is_full_circle() && (azimuth_deg < az_min || azimuth_deg > az_max) {
            return None;
        }
        let x = (azimuth_deg - az_min) / self.azimuth_step_deg();
        let mut col = x.floor();
        if col == x && col > 0.0 {
            col -= 1.0;
        }
        let col = (col.max(0.0) as usize).min(self.columns - 1);
        Some(col)
    }

    /// Channel for an elevation in degrees, `None` beyond channel coverage.
    pub fn row_of(&self, elevation_deg: f64) -> Option<usize> {
        let el = &self.elevation_deg;
        let last = el.len() - 1;
        if elevation_deg > el[0] {
            return (elevation_deg - el[0] <= 0.5 * self.gap_above_deg(0)).then_some(0);
        }
        if elevation_deg < el[last] {
            return (el[last] - elevation_deg <= 0.5 * self.gap_below_deg(last)).then_some(last);
        }
        // el is descending; find the first index whose angle is <= elevation.
        let idx = el.partition_point(|&e| e > elevation_deg);
        if idx == 0 {
            return Some(0);
        }
        let above = idx - 1;
        if idx > last {
            return Some(last);
        }
        let d_above = el[above] - elevation_deg;
        let d_below = elevation_deg - el[idx];
        // ties go to the lower index
        Some(if d_above <= d_below { above } else { idx })
    }

    /// Maps a point in the sensor frame to its cell.
    pub fn project(&self, p: &Vector3<f64>) -> std::result::Result<BeamCoord, OutOfView> {
        let range = p.norm();
        if !(range >= self.range_m[0] && range <= self.range_m[1]) {
            return Err(OutOfView::Range);
        }
        let azimuth = p.y.atan2(p.x).to_degrees();
        let col = self.column_of(azimuth).ok_or(OutOfView::Azimuth)?;
        let elevation = (p.z / range).clamp(-1.0, 1.0).asin().to_degrees();
        let row = self.row_of(elevation).ok_or(OutOfView::Elevation)?;
        Ok(BeamCoord { row, col, range })
    }

    pub fn project_point(&self, p: &Point3<f64>) -> std::result::Result<BeamCoord, OutOfView> {
        self.project(&p.coords)
    }

    /// Unit direction of beam `(row, col)` in the sensor frame.
    pub fn beam_direction(&self, row: usize, col: usize) -> Result<Vector3<f64>> {
        self.check_cell(row, col)?;
        Ok(direction(
            self.elevation_rad[row],
            self.column_center_deg(col).to_radians(),
        ))
    }

    /// Cartesian point at the channel elevation and column-center azimuth.
    pub fn backproject(&self, row: usize, col: usize, range: f64) -> Result<Vector3<f64>> {
        Ok(self.beam_direction(row, col)? * range)
    }

    pub fn check_cell(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows() || col >= self.columns {
            return Err(Error::CellOutOfRange {
                row,
                col,
                rows: self.rows(),
                cols: self.columns,
            });
        }
        Ok(())
    }

    pub fn in_range(&self, range: f64) -> bool {
        range >= self.range_m[0] && range <= self.range_m[1]
    }
}

/// Unit vector for elevation/azimuth in radians.
pub fn direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformSpec {
    top: f64,
    bottom: f64,
    count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    #[serde(default)]
    elevation_deg: Option<Vec<f64>>,
    #[serde(default)]
    elevation_uniform: Option<UniformSpec>,
    columns: usize,
    azimuth_fov_deg: [f64; 2],
    range_m: [f64; 2],
    #[serde(default)]
    mount: Option<[f64; 12]>,
}

/// Named sensor models, loaded from a TOML file with one table per sensor.
///
/// ```toml
/// [hdl64e]
/// elevation_uniform = { top = 2.0, bottom = -24.8, count = 64 }
/// columns = 2048
/// azimuth_fov_deg = [-180.0, 180.0]
/// range_m = [1.0, 120.0]
/// mount = [1, 0, 0, 0,  0, 1, 0, 0,  0, 0, 1, 1.73]
/// ```
///
/// Each table gives the channel elevations either explicitly
/// (`elevation_deg = [...]`, strictly decreasing) or as `elevation_uniform`.
/// `mount` is the 3×4 row-major sensor-to-vehicle transform.
#[derive(Debug, Clone, Default)]
pub struct SensorCatalog {
    sensors: BTreeMap<String, SensorModel>,
}

impl SensorCatalog {
    pub fn builtin() -> Self {
        SensorCatalog::parse(BUILTIN_CATALOG).expect("built-in sensor catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SensorCatalog::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, SensorSection> =
            toml::from_str(text).map_err(|e| Error::format("sensor catalog", e.to_string()))?;
        let mut sensors = BTreeMap::new();
        for (name, s) in raw {
            let elevations = match (s.elevation_deg, s.elevation_uniform) {
                (Some(list), None) => list,
                (None, Some(u)) => {
                    if u.count == 0 {
                        return Err(Error::invalid("sensor", format!("{name}: count must be >= 1")));
                    }
                    SensorModel::uniform_elevations(u.top, u.bottom, u.count)
                }
                _ => {
                    return Err(Error::format(
                        "sensor catalog",
                        format!("{name}: give exactly one of elevation_deg / elevation_uniform"),
                    ))
                }
            };
            let mount = match s.mount {
                Some(m) => PoseSE3::from_row_major(&m)?,
                None => PoseSE3::identity(),
            };
            let model = SensorModel::new(
                name.clone(),
                elevations,
                s.azimuth_fov_deg,
                s.columns,
                s.range_m,
                mount,
            )?;
            sensors.insert(name, model);
        }
        Ok(SensorCatalog { sensors })
    }

    pub fn get(&self, name: &str) -> Result<&SensorModel> {
        self.sensors
            .get(name)
            .ok_or_else(|| Error::UnknownSensor(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sensors.keys().map(String::as_str)
    }

    pub fn insert(&mut self, sensor: SensorModel) {
        self.sensors.insert(sensor.name().to_string(), sensor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_channel() -> SensorModel {
        SensorModel::new(
            "t3",
            vec![10.0, 0.0, -10.0],
            [-180.0, 180.0],
            360,
            [1.0, 100.0],
            PoseSE3::identity(),
        )
        .unwrap()
    }

    #[test]
    fn on_axis_point() {
        let s = three_channel();
        let b = s.project(&Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert_eq!(b.row, 1);
        assert_eq!(b.range, 10.0);
        // azimuth 0 sits on the edge between columns 179 and 180 -> lower
        assert_eq!(b.col, 179);
    }

    #[test]
    fn exact_channel_hit() {
        let s = three_channel();
        let e = 10f64.to_radians();
        let p = Vector3::new(20.0 * e.cos(), 0.0, 20.0 * e.sin());
        let b = s.project(&p).unwrap();
        assert_eq!(b.row, 0);
        assert!((b.range - 20.0).abs() < 1e-12);
    }

    #[test]
    fn beyond_max_range() {
        let s = three_channel();
        assert_eq!(
            s.project(&Vector3::new(150.0, 0.0, 0.0)),
            Err(OutOfView::Range)
        );
        assert_eq!(s.project(&Vector3::new(0.5, 0.0, 0.0)), Err(OutOfView::Range));
    }

    #[test]
    fn elevation_beyond_half_gap() {
        let s = three_channel();
        let at = |deg: f64| {
            let e = deg.to_radians();
            Vector3::new(10.0 * e.cos(), 0.0, 10.0 * e.sin())
        };
        assert_eq!(s.project(&at(14.9)).unwrap().row, 0);
        assert_eq!(s.project(&at(15.1)), Err(OutOfView::Elevation));
        assert_eq!(s.project(&at(-15.1)), Err(OutOfView::Elevation));
        // midway between channels -> lower index
        assert_eq!(s.project(&at(5.0)).unwrap().row, 0);
        assert_eq!(s.project(&at(4.9)).unwrap().row, 1);
    }

    #[test]
    fn directional_fov() {
        let s = SensorModel::new(
            "dir",
            vec![1.0, 0.0, -1.0],
            [-60.0, 60.0],
            120,
            [1.0, 300.0],
            PoseSE3::identity(),
        )
        .unwrap();
        assert!(s.project(&Vector3::new(10.0, 0.0, 0.0)).is_ok());
        assert_eq!(
            s.project(&Vector3::new(-10.0, 0.0, 0.0)),
            Err(OutOfView::Azimuth)
        );
        let edge = 60f64.to_radians();
        let b = s
            .project(&Vector3::new(10.0 * edge.cos(), 10.0 * edge.sin(), 0.0))
            .unwrap();
        assert_eq!(b.col, 119);
    }

    #[test]
    fn backproject_examples() {
        let s = SensorModel::new(
            "bp",
            vec![30.0, 0.0],
            [-180.0, 180.0],
            2,
            [0.5, 100.0],
            PoseSE3::identity(),
        )
        .unwrap();
        // with two columns, column 1 is centered on azimuth +90; column 0 on -90
        let p = s.backproject(1, 1, 5.0).unwrap();
        assert!((p - Vector3::new(0.0, 5.0, 0.0)).norm() < 1e-12);
        let s = SensorModel::new(
            "bp4",
            vec![30.0, 0.0],
            [-45.0, 45.0],
            1,
            [0.5, 100.0],
            PoseSE3::identity(),
        )
        .unwrap();
        let p = s.backproject(1, 0, 5.0).unwrap();
        assert!((p - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        // (2 cos 30°, 0, 2 sin 30°) = (1.7320508.., 0, 1)
        let p = s.backproject(0, 0, 2.0).unwrap();
        assert!((p - Vector3::new(3f64.sqrt(), 0.0, 1.0)).norm() < 1e-12);
        assert!(s.backproject(2, 0, 1.0).is_err());
        assert!(s.backproject(0, 1, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_models() {
        let id = PoseSE3::identity();
        assert!(SensorModel::new("a", vec![0.0, 1.0], [-180.0, 180.0], 10, [1.0, 2.0], id).is_err());
        assert!(SensorModel::new("a", vec![90.0], [-180.0, 180.0], 10, [1.0, 2.0], id).is_err());
        assert!(SensorModel::new("a", vec![0.0], [-180.0, 180.0], 0, [1.0, 2.0], id).is_err());
        assert!(SensorModel::new("a", vec![0.0], [-180.0, 180.0], 1, [0.0, 2.0], id).is_err());
        assert!(SensorModel::new("a", vec![0.0], [-180.0, 180.0], 1, [3.0, 2.0], id).is_err());
        assert!(SensorModel::new("a", vec![], [-180.0, 180.0], 1, [1.0, 2.0], id).is_err());
    }

    #[test]
    fn builtin_catalog_loads() {
        let cat = SensorCatalog::builtin();
        let hdl = cat.get("hdl64e").unwrap();
        assert_eq!(hdl.rows(), 64);
        assert!(cat.get("vlp32c").is_ok());
        assert!(cat.get("innoviz2").is_ok());
        assert!(cat.get("nope").is_err());
    }

    #[test]
    fn catalog_parse_errors() {
        let bad = "[x]\ncolumns = 10\nazimuth_fov_deg = [-180.0, 180.0]\nrange_m = [1.0, 2.0]\n";
        assert!(SensorCatalog::parse(bad).is_err());
        let unknown_key = "[x]\nelevation_deg=[0.0]\ncolumns = 10\nazimuth_fov_deg = [-180.0, 180.0]\nrange_m = [1.0, 2.0]\nfoo=1\n";
        assert!(SensorCatalog::parse(unknown_key).is_err());
    }

    fn catalog_sensor() -> impl Strategy<Value = SensorModel> {
        prop::sample::select(vec!["hdl64e", "vlp32c", "hdl32e", "innoviz2", "alphaprime"])
            .prop_map(|n| SensorCatalog::builtin().get(n).unwrap().clone())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn project_backproject_round_trip(
            s in catalog_sensor(),
            cells in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 160),
        ) {
            let [rmin, rmax] = s.range_m();
            for (a, b, c) in cells {
                let row = ((a * s.rows() as f64) as usize).min(s.rows() - 1);
                let col = ((b * s.columns() as f64) as usize).min(s.columns() - 1);
                let range = rmin + c * (rmax - rmin);
                let p = s.backproject(row, col, range).unwrap();
                let got = s.project(&p).unwrap();
                prop_assert_eq!((got.row, got.col), (row, col));
                prop_assert!((got.range - range).abs() < 1e-9);
            }
        }
    }
}
