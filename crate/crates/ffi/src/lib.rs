//! C ABI over the lidartwin toolkit.
//!
//! Objects cross the boundary as opaque handles created by `lt_*_new`,
//! `lt_*_read*` or an operation, and released with the matching `lt_*_free`.
//! Every fallible function returns an [`LtStatus`]; on failure
//! [`lt_last_error_message`] describes the cause. Panics are caught and
//! reported as [`LtStatus::ErrPanic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lidartwin::eval::{score, ClassMap};
use lidartwin::fuse::{filter_pseudo, fuse_frames, FusionParams};
use lidartwin::ingest::{read_kitti_frame, write_kitti_frame};
use lidartwin::range_image::reproject;
use lidartwin::reconstruct::{read_ply, write_ply, LabeledMesh};
use lidartwin::trace::{trace_sensor, TraceParams};
use lidartwin::{Error, PointCloud, PoseSE3, SemanticPoint, SensorCatalog, SensorModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    ErrNull = 1,
    ErrIo = 2,
    /// Malformed file contents.
    ErrFormat = 3,
    /// Invalid argument or state.
    ErrInvalid = 4,
    /// A panic was caught at the boundary.
    ErrPanic = 5,
}

/// One point as seen from C.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f32,
    pub semantic_class: u32,
    pub instance_id: u32,
    pub confidence: f32,
}

pub struct LtPointCloud(PointCloud);
pub struct LtSensor(SensorModel);
pub struct LtMesh(LabeledMesh);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LtStatus {
    match e {
        Error::Io { .. } => LtStatus::ErrIo,
        Error::Format { .. }
        | Error::CountMismatch { .. }
        | Error::LabelOverflow { .. }
        | Error::PoseLine { .. }
        | Error::Json { .. } => LtStatus::ErrFormat,
        _ => LtStatus::ErrInvalid,
    }
}

struct Fail(LtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<anyhow::Error> for Fail {
    fn from(e: anyhow::Error) -> Self {
        let status = e
            .chain()
            .find_map(|c| {
                c.downcast_ref::<Error>().map(status_of).or_else(|| {
                    c.downcast_ref::<std::io::Error>().map(|_| LtStatus::ErrIo)
                })
            })
            .unwrap_or(LtStatus::ErrInvalid);
        Fail(status, format!("{e:#}"))
    }
}

fn null(what: &str) -> Fail {
    Fail(LtStatus::ErrNull, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LtStatus::ErrInvalid, msg.into())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LtStatus::ErrPanic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `lt_` call on the same thread.
#[no_mangle]
pub extern "C" fn lt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------- sensors

/// Looks up `name` in the built-in catalog, or in the catalog file at
/// `catalog_path` when it is not null.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_sensor_load(
    catalog_path: *const c_char,
    name: *const c_char,
    out: *mut *mut LtSensor,
) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let name = str_arg(name, "name")?;
        let catalog = if catalog_path.is_null() {
            SensorCatalog::builtin()
        } else {
            SensorCatalog::load(&PathBuf::from(str_arg(catalog_path, "catalog_path")?))?
        };
        *out = boxed(LtSensor(catalog.get(name)?.clone()));
        Ok(())
    })
}

/// # Safety
/// `sensor` must come from `lt_sensor_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_sensor_free(sensor: *mut LtSensor) {
    if !sensor.is_null() {
        drop(Box::from_raw(sensor));
    }
}

/// Channel count, or 0 for a null handle.
///
/// # Safety
/// `sensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_sensor_rows(sensor: *const LtSensor) -> usize {
    sensor.as_ref().map_or(0, |s| s.0.rows())
}

/// Azimuth columns, or 0 for a null handle.
///
/// # Safety
/// `sensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_sensor_columns(sensor: *const LtSensor) -> usize {
    sensor.as_ref().map_or(0, |s| s.0.columns())
}

// ----------------------------------------------------------------- clouds

/// A new empty sensor-frame cloud.
#[no_mangle]
pub extern "C" fn lt_cloud_new() -> *mut LtPointCloud {
    boxed(LtPointCloud(PointCloud::sensor(Vec::new())))
}

/// # Safety
/// `cloud` must be null or come from this library and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_free(cloud: *mut LtPointCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Point count, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_len(cloud: *const LtPointCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Appends a point after validating it.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_push(cloud: *mut LtPointCloud, point: *const LtPoint) -> LtStatus {
    guard(|| {
        let cloud = out_arg(cloud, "cloud")?;
        let p = ref_arg(point, "point")?;
        let sp = SemanticPoint::new(p.x, p.y, p.z)
            .with_labels(p.semantic_class, p.instance_id)
            .with_intensity(p.intensity)
            .with_confidence(p.confidence);
        sp.validate()?;
        cloud.0.points.push(sp);
        Ok(())
    })
}

/// Copies point `index` into `out`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_get(cloud: *const LtPointCloud, index: usize, out: *mut LtPoint) -> LtStatus {
    guard(|| {
        let cloud = ref_arg(cloud, "cloud")?;
        let out = out_arg(out, "out")?;
        let p = cloud
            .0
            .points
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} >= {}", cloud.0.len())))?;
        *out = LtPoint {
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            intensity: p.intensity,
            semantic_class: p.semantic_class,
            instance_id: p.instance_id,
            confidence: p.confidence,
        };
        Ok(())
    })
}

/// Reads a KITTI `.bin` frame and, when `label_path` is not null, its
/// `.label` file.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_read_kitti(
    point_path: *const c_char,
    label_path: *const c_char,
    out: *mut *mut LtPointCloud,
) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let points = PathBuf::from(str_arg(point_path, "point_path")?);
        let labels = if label_path.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(label_path, "label_path")?))
        };
        *out = boxed(LtPointCloud(read_kitti_frame(&points, labels.as_deref())?));
        Ok(())
    })
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_cloud_write_kitti(
    cloud: *const LtPointCloud,
    point_path: *const c_char,
    label_path: *const c_char,
) -> LtStatus {
    guard(|| {
        let cloud = ref_arg(cloud, "cloud")?;
        let points = PathBuf::from(str_arg(point_path, "point_path")?);
        let labels = PathBuf::from(str_arg(label_path, "label_path")?);
        write_kitti_frame(&cloud.0, &points, &labels)?;
        Ok(())
    })
}

/// One point per occupied cell of `sensor`, nearest wins.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_reproject(
    sensor: *const LtSensor,
    cloud: *const LtPointCloud,
    out: *mut *mut LtPointCloud,
) -> LtStatus {
    guard(|| {
        let s = ref_arg(sensor, "sensor")?;
        let c = ref_arg(cloud, "cloud")?;
        let out = out_arg(out, "out")?;
        *out = boxed(LtPointCloud(reproject(&s.0, &c.0)));
        Ok(())
    })
}

/// Per-cell nearest of a generated and a real frame.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_fuse(
    generated: *const LtPointCloud,
    real: *const LtPointCloud,
    sensor: *const LtSensor,
    out: *mut *mut LtPointCloud,
) -> LtStatus {
    guard(|| {
        let g = ref_arg(generated, "generated")?;
        let r = ref_arg(real, "real")?;
        let s = ref_arg(sensor, "sensor")?;
        let out = out_arg(out, "out")?;
        *out = boxed(LtPointCloud(fuse_frames(&g.0, &r.0, &s.0, &FusionParams::default())?));
        Ok(())
    })
}

/// Points with confidence at or above `threshold`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_filter_pseudo(
    cloud: *const LtPointCloud,
    threshold: f32,
    out: *mut *mut LtPointCloud,
) -> LtStatus {
    guard(|| {
        let c = ref_arg(cloud, "cloud")?;
        let out = out_arg(out, "out")?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        *out = boxed(LtPointCloud(filter_pseudo(&c.0, threshold)));
        Ok(())
    })
}

// ----------------------------------------------------------------- meshes

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_mesh_read_ply(path: *const c_char, out: *mut *mut LtMesh) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = boxed(LtMesh(read_ply(&path)?));
        Ok(())
    })
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lt_mesh_write_ply(mesh: *const LtMesh, path: *const c_char) -> LtStatus {
    guard(|| {
        let m = ref_arg(mesh, "mesh")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_ply(&m.0, &path)?;
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or come from this library and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_mesh_free(mesh: *mut LtMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_mesh_vertex_count(mesh: *const LtMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertices.len())
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_mesh_triangle_count(mesh: *const LtMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangles.len())
}

/// Traces `mesh` with `sensor` placed at `pose` (12 row-major numbers of the
/// 3x4 sensor-to-world matrix; identity when null).
///
/// # Safety
/// Pointers must be null or valid; `pose` must hold 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn lt_trace(
    mesh: *const LtMesh,
    sensor: *const LtSensor,
    pose: *const f64,
    supersampling: usize,
    out: *mut *mut LtPointCloud,
) -> LtStatus {
    guard(|| {
        let m = ref_arg(mesh, "mesh")?;
        let s = ref_arg(sensor, "sensor")?;
        let out = out_arg(out, "out")?;
        let pose = if pose.is_null() {
            PoseSE3::identity()
        } else {
            let mut rm = [0.0; 12];
            rm.copy_from_slice(std::slice::from_raw_parts(pose, 12));
            PoseSE3::from_row_major(&rm)?
        };
        let params = TraceParams {
            supersampling,
            ..TraceParams::default()
        }
        .with_pose(pose);
        *out = boxed(LtPointCloud(trace_sensor(&m.0, &s.0, &params)?.0));
        Ok(())
    })
}

// ------------------------------------------------------------------- eval

/// mIoU of `n` predicted labels against ground truth. Maps are built-in
/// names (`joint`, `semantickitti`, `nuscenes`) or map files.
///
/// # Safety
/// Label arrays must hold `n` values; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lt_score(
    gt: *const u32,
    pred: *const u32,
    n: usize,
    gt_map: *const c_char,
    pred_map: *const c_char,
    miou: *mut f64,
) -> LtStatus {
    guard(|| {
        if n > 0 && (gt.is_null() || pred.is_null()) {
            return Err(null("label array"));
        }
        let out = out_arg(miou, "miou")?;
        let (g, p) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(gt, n), std::slice::from_raw_parts(pred, n))
        };
        let mg = ClassMap::resolve(str_arg(gt_map, "gt_map")?)?;
        let mp = ClassMap::resolve(str_arg(pred_map, "pred_map")?)?;
        *out = score(g, p, &mg, &mp)?.miou;
        Ok(())
    })
}

// --------------------------------------------------------------- pipeline

/// Runs the whole pipeline described by a config file.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lt_run_pipeline(config_path: *const c_char) -> LtStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(config_path, "config_path")?);
        let cfg = lidartwin::app::PipelineConfig::load(&path)?;
        lidartwin::app::run_pipeline(&cfg)?;
        Ok(())
    })
}
