use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use lidartwin::reconstruct::{write_ply, LabeledMesh};
use lidartwin_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn cpath(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(lt_last_error_message()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn point(x: f64, y: f64, z: f64, class: u32) -> LtPoint {
    LtPoint {
        x,
        y,
        z,
        intensity: 0.5,
        semantic_class: class,
        instance_id: 0,
        confidence: 1.0,
    }
}

fn cloud_of(points: &[LtPoint]) -> *mut LtPointCloud {
    let cloud = lt_cloud_new();
    for p in points {
        assert_eq!(unsafe { lt_cloud_push(cloud, p) }, LtStatus::Ok);
    }
    cloud
}

fn points_of(cloud: *const LtPointCloud) -> Vec<LtPoint> {
    let n = unsafe { lt_cloud_len(cloud) };
    (0..n)
        .map(|i| {
            let mut p = point(0.0, 0.0, 0.0, 0);
            assert_eq!(unsafe { lt_cloud_get(cloud, i, &mut p) }, LtStatus::Ok);
            p
        })
        .collect()
}

fn load_sensor(name: &str) -> *mut LtSensor {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { lt_sensor_load(ptr::null(), c(name).as_ptr(), &mut s) }, LtStatus::Ok);
    s
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(lt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn sensor_lookup_and_errors() {
    let s = load_sensor("hdl64e");
    unsafe {
        assert_eq!(lt_sensor_rows(s), 64);
        assert_eq!(lt_sensor_columns(s), 2048);
        lt_sensor_free(s);
        assert_eq!(lt_sensor_rows(ptr::null()), 0);

        let mut out = ptr::null_mut();
        assert_eq!(lt_sensor_load(ptr::null(), c("nope").as_ptr(), &mut out), LtStatus::ErrInvalid);
        assert!(last_error().contains("nope"));
        assert_eq!(lt_sensor_load(ptr::null(), ptr::null(), &mut out), LtStatus::ErrNull);
        assert_eq!(
            lt_sensor_load(ptr::null(), c("hdl64e").as_ptr(), ptr::null_mut()),
            LtStatus::ErrNull
        );
    }
}

#[test]
fn success_clears_the_error_message() {
    let mut out = ptr::null_mut();
    unsafe {
        lt_sensor_load(ptr::null(), c("nope").as_ptr(), &mut out);
        assert!(!last_error().is_empty());
        let s = load_sensor("hdl32e");
        assert!(last_error().is_empty());
        lt_sensor_free(s);
    }
}

#[test]
fn invalid_points_are_rejected() {
    let cloud = lt_cloud_new();
    let mut bad = point(f64::NAN, 0.0, 0.0, 1);
    unsafe {
        assert_eq!(lt_cloud_push(cloud, &bad), LtStatus::ErrInvalid);
        bad.x = 1.0;
        assert_eq!(lt_cloud_push(cloud, &bad), LtStatus::Ok);
        let mut p = bad;
        assert_eq!(lt_cloud_get(cloud, 1, &mut p), LtStatus::ErrInvalid);
        lt_cloud_free(cloud);
    }
}

#[test]
fn kitti_round_trip_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("f.bin");
    let label = dir.path().join("f.label");
    let pts = vec![point(1.0, 2.0, 3.0, 7), point(-4.0, 0.5, 1.25, 9)];
    let cloud = cloud_of(&pts);
    unsafe {
        assert_eq!(lt_cloud_write_kitti(cloud, cpath(&bin).as_ptr(), cpath(&label).as_ptr()), LtStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(
            lt_cloud_read_kitti(cpath(&bin).as_ptr(), cpath(&label).as_ptr(), &mut back),
            LtStatus::Ok
        );
        let got = points_of(back);
        assert_eq!(got.len(), 2);
        for (a, b) in got.iter().zip(&pts) {
            assert_eq!((a.x, a.y, a.z, a.semantic_class), (b.x, b.y, b.z, b.semantic_class));
        }
        lt_cloud_free(back);

        let missing = dir.path().join("missing.bin");
        assert_eq!(
            lt_cloud_read_kitti(cpath(&missing).as_ptr(), ptr::null(), &mut back),
            LtStatus::ErrIo
        );
        std::fs::write(&bin, [0u8; 7]).unwrap();
        assert_eq!(lt_cloud_read_kitti(cpath(&bin).as_ptr(), ptr::null(), &mut back), LtStatus::ErrFormat);
        lt_cloud_free(cloud);
    }
}

#[test]
fn fuse_with_itself_is_reprojection() {
    let s = load_sensor("hdl32e");
    let cloud = cloud_of(&[
        point(10.0, 0.0, -1.0, 9),
        point(10.01, 0.0, -1.0, 7),
        point(0.0, 12.0, 0.5, 8),
    ]);
    unsafe {
        let mut fused = ptr::null_mut();
        let mut proj = ptr::null_mut();
        assert_eq!(lt_fuse(cloud, cloud, s, &mut fused), LtStatus::Ok);
        assert_eq!(lt_reproject(s, cloud, &mut proj), LtStatus::Ok);
        let (f, p) = (points_of(fused), points_of(proj));
        assert_eq!(f.len(), 2);
        assert_eq!(f, p);
        lt_cloud_free(fused);
        lt_cloud_free(proj);
        lt_cloud_free(cloud);
        lt_sensor_free(s);
    }
}

#[test]
fn pseudo_filter_boundary() {
    let mut pts = vec![point(1.0, 0.0, 0.0, 1); 3];
    pts[0].confidence = 0.85;
    pts[1].confidence = 0.849_999_9;
    pts[2].confidence = 0.9;
    let cloud = cloud_of(&pts);
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(lt_filter_pseudo(cloud, 0.85, &mut out), LtStatus::Ok);
        let kept: Vec<f32> = points_of(out).iter().map(|p| p.confidence).collect();
        assert_eq!(kept, vec![0.85, 0.9]);
        lt_cloud_free(out);
        assert_eq!(lt_filter_pseudo(cloud, 1.5, &mut out), LtStatus::ErrInvalid);
        lt_cloud_free(cloud);
    }
}

#[test]
fn score_hand_example() {
    let gt = [1u32, 1, 2, 2];
    let pred = [1u32, 2, 2, 2];
    let mut miou = 0.0;
    unsafe {
        let j = c("joint");
        assert_eq!(lt_score(gt.as_ptr(), pred.as_ptr(), 4, j.as_ptr(), j.as_ptr(), &mut miou), LtStatus::Ok);
        assert!((miou - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(lt_score(gt.as_ptr(), pred.as_ptr(), 0, j.as_ptr(), j.as_ptr(), &mut miou), LtStatus::ErrInvalid);
        assert_eq!(lt_score(ptr::null(), pred.as_ptr(), 4, j.as_ptr(), j.as_ptr(), &mut miou), LtStatus::ErrNull);
    }
}

/// Two triangles forming a labeled wall 10 m ahead.
fn wall_mesh(path: &Path) {
    let mut m = LabeledMesh::new(
        vec![[10.0, -5.0, -3.0], [10.0, 5.0, -3.0], [10.0, 5.0, 3.0], [10.0, -5.0, 3.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    m.semantic_class = vec![7; 4];
    m.instance_id = vec![0; 4];
    m.intensity = vec![0.3; 4];
    write_ply(&m, path).unwrap();
}

#[test]
fn mesh_read_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("wall.ply");
    wall_mesh(&ply);
    let s = load_sensor("hdl32e");
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(lt_mesh_read_ply(cpath(&ply).as_ptr(), &mut mesh), LtStatus::Ok);
        assert_eq!(lt_mesh_vertex_count(mesh), 4);
        assert_eq!(lt_mesh_triangle_count(mesh), 2);
        let mut traced = ptr::null_mut();
        assert_eq!(lt_trace(mesh, s, ptr::null(), 3, &mut traced), LtStatus::Ok);
        let pts = points_of(traced);
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| p.semantic_class == 7));
        // Cells straddling the wall's edge keep a sample range on the
        // cell-centre beam, so they sit slightly off the plane.
        let on_plane = pts.iter().filter(|p| (p.x - 10.0).abs() < 1e-6).count();
        assert!(on_plane as f64 >= 0.95 * pts.len() as f64);
        assert!(pts.iter().all(|p| (p.x - 10.0).abs() < 0.05));
        lt_cloud_free(traced);

        let copy = dir.path().join("copy.ply");
        assert_eq!(lt_mesh_write_ply(mesh, cpath(&copy).as_ptr()), LtStatus::Ok);
        assert_eq!(std::fs::read(&ply).unwrap(), std::fs::read(&copy).unwrap());

        let bad_pose = [2.0f64; 12];
        assert_eq!(lt_trace(mesh, s, bad_pose.as_ptr(), 3, &mut traced), LtStatus::ErrInvalid);
        assert_eq!(lt_trace(mesh, s, ptr::null(), 0, &mut traced), LtStatus::ErrInvalid);
        lt_mesh_free(mesh);
        lt_sensor_free(s);
    }
}

#[test]
fn pipeline_reports_missing_config() {
    let status = unsafe { lt_run_pipeline(c("/nonexistent/pipeline.toml").as_ptr()) };
    assert_eq!(status, LtStatus::ErrIo);
    assert!(last_error().contains("pipeline.toml"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lidartwin.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "lt_last_error_message",
        "lt_sensor_load",
        "lt_cloud_read_kitti",
        "lt_fuse",
        "lt_trace",
        "lt_score",
        "lt_run_pipeline",
        "LT_STATUS_ERR_PANIC = 5",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs a C program against the header and the static
/// library when a C compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; C link check not run");
        return;
    };
    let exe_dir = std::env::current_exe().unwrap();
    let profile_dir = exe_dir.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("liblidartwin_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "lidartwin.h"
int main(void) {
    LtSensor *s = NULL;
    if (lt_sensor_load(NULL, "hdl64e", &s) != LT_STATUS_OK) return 1;
    if (lt_sensor_rows(s) != 64) return 2;
    lt_sensor_free(s);
    if (lt_sensor_load(NULL, "missing", &s) != LT_STATUS_ERR_INVALID) return 3;
    if (strstr(lt_last_error_message(), "missing") == NULL) return 4;
    unsigned gt[4] = {1, 1, 2, 2}, pred[4] = {1, 2, 2, 2};
    double miou = 0.0;
    if (lt_score(gt, pred, 4, "joint", "joint", &miou) != LT_STATUS_OK) return 5;
    printf("%.6f\n", miou);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.583333");
}

fn which_cc() -> Result<PathBuf, ()> {
    for cand in ["cc", "gcc", "clang"] {
        if let Ok(out) = std::process::Command::new(cand).arg("--version").output() {
            if out.status.success() {
                return Ok(PathBuf::from(cand));
            }
        }
    }
    Err(())
}
