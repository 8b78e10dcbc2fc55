//! Per-point normals from k-nearest-neighbour covariance.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spatial::PointIndex;

/// Neighbourhoods whose middle eigenvalue is below this fraction of the
/// largest are treated as rank-deficient (collinear or coincident points).
pub const DEGENERACY_RATIO: f64 = 1e-3;

/// Unit normals oriented toward each point's viewpoint; `None` marks a
/// degenerate neighbourhood.
pub fn estimate_normals(
    points: &[[f64; 3]],
    k: usize,
    viewpoints: &[Point3<f64>],
) -> Result<Vec<Option<Vector3<f64>>>> {
    if points.len() != viewpoints.len() {
        return Err(Error::invalid(
            "normal estimation",
            format!("{} points but {} viewpoints", points.len(), viewpoints.len()),
        ));
    }
    let index = PointIndex::new(points);
    estimate_normals_with_index(&index, points, k, viewpoints)
}

pub fn estimate_normals_with_index(
    index: &PointIndex,
    points: &[[f64; 3]],
    k: usize,
    viewpoints: &[Point3<f64>],
) -> Result<Vec<Option<Vector3<f64>>>> {
    if k < 3 {
        return Err(Error::invalid("normal estimation", format!("k = {k} must be >= 3")));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    Ok(points
        .par_iter()
        .zip(viewpoints.par_iter())
        .map(|(p, vp)| {
            let nb = index.knn(p, k);
            let pts: Vec<Vector3<f64>> = nb.iter().map(|(i, _)| Vector3::from(points[*i])).collect();
            normal_of(&pts).map(|n| {
                let to_view = vp.coords - Vector3::from(*p);
                if n.dot(&to_view) < 0.0 {
                    -n
                } else {
                    n
                }
            })
        })
        .collect())
}

/// Smallest-eigenvalue eigenvector of the neighbourhood covariance.
pub fn normal_of(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if pts.len() < 3 {
        return None;
    }
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l2 > 0.0) || l1 < DEGENERACY_RATIO * l2 {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    let len = n.norm();
    (len > 0.0 && len.is_finite()).then(|| n / len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_point_up() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push([i as f64 * 0.1, j as f64 * 0.13, 0.0]);
            }
        }
        let vps = vec![Point3::new(1.0, 1.0, 5.0); pts.len()];
        for n in estimate_normals(&pts, 8, &vps).unwrap() {
            let n = n.unwrap();
            assert!((n - Vector3::z()).norm() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci sphere, viewpoint outside along the radial direction.
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect();
        let vps: Vec<Point3<f64>> = pts.iter().map(|p| Point3::new(3.0 * p[0], 3.0 * p[1], 3.0 * p[2])).collect();
        let normals = estimate_normals(&pts, 10, &vps).unwrap();
        for (p, nrm) in pts.iter().zip(&normals) {
            let radial = Vector3::from(*p).normalize();
            let ang = nrm.unwrap().dot(&radial).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(ang < 5.0, "angle {ang}");
            assert!((nrm.unwrap().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![[0.0; 3]; 4];
        let vps = vec![Point3::origin(); 4];
        assert!(matches!(
            estimate_normals(&pts, 5, &vps),
            Err(Error::TooFewPoints { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn collinear_points_are_flagged() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let vps = vec![Point3::new(0.0, 0.0, 1.0); 10];
        assert!(estimate_normals(&pts, 5, &vps).unwrap().iter().all(Option::is_none));
    }
}
