//! Rigid transforms in SE(3).

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::point::{CloudFrame, PointCloud};

/// Tolerance on `RᵀR = I` and `det R = 1` for a pose to be accepted as-is.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// A rigid transform `p' = R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        PoseSE3::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite translation"));
        }
        Ok(PoseSE3 {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    /// Parses the 3×4 row-major matrix `[R | t]`, strict tolerance.
    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let (r, t) = split_row_major(m);
        PoseSE3::new(r, t)
    }

    /// Parses the 3×4 row-major matrix `[R | t]`, accepting rotations within
    /// `tolerance` of orthonormal and snapping them to the nearest rotation.
    pub fn from_row_major_lenient(m: &[f64; 12], tolerance: f64) -> Result<Self> {
        let (r, t) = split_row_major(m);
        check_rotation(&r, tolerance)?;
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite translation"));
        }
        Ok(PoseSE3 {
            rotation: nearest_rotation(&r),
            translation: t,
        })
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, t: Vector3<f64>) -> Self {
        self.translation = t;
        self
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Applies the pose to every point; labels and intensity are untouched.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points
            .iter()
            .map(|p| {
                let mut q = *p;
                q.position = self.transform_point(&p.position);
                q
            })
            .collect();
        PointCloud::new(points, cloud.frame.clone())
    }

    /// Like [`apply`](Self::apply) but tags the result as a world-frame cloud.
    pub fn apply_to_world(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = self.apply(cloud);
        out.frame = CloudFrame::World;
        out
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        self.to_row_major()
            .iter()
            .zip(other.to_row_major().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn split_row_major(m: &[f64; 12]) -> (Matrix3<f64>, Vector3<f64>) {
    let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let t = Vector3::new(m[3], m[7], m[11]);
    (r, t)
}

fn check_rotation(r: &Matrix3<f64>, tolerance: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("pose", "non-finite rotation"));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > tolerance {
        return Err(Error::invalid(
            "pose",
            format!("rotation not orthonormal (max |RᵀR - I| = {ortho:.3e})"),
        ));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tolerance {
        return Err(Error::invalid(
            "pose",
            format!("rotation determinant {det} is not +1"),
        ));
    }
    Ok(())
}

/// Closest rotation in the Frobenius sense, via SVD.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    r
}

impl Serialize for PoseSE3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PoseSE3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let m = <[f64; 12]>::deserialize(deserializer)?;
        PoseSE3::from_row_major_lenient(&m, 1e-4).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SemanticPoint;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let cloud = PointCloud::sensor(vec![
            SemanticPoint::new(1.0, -2.0, 3.5).with_labels(7, 2),
            SemanticPoint::new(0.0, 0.0, 0.0),
        ]);
        assert_eq!(PoseSE3::identity().apply(&cloud), cloud);
    }

    #[test]
    fn translation_moves_origin() {
        let pose = PoseSE3::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let cloud = PointCloud::sensor(vec![SemanticPoint::new(0.0, 0.0, 0.0)]);
        let out = pose.apply(&cloud);
        assert_eq!(out.points[0].position, Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn yaw_quarter_turn() {
        // R_z(90°) = [[0,-1,0],[1,0,0],[0,0,1]] so (1,0,0) -> (0,1,0).
        let pose = PoseSE3::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = pose.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let b = PoseSE3::from_euler(0.1, -0.2, 0.7, Vector3::new(3.0, -1.0, 2.0));
        assert_eq!(PoseSE3::identity().compose(&b), b);
        let id = b.compose(&b.inverse());
        assert!(id.max_abs_diff(&PoseSE3::identity()) < 1e-9);
    }

    #[test]
    fn rejects_non_rotation() {
        let mut m = PoseSE3::identity().to_row_major();
        m[0] = 1.1;
        assert!(PoseSE3::from_row_major(&m).is_err());
        // reflection: det -1
        let m = [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(PoseSE3::from_row_major(&m).is_err());
    }

    #[test]
    fn lenient_parse_snaps_to_rotation() {
        let mut m = PoseSE3::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0)).to_row_major();
        m[0] += 5e-5;
        let pose = PoseSE3::from_row_major_lenient(&m, 1e-4).unwrap();
        let r = pose.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!(PoseSE3::from_row_major(&pose.to_row_major()).is_ok());
    }

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            -3.2f64..3.2,
            -1.5f64..1.5,
            -3.2f64..3.2,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(r, p, y, t)| PoseSE3::from_euler(r, p, y, Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(
            a in arb_pose(),
            b in arb_pose(),
            pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 100),
        ) {
            let ab = a.compose(&b);
            for p in pts {
                let p = Point3::from(p);
                let direct = ab.transform_point(&p);
                let seq = a.transform_point(&b.transform_point(&p));
                prop_assert!((direct - seq).norm() < 1e-9);
            }
        }

        #[test]
        fn apply_is_isometry(
            a in arb_pose(),
            p in prop::array::uniform3(-100.0f64..100.0),
            q in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let (p, q) = (Point3::from(p), Point3::from(q));
            let d0 = (p - q).norm();
            let d1 = (a.transform_point(&p) - a.transform_point(&q)).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
