//! Pinhole camera model, SE(3) pose algebra and rigid-flow synthesis.
//!
//! A [`CameraPose`] maps points expressed in the camera frame at time `t`
//! into the camera frame at `t + 1`: `X' = R X + t`. Object motion is not
//! modelled; every pixel is treated as part of the static scene.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Grid, PixelMask};

/// Camera-frame 3D point in scene units.
pub type Point3 = Vector3<f64>;

/// Points at or below this depth are considered behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl TryFrom<IntrinsicsRepr> for Intrinsics {
    type Error = Error;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        Intrinsics::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !(cx.is_finite() && cy.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need finite positive focal lengths, got fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square pixels with the principal point at the center of a `width × height` grid.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Projects a camera-frame point to `(pixel, depth)`.
pub fn project(x: &Point3, k: &Intrinsics) -> Result<(Vector2<f64>, f64)> {
    if !(x.z > MIN_DEPTH) {
        return Err(Error::BehindCamera(x.z));
    }
    Ok((
        Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy),
        x.z,
    ))
}

/// Lifts pixel `x` at depth `d` back to a camera-frame point.
pub fn back_project(x: &Vector2<f64>, d: f64, k: &Intrinsics) -> Result<Point3> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidDepth(d));
    }
    Ok(Point3::new(
        (x.x - k.cx) / k.fx * d,
        (x.y - k.cy) / k.fy * d,
        d,
    ))
}

/// Rigid-body transform between consecutive camera frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// JSON layout: `{"R": [9 numbers, row-major], "t": [3 numbers]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<PoseRepr> for CameraPose {
    type Error = Error;

    fn try_from(p: PoseRepr) -> Result<Self> {
        let r = Matrix3::from_row_slice(&p.r);
        CameraPose::new(r, Vector3::from(p.t))
    }
}

impl From<CameraPose> for PoseRepr {
    fn from(p: CameraPose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    /// Validates that `rotation` is orthonormal with determinant one.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (|RᵀR - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, x: &Point3) -> Point3 {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Position of the target camera expressed in the source frame.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Exponential map of the twist `[ρ; ω]` (translation part first).
    pub fn exp(xi: &Vector6<f64>) -> CameraPose {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let w = skew(&omega);
        let w2 = w * w;
        let (a, b, c) = if theta < 1e-5 {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let half = (0.5 * theta).sin();
            (
                theta.sin() / theta,
                2.0 * half * half / (theta * theta),
                (theta - theta.sin()) / (theta * theta * theta),
            )
        };
        let rotation = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        CameraPose {
            rotation,
            translation: v * rho,
        }
    }

    /// Logarithm map, the inverse of [`CameraPose::exp`] for rotation angles below π.
    pub fn log(&self) -> Vector6<f64> {
        let omega = so3_log(&self.rotation);
        let theta = omega.norm();
        let w = skew(&omega);
        let d = if theta < 1e-4 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            // 1/θ² · (1 − (θ/2)·cot(θ/2))
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * d;
        let rho = v_inv * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_error(&self, other: &CameraPose) -> f64 {
        so3_log(&(self.rotation.transpose() * other.rotation)).norm()
    }

    pub fn translation_error(&self, other: &CameraPose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl std::ops::Mul for CameraPose {
    type Output = CameraPose;

    fn mul(self, rhs: CameraPose) -> CameraPose {
        self.compose(&rhs)
    }
}

/// Free-function forms of the pose algebra.
pub fn pose_compose(p1: &CameraPose, p2: &CameraPose) -> CameraPose {
    p1.compose(p2)
}

pub fn pose_inverse(p: &CameraPose) -> CameraPose {
    p.inverse()
}

pub fn se3_exp(xi: &Vector6<f64>) -> CameraPose {
    CameraPose::exp(xi)
}

pub fn se3_log(p: &CameraPose) -> Vector6<f64> {
    p.log()
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation matrix to axis-angle. Goes through a unit quaternion so that the
/// angle stays accurate both near zero and near π.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    let scale = if n < 1e-8 {
        2.0 / w * (1.0 - n * n / (3.0 * w * w))
    } else {
        2.0 * n.atan2(w) / n
    };
    v * scale
}

/// Dense rigid flow induced by `pose` on a scene with depth `depth`.
///
/// Returns the flow and a mask that is 1 where the depth is valid and the
/// transformed point stays in front of the camera. Masked pixels carry zero
/// flow.
pub fn rigid_flow(depth: &DepthMap, k: &Intrinsics, pose: &CameraPose) -> (FlowField, PixelMask) {
    let (w, h) = depth.dims();
    // x' ~ d·K R K⁻¹ x + K t
    let kmat = k.matrix();
    let homography = kmat * pose.rotation * k.inverse_matrix();
    let parallax = kmat * pose.translation;
    let mut flow = FlowField::zeros(w, h);
    let mut mask = Grid::filled(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            let Some(d) = depth.get(u, v) else { continue };
            let q = homography * Vector3::new(u as f64, v as f64, 1.0) * d + parallax;
            if q.z > MIN_DEPTH {
                flow.set(
                    u,
                    v,
                    Vector2::new(q.x / q.z - u as f64, q.y / q.z - v as f64),
                );
                mask.set(u, v, 1.0);
            }
        }
    }
    (flow, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn project_examples() {
        let (p, d) = project(&Point3::new(0.0, 0.0, 10.0), &k100()).unwrap();
        assert_eq!((p.x, p.y, d), (0.0, 0.0, 10.0));
        let (p, _) = project(&Point3::new(1.0, 0.0, 10.0), &k100()).unwrap();
        assert_eq!((p.x, p.y), (10.0, 0.0));

        let k = Intrinsics::new(120.0, 110.0, 60.0, 40.0).unwrap();
        let (p, d) = project(&Point3::new(0.5, -0.25, 5.0), &k).unwrap();
        // 120·0.5/5 + 60 = 72, 110·(−0.25)/5 + 40 = 34.5
        assert!((p.x - 72.0).abs() < 1e-12);
        assert!((p.y - 34.5).abs() < 1e-12);
        assert_eq!(d, 5.0);
    }

    #[test]
    fn project_behind_camera() {
        assert!(matches!(
            project(&Point3::new(0.0, 0.0, 0.0), &k100()),
            Err(Error::BehindCamera(_))
        ));
        assert!(project(&Point3::new(0.0, 0.0, -1.0), &k100()).is_err());
    }

    #[test]
    fn back_project_examples() {
        let x = back_project(&Vector2::new(0.0, 0.0), 10.0, &k100()).unwrap();
        assert_eq!(x, Point3::new(0.0, 0.0, 10.0));
        let x = back_project(&Vector2::new(10.0, 0.0), 10.0, &k100()).unwrap();
        assert_eq!(x, Point3::new(1.0, 0.0, 10.0));
        assert!(matches!(
            back_project(&Vector2::new(0.0, 0.0), 0.0, &k100()),
            Err(Error::InvalidDepth(_))
        ));
        assert!(back_project(&Vector2::new(0.0, 0.0), -3.0, &k100()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, f64::NAN, 0.0, 0.0).is_err());
        assert!(serde_json::from_str::<Intrinsics>(r#"{"fx":-1,"fy":1,"cx":0,"cy":0}"#).is_err());
    }

    #[test]
    fn se3_exp_zero_is_identity() {
        assert_eq!(CameraPose::exp(&Vector6::zeros()), CameraPose::identity());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let p = CameraPose::exp(&Vector6::new(0.3, -0.2, 0.5, 0.1, 0.4, -0.2));
        assert_eq!(p.compose(&CameraPose::identity()), p);
        let e = p.compose(&p.inverse());
        assert!((e.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(e.translation().norm() < 1e-12);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraPose::new(m, Vector3::zeros()).is_err());
        assert!(CameraPose::new(Matrix3::identity() * 1.001, Vector3::zeros()).is_err());
    }

    #[test]
    fn so3_log_near_pi() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let omega = axis * (std::f64::consts::PI - 1e-7);
        let r = CameraPose::exp(&Vector6::new(0.0, 0.0, 0.0, omega.x, omega.y, omega.z));
        assert!((so3_log(r.rotation()) - omega).norm() < 1e-9);
    }

    #[test]
    fn rigid_flow_identity_is_zero() {
        let d = DepthMap::new(Grid::from_fn(9, 7, |u, v| 3.0 + (u + v) as f64));
        let k = Intrinsics::centered(50.0, 9, 7).unwrap();
        let (f, m) = rigid_flow(&d, &k, &CameraPose::identity());
        assert!(f.iter().all(|x| x.x == 0.0 && x.y == 0.0));
        assert!(m.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn rigid_flow_masks_points_pushed_behind() {
        let d = DepthMap::new(Grid::filled(4, 4, 1.0));
        let k = Intrinsics::centered(10.0, 4, 4).unwrap();
        let pose = CameraPose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let (f, m) = rigid_flow(&d, &k, &pose);
        assert!(m.iter().all(|x| *x == 0.0));
        assert!(f.is_finite());
    }

    #[test]
    fn pose_json_layout() {
        let p = CameraPose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"R":[1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0],"t":[1.0,2.0,3.0]}"#);
        let back: CameraPose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
