//! Rigid-body transforms used to bring a sender's reference points into the
//! ego coordinate frame.
//!
//! Positions are mapped with the full affine transform `R·p + t`. Velocities
//! are direction vectors on the ground plane and only rotate. Sizes are
//! axis-aligned extents and pass through untouched.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `‖RᵀR − I‖∞` under which a rotation is accepted as-is.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rotations further than this from orthonormal are rejected instead of being
/// projected back onto SO(3).
pub const REORTHONORMALIZE_LIMIT: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("rotation is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation has determinant {0:.6}, expected +1")]
    Reflection(f64),
    #[error("size components must be strictly positive, got {0:?}")]
    NonPositiveSize([f64; 3]),
}

/// A 3D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance on the ground plane, ignoring height.
    pub fn planar_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Constant-velocity displacement on the ground plane.
    pub fn advanced(&self, velocity: &Velocity2, dt: f64) -> Point3 {
        Point3::new(self.x + velocity.vx * dt, self.y + velocity.vy * dt, self.z)
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Ground-plane velocity in meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity2 {
    pub vx: f64,
    pub vy: f64,
}

impl Velocity2 {
    pub const fn new(vx: f64, vy: f64) -> Self {
        Self { vx, vy }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// Bounding-box extent in meters. All components are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Size3 {
    length: f64,
    width: f64,
    height: f64,
}

impl Size3 {
    pub fn new(length: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(length) && ok(width) && ok(height) {
            Ok(Self { length, width, height })
        } else {
            Err(GeometryError::NonPositiveSize([length, width, height]))
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }
}

impl TryFrom<[f64; 3]> for Size3 {
    type Error = GeometryError;

    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Size3::new(v[0], v[1], v[2])
    }
}

impl From<Size3> for [f64; 3] {
    fn from(s: Size3) -> Self {
        [s.length, s.width, s.height]
    }
}

/// Rigid transform from a source frame into a target frame.
///
/// The rotation is kept orthonormal with determinant +1; construction either
/// accepts it, projects slightly noisy input back onto SO(3), or fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct TransformSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawTransform> for TransformSE3 {
    type Error = GeometryError;

    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        TransformSE3::new(raw.rotation, raw.translation)
    }
}

impl From<TransformSE3> for RawTransform {
    fn from(t: TransformSE3) -> Self {
        RawTransform {
            rotation: t.rotation_rows(),
            translation: t.translation_array(),
        }
    }
}

impl Default for TransformSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

impl TransformSE3 {
    /// Builds a transform from a row-major rotation and a translation.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GeometryError> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        let t = Vector3::from(translation);
        Self::from_parts(r, t)
    }

    fn from_parts(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let det = r.determinant();
        if det <= 0.0 {
            return Err(GeometryError::Reflection(det));
        }
        let deviation = orthonormal_deviation(&r);
        let rotation = if deviation < ORTHONORMAL_TOLERANCE {
            r
        } else if deviation < REORTHONORMALIZE_LIMIT {
            polar_rotation(&r)
        } else {
            return Err(GeometryError::NotOrthonormal { deviation });
        };
        Ok(Self { rotation, translation: t })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Planar pose: rotation of `yaw` radians about +z, then translation.
    pub fn from_yaw(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation given as a scaled axis (axis · angle) plus translation.
    pub fn from_scaled_axis(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(Vector3::from(axis_angle)).matrix(),
            translation: Vector3::from(translation),
        }
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Heading of the rotated x axis on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    /// `R·p + t`.
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Rotates `(vx, vy, 0)` and keeps the ground-plane part. No translation.
    pub fn transform_velocity(&self, v: &Velocity2) -> Velocity2 {
        let r = self.rotation * Vector3::new(v.vx, v.vy, 0.0);
        Velocity2::new(r.x, r.y)
    }

    /// Sizes are carried unchanged across frames.
    pub fn transform_size(&self, s: &Size3) -> Size3 {
        *s
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &TransformSE3) -> TransformSE3 {
        TransformSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> TransformSE3 {
        let rt = self.rotation.transpose();
        TransformSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest absolute elementwise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &TransformSE3) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

/// Nearest rotation in the Frobenius sense: `U·Vᵀ` from the SVD.
fn polar_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        q = u_fixed * v_t;
    }
    q
}
