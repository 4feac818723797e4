use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::GeometryError;

/// Rigid camera→world transform `x_w = R · x_c + t`.
///
/// The rotation is stored as a unit quaternion so poses read from a
/// trajectory file write back bit-identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Builds a pose from a translation and an `(x, y, z, w)` quaternion.
    ///
    /// Quaternions already unit to within a few ulps are taken verbatim.
    pub fn from_translation_quaternion(t: [f64; 3], q_xyzw: [f64; 4]) -> Result<Self, GeometryError> {
        if t.iter().chain(q_xyzw.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite component".into()));
        }
        let q = Quaternion::new(q_xyzw[3], q_xyzw[0], q_xyzw[1], q_xyzw[2]);
        let norm = q.norm();
        if norm < 1e-6 {
            return Err(GeometryError::InvalidPose("zero quaternion".into()));
        }
        let rotation = if (norm - 1.0).abs() <= 8.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self::new(rotation, Vector3::from(t)))
    }

    /// Camera at `eye` looking at `target`, image `y` pointing down with
    /// respect to `up` (optical axis is camera `+z`).
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("eye equals target".into()));
        }
        let z = z.normalize();
        let x = z.cross(up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidPose("view direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Ok(Self::new(UnitQuaternion::from_rotation_matrix(&rot), *eye))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `(x, y, z, w)` quaternion components.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self::new(r, -(r * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(self.rotation * other.rotation, self.transform_point(&other.translation))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}
