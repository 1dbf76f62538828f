use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        check_rotation(&m)?;
        Ok(Rotation(m))
    }

    /// Rotation by `|v|` radians about `v / |v|`.
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        Rotation(*Rotation3::new(*v).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn to_axis_angle(&self) -> Vector3<f64> {
        self.to_quaternion().scaled_axis()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }
}

impl From<Rotation> for [f64; 9] {
    fn from(r: Rotation) -> Self {
        let m = r.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl TryFrom<[f64; 9]> for Rotation {
    type Error = Error;

    fn try_from(a: [f64; 9]) -> Result<Self> {
        Rotation::new(Matrix3::from_row_slice(&a))
    }
}

pub(crate) fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    if !m.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let err = (m * m.transpose() - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!(
            "R·Rᵀ deviates from identity by {err:e}"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!("determinant {det}")));
    }
    Ok(())
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3) at axis-angle `w`: for `R = exp([w]×)`,
/// `(∂R/∂w_a)·Rᵀ = [J_l(w)·e_a]×`.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let phi2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if phi2 < 1e-12 {
        (0.5 - phi2 / 24.0, 1.0 / 6.0 - phi2 / 120.0)
    } else {
        let phi = phi2.sqrt();
        ((1.0 - phi.cos()) / phi2, (phi - phi.sin()) / (phi2 * phi))
    };
    Matrix3::identity() + k * a + k * k * b
}
