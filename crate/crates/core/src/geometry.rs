//! Rotations and rigid transforms.
//!
//! `PoseSE3` follows the `T_a_b` convention: a pose maps points expressed in
//! frame `b` into frame `a`, so `compose(T_a_b, T_b_c) = T_a_c`.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

const SMALL_ANGLE: f64 = 1e-6;

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix that is already orthonormal. Callers are trusted; use
    /// [`Rotation3::try_from_matrix`] for external data.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Validates orthonormality and handedness within 1e-9.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("rotation has non-finite entries".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "matrix is not a rotation (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary nonsingular matrix onto SO(3) via SVD.
    pub fn orthonormalize(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Degenerate("svd failed during orthonormalization".into())),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Self(u * d * v_t))
    }

    /// Rotation about +z by `angle` radians.
    pub fn rz(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn rx(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn ry(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Exponential map from an axis-angle vector.
    pub fn exp(w: &Vector3<f64>) -> Self {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let k = skew(w);
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Logarithm map to an axis-angle vector with angle in [0, π].
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let s = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        let c = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
        let sin_theta = s.norm();
        let theta = sin_theta.atan2(c);
        if theta < SMALL_ANGLE {
            // theta / sin(theta) ≈ 1 + theta²/6
            return s * (1.0 + theta * theta / 6.0);
        }
        if std::f64::consts::PI - theta > 1e-4 {
            return s * (theta / sin_theta);
        }
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part R + Rᵀ = 2 cosθ I + 2(1 - cosθ) a aᵀ.
        let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
        let denom = 1.0 - c;
        let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
        let i = diag.imax();
        let mut axis = Vector3::new(b[(i, 0)], b[(i, 1)], b[(i, 2)]) / (diag[i].max(0.0) * denom).sqrt().max(1e-300);
        axis.normalize_mut();
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Geodesic distance (rotation angle of `selfᵀ other`), in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        (self.transpose() * *other).log().norm()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn column(&self, i: usize) -> Vector3<f64> {
        self.0.column(i).into_owned()
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).amax();
        e.max((self.0.determinant() - 1.0).abs())
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::InvalidInput(format!("expected 9 rotation entries, got {}", v.len())));
        }
        Self::try_from_matrix(Matrix3::from_row_slice(v))
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Continuous 6D rotation encoding: the first two columns, column-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn from_rotation(r: &Rotation3) -> Self {
        let m = r.matrix();
        Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
    }

    /// Gram–Schmidt back to a rotation; the third column is the cross product.
    pub fn to_rotation(&self) -> Result<Rotation3> {
        let v = &self.0;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Degenerate("non-finite 6D rotation".into()));
        }
        let c1 = Vector3::new(v[0], v[1], v[2]);
        let c2 = Vector3::new(v[3], v[4], v[5]);
        let n1 = c1.norm();
        let n2 = c2.norm();
        if n1 < 1e-12 || n2 < 1e-12 {
            return Err(Error::Degenerate("zero column in 6D rotation".into()));
        }
        let a = c1 / n1;
        let b = c2 - a * a.dot(&c2);
        let nb = b.norm();
        if nb < 1e-9 * n2 {
            return Err(Error::Degenerate("parallel columns in 6D rotation".into()));
        }
        let b = b / nb;
        let c = a.cross(&b);
        Ok(Rotation3(Matrix3::from_columns(&[a, b, c])))
    }
}

pub fn to_rot6d(r: &Rotation3) -> Rot6D {
    Rot6D::from_rotation(r)
}

pub fn from_rot6d(v: &Rot6D) -> Result<Rotation3> {
    v.to_rotation()
}

pub fn rz(angle: f64) -> Rotation3 {
    Rotation3::rz(angle)
}

/// Rigid transform: rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseSE3 {
    pub rotation: Rotation3,
    pub position: Vector3<f64>,
}

impl PoseSE3 {
    pub fn new(rotation: Rotation3, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(p: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::identity(), position: p }
    }

    pub fn from_rotation(r: Rotation3) -> Self {
        Self { rotation: r, position: Vector3::zeros() }
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        compose(self, other)
    }

    pub fn inverse(&self) -> PoseSE3 {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.position
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.rotation.matrix().iter().all(|v| v.is_finite())
    }

    /// 12 numbers: row-major rotation followed by position.
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&self.rotation.to_row_major());
        out[9..].copy_from_slice(self.position.as_slice());
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::InvalidInput(format!("expected 12 pose entries, got {}", v.len())));
        }
        let rotation = Rotation3::from_row_major(&v[..9])?;
        let position = Vector3::new(v[9], v[10], v[11]);
        if !position.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("pose position is not finite".into()));
        }
        Ok(Self { rotation, position })
    }

    /// Rot6D followed by position (9 reals).
    pub fn to_features(&self) -> [f64; 9] {
        let r = Rot6D::from_rotation(&self.rotation).0;
        [r[0], r[1], r[2], r[3], r[4], r[5], self.position.x, self.position.y, self.position.z]
    }
}

pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    PoseSE3 {
        rotation: a.rotation * b.rotation,
        position: a.rotation.apply(&b.position) + a.position,
    }
}

pub fn inverse(a: &PoseSE3) -> PoseSE3 {
    let rt = a.rotation.transpose();
    PoseSE3 { rotation: rt, position: -(rt.apply(&a.position)) }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3): `log(R exp(δ)) ≈ log(R) + Jr⁻¹(log R) δ`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * coeff
}
