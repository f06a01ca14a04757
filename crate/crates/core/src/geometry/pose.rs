use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

/// Orthonormality drift beyond which a composed rotation is re-projected onto SO(3).
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;

/// Rigid transform mapping points from a child frame into a parent frame.
///
/// Translations are in millimetres. `a.compose(&b)` is `a ∘ b`, i.e. the
/// transform that applies `b` first.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting `rotation` onto SO(3) if it has drifted.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
        .renormalized()
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pure rotation given as an axis-angle vector (radians).
    pub fn from_rotation_vector(rotvec: Vector3<f64>) -> Self {
        Self {
            rotation: exp_so3(rotvec),
            translation: Vector3::zeros(),
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation_vector(Vector3::x() * angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation_vector(Vector3::y() * angle)
    }

    /// Rotation about the local z axis. For a camera this is a roll about the optical axis.
    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation_vector(Vector3::z() * angle)
    }

    /// Camera-style pose located at `eye` whose +z axis points at `target`.
    ///
    /// `up_hint` fixes the roll: the camera's -y axis is aligned as closely as
    /// possible with it (image rows grow downward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up_hint: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = (-up_hint).cross(&z);
        if x.norm() < 1e-12 {
            x = z.cross(&Vector3::x());
            if x.norm() < 1e-12 {
                x = z.cross(&Vector3::y());
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        };
        if out.orthonormality_error() > RENORMALIZE_THRESHOLD {
            out.renormalized()
        } else {
            out
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Maps a parent-frame point into this frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Nearest proper rotation (polar projection) with the same translation.
    pub fn renormalized(&self) -> Pose {
        Pose {
            rotation: project_to_so3(&self.rotation),
            translation: self.translation,
        }
    }

    /// Camera optical axis (local +z) in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Row-major rotation followed by translation: the 12 numbers written to traces.
    pub fn to_row_major12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }
}

/// `a ∘ b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Rodrigues exponential of an axis-angle vector.
pub fn exp_so3(rotvec: Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(rotvec).into_inner()
}

pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
