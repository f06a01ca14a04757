//! Null-space laparoscope controller under a remote centre of motion.
//!
//! The 4-vector actuation `q = [v_insert, ω_x, ω_y, ω_z]` lives in the RCM frame,
//! whose origin is the shaft point nearest the trocar and whose axes are the
//! camera axes (z along the shaft). The 2D image task has priority; depth and
//! roll corrections act through its null space.

use nalgebra::{Matrix2x3, Matrix2x4, Matrix3x4, Matrix4, Matrix6x4, SMatrix, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::geometry::{skew, CameraIntrinsics, GeometryError, Matrix3, Pose, Vector2, Vector3};

/// Singular values below this are treated as zero in pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("image-task Jacobian is ill-conditioned (smallest singular value {0:.3e})")]
    IllConditionedJacobian(f64),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGains {
    /// Diagonal of Ks over `[v_insert, ω_x, ω_y, ω_z]`.
    pub ks: [f64; 4],
    /// Diagonal of Kr.
    pub kr: [f64; 2],
    pub k_theta: f64,
    pub k_d: f64,
    /// Cancel the image motion caused by the lateral RCM correction inside the
    /// image task. Without it the RCM and image errors are coupled.
    pub decouple_rcm: bool,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            ks: [3e-3, 1.0, 1.0, 1.0],
            kr: [0.5, 0.5],
            k_theta: 1.0,
            k_d: 0.1,
            decouple_rcm: true,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        let all = self.ks.iter().chain(&self.kr).chain([&self.k_theta, &self.k_d]);
        if all.into_iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(ControlError::InvalidGains("every gain must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// The controller's complete error state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskErrors {
    /// Tip minus target, px.
    pub e_p: Vector2<f64>,
    /// Tool depth minus target depth, mm.
    pub e_d: f64,
    /// Shaft deviation from the trocar, mm.
    pub e_r: Vector2<f64>,
    /// Roll that minimises misorientation, rad.
    pub theta_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Rcm,
    Base,
}

/// 6D twist: linear mm/s, angular rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
    pub frame: Frame,
}

impl ControlCommand {
    pub fn zero(frame: Frame) -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
            frame,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }
}

/// Geometry of the laparoscope relative to its trocar at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcmState {
    pub trocar: Vector3<f64>,
    /// Origin at the shaft point nearest the trocar, axes aligned with the camera.
    pub rcm_frame: Pose,
    pub camera: Pose,
    /// Camera pose in the end-effector frame.
    pub hand_eye: Pose,
}

impl RcmState {
    /// Builds the RCM state for a camera (camera-to-base pose) whose shaft runs along its z-axis.
    pub fn from_camera(camera: &Pose, trocar: Vector3<f64>, hand_eye: Pose) -> Self {
        let z = camera.z_axis();
        let along = (trocar - camera.translation).dot(&z);
        let origin = camera.translation + z * along;
        Self {
            trocar,
            rcm_frame: Pose::new(camera.rotation, origin),
            camera: *camera,
            hand_eye,
        }
    }

    /// Base rotation of the RCM frame.
    pub fn b_r_r(&self) -> Matrix3<f64> {
        self.rcm_frame.rotation
    }

    /// Vector from the camera to the RCM origin, RCM axes.
    pub fn r_t_c(&self) -> Vector3<f64> {
        self.rcm_frame.rotation.transpose() * (self.rcm_frame.translation - self.camera.translation)
    }

    pub fn end_effector(&self) -> Pose {
        self.camera.compose(&self.hand_eye.inverse())
    }

    /// End-effector position relative to the RCM origin, RCM axes.
    pub fn r_t_e(&self) -> Vector3<f64> {
        self.rcm_frame.rotation.transpose() * (self.end_effector().translation - self.rcm_frame.translation)
    }
}

/// Shaft deviation from the trocar in the camera (shaft) frame: the x/y offset
/// of the nearest shaft point from the trocar.
pub fn rcm_error(trocar: &Vector3<f64>, camera: &Pose) -> Vector2<f64> {
    let q = camera.inverse_transform_point(trocar);
    Vector2::new(-q.x, -q.y)
}

/// Linear-velocity block of the point-feature interaction matrix, pixel units.
pub fn image_jacobian(
    p_t: &Vector2<f64>,
    d_tool: f64,
    k: &CameraIntrinsics,
) -> Result<Matrix2x3<f64>, ControlError> {
    if !(d_tool > 0.0) {
        return Err(GeometryError::NonPositiveDepth(d_tool).into());
    }
    let x = (p_t.x - k.cx) / k.fx;
    let y = (p_t.y - k.cy) / k.fy;
    let iz = 1.0 / d_tool;
    Ok(Matrix2x3::new(
        -k.fx * iz,
        0.0,
        k.fx * x * iz,
        0.0,
        -k.fy * iz,
        k.fy * y * iz,
    ))
}

/// Angular-velocity block of the point-feature interaction matrix, pixel units.
pub fn image_rotation_jacobian(p_t: &Vector2<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let x = (p_t.x - k.cx) / k.fx;
    let y = (p_t.y - k.cy) / k.fy;
    Matrix2x3::new(
        k.fx * x * y,
        -k.fx * (1.0 + x * x),
        k.fx * y,
        k.fy * (1.0 + y * y),
        -k.fy * x * y,
        -k.fy * x,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskJacobians {
    pub j_img: Matrix2x3<f64>,
    /// Rotational interaction block, used only to decouple the RCM correction.
    pub j_rot: Matrix2x3<f64>,
    pub j_d: Matrix3x4<f64>,
    pub j_e: Matrix3x4<f64>,
    pub j_de: Matrix6x4<f64>,
    pub j_fov: Matrix2x4<f64>,
}

/// `J_d = [e3 | skew(ʳt_c)]` from the camera-to-RCM vector.
pub fn depth_jacobian(r_t_c: &Vector3<f64>) -> Matrix3x4<f64> {
    let mut j = Matrix3x4::zeros();
    j.set_column(0, &Vector3::z());
    j.fixed_view_mut::<3, 3>(0, 1).copy_from(&skew(r_t_c));
    j
}

pub fn task_jacobians(
    rcm: &RcmState,
    p_t: &Vector2<f64>,
    d_tool: f64,
    k: &CameraIntrinsics,
) -> Result<TaskJacobians, ControlError> {
    let j_d = depth_jacobian(&rcm.r_t_c());
    let mut j_e = Matrix3x4::zeros();
    j_e.fixed_view_mut::<3, 3>(0, 1).copy_from(&Matrix3::identity());
    let mut j_de = Matrix6x4::zeros();
    j_de.fixed_view_mut::<3, 4>(0, 0).copy_from(&j_d);
    j_de.fixed_view_mut::<3, 4>(3, 0).copy_from(&j_e);
    let j_img = image_jacobian(p_t, d_tool, k)?;
    let j_fov = j_img * j_d;
    Ok(TaskJacobians {
        j_img,
        j_rot: image_rotation_jacobian(p_t, k),
        j_d,
        j_e,
        j_de,
        j_fov,
    })
}

/// Moore–Penrose pseudo-inverse of the image-task Jacobian.
pub fn pinv(m: &Matrix2x4<f64>) -> nalgebra::Matrix4x2<f64> {
    m.pseudo_inverse(PINV_CUTOFF).expect("cutoff is non-negative")
}

fn pinv6(m: &Matrix6x4<f64>) -> SMatrix<f64, 4, 6> {
    m.pseudo_inverse(PINV_CUTOFF).expect("cutoff is non-negative")
}

/// The null-space law: RCM correction, prioritised image task, and depth/roll
/// corrections projected into the image task's null space. Returns an RCM-frame
/// twist.
///
/// With [`ControlGains::decouple_rcm`] the image task also absorbs the predicted
/// pixel velocity of the lateral RCM correction; that compensation is solved
/// through the full interaction model so its own rotation does not leak back
/// into the image.
pub fn null_space_law(
    errors: &TaskErrors,
    jac: &TaskJacobians,
    gains: &ControlGains,
) -> Result<ControlCommand, ControlError> {
    let sv = jac.j_fov.singular_values();
    let smallest = sv.min();
    if !(smallest >= PINV_CUTOFF) {
        return Err(ControlError::IllConditionedJacobian(smallest));
    }
    let j_fov_pinv = pinv(&jac.j_fov);
    let j_de_pinv = pinv6(&jac.j_de);
    let ks = Matrix4::from_diagonal(&Vector4::from(gains.ks));
    let v_c = -gains.k_d * errors.e_d;
    let w_c = -gains.k_theta * errors.theta_star;
    let secondary = Vector6::new(0.0, 0.0, v_c, 0.0, 0.0, w_c);
    let projector = Matrix4::identity() - j_fov_pinv * jac.j_fov;
    let v_rcm = Vector3::new(-gains.kr[0] * errors.e_r.x, -gains.kr[1] * errors.e_r.y, 0.0);
    let mut q = -ks * j_fov_pinv * errors.e_p - projector * j_de_pinv * secondary;
    if gains.decouple_rcm {
        let full = jac.j_fov + jac.j_rot * jac.j_e;
        let full_pinv = full.pseudo_inverse(PINV_CUTOFF).expect("cutoff is non-negative");
        q -= full_pinv * (jac.j_img * v_rcm);
    }
    Ok(ControlCommand {
        linear: Vector3::new(v_rcm.x, v_rcm.y, q[0]),
        angular: Vector3::new(q[1], q[2], q[3]),
        frame: Frame::Rcm,
    })
}

/// Converts an RCM-frame twist into the end-effector twist in the base frame.
pub fn to_end_effector(cmd: &ControlCommand, rcm: &RcmState) -> ControlCommand {
    let linear = cmd.linear - skew(&rcm.r_t_e()) * cmd.angular;
    let r = rcm.b_r_r();
    ControlCommand {
        linear: r * linear,
        angular: r * cmd.angular,
        frame: Frame::Base,
    }
}

/// Inverse of [`to_end_effector`].
pub fn from_end_effector(cmd: &ControlCommand, rcm: &RcmState) -> ControlCommand {
    let rt = rcm.b_r_r().transpose();
    let angular = rt * cmd.angular;
    let linear = rt * cmd.linear + skew(&rcm.r_t_e()) * angular;
    ControlCommand {
        linear,
        angular,
        frame: Frame::Rcm,
    }
}

/// `V = ½|e_r|² + ½|e_p|² + ½e_d²`.
pub fn lyapunov(e: &TaskErrors) -> f64 {
    0.5 * (e.e_r.norm_squared() + e.e_p.norm_squared() + e.e_d * e.e_d)
}

/// Twist magnitude limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionLimits {
    pub max_linear: f64,
    pub max_angular: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            max_linear: 30.0,
            max_angular: 1.0,
        }
    }
}

/// Uniformly scales the whole twist so neither part exceeds its limit.
pub fn apply_limits(cmd: &ControlCommand, limits: &MotionLimits) -> ControlCommand {
    let lin = cmd.linear.norm();
    let ang = cmd.angular.norm();
    let mut s: f64 = 1.0;
    if lin > limits.max_linear {
        s = s.min(limits.max_linear / lin);
    }
    if ang > limits.max_angular {
        s = s.min(limits.max_angular / ang);
    }
    ControlCommand {
        linear: cmd.linear * s,
        angular: cmd.angular * s,
        frame: cmd.frame,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scope(l_inside: f64, shaft: f64) -> RcmState {
        // camera `l_inside` mm beyond the trocar along +z, end effector `shaft` mm behind the camera
        let camera = Pose::from_translation(Vector3::new(0.0, 0.0, l_inside));
        RcmState::from_camera(&camera, Vector3::zeros(), Pose::from_translation(Vector3::new(0.0, 0.0, shaft)))
    }

    #[test]
    fn image_jacobian_examples() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let j = image_jacobian(&Vector2::new(0.0, 0.0), 0.1, &k).unwrap();
        assert!((j - Matrix2x3::new(-10.0, 0.0, 0.0, 0.0, -10.0, 0.0)).amax() < 1e-12);

        let k = CameraIntrinsics::default();
        let p = Vector2::new(40.0, 200.0);
        let a = image_jacobian(&p, 20.0, &k).unwrap();
        let b = image_jacobian(&p, 40.0, &k).unwrap();
        assert!((a * 0.5 - b).amax() < 1e-12);
        assert!(image_jacobian(&p, 0.0, &k).is_err());
    }

    #[test]
    fn image_jacobian_matches_projection_differences() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let p = Vector2::new(rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
            let z = rng.gen_range(5.0..90.0);
            let point = k.backproject(&p, z).unwrap();
            let j = image_jacobian(&p, z, &k).unwrap();
            for axis in 0..3 {
                let h = 1e-4;
                let mut dv = Vector3::zeros();
                dv[axis] = h;
                // camera moves by +dv, so the point moves by -dv in the camera frame
                let plus = k.project(&(point - dv)).unwrap();
                let minus = k.project(&(point + dv)).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let col = j.column(axis);
                for r in 0..2 {
                    let scale = col[r].abs().max(1e-9);
                    assert!((fd[r] - col[r]).abs() <= 1e-3 * scale + 1e-9, "axis {axis} row {r}");
                }
            }
        }
    }

    #[test]
    fn depth_jacobian_example() {
        let j = depth_jacobian(&Vector3::new(0.0, 0.0, 100.0));
        let expected = Matrix3x4::new(0.0, 0.0, -100.0, 0.0, 0.0, 100.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert!((j - expected).amax() < 1e-12);
    }

    #[test]
    fn selector_and_stacking() {
        let rcm = scope(30.0, 200.0);
        let jac = task_jacobians(&rcm, &Vector2::new(100.0, 90.0), 20.0, &CameraIntrinsics::default()).unwrap();
        let q = Vector4::new(0.3, -0.1, 0.7, 2.0);
        assert_eq!(jac.j_e * q, Vector3::new(-0.1, 0.7, 2.0));
        assert_eq!(jac.j_de.fixed_rows::<3>(0).into_owned(), jac.j_d);
        assert_eq!(rcm.r_t_c(), Vector3::new(0.0, 0.0, -30.0));
        assert_eq!(rcm.r_t_e(), Vector3::new(0.0, 0.0, -170.0));
    }

    /// Pixel of a static world point seen from a camera moved by `q` about the RCM for `dt`.
    fn pixel_after(rcm: &RcmState, world: &Vector3<f64>, q: &Vector4<f64>, dt: f64, k: &CameraIntrinsics) -> Vector2<f64> {
        let r = rcm.rcm_frame.rotation;
        let omega = r * Vector3::new(q[1], q[2], q[3]);
        let rot = crate::geometry::exp_so3(omega * dt);
        let c = rcm.camera.translation;
        let o = rcm.rcm_frame.translation;
        let new_c = o + rot * (c - o) + r.column(2) * q[0] * dt;
        let cam = Pose::new(rot * rcm.camera.rotation, new_c);
        k.project(&cam.inverse_transform_point(world)).unwrap()
    }

    #[test]
    fn fov_jacobian_matches_simulated_translation() {
        // The model omits the rotational interaction term, so the translational
        // part of the RCM motion is what J_fov must reproduce.
        let k = CameraIntrinsics::default();
        let rcm = scope(40.0, 250.0);
        let world = Vector3::new(3.0, -2.0, 40.0 + 18.0);
        let pc = rcm.camera.inverse_transform_point(&world);
        let p = k.project(&pc).unwrap();
        let jac = task_jacobians(&rcm, &p, pc.z, &k).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut q = Vector4::zeros();
            q[i] = 1.0;
            // camera linear velocity implied by q, applied as pure translation
            let v = jac.j_d * q;
            let shift = |s: f64| {
                let cam = Pose::new(rcm.camera.rotation, rcm.camera.translation + rcm.camera.rotation * v * s);
                k.project(&cam.inverse_transform_point(&world)).unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let col = jac.j_fov.column(i);
            for r in 0..2 {
                assert!((fd[r] - col[r]).abs() <= 1e-2 * col[r].abs().max(1e-6) + 1e-6, "col {i} row {r}: {} vs {}", fd[r], col[r]);
            }
        }
    }

    #[test]
    fn full_rcm_motion_adds_rotational_interaction() {
        let k = CameraIntrinsics::default();
        let rcm = scope(40.0, 250.0);
        let world = Vector3::new(3.0, -2.0, 58.0);
        let pc = rcm.camera.inverse_transform_point(&world);
        let p = k.project(&pc).unwrap();
        let jac = task_jacobians(&rcm, &p, pc.z, &k).unwrap();
        let full = jac.j_fov + jac.j_rot * jac.j_e;
        let h = 1e-6;
        for i in 0..4 {
            let mut q = Vector4::zeros();
            q[i] = 1.0;
            let fd = (pixel_after(&rcm, &world, &q, h, &k) - pixel_after(&rcm, &world, &(-q), h, &k)) / (2.0 * h);
            let col = full.column(i);
            for r in 0..2 {
                assert!((fd[r] - col[r]).abs() <= 1e-2 * col[r].abs().max(1e-6) + 1e-4, "col {i} row {r}: {} vs {}", fd[r], col[r]);
            }
        }
    }

    #[test]
    fn rcm_error_examples() {
        let trocar = Vector3::zeros();
        let cam = Pose::look_at(Vector3::new(0.0, 0.0, 30.0), Vector3::new(0.0, 0.0, 60.0), Vector3::new(0.0, -1.0, 0.0));
        assert!(rcm_error(&trocar, &cam).norm() < 1e-12);
        let shifted = Pose::new(cam.rotation, cam.translation + cam.rotation * Vector3::new(2.0, 0.0, 0.0));
        let e = rcm_error(&trocar, &shifted);
        assert!((e - Vector2::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rcm_error_matches_point_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let cam = Pose::from_rotation_vector(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .compose(&Pose::identity());
            let cam = Pose::new(cam.rotation, Vector3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)));
            let trocar = Vector3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            // foot of the perpendicular from the trocar onto the shaft line
            let d = cam.z_axis();
            let foot = cam.translation + d * (trocar - cam.translation).dot(&d);
            let perp = foot - trocar;
            let e = rcm_error(&trocar, &cam);
            assert!((e.norm() - perp.norm()).abs() < 1e-9);
            let in_cam = cam.rotation.transpose() * perp;
            assert!((Vector2::new(in_cam.x, in_cam.y) - e).norm() < 1e-9);
        }
    }

    #[test]
    fn law_examples() {
        let k = CameraIntrinsics::default();
        let rcm = scope(30.0, 200.0);
        let jac = task_jacobians(&rcm, &Vector2::new(200.0, 150.0), 15.0, &k).unwrap();
        let g = ControlGains::default();
        let zero = null_space_law(&TaskErrors::default(), &jac, &g).unwrap();
        assert_eq!(zero.as_array(), [0.0; 6]);

        let e = TaskErrors {
            e_p: Vector2::new(20.0, -35.0),
            ..TaskErrors::default()
        };
        let c = null_space_law(&e, &jac, &g).unwrap();
        let q = Vector4::new(c.linear.z, c.angular.x, c.angular.y, c.angular.z);
        let jp = pinv(&jac.j_fov);
        let ks = Matrix4::from_diagonal(&Vector4::from(g.ks));
        assert!((q + ks * jp * e.e_p).norm() < 1e-12);
        assert!((jac.j_fov * q + jac.j_fov * ks * jp * e.e_p).norm() < 1e-9);
        assert!((jac.j_fov * q).dot(&e.e_p) < 0.0);

        let e = TaskErrors {
            e_d: 3.0,
            theta_star: 0.2,
            ..TaskErrors::default()
        };
        let c = null_space_law(&e, &jac, &g).unwrap();
        let q = Vector4::new(c.linear.z, c.angular.x, c.angular.y, c.angular.z);
        assert!((jac.j_fov * q).norm() < 1e-9);
        // depth error drives the camera forward, roll follows θ*
        assert!(q[0] > 0.0 && q[3] > 0.0);
    }

    #[test]
    fn rcm_correction_is_hidden_from_the_image_task() {
        let k = CameraIntrinsics::default();
        let rcm = scope(30.0, 200.0);
        let jac = task_jacobians(&rcm, &Vector2::new(120.0, 150.0), 9.0, &k).unwrap();
        let e = TaskErrors {
            e_r: Vector2::new(1.2, -0.7),
            ..TaskErrors::default()
        };
        let c = null_space_law(&e, &jac, &ControlGains::default()).unwrap();
        let q = Vector4::new(c.linear.z, c.angular.x, c.angular.y, c.angular.z);
        let lateral = Vector3::new(c.linear.x, c.linear.y, 0.0);
        let full = jac.j_fov + jac.j_rot * jac.j_e;
        assert!((jac.j_img * lateral + full * q).norm() < 1e-9);
        let literal = ControlGains {
            decouple_rcm: false,
            ..ControlGains::default()
        };
        let c = null_space_law(&e, &jac, &literal).unwrap();
        assert_eq!([c.linear.z, c.angular.x, c.angular.y, c.angular.z], [0.0; 4]);
        assert_eq!((c.linear.x, c.linear.y), (-0.6, 0.35));
    }

    #[test]
    fn ill_conditioned_is_flagged() {
        let jac = TaskJacobians {
            j_img: Matrix2x3::zeros(),
            j_rot: Matrix2x3::zeros(),
            j_d: Matrix3x4::zeros(),
            j_e: Matrix3x4::zeros(),
            j_de: Matrix6x4::zeros(),
            j_fov: Matrix2x4::zeros(),
        };
        assert!(matches!(
            null_space_law(&TaskErrors::default(), &jac, &ControlGains::default()),
            Err(ControlError::IllConditionedJacobian(_))
        ));
    }

    #[test]
    fn end_effector_examples() {
        let identity_like = RcmState {
            trocar: Vector3::zeros(),
            rcm_frame: Pose::identity(),
            camera: Pose::identity(),
            hand_eye: Pose::identity(),
        };
        let cmd = ControlCommand {
            linear: Vector3::new(1.0, 2.0, 3.0),
            angular: Vector3::new(0.1, 0.2, 0.3),
            frame: Frame::Rcm,
        };
        let out = to_end_effector(&cmd, &identity_like);
        assert_eq!((out.linear, out.angular), (cmd.linear, cmd.angular));

        // ʳt_e = (0,0,-50): camera at origin, end effector 50 mm behind
        let rcm = RcmState {
            trocar: Vector3::zeros(),
            rcm_frame: Pose::identity(),
            camera: Pose::identity(),
            hand_eye: Pose::from_translation(Vector3::new(0.0, 0.0, 50.0)),
        };
        assert_eq!(rcm.r_t_e(), Vector3::new(0.0, 0.0, -50.0));
        let spin = ControlCommand {
            linear: Vector3::zeros(),
            angular: Vector3::new(0.0, 0.0, 0.4),
            frame: Frame::Rcm,
        };
        // −skew(t)·ω = ω × t = (0,0,0.4) × (0,0,−50) = 0
        assert!(to_end_effector(&spin, &rcm).linear.norm() < 1e-12);
        let tilt = ControlCommand {
            angular: Vector3::new(0.4, 0.0, 0.0),
            ..spin
        };
        // (0.4,0,0) × (0,0,−50) = (0, 20, 0)
        assert!((to_end_effector(&tilt, &rcm).linear - Vector3::new(0.0, 20.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov(&TaskErrors::default()), 0.0);
        let e = TaskErrors {
            e_p: Vector2::new(3.0, 4.0),
            ..TaskErrors::default()
        };
        assert_eq!(lyapunov(&e), 12.5);
        let e = TaskErrors {
            e_d: -1e-3,
            ..TaskErrors::default()
        };
        assert!(lyapunov(&e) > 0.0);
    }

    #[test]
    fn limits_examples() {
        let lim = MotionLimits {
            max_linear: 10.0,
            max_angular: 1.0,
        };
        let c = ControlCommand {
            linear: Vector3::new(3.0, 0.0, 4.0),
            angular: Vector3::new(0.1, 0.0, 0.0),
            frame: Frame::Rcm,
        };
        assert_eq!(apply_limits(&c, &lim), c);
        let big = ControlCommand {
            linear: Vector3::new(0.0, 20.0, 0.0),
            ..c
        };
        let s = apply_limits(&big, &lim);
        assert!((s.linear - Vector3::new(0.0, 10.0, 0.0)).norm() < 1e-12);
        assert!((s.angular - c.angular * 0.5).norm() < 1e-12);
        let z = ControlCommand::zero(Frame::Rcm);
        assert_eq!(apply_limits(&z, &lim), z);
    }

    fn arb_rcm() -> impl Strategy<Value = RcmState> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            prop::array::uniform3(-30.0f64..30.0),
            prop::array::uniform3(-30.0f64..30.0),
            50.0f64..300.0,
        )
            .prop_map(|(rv, t, trocar, shaft)| {
                let cam = Pose::new(Pose::from_rotation_vector(Vector3::from(rv)).rotation, Vector3::from(t));
                RcmState::from_camera(&cam, Vector3::from(trocar), Pose::from_translation(Vector3::new(0.0, 0.0, shaft)))
            })
    }

    proptest! {
        #[test]
        fn null_space_projector_annihilated(a in prop::array::uniform8(-100.0f64..100.0)) {
            let j = Matrix2x4::from_row_slice(&a);
            prop_assume!(j.singular_values().min() > 1e-3);
            let p = Matrix4::identity() - pinv(&j) * j;
            prop_assert!((j * p).amax() < 1e-9 * j.amax().max(1.0));
        }

        #[test]
        fn end_effector_round_trip(rcm in arb_rcm(), v in prop::array::uniform6(-10.0f64..10.0)) {
            let cmd = ControlCommand {
                linear: Vector3::new(v[0], v[1], v[2]),
                angular: Vector3::new(v[3], v[4], v[5]),
                frame: Frame::Rcm,
            };
            let back = from_end_effector(&to_end_effector(&cmd, &rcm), &rcm);
            prop_assert!((back.linear - cmd.linear).norm() < 1e-9);
            prop_assert!((back.angular - cmd.angular).norm() < 1e-9);
        }

        #[test]
        fn end_effector_map_is_linear(rcm in arb_rcm(), v in prop::array::uniform6(-10.0f64..10.0), w in prop::array::uniform6(-10.0f64..10.0), s in -3.0f64..3.0) {
            let mk = |a: [f64; 6]| ControlCommand {
                linear: Vector3::new(a[0], a[1], a[2]),
                angular: Vector3::new(a[3], a[4], a[5]),
                frame: Frame::Rcm,
            };
            let (a, b) = (mk(v), mk(w));
            let sum = ControlCommand { linear: a.linear * s + b.linear, angular: a.angular * s + b.angular, frame: Frame::Rcm };
            let lhs = to_end_effector(&sum, &rcm);
            let (ta, tb) = (to_end_effector(&a, &rcm), to_end_effector(&b, &rcm));
            prop_assert!((lhs.linear - (ta.linear * s + tb.linear)).norm() < 1e-9);
            prop_assert!((lhs.angular - (ta.angular * s + tb.angular)).norm() < 1e-9);
        }

        #[test]
        fn lyapunov_positive_definite(a in prop::array::uniform5(-10.0f64..10.0)) {
            let e = TaskErrors { e_p: Vector2::new(a[0], a[1]), e_r: Vector2::new(a[2], a[3]), e_d: a[4], theta_star: 0.0 };
            prop_assume!(a.iter().any(|v| *v != 0.0));
            prop_assert!(lyapunov(&e) > 0.0);
        }

        #[test]
        fn limits_hold(v in prop::array::uniform6(-100.0f64..100.0)) {
            let lim = MotionLimits::default();
            let c = ControlCommand { linear: Vector3::new(v[0], v[1], v[2]), angular: Vector3::new(v[3], v[4], v[5]), frame: Frame::Base };
            let s = apply_limits(&c, &lim);
            prop_assert!(s.linear.norm() <= lim.max_linear + 1e-9);
            prop_assert!(s.angular.norm() <= lim.max_angular + 1e-9);
            // direction preserved
            prop_assert!((s.linear.cross(&c.linear)).norm() < 1e-6 * c.linear.norm().max(1.0) * s.linear.norm().max(1.0));
        }
    }
}
