//! Minimise-rotation constraint: the local affine map from the current view
//! (with an extra axial roll θ) to the natural line-of-sight reference view, its
//! rotational component φ, and the roll θ* that minimises |φ|.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{svd2x2, CameraIntrinsics, Matrix2, Matrix3, Pose, Vector2, Vector3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MrcError {
    #[error("plane-induced homography is degenerate (plane behind a camera)")]
    DegenerateHomography,
    #[error("affine map is singular (|det| = {0:.3e})")]
    SingularAffine(f64),
    #[error("affine map contains a reflection (det = {0:.3e})")]
    ReflectionDetected(f64),
}

/// Local affine model `p_ref ≈ A·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a: Matrix2<f64>,
    pub t: Vector2<f64>,
}

/// The reference camera pose captured at setup and the depth of the plane it views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlsReference {
    pub pose: Pose,
    pub plane_depth: f64,
}

/// Pixel at which the affine map is linearised and the depth of the scene there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub px: Vector2<f64>,
    pub depth: f64,
}

impl NlsReference {
    /// Anchor at `px` with the reference plane depth.
    pub fn anchor(&self, px: Vector2<f64>) -> Anchor {
        Anchor {
            px,
            depth: self.plane_depth,
        }
    }
}

/// Homography from the θ-rolled current view to the reference view, induced by
/// the plane fronto-parallel to the current camera at `depth`.
fn homography(
    reference: &NlsReference,
    current: &Pose,
    theta: f64,
    k: &CameraIntrinsics,
    depth: f64,
) -> Matrix3<f64> {
    let rolled = current.compose(&Pose::rot_z(theta));
    let r_ref_t = reference.pose.rotation.transpose();
    let r = r_ref_t * rolled.rotation;
    let t = r_ref_t * (rolled.translation - reference.pose.translation);
    let m = r + t * Vector3::z().transpose() / depth;
    k.matrix() * m * k.inverse_matrix()
}

/// Affine approximation of the reference-from-current pixel map at the anchor.
///
/// The current view is first rolled by `theta` about its optical axis; the anchor
/// follows the roll so the map is always linearised at the same scene point.
pub fn estimate_affine(
    reference: &NlsReference,
    current: &Pose,
    theta: f64,
    k: &CameraIntrinsics,
    anchor: &Anchor,
) -> Result<AffineMap, MrcError> {
    if !(anchor.depth > 0.0) {
        return Err(MrcError::DegenerateHomography);
    }
    let h = homography(reference, current, theta, k, anchor.depth);
    // the anchor seen from the rolled camera
    let ray = Pose::rot_z(theta).rotation.transpose() * k.ray(&anchor.px);
    let p = Vector3::new(k.fx * ray.x / ray.z + k.cx, k.fy * ray.y / ray.z + k.cy, 1.0);
    let q = h * p;
    if !(q.z > 1e-12) {
        return Err(MrcError::DegenerateHomography);
    }
    let (u, v) = (q.x / q.z, q.y / q.z);
    let a = Matrix2::new(
        (h[(0, 0)] - u * h[(2, 0)]) / q.z,
        (h[(0, 1)] - u * h[(2, 1)]) / q.z,
        (h[(1, 0)] - v * h[(2, 0)]) / q.z,
        (h[(1, 1)] - v * h[(2, 1)]) / q.z,
    );
    let t = Vector2::new(u, v) - a * Vector2::new(p.x, p.y);
    Ok(AffineMap { a, t })
}

/// Rotational component φ of `A = R(φ)·S` (S symmetric positive semi-definite).
/// Positive φ is counter-clockwise in pixel coordinates.
pub fn misorientation_angle(map: &AffineMap) -> Result<f64, MrcError> {
    let det = map.a.determinant();
    if det.abs() <= 1e-12 {
        return Err(MrcError::SingularAffine(det));
    }
    if det < 0.0 {
        return Err(MrcError::ReflectionDetected(det));
    }
    let r = svd2x2(&map.a).rotation_factor();
    Ok(r[(1, 0)].atan2(r[(0, 0)]))
}

/// φ as a function of the extra roll θ.
pub fn phi_at(
    reference: &NlsReference,
    current: &Pose,
    theta: f64,
    k: &CameraIntrinsics,
    anchor: &Anchor,
) -> Result<f64, MrcError> {
    misorientation_angle(&estimate_affine(reference, current, theta, k, anchor)?)
}

/// Result of the θ* search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaStar {
    pub theta: f64,
    /// φ after rolling by θ*.
    pub phi: f64,
    /// φ without any roll.
    pub phi_zero: f64,
}

const GRID_STEPS: i32 = 360;
const REFINE_TOL: f64 = 1e-4;

/// Finds the roll θ* ∈ [−π, π) minimising |φ(θ)|: a 1° grid followed by
/// golden-section refinement around the best grid node. Never returns a worse
/// value than the best grid node (θ = 0 is a node).
pub fn solve_theta_star(
    reference: &NlsReference,
    current: &Pose,
    k: &CameraIntrinsics,
    anchor: &Anchor,
) -> Result<ThetaStar, MrcError> {
    let f = |th: f64| phi_at(reference, current, th, k, anchor).map(f64::abs);
    let step = 2.0 * PI / GRID_STEPS as f64;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..GRID_STEPS {
        let th = (i - GRID_STEPS / 2) as f64 * step;
        let v = f(th)?;
        if v < best.0 {
            best = (v, th);
        }
    }
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while hi - lo > REFINE_TOL {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid)?;
    let theta = if fm < best.0 { mid } else { best.1 };
    let theta = crate::geometry::wrap_angle(theta);
    Ok(ThetaStar {
        theta,
        phi: phi_at(reference, current, theta, k, anchor)?,
        phi_zero: phi_at(reference, current, 0.0, k, anchor)?,
    })
}

/// φ(θ) sampled at `n` evenly spaced rolls over [−π, π), as two-column text.
pub fn phi_curve_text(
    reference: &NlsReference,
    current: &Pose,
    k: &CameraIntrinsics,
    anchor: &Anchor,
    n: usize,
) -> Result<String, MrcError> {
    let mut out = String::from("# theta_rad phi_rad\n");
    for i in 0..n {
        let th = -PI + 2.0 * PI * i as f64 / n as f64;
        let phi = phi_at(reference, current, th, k, anchor)?;
        writeln!(out, "{th:.6} {phi:.9}").expect("string write");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (NlsReference, CameraIntrinsics) {
        (
            NlsReference {
                pose: Pose::from_translation(Vector3::new(0.0, 0.0, 30.0)),
                plane_depth: 40.0,
            },
            CameraIntrinsics::default(),
        )
    }

    fn rcm_displaced(reference: &NlsReference, pitch: f64, yaw: f64, lever: f64) -> Pose {
        // rotate about a pivot `lever` mm behind the camera, keeping no explicit roll
        let pivot = reference.pose.transform_point(&Vector3::new(0.0, 0.0, -lever));
        let rot = Pose::rot_x(pitch).compose(&Pose::rot_y(yaw));
        let rotation = reference.pose.rotation * rot.rotation;
        let translation = pivot + rotation * Vector3::new(0.0, 0.0, lever);
        Pose::new(rotation, translation)
    }

    #[test]
    fn identity_gives_identity_map() {
        let (r, k) = setup();
        let a = estimate_affine(&r, &r.pose, 0.0, &k, &r.anchor(Vector2::new(100.0, 80.0))).unwrap();
        assert!((a.a - Matrix2::identity()).amax() < 1e-12);
        assert!(a.t.norm() < 1e-9);
    }

    #[test]
    fn pure_roll_matches_homography_oracle() {
        let (r, k) = setup();
        let beta = 20f64.to_radians();
        let cur = r.pose.compose(&Pose::rot_z(beta));
        let anchor = r.anchor(Vector2::new(200.0, 60.0));
        let a = estimate_affine(&r, &cur, 0.0, &k, &anchor).unwrap();
        assert!((a.a - rotation2(beta)).amax() < 1e-9);
        // K·R·K⁻¹ oracle maps every pixel; compare with the affine model
        let oracle = k.matrix() * Pose::rot_z(beta).rotation * k.inverse_matrix();
        for p in [Vector2::new(0.0, 0.0), Vector2::new(300.0, 200.0), Vector2::new(159.5, 119.5)] {
            let q = oracle * Vector3::new(p.x, p.y, 1.0);
            let model = a.a * p + a.t;
            assert!((model - Vector2::new(q.x / q.z, q.y / q.z)).norm() < 1e-9);
        }
        // principal point is a fixed point of the roll
        let c = Vector2::new(k.cx, k.cy);
        assert!((a.a * c + a.t - c).norm() < 1e-9);
        let undone = estimate_affine(&r, &cur, -beta, &k, &anchor).unwrap();
        assert!((undone.a - Matrix2::identity()).amax() < 1e-9);
    }

    #[test]
    fn misorientation_examples() {
        let id = AffineMap { a: Matrix2::identity(), t: Vector2::zeros() };
        assert_eq!(misorientation_angle(&id).unwrap(), 0.0);
        let r30 = AffineMap { a: rotation2(30f64.to_radians()), t: Vector2::zeros() };
        assert!((misorientation_angle(&r30).unwrap() - 30f64.to_radians()).abs() < 1e-12);
        let rs = AffineMap {
            a: rotation2(20f64.to_radians()) * Matrix2::new(1.2, 0.0, 0.0, 0.8),
            t: Vector2::zeros(),
        };
        assert!((misorientation_angle(&rs).unwrap() - 20f64.to_radians()).abs() < 1e-9);
        let flip = AffineMap { a: Matrix2::new(1.0, 0.0, 0.0, -1.0), t: Vector2::zeros() };
        assert!(matches!(misorientation_angle(&flip), Err(MrcError::ReflectionDetected(_))));
        let sing = AffineMap { a: Matrix2::new(1.0, 2.0, 2.0, 4.0), t: Vector2::zeros() };
        assert!(matches!(misorientation_angle(&sing), Err(MrcError::SingularAffine(_))));
    }

    #[test]
    fn polar_factor_recovery_over_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let beta = rng.gen_range(-3.1..3.1);
            let s_rot = rng.gen_range(-PI..PI);
            let (l1, l2) = (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0));
            let s = rotation2(s_rot) * Matrix2::new(l1, 0.0, 0.0, l2) * rotation2(-s_rot);
            for a in [rotation2(beta), rotation2(beta) * s] {
                let phi = misorientation_angle(&AffineMap { a, t: Vector2::zeros() }).unwrap();
                assert!((phi - beta).abs() < 1e-6, "beta {beta} phi {phi}");
            }
        }
    }

    #[test]
    fn theta_star_examples() {
        let (r, k) = setup();
        let anchor = r.anchor(Vector2::new(170.0, 110.0));
        let t = solve_theta_star(&r, &r.pose, &k, &anchor).unwrap();
        assert!(t.theta.abs() < 1e-4);

        let cur = r.pose.compose(&Pose::rot_z(15f64.to_radians()));
        let t = solve_theta_star(&r, &cur, &k, &anchor).unwrap();
        assert!((t.theta.to_degrees() + 15.0).abs() < 0.1, "{}", t.theta.to_degrees());
    }

    #[test]
    fn theta_star_matches_dense_grid_under_rcm_motion() {
        let (r, k) = setup();
        let cur = rcm_displaced(&r, 10f64.to_radians(), 8f64.to_radians(), 60.0);
        let anchor = r.anchor(Vector2::new(140.0, 130.0));
        let t = solve_theta_star(&r, &cur, &k, &anchor).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..36_000 {
            let th = (-180.0 + i as f64 * 0.01f64).to_radians();
            let v = phi_at(&r, &cur, th, &k, &anchor).unwrap().abs();
            if v < best.0 {
                best = (v, th);
            }
        }
        assert!((t.theta - best.1).abs().to_degrees() < 0.05, "{} vs {}", t.theta.to_degrees(), best.1.to_degrees());
        assert!(t.phi.abs() <= t.phi_zero.abs());
    }

    #[test]
    fn behind_camera_is_degenerate() {
        let (r, k) = setup();
        let cur = r.pose.compose(&Pose::rot_x(PI));
        assert_eq!(
            estimate_affine(&r, &cur, 0.0, &k, &r.anchor(Vector2::new(160.0, 120.0))),
            Err(MrcError::DegenerateHomography)
        );
    }

    #[test]
    fn curve_dump_has_two_columns() {
        let (r, k) = setup();
        let text = phi_curve_text(&r, &r.pose, &k, &r.anchor(Vector2::new(160.0, 120.0)), 8).unwrap();
        let rows: Vec<_> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|l| l.split_whitespace().count() == 2));
    }

    proptest! {
        #[test]
        fn roll_is_recovered(beta in -3.1f64..3.1) {
            let (r, k) = setup();
            let cur = r.pose.compose(&Pose::rot_z(beta));
            let phi = phi_at(&r, &cur, 0.0, &k, &r.anchor(Vector2::new(120.0, 150.0))).unwrap();
            prop_assert!((phi - beta).abs() < 1e-6);
        }

        #[test]
        fn scale_invariant(beta in -3.0f64..3.0, c in 0.01f64..100.0, l1 in 0.2f64..3.0, l2 in 0.2f64..3.0) {
            let a = rotation2(beta) * Matrix2::new(l1, 0.3, 0.3, l2.max(0.3));
            prop_assume!(a.determinant() > 1e-6);
            let p1 = misorientation_angle(&AffineMap { a, t: Vector2::zeros() }).unwrap();
            let p2 = misorientation_angle(&AffineMap { a: a * c, t: Vector2::zeros() }).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-9);
        }

        #[test]
        fn mrc_never_worsens(pitch in -0.3f64..0.3, yaw in -0.3f64..0.3, roll in -1.0f64..1.0, u in 40.0f64..280.0, v in 30.0f64..210.0) {
            let (r, k) = setup();
            let cur = rcm_displaced(&r, pitch, yaw, 60.0).compose(&Pose::rot_z(roll));
            let t = solve_theta_star(&r, &cur, &k, &r.anchor(Vector2::new(u, v))).unwrap();
            prop_assert!(t.phi.abs() <= t.phi_zero.abs());
        }
    }

    #[test]
    fn theta_star_is_continuous_in_pose() {
        let (r, k) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let base = rcm_displaced(&r, rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 60.0)
                .compose(&Pose::rot_z(rng.gen_range(-0.8..0.8)));
            let anchor = r.anchor(Vector2::new(rng.gen_range(60.0..260.0), rng.gen_range(40.0..200.0)));
            let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).normalize();
            let nudged = base.compose(&Pose::from_rotation_vector(axis * 0.1f64.to_radians() * rng.gen::<f64>()));
            let a = solve_theta_star(&r, &base, &k, &anchor).unwrap().theta;
            let b = solve_theta_star(&r, &nudged, &k, &anchor).unwrap().theta;
            worst = worst.max(crate::geometry::wrap_angle(a - b).abs());
        }
        assert!(worst.to_degrees() < 1.0, "max change {}", worst.to_degrees());
    }
}
