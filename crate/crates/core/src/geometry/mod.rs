//! Rigid poses, the pinhole camera, dense grids and small-matrix numerics.
//!
//! Units are millimetres and radians throughout. Camera frames use +z forward,
//! +x right and +y down so that pixel rows grow with y.

mod camera;
mod grid;
mod pose;
mod svd;

pub use camera::{CameraIntrinsics, DEPTH_MAX_MM, DEPTH_MIN_MM};
pub use grid::{DepthMap, DisparityMap, Grid, ImageBuffer, Mask};
pub use pose::{compose, exp_so3, project_to_so3, skew, Pose, RENORMALIZE_THRESHOLD};
pub use svd::{rotation2, svd2x2, Svd2};

pub use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("depth {0} mm outside the supported range")]
    DepthOutOfRange(f64),
    #[error("disparity {0} outside [0, 1]")]
    DisparityOutOfRange(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}
