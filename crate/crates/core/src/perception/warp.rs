use rayon::prelude::*;

use crate::geometry::{CameraIntrinsics, DepthMap, Grid, ImageBuffer, Mask, Pose, Vector2};

/// Tolerance for pixel coordinates landing a hair outside the image through rounding.
const EDGE_SLACK: f64 = 1e-7;

/// Result of warping a source image into the target view.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageBuffer,
    pub valid: Mask,
}

/// Per-pixel warp sample with the pieces needed for the depth gradient.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct WarpSample {
    pub value: f64,
    /// d(sample)/d(depth of target pixel); zero for invalid pixels.
    pub d_depth: f64,
    pub valid: bool,
}

/// Warps the single-channel `src` into the target view using per-pixel target depth.
///
/// `target_to_src` maps target-camera coordinates into source-camera coordinates.
pub(crate) fn warp_grid(
    src: &Grid,
    depth: &Grid,
    target_to_src: &Pose,
    k: &CameraIntrinsics,
) -> Vec<WarpSample> {
    let (w, h) = depth.dims();
    let r = target_to_src.rotation;
    let t = target_to_src.translation;
    let max_x = (src.width() - 1) as f64;
    let max_y = (src.height() - 1) as f64;
    let snap = |v: f64, max: f64| {
        if v < 0.0 && v > -EDGE_SLACK {
            0.0
        } else if v > max && v < max + EDGE_SLACK {
            max
        } else {
            v
        }
    };
    let mut out = vec![WarpSample::default(); w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let ray = k.ray(&Vector2::new(x as f64, y as f64));
            let d = depth.get(x, y);
            let dy_dd = r * ray;
            let p = dy_dd * d + t;
            if !(p.z > 1e-9) {
                continue;
            }
            let inv_z = 1.0 / p.z;
            let u = snap(k.fx * p.x * inv_z + k.cx, max_x);
            let v = snap(k.fy * p.y * inv_z + k.cy, max_y);
            if let Some((value, gx, gy)) = src.sample_bilinear_with_gradient(u, v) {
                let du = k.fx * (dy_dd.x * p.z - p.x * dy_dd.z) * inv_z * inv_z;
                let dv = k.fy * (dy_dd.y * p.z - p.y * dy_dd.z) * inv_z * inv_z;
                *slot = WarpSample {
                    value,
                    d_depth: gx * du + gy * dv,
                    valid: true,
                };
            }
        }
    });
    out
}

/// Synthesises the target view by sampling `src` where each target pixel lands.
///
/// Every target pixel is lifted with its depth, moved by `target_to_src` and
/// projected; pixels landing outside the source image or behind its camera are
/// invalid and hold 0. Multi-channel sources are warped per channel.
pub fn warp_image(
    src: &ImageBuffer,
    depth_of_target: &DepthMap,
    target_to_src: &Pose,
    k: &CameraIntrinsics,
) -> Warped {
    let depth = depth_of_target.grid();
    let (w, h) = depth.dims();
    let c = src.channels();
    let mut data = vec![0.0; w * h * c];
    let mut valid = vec![false; w * h];
    for ch in 0..c {
        let plane = Grid::from_fn(src.width(), src.height(), |x, y| {
            src.data()[(y * src.width() + x) * c + ch]
        });
        for (i, s) in warp_grid(&plane, depth, target_to_src, k).into_iter().enumerate() {
            if s.valid {
                data[i * c + ch] = s.value.clamp(0.0, 1.0);
                valid[i] = true;
            }
        }
    }
    Warped {
        image: ImageBuffer::new(w, h, c, data).expect("samples lie in [0, 1]"),
        valid: Mask::from_vec(w, h, valid).expect("sized"),
    }
}
