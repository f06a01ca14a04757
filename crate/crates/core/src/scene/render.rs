use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::{Scene, SceneError, TIP_REGION_MM};
use crate::geometry::{CameraIntrinsics, DepthMap, Grid, ImageBuffer, Mask, Pose};
use crate::geometry::{DEPTH_MAX_MM, DEPTH_MIN_MM};

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: ImageBuffer,
    pub depth: DepthMap,
    pub tip_mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Background,
    /// Tool hit, with its axial distance behind the tip.
    Tool { behind_tip: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    surface: Surface,
}

fn check_facing(scene: &Scene, camera: &Pose) -> Result<(), SceneError> {
    let axis = camera.z_axis();
    let denom = scene.plane.normal.dot(&axis);
    if denom.abs() < 1e-12 {
        return Err(SceneError::CameraFacingAway);
    }
    let t = (scene.plane.offset - scene.plane.normal.dot(&camera.translation)) / denom;
    if !(t > 0.0) {
        return Err(SceneError::CameraFacingAway);
    }
    Ok(())
}

/// Nearest hit along `origin + t * dir`. `dir` has unit camera-z component, so `t` is z-depth.
fn trace(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |t: f64, surface: Surface| {
        if t > 1e-9 && best.map_or(true, |b| t < b.t) {
            best = Some(Hit { t, surface });
        }
    };

    let n = &scene.plane.normal;
    let denom = n.dot(dir);
    if denom.abs() > 1e-12 {
        consider(
            (scene.plane.offset - n.dot(origin)) / denom,
            Surface::Background,
        );
    }

    let tool = &scene.tool;
    let a = &tool.shaft_dir;
    let w0 = origin - tool.tip;
    let d_perp = dir - a * a.dot(dir);
    let w_perp = w0 - a * a.dot(&w0);
    let qa = d_perp.norm_squared();
    let r2 = tool.radius * tool.radius;
    if qa > 1e-15 {
        let qb = 2.0 * d_perp.dot(&w_perp);
        let qc = w_perp.norm_squared() - r2;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                let behind = -(w0 + dir * t).dot(a);
                if (0.0..=scene.tool_length).contains(&behind) {
                    consider(t, Surface::Tool { behind_tip: behind });
                }
            }
        }
    }
    let da = dir.dot(a);
    if da.abs() > 1e-12 {
        let t = -w0.dot(a) / da;
        let p = w0 + dir * t;
        if (p - a * p.dot(a)).norm_squared() <= r2 {
            consider(t, Surface::Tool { behind_tip: 0.0 });
        }
    }
    best
}

/// Surface point in tool-local coordinates (axial, two radial), for texturing.
fn tool_local(scene: &Scene, p: &Vector3<f64>) -> Vector3<f64> {
    let a = scene.tool.shaft_dir;
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = a.cross(&helper).normalize();
    let b2 = a.cross(&b1);
    let q = p - scene.tool.tip;
    Vector3::new(q.dot(&b1), q.dot(&b2), q.dot(&a))
}

fn render_impl(
    scene: &Scene,
    camera: &Pose,
    k: &CameraIntrinsics,
    shade: bool,
) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>), SceneError> {
    check_facing(scene, camera)?;
    let (w, h) = (k.width, k.height);
    let bg_tex = scene.background_texture();
    let tool_tex = scene.tool_texture();
    let origin = camera.translation;

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut intensity = Vec::with_capacity(w);
            let mut depth = Vec::with_capacity(w);
            let mut mask = Vec::with_capacity(w);
            for x in 0..w {
                let ray = k.ray(&Vector2::new(x as f64, y as f64));
                let dir = camera.rotation * ray;
                match trace(scene, &origin, &dir) {
                    Some(hit) => {
                        let p = origin + dir * hit.t;
                        depth.push(hit.t.clamp(DEPTH_MIN_MM, DEPTH_MAX_MM));
                        match hit.surface {
                            Surface::Background => {
                                mask.push(false);
                                intensity.push(if shade { bg_tex.sample(&p) } else { 0.0 });
                            }
                            Surface::Tool { behind_tip } => {
                                mask.push(behind_tip <= TIP_REGION_MM);
                                intensity.push(if shade {
                                    tool_tex.sample(&tool_local(scene, &p))
                                } else {
                                    0.0
                                });
                            }
                        }
                    }
                    None => {
                        depth.push(DEPTH_MAX_MM);
                        mask.push(false);
                        intensity.push(0.5);
                    }
                }
            }
            (intensity, depth, mask)
        })
        .collect();

    let mut intensity = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (i, d, m) in rows {
        intensity.extend(i);
        depth.extend(d);
        mask.extend(m);
    }
    Ok((intensity, depth, mask))
}

/// Ray-casts the scene from `camera` (camera-to-world pose).
///
/// The depth map holds z-depth in the camera frame; the mask marks pixels whose
/// nearest surface is the front [`TIP_REGION_MM`] of the tool.
pub fn render(scene: &Scene, camera: &Pose, k: &CameraIntrinsics) -> Result<RenderOutput, SceneError> {
    let (intensity, depth, mask) = render_impl(scene, camera, k, true)?;
    let (w, h) = (k.width, k.height);
    Ok(RenderOutput {
        image: ImageBuffer::new(w, h, 1, intensity).expect("texture range lies in [0, 1]"),
        depth: DepthMap::new(Grid::from_vec(w, h, depth).expect("sized"))
            .expect("depth clamped to range"),
        tip_mask: Mask::from_vec(w, h, mask).expect("sized"),
    })
}

/// Depth and tip mask only, skipping texture evaluation.
pub fn render_layers(
    scene: &Scene,
    camera: &Pose,
    k: &CameraIntrinsics,
) -> Result<(DepthMap, Mask), SceneError> {
    let (_, depth, mask) = render_impl(scene, camera, k, false)?;
    let (w, h) = (k.width, k.height);
    Ok((
        DepthMap::new(Grid::from_vec(w, h, depth).expect("sized")).expect("depth clamped to range"),
        Mask::from_vec(w, h, mask).expect("sized"),
    ))
}
