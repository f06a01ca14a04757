use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{SceneError, ToolState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Time at which the tip reaches `offset`, s.
    pub t: f64,
    /// Tip displacement from the initial tool state, mm.
    pub offset: Vector3<f64>,
}

/// Scripted tool motion. Every kind displaces the tip of an initial tool state;
/// the shaft direction is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryScript {
    #[default]
    Static,
    /// Jump by `offset` at time `at`.
    Step { offset: Vector3<f64>, at: f64 },
    /// Archimedean spiral around the initial tip in the plane orthogonal to `normal`.
    Spiral {
        /// Radial growth per revolution, mm.
        pitch_mm: f64,
        /// Revolutions per second.
        rate_hz: f64,
        #[serde(default = "default_normal")]
        normal: Vector3<f64>,
        /// Spiral starts after this delay, s.
        #[serde(default)]
        start: f64,
        /// Revolutions after which the tool stops; unbounded when absent.
        #[serde(default)]
        revolutions: Option<f64>,
    },
    /// Piecewise-linear path through time-stamped offsets; held constant outside the list.
    Waypoints { points: Vec<Waypoint> },
}

fn default_normal() -> Vector3<f64> {
    Vector3::z()
}

impl TrajectoryScript {
    pub fn validate(&self) -> Result<(), SceneError> {
        match self {
            TrajectoryScript::Static => Ok(()),
            TrajectoryScript::Step { offset, at } => {
                if offset.iter().all(|v| v.is_finite()) && *at >= 0.0 {
                    Ok(())
                } else {
                    Err(SceneError::InvalidTrajectory("step needs finite offset and at >= 0".into()))
                }
            }
            TrajectoryScript::Spiral {
                pitch_mm,
                rate_hz,
                normal,
                start,
                revolutions,
            } => {
                if !(pitch_mm.is_finite() && rate_hz.is_finite() && *start >= 0.0) {
                    return Err(SceneError::InvalidTrajectory("spiral parameters must be finite".into()));
                }
                if normal.norm() < 1e-9 {
                    return Err(SceneError::InvalidTrajectory("spiral normal is zero".into()));
                }
                if revolutions.is_some_and(|r| !(r >= 0.0)) {
                    return Err(SceneError::InvalidTrajectory("revolutions must be >= 0".into()));
                }
                Ok(())
            }
            TrajectoryScript::Waypoints { points } => {
                if points.is_empty() {
                    return Err(SceneError::InvalidTrajectory("empty waypoint list".into()));
                }
                if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(SceneError::InvalidTrajectory(
                        "waypoint times must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Tip displacement at time `t`.
    pub fn offset_at(&self, t: f64) -> Vector3<f64> {
        let t = t.max(0.0);
        match self {
            TrajectoryScript::Static => Vector3::zeros(),
            TrajectoryScript::Step { offset, at } => {
                if t >= *at {
                    *offset
                } else {
                    Vector3::zeros()
                }
            }
            TrajectoryScript::Spiral {
                pitch_mm,
                rate_hz,
                normal,
                start,
                revolutions,
            } => {
                let mut turns = (t - start).max(0.0) * rate_hz;
                if let Some(max) = revolutions {
                    turns = turns.min(*max);
                }
                let (e1, e2) = plane_basis(normal);
                let radius = pitch_mm * turns;
                let angle = TAU * turns;
                (e1 * angle.cos() + e2 * angle.sin()) * radius
            }
            TrajectoryScript::Waypoints { points } => {
                let first = &points[0];
                if t <= first.t {
                    return first.offset;
                }
                for w in points.windows(2) {
                    if t <= w[1].t {
                        let s = (t - w[0].t) / (w[1].t - w[0].t);
                        return w[0].offset + (w[1].offset - w[0].offset) * s;
                    }
                }
                points[points.len() - 1].offset
            }
        }
    }
}

/// Orthonormal in-plane basis for a plane with the given normal, `e1 × e2 = n̂`.
pub(crate) fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Tool state at time `t` for a script applied to `initial`.
pub fn tool_at(script: &TrajectoryScript, initial: &ToolState, t: f64) -> ToolState {
    ToolState {
        tip: initial.tip + script.offset_at(t),
        ..*initial
    }
}
