//! Synthetic abdomen: a textured background plane and one cylindrical instrument,
//! rendered through the pinhole model with exact depth and tip masks.

mod noise;
mod render;
mod trajectory;

pub use noise::{value_noise, Texture};
pub use render::{render, render_layers, RenderOutput};
pub use trajectory::{tool_at, TrajectoryScript, Waypoint};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Length of the shaft segment, measured back from the tip, that counts as the "tip".
pub const TIP_REGION_MM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("camera optical axis does not intersect the background plane")]
    CameraFacingAway,
    #[error("invalid tool state: {0}")]
    InvalidTool(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// Background surface `normal · p = offset` (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl BackgroundPlane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// The instrument: a capped cylinder whose tip is the front face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub tip: Vector3<f64>,
    /// Unit vector along the shaft, pointing from the handle towards the tip.
    pub shaft_dir: Vector3<f64>,
    pub radius: f64,
}

impl ToolState {
    pub fn new(tip: Vector3<f64>, shaft_dir: Vector3<f64>, radius: f64) -> Result<Self, SceneError> {
        let t = Self {
            tip,
            shaft_dir: shaft_dir.normalize(),
            radius,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.tip.iter().all(|v| v.is_finite()) {
            return Err(SceneError::InvalidTool("non-finite tip".into()));
        }
        if (self.shaft_dir.norm() - 1.0).abs() > 1e-9 {
            return Err(SceneError::InvalidTool(format!(
                "shaft direction norm {} is not 1",
                self.shaft_dir.norm()
            )));
        }
        if !(self.radius > 0.0) {
            return Err(SceneError::InvalidTool(format!("radius {} <= 0", self.radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub plane: BackgroundPlane,
    pub tool: ToolState,
    /// Shaft length behind the tip, mm.
    #[serde(default = "default_tool_length")]
    pub tool_length: f64,
    /// Remote centre of motion of the laparoscope (the trocar), world frame.
    pub trocar: Vector3<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_tool_length() -> f64 {
    250.0
}

impl Default for Scene {
    /// Trocar at the origin looking down +z; background 80 mm beyond the trocar; a
    /// tool entering obliquely from the upper left with its tip about 46 mm deep.
    fn default() -> Self {
        Self {
            plane: BackgroundPlane {
                normal: Vector3::z(),
                offset: 80.0,
            },
            tool: ToolState {
                tip: Vector3::new(2.0, 1.5, 46.0),
                shaft_dir: Vector3::new(0.8, 0.35, 0.2).normalize(),
                radius: 2.5,
            },
            tool_length: default_tool_length(),
            trocar: Vector3::zeros(),
            seed: 7,
        }
    }
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.tool.validate()?;
        if (self.plane.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(SceneError::InvalidTool("plane normal must be unit length".into()));
        }
        if !(self.tool_length > TIP_REGION_MM) {
            return Err(SceneError::InvalidTool(format!(
                "tool length {} must exceed the tip region",
                self.tool_length
            )));
        }
        Ok(())
    }

    pub fn with_tool(&self, tool: ToolState) -> Scene {
        Scene {
            tool,
            ..self.clone()
        }
    }

    pub fn background_texture(&self) -> Texture {
        Texture::background(self.seed)
    }

    pub fn tool_texture(&self) -> Texture {
        Texture::tool(self.seed)
    }
}
