//! Deterministic closed-loop simulation: scene, perception, view generation,
//! misorientation correction and the null-space controller stepped together.
//!
//! A scenario is described by one TOML file (see [`ScenarioConfig`] and the
//! files under `configs/`). Relative paths inside it resolve against the file's
//! directory.

mod depth_eval;
mod sim;
mod trace;

pub use depth_eval::{depth_eval, BandReport, DepthEvalConfig, DepthEvalReport, InitMode};
pub use sim::{run, Simulation, StepRecord, StepStatus};
pub use trace::{lyapunov_violations, RunTrace, Summary, LYAPUNOV_FLOOR, STEADY_FRACTION, TRACE_COLUMNS};

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{ControlError, ControlGains, MotionLimits};
use crate::geometry::{CameraIntrinsics, GeometryError, Pose};
use crate::io::FormatError;
use crate::mrc::NlsReference;
use crate::perception::{LossConfig, OptimizerConfig, PerceptionError};
use crate::scene::{Scene, SceneError, TrajectoryScript};
use crate::viewgen::{ViewGenConfig, ViewGenError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("invariant violated at t = {t:.3} s: {what}")]
    InvariantViolation { t: f64, what: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    ViewGen(#[from] ViewGenError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ScenarioError::Config(_)
                | ScenarioError::Scene(_)
                | ScenarioError::ViewGen(_)
                | ScenarioError::Geometry(_)
                | ScenarioError::Format(_)
        ) || matches!(self, ScenarioError::Control(ControlError::InvalidGains(_)))
            || matches!(self, ScenarioError::Perception(PerceptionError::InvalidConfig(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionMode {
    /// Exact tip point and depth from the scene geometry.
    #[default]
    Oracle,
    /// Centroid of the rendered tip mask and median rendered depth inside it.
    Rendered,
    /// Oracle plus Gaussian pixel noise and multiplicative depth noise.
    Noisy,
    /// Rendered mask centroid with depth from the photometric optimizer.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MrcMode {
    #[default]
    Off,
    On,
}

/// Laparoscope placement at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// World point the scope initially aims at through the trocar; this line of
    /// sight (with zero roll) is the NLS reference.
    pub look_at: Vector3<f64>,
    /// Camera distance beyond the trocar along the shaft, mm.
    pub insertion: f64,
    /// Camera-to-end-effector distance along the shaft, mm.
    pub scope_length: f64,
    /// Initial lateral camera offset from the trocar line in camera x/y, mm.
    pub rcm_offset: Vector2<f64>,
    /// Initial roll about the optical axis relative to the reference, deg.
    pub roll_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            look_at: Vector3::new(0.0, 0.0, 80.0),
            insertion: 30.0,
            scope_length: 300.0,
            rcm_offset: Vector2::zeros(),
            roll_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// HMAP file; when absent a synthetic heatmap is built.
    pub file: Option<PathBuf>,
    /// Points file (`u v` per line) binned into a heatmap; used when `file` is absent.
    pub points_file: Option<PathBuf>,
    /// Number of synthetic tip positions.
    pub points: usize,
    pub seed: u64,
    pub sigma: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            file: None,
            points_file: None,
            points: 2000,
            seed: 11,
            sigma: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    /// Relative standard deviation of the depth noise.
    pub depth_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            depth_sigma: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizedConfig {
    /// Seconds between depth estimates; in between, the last estimate is carried
    /// along with the known camera motion.
    pub estimate_every: f64,
    /// Lateral offset of the probe view used as the second frame, mm.
    pub probe_baseline: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
}

impl Default for OptimizedConfig {
    fn default() -> Self {
        Self {
            estimate_every: 2.0,
            probe_baseline: 1.0,
            optimizer: OptimizerConfig {
                init_depth: 20.0,
                ..OptimizerConfig::default()
            },
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Dump a PPM frame every this many steps; 0 disables.
    pub frame_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { frame_every: 0 }
    }
}

/// Complete description of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Simulated time, s.
    pub duration: f64,
    /// Control period, s.
    pub dt: f64,
    pub perception: PerceptionMode,
    pub mrc: MrcMode,
    /// Keep the previous image target unless the new selection is nearer the tip.
    pub hold_target: bool,
    pub camera: CameraIntrinsics,
    pub rig: RigConfig,
    pub scene: Scene,
    pub trajectory: TrajectoryScript,
    pub gains: ControlGains,
    pub limits: MotionLimits,
    pub viewgen: ViewGenConfig,
    pub heatmap: HeatmapConfig,
    pub noise: NoiseConfig,
    pub optimized: OptimizedConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 1,
            duration: 5.0,
            dt: 0.01,
            perception: PerceptionMode::default(),
            mrc: MrcMode::default(),
            hold_target: true,
            camera: CameraIntrinsics::default(),
            rig: RigConfig::default(),
            scene: Scene::default(),
            trajectory: TrajectoryScript::default(),
            gains: ControlGains::default(),
            limits: MotionLimits::default(),
            viewgen: ViewGenConfig::default(),
            heatmap: HeatmapConfig::default(),
            noise: NoiseConfig::default(),
            optimized: OptimizedConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative heatmap paths.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.heatmap.file, &mut cfg.heatmap.points_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad("duration must be >= dt");
        }
        self.camera.validate()?;
        self.scene.validate()?;
        self.trajectory.validate()?;
        self.gains.validate()?;
        self.viewgen.validate()?;
        if !(self.limits.max_linear > 0.0 && self.limits.max_angular > 0.0) {
            return bad("motion limits must be > 0");
        }
        let r = &self.rig;
        if !(r.insertion > 0.0 && r.scope_length > 0.0) {
            return bad("rig insertion and scope_length must be > 0");
        }
        if (r.look_at - self.scene.trocar).norm() <= r.insertion {
            return bad("rig.look_at must lie beyond the inserted camera");
        }
        if !(r.rcm_offset.iter().chain([&r.roll_deg]).all(|v| v.is_finite())) {
            return bad("rig offsets must be finite");
        }
        if !(self.heatmap.sigma >= 0.0) || (self.heatmap.file.is_none() && self.heatmap.points_file.is_none() && self.heatmap.points == 0) {
            return bad("heatmap needs sigma >= 0 and a point source");
        }
        if !(self.noise.pixel_sigma >= 0.0 && self.noise.depth_sigma >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if self.perception == PerceptionMode::Optimized {
            let o = &self.optimized;
            if !(o.estimate_every > 0.0 && o.probe_baseline > 0.0) {
                return bad("optimized.estimate_every and probe_baseline must be > 0");
            }
            o.optimizer.validate()?;
            o.loss.validate()?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// The natural line-of-sight pose: through the trocar towards `rig.look_at`, zero roll.
    pub fn reference_pose(&self) -> Pose {
        let dir = (self.rig.look_at - self.scene.trocar).normalize();
        Pose::look_at(self.scene.trocar + dir * self.rig.insertion, self.rig.look_at, -Vector3::y())
    }

    pub fn nls_reference(&self) -> NlsReference {
        let pose = self.reference_pose();
        let plane = &self.scene.plane;
        let axis = pose.z_axis();
        let depth = (plane.offset - plane.normal.dot(&pose.translation)) / plane.normal.dot(&axis);
        NlsReference {
            pose,
            plane_depth: depth,
        }
    }

    pub fn initial_camera(&self) -> Pose {
        let reference = self.reference_pose();
        let offset = Vector3::new(self.rig.rcm_offset.x, self.rig.rcm_offset.y, 0.0);
        let rolled = reference.compose(&Pose::rot_z(self.rig.roll_deg.to_radians()));
        Pose::new(rolled.rotation, reference.translation + reference.rotation * offset)
    }

    /// Camera pose in the end-effector frame.
    pub fn hand_eye(&self) -> Pose {
        Pose::from_translation(Vector3::new(0.0, 0.0, self.rig.scope_length))
    }
}

/// Roll of `camera` about the reference optical axis: the twist angle of the
/// relative rotation `R_refᵀ·R_cam` about z, in `(-π, π]`.
pub fn misorientation_of(camera: &Pose, reference: &NlsReference) -> f64 {
    let r = reference.pose.rotation.transpose() * camera.rotation;
    (r[(1, 0)] - r[(0, 1)]).atan2(r[(0, 0)] + r[(1, 1)])
}

/// Twist angle about z from the unit quaternion (`2·atan2(q_z, q_w)`), used as an
/// independent check of [`misorientation_of`].
pub fn twist_angle_from_quaternion(camera: &Pose, reference: &NlsReference) -> f64 {
    let r = reference.pose.rotation.transpose() * camera.rotation;
    let q = UnitQuaternion::from_matrix(&r);
    crate::geometry::wrap_angle(2.0 * q.k.atan2(q.w))
}
