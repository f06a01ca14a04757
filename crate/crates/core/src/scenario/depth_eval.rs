use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::perception::{
    coarse_average, depth_metrics, depth_to_disparity, estimate_depth_map, estimate_depth_map_from, FramePair,
    LossConfig, OptimizerConfig,
};
use crate::scene::{render, BackgroundPlane, Scene, ToolState, TIP_REGION_MM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Uniform disparity from `optimizer.init_depth`.
    #[default]
    Constant,
    /// Coarse average of the rendered ground truth.
    Truth,
}

/// Sweep of tool placements in front of a fronto-parallel reference surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthEvalConfig {
    pub camera: CameraIntrinsics,
    /// Camera-to-surface distance, mm.
    pub surface_depth: f64,
    /// Tool height above the surface per band, mm.
    pub bands: Vec<[f64; 2]>,
    pub placements_per_band: usize,
    /// Lateral camera motion between the two views, mm.
    pub baseline: f64,
    pub tool_radius: f64,
    pub seed: u64,
    pub init: InitMode,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self {
            camera: CameraIntrinsics::default(),
            surface_depth: 50.0,
            bands: vec![[4.0, 8.0], [8.0, 12.0], [12.0, 16.0]],
            placements_per_band: 3,
            baseline: 2.0,
            tool_radius: 2.5,
            seed: 7,
            init: InitMode::Constant,
            optimizer: OptimizerConfig {
                init_depth: 40.0,
                ..OptimizerConfig::default()
            },
            loss: LossConfig::default(),
        }
    }
}

impl DepthEvalConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScenarioError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.camera.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        let bad = |m: &str| Err(ScenarioError::Config(m.into()));
        if !(self.baseline > 0.0 && self.tool_radius > 0.0) {
            return bad("baseline and tool_radius must be > 0");
        }
        for &[lo, hi] in &self.bands {
            if !(lo >= 0.0 && lo < hi && hi + 1.0 < self.surface_depth) {
                return bad("each band needs 0 <= lo < hi < surface_depth - 1");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: [f64; 2],
    pub placements: usize,
    /// Tool-region pixels pooled over the band's placements.
    pub pixels: usize,
    /// Percent.
    pub abs_rel: f64,
    /// mm.
    pub rmse: f64,
    /// Mean optimizer wall time per frame pair, s.
    pub seconds_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalReport {
    pub bands: Vec<BandReport>,
    /// Pooled over every evaluated band.
    pub overall: Option<BandReport>,
    /// Bands dropped because they held no placements.
    pub empty_bands: Vec<[f64; 2]>,
}

impl DepthEvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("band_mm        placements  pixels  abs_rel_%  rmse_mm  s_per_frame\n");
        let row = |label: String, b: &BandReport| {
            format!(
                "{label:<14} {:>10}  {:>6}  {:>9.2}  {:>7.3}  {:>11.2}\n",
                b.placements, b.pixels, b.abs_rel, b.rmse, b.seconds_per_frame
            )
        };
        for b in &self.bands {
            out += &row(format!("[{}, {}]", b.band[0], b.band[1]), b);
        }
        if let Some(o) = &self.overall {
            out += &row(format!("overall [{}, {}]", o.band[0], o.band[1]), o);
        }
        for b in &self.empty_bands {
            out += &format!("[{}, {}] omitted: no placements\n", b[0], b[1]);
        }
        out
    }
}

struct Placement {
    band: usize,
    height: f64,
    index: usize,
}

struct Outcome {
    band: usize,
    est: Vec<f64>,
    truth: Vec<f64>,
    seconds: f64,
}

/// Scene with the tool's axis `height` mm in front of the surface, centred near the image centre.
fn placement_scene(cfg: &DepthEvalConfig, p: &Placement) -> Result<Scene, ScenarioError> {
    let k = &cfg.camera;
    let depth = cfg.surface_depth - p.height;
    let px = Vector2::new(
        k.cx + 24.0 * (p.index % 3) as f64 - 24.0,
        k.cy + 16.0 * ((p.index / 3) % 3) as f64 - 16.0,
    );
    let mid = k.backproject(&px, depth)?;
    let angle = 0.35 + 0.6 * p.index as f64;
    let dir = Vector3::new(angle.cos(), angle.sin(), 0.0);
    let tool = ToolState::new(mid + dir * (0.5 * TIP_REGION_MM), dir, cfg.tool_radius)?;
    Ok(Scene {
        plane: BackgroundPlane {
            normal: Vector3::z(),
            offset: cfg.surface_depth,
        },
        tool,
        tool_length: 250.0,
        trocar: Vector3::new(0.0, 0.0, -30.0),
        seed: cfg.seed + p.index as u64,
    })
}

fn evaluate(cfg: &DepthEvalConfig, p: &Placement) -> Result<Outcome, ScenarioError> {
    let k = &cfg.camera;
    let scene = placement_scene(cfg, p)?;
    let pose_m = Pose::identity();
    let pose_n = Pose::from_translation(Vector3::new(cfg.baseline, 0.0, 0.0));
    let m = render(&scene, &pose_m, k)?;
    let n = render(&scene, &pose_n, k)?;
    let pair = FramePair {
        image_m: m.image,
        image_n: n.image,
        pose_m,
        pose_n,
    };
    let start = Instant::now();
    let est = match cfg.init {
        InitMode::Constant => estimate_depth_map(&pair, k, &cfg.loss, &cfg.optimizer)?,
        InitMode::Truth => {
            let (gw, gh) = (cfg.optimizer.grid_width, cfg.optimizer.grid_height);
            let dm = coarse_average(depth_to_disparity(m.depth.grid(), &cfg.loss).grid(), gw, gh);
            let dn = coarse_average(depth_to_disparity(n.depth.grid(), &cfg.loss).grid(), gw, gh);
            estimate_depth_map_from(&pair, k, &cfg.loss, &cfg.optimizer, dm, dn)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let (mut e, mut t) = (Vec::new(), Vec::new());
    for (x, y) in m.tip_mask.iter_set() {
        e.push(est.depth_m.grid().get(x, y));
        t.push(m.depth.grid().get(x, y));
    }
    Ok(Outcome {
        band: p.band,
        est: e,
        truth: t,
        seconds,
    })
}

fn pooled(band: [f64; 2], outcomes: &[&Outcome]) -> Result<BandReport, ScenarioError> {
    let est: Vec<f64> = outcomes.iter().flat_map(|o| o.est.iter().copied()).collect();
    let truth: Vec<f64> = outcomes.iter().flat_map(|o| o.truth.iter().copied()).collect();
    let m = depth_metrics(&est, &truth)?;
    Ok(BandReport {
        band,
        placements: outcomes.len(),
        pixels: est.len(),
        abs_rel: m.abs_rel,
        rmse: m.rmse,
        seconds_per_frame: outcomes.iter().map(|o| o.seconds).sum::<f64>() / outcomes.len() as f64,
    })
}

/// Runs the optimizer over every placement and reports tool-region metrics per band.
pub fn depth_eval(cfg: &DepthEvalConfig) -> Result<DepthEvalReport, ScenarioError> {
    cfg.validate()?;
    let n = cfg.placements_per_band;
    let placements: Vec<Placement> = cfg
        .bands
        .iter()
        .enumerate()
        .flat_map(|(b, &[lo, hi])| {
            (0..n).map(move |j| Placement {
                band: b,
                height: lo + (j as f64 + 0.5) / n as f64 * (hi - lo),
                index: b * n + j,
            })
        })
        .collect();
    let outcomes: Vec<Outcome> = placements
        .par_iter()
        .map(|p| evaluate(cfg, p))
        .collect::<Result<_, _>>()?;

    let mut bands = Vec::new();
    let mut empty_bands = Vec::new();
    for (b, &band) in cfg.bands.iter().enumerate() {
        let mine: Vec<&Outcome> = outcomes.iter().filter(|o| o.band == b && !o.est.is_empty()).collect();
        if mine.is_empty() {
            empty_bands.push(band);
        } else {
            bands.push(pooled(band, &mine)?);
        }
    }
    let all: Vec<&Outcome> = outcomes.iter().filter(|o| !o.est.is_empty()).collect();
    let overall = if all.is_empty() || bands.is_empty() {
        None
    } else {
        let lo = bands.iter().map(|b| b.band[0]).fold(f64::INFINITY, f64::min);
        let hi = bands.iter().map(|b| b.band[1]).fold(f64::NEG_INFINITY, f64::max);
        Some(pooled([lo, hi], &all)?)
    };
    Ok(DepthEvalReport {
        bands,
        overall,
        empty_bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_initialisation_is_nearly_exact() {
        let cfg = DepthEvalConfig {
            bands: vec![[8.0, 12.0]],
            placements_per_band: 1,
            init: InitMode::Truth,
            optimizer: OptimizerConfig {
                iterations: 5,
                ..DepthEvalConfig::default().optimizer
            },
            ..DepthEvalConfig::default()
        };
        let r = depth_eval(&cfg).unwrap();
        assert_eq!(r.bands.len(), 1);
        assert!(r.bands[0].pixels > 100);
        assert!(r.bands[0].abs_rel < 3.0, "{:?}", r.bands[0]);
    }

    #[test]
    fn empty_band_is_omitted() {
        let cfg = DepthEvalConfig {
            placements_per_band: 0,
            ..DepthEvalConfig::default()
        };
        let r = depth_eval(&cfg).unwrap();
        assert!(r.bands.is_empty() && r.overall.is_none());
        assert_eq!(r.empty_bands.len(), 3);
        assert!(r.to_table().contains("omitted"));
    }

    #[test]
    fn rejects_bands_behind_the_surface() {
        let cfg = DepthEvalConfig {
            bands: vec![[10.0, 60.0]],
            ..DepthEvalConfig::default()
        };
        assert!(depth_eval(&cfg).unwrap_err().is_config());
    }
}
