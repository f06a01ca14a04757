//! Tool-tip perception: 2D localisation from the tip mask and metric depth from
//! pairs of monocular views with known camera poses.
//!
//! Depth is recovered by minimising the photometric reconstruction objective
//! (disparity-to-depth mapping, pose-based warping, SSIM + L1 photometric term,
//! edge-aware smoothness over an image pyramid) directly over a coarse disparity
//! grid, see [`estimate_depth_map`].

mod loss;
mod metrics;
mod optimize;
mod sampling;
mod warp;

pub use loss::{
    photometric_loss, FramePair, reconstruction_loss, smoothness_loss, ssim, total_loss,
    total_loss_with_gradient, SSIM_C1, SSIM_C2,
};
pub use metrics::{depth_metrics, DepthMetrics};
pub use optimize::{
    coarse_average, estimate_depth_map, estimate_depth_map_from, DepthEstimate, OptimizerConfig,
    MIN_BASELINE_MM, TEXTURE_ENERGY_MIN,
};
pub use sampling::hierarchical_pairs;
pub use warp::{warp_image, Warped};

use serde::{Deserialize, Serialize};

use crate::geometry::{
    DepthMap, DisparityMap, GeometryError, Grid, Mask, Vector2, DEPTH_MAX_MM, DEPTH_MIN_MM,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("disparity {0} outside [0, 1]")]
    DisparityOutOfRange(f64),
    #[error("no valid pixels after warping")]
    NoValidPixels,
    #[error("sequence of length {0} is too short (need at least 2)")]
    SequenceTooShort(usize),
    #[error("camera baseline {0:.4} mm is below the 0.5 mm minimum")]
    DegenerateBaseline(f64),
    #[error("image texture energy {0:.3e} is below the minimum")]
    TexturelessInput(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("ground-truth depth {0} is not positive")]
    NonPositiveTruth(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Weights and ranges of the depth objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// SSIM weight inside the photometric term.
    pub alpha: f64,
    /// Reconstruction weight.
    pub mu: f64,
    /// Smoothness weight.
    pub lambda: f64,
    /// Pyramid scales; each must be a power of 1/2.
    pub scales: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            mu: 0.8,
            lambda: 0.2,
            scales: vec![1.0, 0.5, 0.25, 0.125],
            d_min: DEPTH_MIN_MM,
            d_max: DEPTH_MAX_MM,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.alpha) && unit(self.mu) && unit(self.lambda)) {
            return Err(PerceptionError::InvalidConfig(
                "alpha, mu and lambda must lie in [0, 1]".into(),
            ));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(PerceptionError::InvalidConfig(
                "require 0 < d_min < d_max".into(),
            ));
        }
        if self.scales.is_empty() {
            return Err(PerceptionError::InvalidConfig("no scales".into()));
        }
        self.pyramid_levels().map(|_| ())
    }

    /// Number of 2× halvings for each configured scale.
    pub fn pyramid_levels(&self) -> Result<Vec<u32>, PerceptionError> {
        self.scales
            .iter()
            .map(|&s| {
                if !(s > 0.0 && s <= 1.0) {
                    return Err(PerceptionError::InvalidConfig(format!("scale {s} outside (0, 1]")));
                }
                let levels = (-s.log2()).round();
                if (2f64.powf(-levels) - s).abs() > 1e-12 {
                    return Err(PerceptionError::InvalidConfig(format!(
                        "scale {s} is not a power of 1/2"
                    )));
                }
                Ok(levels as u32)
            })
            .collect()
    }

    #[inline]
    pub fn depth_from_disparity(&self, disp: f64) -> f64 {
        self.d_min * self.d_max / (self.d_min + (self.d_max - self.d_min) * disp)
    }

    /// Derivative of [`LossConfig::depth_from_disparity`] with respect to disparity.
    #[inline]
    pub fn depth_derivative(&self, depth: f64) -> f64 {
        -depth * depth * (self.d_max - self.d_min) / (self.d_min * self.d_max)
    }

    #[inline]
    pub fn disparity_from_depth(&self, depth: f64) -> f64 {
        ((self.d_min * self.d_max / depth) - self.d_min) / (self.d_max - self.d_min)
    }
}

/// Observed tip: pixel position, metric depth and capture time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolObservation {
    pub tip_px: Vector2<f64>,
    pub d_tool: f64,
    pub timestamp: f64,
}

/// Centre of mass of the set pixels.
pub fn mask_centroid(mask: &Mask) -> Result<Vector2<f64>, PerceptionError> {
    let mut sum = (0.0, 0.0);
    let mut n = 0usize;
    for (x, y) in mask.iter_set() {
        sum.0 += x as f64;
        sum.1 += y as f64;
        n += 1;
    }
    if n == 0 {
        return Err(PerceptionError::EmptyMask);
    }
    Ok(Vector2::new(sum.0 / n as f64, sum.1 / n as f64))
}

/// Median depth over the mask, taking the lower middle element for even counts.
pub fn median_depth_in_mask(depth: &Grid, mask: &Mask) -> Result<f64, PerceptionError> {
    if depth.dims() != mask.dims() {
        return Err(GeometryError::DimensionMismatch {
            expected: depth.dims(),
            found: mask.dims(),
        }
        .into());
    }
    let mut values: Vec<f64> = mask.iter_set().map(|(x, y)| depth.get(x, y)).collect();
    if values.is_empty() {
        return Err(PerceptionError::EmptyMask);
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Ok(*m)
}

/// Maps a disparity map onto metric depth in `[d_min, d_max]`.
pub fn disparity_to_depth(disp: &Grid, cfg: &LossConfig) -> Result<DepthMap, PerceptionError> {
    if let Some(&bad) = disp
        .data()
        .iter()
        .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
    {
        return Err(PerceptionError::DisparityOutOfRange(bad));
    }
    let depth = disp.map(|d| cfg.depth_from_disparity(d));
    Ok(DepthMap::with_range(depth, cfg.d_min, cfg.d_max)?)
}

/// Inverse of [`disparity_to_depth`], clamping depths into range first.
pub fn depth_to_disparity(depth: &Grid, cfg: &LossConfig) -> DisparityMap {
    let g = depth.map(|d| {
        cfg.disparity_from_depth(d.clamp(cfg.d_min, cfg.d_max))
            .clamp(0.0, 1.0)
    });
    DisparityMap::new(g).expect("clamped into [0, 1]")
}
