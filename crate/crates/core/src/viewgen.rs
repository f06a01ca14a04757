//! Domain-knowledge heatmap and the target generator: a reward that trades
//! expert preference against camera motion, thresholded at a high percentile,
//! and the nearest qualifying pixel to the current tip.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Grid, ImageBuffer, Vector2};
use crate::io::{self, FormatError, HEATMAP_MAGIC};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViewGenError {
    #[error("no tracked points fall inside the {0}×{1} image")]
    NoPointsInBounds(usize, usize),
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
    #[error("invalid view-generator configuration: {0}")]
    InvalidConfig(String),
}

/// Non-negative preference weights over image pixels, peak-normalised when built.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    grid: Grid,
}

impl Heatmap {
    pub fn new(grid: Grid) -> Result<Self, ViewGenError> {
        if grid.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ViewGenError::InvalidHeatmap("values must be finite and >= 0".into()));
        }
        if !grid.data().iter().any(|v| *v > 0.0) {
            return Err(ViewGenError::InvalidHeatmap("needs a positive value".into()));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Grayscale rendering scaled so the peak is white.
    pub fn to_image(&self) -> ImageBuffer {
        let (_, hi) = self.grid.min_max();
        ImageBuffer::from_grid_clamped(&self.grid.map(|v| v / hi))
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        io::write_float_grid(path, HEATMAP_MAGIC, &self.grid)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let g = io::read_float_grid(path, HEATMAP_MAGIC)?;
        Heatmap::new(g).map_err(|e| FormatError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewGenConfig {
    /// Heatmap weight.
    pub w1: f64,
    /// Moving-cost weight per pixel; `None` means `-1 / image diagonal`.
    pub w2: Option<f64>,
    pub percentile: f64,
    /// Allowed tool depth interval, mm.
    pub depth_interval: [f64; 2],
}

impl Default for ViewGenConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: None,
            percentile: 0.95,
            depth_interval: [8.0, 12.0],
        }
    }
}

impl ViewGenConfig {
    pub fn validate(&self) -> Result<(), ViewGenError> {
        if !(self.w1 > 0.0) {
            return Err(ViewGenError::InvalidConfig("w1 must be > 0".into()));
        }
        if self.w2.is_some_and(|w| !(w < 0.0)) {
            return Err(ViewGenError::InvalidConfig("w2 must be < 0".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(ViewGenError::InvalidConfig("percentile must lie in (0, 1)".into()));
        }
        let [lo, hi] = self.depth_interval;
        if !(lo > 0.0 && lo < hi) {
            return Err(ViewGenError::InvalidConfig("need 0 < d_lo < d_hi".into()));
        }
        Ok(())
    }

    /// Effective moving-cost weight for an image of the given size.
    pub fn moving_weight(&self, width: usize, height: usize) -> f64 {
        self.w2
            .unwrap_or_else(|| -1.0 / ((width * width + height * height) as f64).sqrt())
    }
}

/// The setpoints handed to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTarget {
    pub target_px: Vector2<f64>,
    pub d_target: f64,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn convolve_separable(g: &Grid, kernel: &[f64]) -> Grid {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = g.dims();
    let tap = |get: &dyn Fn(isize) -> Option<f64>| -> f64 {
        kernel
            .iter()
            .enumerate()
            .filter_map(|(i, k)| get(i as isize - r).map(|v| v * k))
            .sum()
    };
    let horiz = Grid::from_fn(w, h, |x, y| {
        tap(&|d| {
            let xx = x as isize + d;
            (0..w as isize).contains(&xx).then(|| g.get(xx as usize, y))
        })
    });
    Grid::from_fn(w, h, |x, y| {
        tap(&|d| {
            let yy = y as isize + d;
            (0..h as isize).contains(&yy).then(|| horiz.get(x, yy as usize))
        })
    })
}

/// Histogram of tracked tip positions, Gaussian-smoothed (kernel truncated at
/// 3σ, zero outside the image) and normalised to peak 1. Points are binned to
/// the nearest pixel; points outside the image are ignored.
pub fn build_heatmap(
    points: &[Vector2<f64>],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Heatmap, ViewGenError> {
    let mut hist = Grid::new(width, height, 0.0);
    let mut any = false;
    for p in points {
        let (x, y) = (p.x.round(), p.y.round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height && p.x.is_finite() && p.y.is_finite() {
            let (x, y) = (x as usize, y as usize);
            hist.set(x, y, hist.get(x, y) + 1.0);
            any = true;
        }
    }
    if !any {
        return Err(ViewGenError::NoPointsInBounds(width, height));
    }
    let smoothed = if sigma > 0.0 {
        convolve_separable(&hist, &gaussian_kernel(sigma))
    } else {
        hist
    };
    let (_, peak) = smoothed.min_max();
    Heatmap::new(smoothed.map(|v| v / peak))
}

/// Per-pixel reward `w1·DM + w2·‖p − p_t‖` with distances in raw pixels.
pub fn reward_map(dm: &Heatmap, p_t: &Vector2<f64>, cfg: &ViewGenConfig) -> Grid {
    let w2 = cfg.moving_weight(dm.width(), dm.height());
    Grid::from_fn(dm.width(), dm.height(), |x, y| {
        let d = (Vector2::new(x as f64, y as f64) - p_t).norm();
        cfg.w1 * dm.grid().get(x, y) + w2 * d
    })
}

/// Nearest-rank percentile of all values.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    *v.select_nth_unstable_by(rank - 1, f64::total_cmp).1
}

/// Target pixel: among pixels whose reward strictly exceeds the percentile
/// threshold, the one nearest to `p_t` (ties to the smallest row-major index).
///
/// If the pixel containing `p_t` qualifies, `p_t` itself is returned so an
/// already well-placed tool commands no motion. A constant field has no
/// qualifying pixel and also returns `p_t`.
pub fn select_target(reward: &Grid, p_t: &Vector2<f64>, cfg: &ViewGenConfig) -> Vector2<f64> {
    let q = nearest_rank_percentile(reward.data(), cfg.percentile);
    let (w, h) = reward.dims();
    let (rx, ry) = (p_t.x.round(), p_t.y.round());
    if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h && reward.get(rx as usize, ry as usize) > q {
        return *p_t;
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, &r) in reward.data().iter().enumerate() {
        if r > q {
            let d = (Vector2::new((i % w) as f64, (i / w) as f64) - p_t).norm_squared();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    match best {
        Some((_, i)) => Vector2::new((i % w) as f64, (i / w) as f64),
        None => *p_t,
    }
}

/// Nearest point to `p_t` of the selected pixel's unit footprint. Unlike the
/// pixel centre this moves continuously as `p_t` crosses into the target set.
pub fn footprint_target(selected: &Vector2<f64>, p_t: &Vector2<f64>) -> Vector2<f64> {
    if selected == p_t {
        return *p_t;
    }
    Vector2::new(
        p_t.x.clamp(selected.x - 0.5, selected.x + 0.5),
        p_t.y.clamp(selected.y - 0.5, selected.y + 0.5),
    )
}

/// Clamps the tool depth into the configured interval; returns `(d_target, e_d)`.
pub fn target_depth(d_tool: f64, cfg: &ViewGenConfig) -> (f64, f64) {
    let [lo, hi] = cfg.depth_interval;
    let d_target = d_tool.clamp(lo, hi);
    (d_target, d_tool - d_target)
}

/// Full target generation for one observation.
pub fn generate_target(dm: &Heatmap, p_t: &Vector2<f64>, d_tool: f64, cfg: &ViewGenConfig) -> ViewTarget {
    let reward = reward_map(dm, p_t, cfg);
    ViewTarget {
        target_px: select_target(&reward, p_t, cfg),
        d_target: target_depth(d_tool, cfg).0,
    }
}

/// Synthetic tracked-tip positions standing in for expert video statistics:
/// a dominant cluster slightly below the image centre and a weaker one to the
/// lower left, as a right-handed operator tends to keep the tip.
pub fn synthesize_points(n: usize, width: usize, height: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let clusters = [
        (0.50 * w, 0.55 * h, 0.07 * w, 0.7),
        (0.38 * w, 0.62 * h, 0.05 * w, 0.3),
    ];
    let pick = rand_distr::Uniform::new(0.0, 1.0);
    (0..n)
        .map(|_| {
            let u: f64 = pick.sample(&mut rng);
            let (cx, cy, s, _) = if u < clusters[0].3 { clusters[0] } else { clusters[1] };
            let nx = Normal::new(cx, s).expect("positive sigma");
            let ny = Normal::new(cy, s).expect("positive sigma");
            Vector2::new(nx.sample(&mut rng), ny.sample(&mut rng))
        })
        .collect()
}
