use serde::{Deserialize, Serialize};

use super::loss::{FramePair, LossProblem};
use super::{disparity_to_depth, LossConfig, PerceptionError};
use crate::geometry::{CameraIntrinsics, DepthMap, Grid};

/// Minimum camera displacement for a usable pair, mm.
pub const MIN_BASELINE_MM: f64 = 0.5;
/// Minimum mean squared intensity gradient of either image.
pub const TEXTURE_ENERGY_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Depth the disparity grid starts from, mm.
    pub init_depth: f64,
    /// Stop once the loss improves by less than this fraction over the last
    /// `patience` accepted steps.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_width: 40,
            grid_height: 30,
            iterations: 400,
            learning_rate: 0.05,
            momentum: 0.9,
            init_depth: 50.0,
            tolerance: 1e-6,
            patience: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.grid_width < 2 || self.grid_height < 2 {
            return Err(PerceptionError::InvalidConfig("grid must be at least 2×2".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(PerceptionError::InvalidConfig(
                "need learning_rate > 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    /// Full-resolution depth of the first view.
    pub depth_m: DepthMap,
    /// Full-resolution depth of the second view.
    pub depth_n: DepthMap,
    pub loss: f64,
    /// Loss after each accepted iterate, starting with the initial value.
    pub loss_history: Vec<f64>,
}

/// Separable bilinear upsampling from a coarse grid with pixel-centre alignment.
struct Upsampler {
    gw: usize,
    gh: usize,
    w: usize,
    h: usize,
    xs: Vec<(usize, usize, f64)>,
    ys: Vec<(usize, usize, f64)>,
}

impl Upsampler {
    fn new(gw: usize, gh: usize, w: usize, h: usize) -> Self {
        let axis = |n: usize, g: usize| -> Vec<(usize, usize, f64)> {
            (0..n)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * g as f64 / n as f64 - 0.5).clamp(0.0, (g - 1) as f64);
                    let i0 = (s.floor() as usize).min(g - 2);
                    (i0, i0 + 1, s - i0 as f64)
                })
                .collect()
        };
        Self {
            gw,
            gh,
            w,
            h,
            xs: axis(w, gw),
            ys: axis(h, gh),
        }
    }

    fn apply(&self, g: &Grid) -> Grid {
        Grid::from_fn(self.w, self.h, |x, y| {
            let (x0, x1, fx) = self.xs[x];
            let (y0, y1, fy) = self.ys[y];
            let top = g.get(x0, y0) * (1.0 - fx) + g.get(x1, y0) * fx;
            let bot = g.get(x0, y1) * (1.0 - fx) + g.get(x1, y1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    fn adjoint(&self, fine: &Grid) -> Grid {
        let mut out = Grid::new(self.gw, self.gh, 0.0);
        let data = out.data_mut();
        for y in 0..self.h {
            let (y0, y1, fy) = self.ys[y];
            for x in 0..self.w {
                let (x0, x1, fx) = self.xs[x];
                let v = fine.get(x, y);
                data[y0 * self.gw + x0] += v * (1.0 - fx) * (1.0 - fy);
                data[y0 * self.gw + x1] += v * fx * (1.0 - fy);
                data[y1 * self.gw + x0] += v * (1.0 - fx) * fy;
                data[y1 * self.gw + x1] += v * fx * fy;
            }
        }
        out
    }
}

/// Recovers metric depth for both views of a posed pair by minimising the
/// multi-scale photometric objective over coarse disparity grids.
///
/// Each iterate is a momentum step on both grids, clamped to `[0, 1]`. A step
/// that raises the objective is rejected, the velocity is reset and the step size
/// halved for the next attempt, so the accepted loss sequence never increases.
/// Iteration ends at the budget or once progress stalls (see
/// [`OptimizerConfig::tolerance`]); both rules are deterministic.
pub fn estimate_depth_map(
    pair: &FramePair,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<DepthEstimate, PerceptionError> {
    let init = Grid::new(
        opt.grid_width,
        opt.grid_height,
        cfg.disparity_from_depth(opt.init_depth.clamp(cfg.d_min, cfg.d_max)),
    );
    estimate_depth_map_from(pair, k, cfg, opt, init.clone(), init)
}

/// [`estimate_depth_map`] starting from explicit coarse disparity grids.
pub fn estimate_depth_map_from(
    pair: &FramePair,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
    init_m: Grid,
    init_n: Grid,
) -> Result<DepthEstimate, PerceptionError> {
    opt.validate()?;
    let baseline = pair.baseline();
    if baseline < MIN_BASELINE_MM {
        return Err(PerceptionError::DegenerateBaseline(baseline));
    }
    for img in [&pair.image_m, &pair.image_n] {
        let energy = img.luma().gradient_energy();
        if energy < TEXTURE_ENERGY_MIN {
            return Err(PerceptionError::TexturelessInput(energy));
        }
    }
    for g in [&init_m, &init_n] {
        if g.dims() != (opt.grid_width, opt.grid_height) {
            return Err(PerceptionError::InvalidConfig("initial grid size mismatch".into()));
        }
    }
    let problem = LossProblem::new(pair, k, cfg)?;
    let (w, h) = problem.dims();
    let up = Upsampler::new(opt.grid_width, opt.grid_height, w, h);

    let clamp = |g: Grid| g.map(|v| v.clamp(0.0, 1.0));
    let mut cur = (clamp(init_m), clamp(init_n));
    let eval = |m: &Grid, n: &Grid| problem.evaluate(&up.apply(m), &up.apply(n), true);

    let (mut loss, grads) = eval(&cur.0, &cur.1)?;
    let (gm, gn) = grads.expect("requested");
    let mut grad = (up.adjoint(&gm), up.adjoint(&gn));
    let mut vel = (Grid::new(opt.grid_width, opt.grid_height, 0.0), Grid::new(opt.grid_width, opt.grid_height, 0.0));
    let mut lr = opt.learning_rate;
    let mut history = vec![loss];

    for _ in 0..opt.iterations {
        let step = |v: &Grid, g: &Grid, x: &Grid| -> (Grid, Grid) {
            let nv: Vec<f64> = v
                .data()
                .iter()
                .zip(g.data())
                .map(|(v, g)| opt.momentum * v - lr * g)
                .collect();
            let nv = Grid::from_vec(v.width(), v.height(), nv).expect("sized");
            let nx: Vec<f64> = x
                .data()
                .iter()
                .zip(nv.data())
                .map(|(x, v)| (x + v).clamp(0.0, 1.0))
                .collect();
            (nv, Grid::from_vec(x.width(), x.height(), nx).expect("sized"))
        };
        let (vm, xm) = step(&vel.0, &grad.0, &cur.0);
        let (vn, xn) = step(&vel.1, &grad.1, &cur.1);
        let (new_loss, g) = match eval(&xm, &xn) {
            Ok(r) => r,
            Err(PerceptionError::NoValidPixels) => (f64::INFINITY, None),
            Err(e) => return Err(e),
        };
        if new_loss <= loss {
            let (gm, gn) = g.expect("requested");
            grad = (up.adjoint(&gm), up.adjoint(&gn));
            cur = (xm, xn);
            vel = (vm, vn);
            loss = new_loss;
            lr = (lr * 1.1).min(opt.learning_rate);
            history.push(loss);
            if history.len() > opt.patience {
                let past = history[history.len() - 1 - opt.patience];
                if past - loss <= opt.tolerance * loss.abs() {
                    break;
                }
            }
        } else {
            vel.0.data_mut().fill(0.0);
            vel.1.data_mut().fill(0.0);
            lr *= 0.5;
        }
    }

    let depth_m = disparity_to_depth(&up.apply(&cur.0), cfg)?;
    let depth_n = disparity_to_depth(&up.apply(&cur.1), cfg)?;
    Ok(DepthEstimate {
        depth_m,
        depth_n,
        loss,
        loss_history: history,
    })
}

/// Box-averages a full-resolution grid onto a coarse grid (used for initialisation).
pub fn coarse_average(fine: &Grid, gw: usize, gh: usize) -> Grid {
    let (w, h) = fine.dims();
    let mut sum = Grid::new(gw, gh, 0.0);
    let mut cnt = Grid::new(gw, gh, 0.0);
    for y in 0..h {
        let gy = (y * gh / h).min(gh - 1);
        for x in 0..w {
            let gx = (x * gw / w).min(gw - 1);
            sum.set(gx, gy, sum.get(gx, gy) + fine.get(x, y));
            cnt.set(gx, gy, cnt.get(gx, gy) + 1.0);
        }
    }
    Grid::from_fn(gw, gh, |x, y| sum.get(x, y) / cnt.get(x, y).max(1.0))
}
