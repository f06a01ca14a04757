use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MrcMode, PerceptionMode, ScenarioConfig, StepRecord, StepStatus};

/// Header of the trace CSV, in column order.
pub const TRACE_COLUMNS: [&str; 38] = [
    "t",
    "ep_x",
    "ep_y",
    "e_d",
    "er_x",
    "er_y",
    "theta_star",
    "V",
    "v_x",
    "v_y",
    "v_z",
    "w_x",
    "w_y",
    "w_z",
    "r00",
    "r01",
    "r02",
    "r10",
    "r11",
    "r12",
    "r20",
    "r21",
    "r22",
    "cam_x",
    "cam_y",
    "cam_z",
    "misorientation",
    "phi",
    "phi_zero",
    "target_u",
    "target_v",
    "tip_u",
    "tip_v",
    "d_tool",
    "d_target",
    "rcm_dev",
    "step",
    "status",
];

/// Fraction of the run treated as steady state.
pub const STEADY_FRACTION: f64 = 0.3;
/// Lyapunov checks stop once V falls below this fraction of its initial value.
pub const LYAPUNOV_FLOOR: f64 = 1e-3;
/// Pixel threshold for the convergence time.
pub const SETTLE_PX: f64 = 5.0;
/// Depth threshold for the convergence time.
pub const SETTLE_MM: f64 = 2.0;

/// A complete run: the config that produced it and one record per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: ScenarioConfig,
    pub records: Vec<StepRecord>,
}

/// Aggregates recomputable from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub duration: f64,
    pub dt: f64,
    pub perception: PerceptionMode,
    pub mrc: MrcMode,
    /// First time after which |e_p| stays below the pixel threshold.
    pub settle_time_ep: Option<f64>,
    /// First time after which |e_d| stays below the depth threshold.
    pub settle_time_ed: Option<f64>,
    /// Maxima over the final 30% of the run.
    pub steady_max_ep: f64,
    pub steady_max_ed: f64,
    pub max_rcm_error: f64,
    pub max_abs_misorientation_deg: f64,
    pub final_misorientation_deg: f64,
    pub lyapunov_violations: usize,
    /// Steps where rolling by θ* gave a larger |φ| than not rolling.
    pub mrc_worsened_steps: usize,
    pub tool_lost_steps: usize,
    pub ill_conditioned_steps: usize,
    pub mrc_failed_steps: usize,
    pub perception_failed_steps: usize,
    pub gains: GainsEcho,
}

/// Parameter values echoed into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsEcho {
    pub ks: [f64; 4],
    pub kr: [f64; 2],
    pub k_theta: f64,
    pub k_d: f64,
    pub w1: f64,
    pub w2: f64,
    pub percentile: f64,
    pub depth_interval: [f64; 2],
    pub alpha: f64,
    pub mu: f64,
    pub lambda: f64,
}

fn num(out: &mut String, v: f64) {
    // shortest round-trip representation keeps CSVs bit-comparable
    write!(out, "{v:?}").expect("writing to a String");
}

/// Time after which `pred` holds for every remaining record.
fn settle_time(records: &[StepRecord], pred: impl Fn(&StepRecord) -> bool) -> Option<f64> {
    let last_bad = records.iter().rposition(|r| !pred(r));
    match last_bad {
        None => records.first().map(|r| r.t),
        Some(i) => records.get(i + 1).map(|r| r.t),
    }
}

/// Indices `k` where `V[k+1] >= V[k]` while `V[k]` is above the floor.
pub fn lyapunov_violations(records: &[StepRecord], floor_fraction: f64) -> Vec<usize> {
    let Some(v0) = records.first().map(|r| r.v) else {
        return Vec::new();
    };
    let floor = floor_fraction * v0;
    records
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].v > floor && !(w[1].v < w[0].v))
        .map(|(i, _)| i)
        .collect()
}

impl RunTrace {
    pub fn new(config: ScenarioConfig, records: Vec<StepRecord>) -> Self {
        Self { config, records }
    }

    /// Records in the steady-state tail.
    pub fn steady(&self) -> &[StepRecord] {
        let n = self.records.len();
        let start = n - ((n as f64) * STEADY_FRACTION).round() as usize;
        &self.records[start.min(n)..]
    }

    pub fn to_csv(&self) -> String {
        let mut out = TRACE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let e = &r.errors;
            let mut vals = vec![r.t, e.e_p.x, e.e_p.y, e.e_d, e.e_r.x, e.e_r.y, e.theta_star, r.v];
            vals.extend(r.command.as_array());
            vals.extend(r.camera.to_row_major12());
            vals.extend([
                r.misorientation,
                r.phi,
                r.phi_zero,
                r.target_px.x,
                r.target_px.y,
                r.tip_px.x,
                r.tip_px.y,
                r.d_tool,
                r.d_target,
                e.e_r.norm(),
            ]);
            for v in vals {
                num(&mut out, v);
                out.push(',');
            }
            write!(out, "{},{}", r.step, r.status.as_str()).expect("writing to a String");
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> Summary {
        let recs = &self.records;
        let cfg = &self.config;
        let count = |s: StepStatus| recs.iter().filter(|r| r.status == s).count();
        let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |a, b| a.max(b));
        let steady = self.steady();
        Summary {
            name: cfg.name.clone(),
            seed: cfg.seed,
            steps: recs.len(),
            duration: cfg.duration,
            dt: cfg.dt,
            perception: cfg.perception,
            mrc: cfg.mrc,
            settle_time_ep: settle_time(recs, |r| r.status != StepStatus::ToolLost && r.errors.e_p.norm() < SETTLE_PX),
            settle_time_ed: settle_time(recs, |r| r.status != StepStatus::ToolLost && r.errors.e_d.abs() < SETTLE_MM),
            steady_max_ep: fmax(&mut steady.iter().map(|r| r.errors.e_p.norm())),
            steady_max_ed: fmax(&mut steady.iter().map(|r| r.errors.e_d.abs())),
            max_rcm_error: fmax(&mut recs.iter().map(|r| r.errors.e_r.norm())),
            max_abs_misorientation_deg: fmax(&mut recs.iter().map(|r| r.misorientation.abs().to_degrees())),
            final_misorientation_deg: recs.last().map_or(0.0, |r| r.misorientation.to_degrees()),
            lyapunov_violations: lyapunov_violations(recs, LYAPUNOV_FLOOR).len(),
            mrc_worsened_steps: recs
                .iter()
                .filter(|r| r.phi.is_finite() && r.phi.abs() > r.phi_zero.abs() + 1e-12)
                .count(),
            tool_lost_steps: count(StepStatus::ToolLost),
            ill_conditioned_steps: count(StepStatus::IllConditioned),
            mrc_failed_steps: count(StepStatus::MrcFailed),
            perception_failed_steps: count(StepStatus::PerceptionFailed),
            gains: GainsEcho {
                ks: cfg.gains.ks,
                kr: cfg.gains.kr,
                k_theta: cfg.gains.k_theta,
                k_d: cfg.gains.k_d,
                w1: cfg.viewgen.w1,
                w2: cfg.viewgen.moving_weight(cfg.camera.width, cfg.camera.height),
                percentile: cfg.viewgen.percentile,
                depth_interval: cfg.viewgen.depth_interval,
                alpha: cfg.optimized.loss.alpha,
                mu: cfg.optimized.loss.mu,
                lambda: cfg.optimized.loss.lambda,
            },
        }
    }
}

impl Summary {
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("summary is always representable")
    }
}
