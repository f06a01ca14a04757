//! C ABI over `lapfov`.
//!
//! Every function returns a [`LapfovStatus`]; on failure a message for the
//! calling thread is available from [`lapfov_last_error`]. Poses cross the
//! boundary as 12 doubles: row-major rotation, then translation. Panics never
//! unwind into C; they surface as [`LapfovStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lapfov::controller::{image_jacobian, lyapunov, rcm_error, ControlError, TaskErrors};
use lapfov::geometry::{CameraIntrinsics, Matrix3, Pose, Vector2, Vector3};
use lapfov::mrc::NlsReference;
use lapfov::perception::hierarchical_pairs;
use lapfov::scenario::{misorientation_of, MrcMode, ScenarioConfig, ScenarioError, Simulation, StepStatus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapfovStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    InvariantViolation = 4,
    IllConditioned = 5,
    RuntimeError = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque closed-loop simulation.
pub struct LapfovSimulation {
    sim: Simulation,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapfovIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapfovGains {
    pub ks: [f64; 4],
    pub kr: [f64; 2],
    pub k_theta: f64,
    pub k_d: f64,
}

/// Per-step output. Error fields are NaN when `status` is tool-lost.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapfovStep {
    pub step: u64,
    pub t: f64,
    pub e_p: [f64; 2],
    pub e_d: f64,
    pub e_r: [f64; 2],
    pub theta_star: f64,
    pub v: f64,
    /// Base-frame twist `[v_x, v_y, v_z, w_x, w_y, w_z]` after limiting.
    pub command: [f64; 6],
    pub camera: [f64; 12],
    pub misorientation: f64,
    /// 0 ok, 1 tool lost, 2 ill-conditioned, 3 MRC failed, 4 perception failed.
    pub status: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: LapfovStatus, msg: impl Into<String>) -> LapfovStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn scenario_status(e: ScenarioError) -> LapfovStatus {
    let code = match &e {
        _ if e.is_config() => LapfovStatus::ConfigError,
        ScenarioError::InvariantViolation { .. } => LapfovStatus::InvariantViolation,
        ScenarioError::Control(ControlError::IllConditionedJacobian(_)) => LapfovStatus::IllConditioned,
        _ => LapfovStatus::RuntimeError,
    };
    fail(code, e.to_string())
}

fn guard(f: impl FnOnce() -> LapfovStatus) -> LapfovStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LapfovStatus::Panic, "internal panic"),
    }
}

fn pose_from(p: &[f64; 12]) -> Result<Pose, LapfovStatus> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(fail(LapfovStatus::InvalidArgument, "pose has non-finite entries"));
    }
    let r = Matrix3::from_row_slice(&p[..9]);
    if (r.transpose() * r - Matrix3::identity()).amax() > 1e-6 || r.determinant() < 0.0 {
        return Err(fail(LapfovStatus::InvalidArgument, "pose rotation is not a proper rotation"));
    }
    Ok(Pose::new(r, Vector3::new(p[9], p[10], p[11])))
}

fn intrinsics_from(k: &LapfovIntrinsics) -> Result<CameraIntrinsics, LapfovStatus> {
    let k = CameraIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as usize,
        height: k.height as usize,
    };
    k.validate().map_err(|e| fail(LapfovStatus::InvalidArgument, e.to_string()))?;
    Ok(k)
}

/// Copies the calling thread's last error message, NUL-terminated, into `buf`.
/// `len` receives the message length excluding the terminator.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `len` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn lapfov_last_error(buf: *mut c_char, cap: usize, len: *mut usize) -> LapfovStatus {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !len.is_null() {
            *len = msg.len();
        }
        if buf.is_null() {
            return LapfovStatus::Ok;
        }
        if cap < msg.len() + 1 {
            return LapfovStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
        *buf.add(msg.len()) = 0;
        LapfovStatus::Ok
    })
}

/// Default intrinsics: 320×240, focal 260 px, centred principal point.
#[no_mangle]
pub extern "C" fn lapfov_default_intrinsics() -> LapfovIntrinsics {
    let k = CameraIntrinsics::default();
    LapfovIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as u32,
        height: k.height as u32,
    }
}

/// Creates a simulation from a TOML scenario; a null `toml` uses the defaults.
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_new(toml: *const c_char, out: *mut *mut LapfovSimulation) -> LapfovStatus {
    guard(|| {
        if out.is_null() {
            return fail(LapfovStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = if toml.is_null() {
            ScenarioConfig::default()
        } else {
            let Ok(text) = CStr::from_ptr(toml).to_str() else {
                return fail(LapfovStatus::InvalidArgument, "config is not UTF-8");
            };
            match ScenarioConfig::from_toml_str(text) {
                Ok(c) => c,
                Err(e) => return scenario_status(e),
            }
        };
        match Simulation::new(cfg) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(LapfovSimulation { sim }));
                LapfovStatus::Ok
            }
            Err(e) => scenario_status(e),
        }
    })
}

/// # Safety
/// `sim` must come from [`lapfov_simulation_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_free(sim: *mut LapfovSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one control period. `out` may be null.
///
/// # Safety
/// `sim` must be a live handle; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_step(sim: *mut LapfovSimulation, out: *mut LapfovStep) -> LapfovStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(LapfovStatus::NullPointer, "sim is null");
        };
        let r = match h.sim.step() {
            Ok(r) => r,
            Err(e) => return scenario_status(e),
        };
        if let Some(o) = out.as_mut() {
            *o = LapfovStep {
                step: r.step as u64,
                t: r.t,
                e_p: [r.errors.e_p.x, r.errors.e_p.y],
                e_d: r.errors.e_d,
                e_r: [r.errors.e_r.x, r.errors.e_r.y],
                theta_star: r.errors.theta_star,
                v: r.v,
                command: r.command.as_array(),
                camera: r.camera.to_row_major12(),
                misorientation: r.misorientation,
                status: match r.status {
                    StepStatus::Ok => 0,
                    StepStatus::ToolLost => 1,
                    StepStatus::IllConditioned => 2,
                    StepStatus::MrcFailed => 3,
                    StepStatus::PerceptionFailed => 4,
                },
            };
        }
        LapfovStatus::Ok
    })
}

/// Current camera pose.
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_camera(sim: *const LapfovSimulation, out: *mut [f64; 12]) -> LapfovStatus {
    guard(|| match (sim.as_ref(), out.as_mut()) {
        (Some(h), Some(o)) => {
            *o = h.sim.camera().to_row_major12();
            LapfovStatus::Ok
        }
        _ => fail(LapfovStatus::NullPointer, "null argument"),
    })
}

/// Moves the tool tip towards a world point, rate limited, overriding the script.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_set_tool_goal(
    sim: *mut LapfovSimulation,
    x: f64,
    y: f64,
    z: f64,
) -> LapfovStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(LapfovStatus::NullPointer, "sim is null");
        };
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return fail(LapfovStatus::InvalidArgument, "goal must be finite");
        }
        h.sim.set_tool_goal(Vector3::new(x, y, z));
        LapfovStatus::Ok
    })
}

/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_set_mrc(sim: *mut LapfovSimulation, on: bool) -> LapfovStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(LapfovStatus::NullPointer, "sim is null");
        };
        h.sim.set_mrc(if on { MrcMode::On } else { MrcMode::Off });
        LapfovStatus::Ok
    })
}

/// # Safety
/// `sim` and `gains` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lapfov_simulation_set_gains(
    sim: *mut LapfovSimulation,
    gains: *const LapfovGains,
) -> LapfovStatus {
    guard(|| {
        let (Some(h), Some(g)) = (sim.as_mut(), gains.as_ref()) else {
            return fail(LapfovStatus::NullPointer, "null argument");
        };
        let mut next = h.sim.config().gains.clone();
        next.ks = g.ks;
        next.kr = g.kr;
        next.k_theta = g.k_theta;
        next.k_d = g.k_d;
        match h.sim.set_gains(next) {
            Ok(()) => LapfovStatus::Ok,
            Err(e) => fail(LapfovStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Linear-velocity image Jacobian (2×3, row-major) of a point at pixel `p` and depth `d`.
///
/// # Safety
/// `k` must be valid; `out` must be valid for 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn lapfov_image_jacobian(
    px: f64,
    py: f64,
    depth: f64,
    k: *const LapfovIntrinsics,
    out: *mut [f64; 6],
) -> LapfovStatus {
    guard(|| {
        let (Some(k), Some(o)) = (k.as_ref(), out.as_mut()) else {
            return fail(LapfovStatus::NullPointer, "null argument");
        };
        let k = match intrinsics_from(k) {
            Ok(k) => k,
            Err(s) => return s,
        };
        match image_jacobian(&Vector2::new(px, py), depth, &k) {
            Ok(j) => {
                for r in 0..2 {
                    for c in 0..3 {
                        o[r * 3 + c] = j[(r, c)];
                    }
                }
                LapfovStatus::Ok
            }
            Err(e) => fail(LapfovStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Shaft deviation from the trocar in the camera's x-y plane, mm.
///
/// # Safety
/// `camera` must be valid for 12 doubles, `out` for 2.
#[no_mangle]
pub unsafe extern "C" fn lapfov_rcm_error(
    trocar_x: f64,
    trocar_y: f64,
    trocar_z: f64,
    camera: *const [f64; 12],
    out: *mut [f64; 2],
) -> LapfovStatus {
    guard(|| {
        let (Some(c), Some(o)) = (camera.as_ref(), out.as_mut()) else {
            return fail(LapfovStatus::NullPointer, "null argument");
        };
        let pose = match pose_from(c) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let e = rcm_error(&Vector3::new(trocar_x, trocar_y, trocar_z), &pose);
        *o = [e.x, e.y];
        LapfovStatus::Ok
    })
}

/// Roll of `camera` about the reference optical axis, rad.
///
/// # Safety
/// `camera` and `reference` must be valid for 12 doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lapfov_misorientation(
    camera: *const [f64; 12],
    reference: *const [f64; 12],
    out: *mut f64,
) -> LapfovStatus {
    guard(|| {
        let (Some(c), Some(r), Some(o)) = (camera.as_ref(), reference.as_ref(), out.as_mut()) else {
            return fail(LapfovStatus::NullPointer, "null argument");
        };
        let (c, r) = match (pose_from(c), pose_from(r)) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *o = misorientation_of(
            &c,
            &NlsReference {
                pose: r,
                plane_depth: 1.0,
            },
        );
        LapfovStatus::Ok
    })
}

/// `V = ½(‖e_r‖² + ‖e_p‖² + e_d²)`.
#[no_mangle]
pub extern "C" fn lapfov_lyapunov(ep_x: f64, ep_y: f64, e_d: f64, er_x: f64, er_y: f64) -> f64 {
    lyapunov(&TaskErrors {
        e_p: Vector2::new(ep_x, ep_y),
        e_d,
        e_r: Vector2::new(er_x, er_y),
        theta_star: 0.0,
    })
}

/// Frame pairs `(i, j)` sampled for a sequence of `n` frames, written as
/// `out[2k] = i, out[2k+1] = j`. `count` always receives the number of pairs.
///
/// # Safety
/// `out` must be null or valid for `cap` entries; `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lapfov_hierarchical_pairs(
    n: usize,
    out: *mut u32,
    cap: usize,
    count: *mut usize,
) -> LapfovStatus {
    guard(|| {
        let Some(count) = count.as_mut() else {
            return fail(LapfovStatus::NullPointer, "count is null");
        };
        let pairs = match hierarchical_pairs(n) {
            Ok(p) => p,
            Err(e) => return fail(LapfovStatus::InvalidArgument, e.to_string()),
        };
        *count = pairs.len();
        if out.is_null() {
            return LapfovStatus::Ok;
        }
        if cap < 2 * pairs.len() {
            return fail(LapfovStatus::BufferTooSmall, format!("need {} entries", 2 * pairs.len()));
        }
        for (k, (i, j)) in pairs.into_iter().enumerate() {
            *out.add(2 * k) = i as u32;
            *out.add(2 * k + 1) = j as u32;
        }
        LapfovStatus::Ok
    })
}
