//! Wire messages, one JSON object per websocket text message.
//!
//! Every message carries `seq`, monotone per direction and connection. State
//! and frame messages also carry the loop's `snapshot` / `image_id` counters,
//! so a client can see which updates were coalesced away.

use serde::{Deserialize, Serialize};

use crate::controller::{ControlGains, TaskErrors};
use crate::geometry::CameraIntrinsics;
use crate::scenario::MrcMode;

pub const PROTOCOL_VERSION: &str = "v1";

/// Names accepted by `set_gain`.
pub const GAIN_NAMES: [&str; 8] = ["ks_insert", "ks_wx", "ks_wy", "ks_wz", "kr_x", "kr_y", "k_theta", "k_d"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub seq: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    /// Exactly one of `pixel` (current view) or `world` (mm) must be given.
    ToolDrag {
        #[serde(default)]
        pixel: Option<[f64; 2]>,
        #[serde(default)]
        world: Option<[f64; 3]>,
    },
    SetGain { name: String, value: f64 },
    SetMrc { on: bool },
    Pause,
    Resume,
    Reset { seed: u64 },
}

/// A validated inbound mutation, applied by the loop between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    DragPixel([f64; 2]),
    DragWorld([f64; 3]),
    SetGain(String, f64),
    SetMrc(MrcMode),
    Pause,
    Resume,
    Reset(u64),
}

impl Inbound {
    pub fn validate(self, k: &CameraIntrinsics) -> Result<Command, String> {
        match self {
            Inbound::ToolDrag { pixel, world } => match (pixel, world) {
                (Some(p), None) => {
                    let inside = p.iter().all(|v| v.is_finite())
                        && (0.0..=(k.width - 1) as f64).contains(&p[0])
                        && (0.0..=(k.height - 1) as f64).contains(&p[1]);
                    if inside {
                        Ok(Command::DragPixel(p))
                    } else {
                        Err(format!("pixel {p:?} outside {}x{}", k.width, k.height))
                    }
                }
                (None, Some(w)) if w.iter().all(|v| v.is_finite()) => Ok(Command::DragWorld(w)),
                (None, Some(_)) => Err("world point must be finite".into()),
                _ => Err("tool_drag needs exactly one of pixel or world".into()),
            },
            Inbound::SetGain { name, value } => {
                if !GAIN_NAMES.contains(&name.as_str()) {
                    return Err(format!("unknown gain {name:?}; expected one of {GAIN_NAMES:?}"));
                }
                if !(value.is_finite() && value > 0.0) {
                    return Err(format!("gain {name} must be finite and > 0"));
                }
                Ok(Command::SetGain(name, value))
            }
            Inbound::SetMrc { on } => Ok(Command::SetMrc(if on { MrcMode::On } else { MrcMode::Off })),
            Inbound::Pause => Ok(Command::Pause),
            Inbound::Resume => Ok(Command::Resume),
            Inbound::Reset { seed } => Ok(Command::Reset(seed)),
        }
    }
}

/// Writes `value` into the gain called `name`; `name` must be in [`GAIN_NAMES`].
pub fn set_named_gain(gains: &mut ControlGains, name: &str, value: f64) {
    match name {
        "ks_insert" => gains.ks[0] = value,
        "ks_wx" => gains.ks[1] = value,
        "ks_wy" => gains.ks[2] = value,
        "ks_wz" => gains.ks[3] = value,
        "kr_x" => gains.kr[0] = value,
        "kr_y" => gains.kr[1] = value,
        "k_theta" => gains.k_theta = value,
        "k_d" => gains.k_d = value,
        _ => unreachable!("gain name validated"),
    }
}

/// Settings echoed in every state message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub gains: ControlGains,
    pub mrc: MrcMode,
    pub paused: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// Loop snapshot counter; gaps mean coalesced updates.
    pub snapshot: u64,
    /// Ticket of the last inbound command the loop applied.
    pub commands_applied: u64,
    /// Simulated time, s.
    pub t: f64,
    pub step: usize,
    pub errors: Option<TaskErrors>,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub target_px: Option<[f64; 2]>,
    pub tip_px: Option<[f64; 2]>,
    pub heatmap_id: String,
    /// Row-major 3×4 `[R | t]` of the camera in the world frame.
    pub camera_pose: [f64; 12],
    pub misorientation: f64,
    pub status: String,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSnapshot {
    pub image_id: u64,
    pub width: usize,
    pub height: usize,
    /// Base64 binary PPM.
    pub ppm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Hello {
        version: String,
        width: usize,
        height: usize,
        gain_names: Vec<String>,
    },
    State(StateSnapshot),
    Frame(FrameSnapshot),
    /// Inbound message `ack` was applied; the next state reflects it.
    Ack { ack: u64 },
    /// Inbound message rejected; `ack` is its seq when one could be read.
    Error { ack: Option<u64>, message: String },
}

/// Parses one inbound text message, returning the sender's seq where readable.
pub fn parse_inbound(text: &str) -> Result<Envelope<Inbound>, (Option<u64>, String)> {
    serde_json::from_str::<Envelope<Inbound>>(text).map_err(|e| {
        let seq = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("seq").and_then(|s| s.as_u64()));
        (seq, e.to_string())
    })
}
