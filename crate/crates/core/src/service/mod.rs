//! Live session over websocket: one loop thread owns the [`Simulation`], each
//! client gets its own I/O thread. They share only a bounded command queue and
//! a latest-snapshot mailbox, so a slow client never stalls the loop.

pub mod protocol;

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::Engine as _;
use nalgebra::{Vector2, Vector3};
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::{Message, WebSocket};

use crate::geometry::CameraIntrinsics;
use crate::io::encode_pnm;
use crate::scenario::{misorientation_of, ScenarioConfig, ScenarioError, Simulation, StepRecord};
use protocol::{
    parse_inbound, set_named_gain, Command, Envelope, FrameSnapshot, Outbound, Settings, StateSnapshot, GAIN_NAMES,
    PROTOCOL_VERSION,
};

/// Capacity of the inbound command queue shared by all clients.
pub const COMMAND_QUEUE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("port unavailable: {0}")]
    PortUnavailable(std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Interval between state snapshots.
    pub state_period: Duration,
    /// Interval between frames.
    pub frame_period: Duration,
    /// Frame downscale factor per axis; 2 gives quarter resolution.
    pub frame_shrink: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            state_period: Duration::from_millis(40),
            frame_period: Duration::from_millis(80),
            frame_shrink: 2,
        }
    }
}

#[derive(Default)]
struct Mailbox {
    state: Option<Arc<StateSnapshot>>,
    frame: Option<Arc<FrameSnapshot>>,
}

struct Shared {
    intrinsics: CameraIntrinsics,
    /// Queue sender plus the ticket of the last queued command; tickets follow queue order.
    queue: Mutex<(SyncSender<(u64, Command)>, u64)>,
    mailbox: Mutex<Mailbox>,
    stop: AtomicBool,
}

/// A running service. Dropping it shuts the service down.
pub struct ServeHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    loop_result: Arc<Mutex<Option<ScenarioError>>>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    /// Blocks until the loop stops (invariant violation or shutdown).
    pub fn wait(mut self) -> Result<(), ScenarioError> {
        while self.is_running() {
            std::thread::sleep(Duration::from_millis(50));
        }
        self.join();
        match self.loop_result.lock().expect("loop result lock").take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) {
        self.join();
    }

    fn join(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.join();
    }
}

/// Starts the loop and the listener on `addr` and returns immediately.
pub fn serve(cfg: ScenarioConfig, addr: &str, opts: ServeOptions) -> Result<ServeHandle, ServiceError> {
    let sim = Simulation::new(cfg.clone())?;
    let listener = TcpListener::bind(addr).map_err(ServiceError::PortUnavailable)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = sync_channel::<(u64, Command)>(COMMAND_QUEUE);
    let shared = Arc::new(Shared {
        intrinsics: cfg.camera,
        queue: Mutex::new((tx, 0)),
        mailbox: Mutex::new(Mailbox::default()),
        stop: AtomicBool::new(false),
    });
    let loop_result = Arc::new(Mutex::new(None));

    let sim_thread = {
        let shared = shared.clone();
        let result = loop_result.clone();
        let opts = opts.clone();
        std::thread::spawn(move || {
            if let Err(e) = run_loop(sim, cfg, rx, &shared, &opts) {
                *result.lock().expect("loop result lock") = Some(e);
            }
            shared.stop.store(true, Ordering::SeqCst);
        })
    };
    let accept_thread = {
        let shared = shared.clone();
        std::thread::spawn(move || accept_loop(listener, shared))
    };
    Ok(ServeHandle {
        addr: local,
        shared,
        threads: vec![sim_thread, accept_thread],
        loop_result,
    })
}

struct LoopState {
    sim: Simulation,
    base: ScenarioConfig,
    paused: bool,
    last: Option<StepRecord>,
    snapshot: u64,
    image_id: u64,
    applied: u64,
}

impl LoopState {
    fn apply(&mut self, cmd: Command) -> Result<(), ScenarioError> {
        match cmd {
            Command::DragPixel(p) => {
                let goal = self.sim.drag_point_for_pixel(&Vector2::new(p[0], p[1]))?;
                self.sim.set_tool_goal(goal);
            }
            Command::DragWorld(w) => self.sim.set_tool_goal(Vector3::new(w[0], w[1], w[2])),
            Command::SetGain(name, value) => {
                let mut g = self.sim.config().gains.clone();
                set_named_gain(&mut g, &name, value);
                self.sim.set_gains(g)?;
            }
            Command::SetMrc(m) => self.sim.set_mrc(m),
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset(seed) => {
                let mut cfg = self.base.clone();
                cfg.seed = seed;
                cfg.gains = self.sim.config().gains.clone();
                cfg.mrc = self.sim.config().mrc;
                self.sim = Simulation::new(cfg)?;
                self.last = None;
            }
        }
        Ok(())
    }

    fn state(&mut self) -> StateSnapshot {
        self.snapshot += 1;
        let cfg = self.sim.config();
        let r = self.last.as_ref();
        let finite = |v: f64| v.is_finite().then_some(v);
        let px = |p: &Vector2<f64>| (p.x.is_finite() && p.y.is_finite()).then_some([p.x, p.y]);
        StateSnapshot {
            snapshot: self.snapshot,
            commands_applied: self.applied,
            t: self.sim.time(),
            step: self.sim.steps_taken(),
            errors: r.filter(|r| r.errors.e_p.x.is_finite()).map(|r| r.errors),
            v: r.and_then(|r| finite(r.v)),
            target_px: r.and_then(|r| px(&r.target_px)),
            tip_px: r.and_then(|r| px(&r.tip_px)),
            heatmap_id: format!("{}:{}", cfg.heatmap.seed, cfg.heatmap.sigma),
            camera_pose: self.sim.camera().to_row_major12(),
            misorientation: misorientation_of(self.sim.camera(), self.sim.reference()),
            status: r.map_or("init", |r| r.status.as_str()).to_string(),
            settings: Settings {
                gains: cfg.gains.clone(),
                mrc: cfg.mrc,
                paused: self.paused,
                seed: cfg.seed,
            },
        }
    }

    fn frame(&mut self, shrink: usize) -> Result<FrameSnapshot, ScenarioError> {
        self.image_id += 1;
        let img = self.sim.render_frame()?.image.shrink(shrink.max(1));
        Ok(FrameSnapshot {
            image_id: self.image_id,
            width: img.width(),
            height: img.height(),
            ppm: base64::engine::general_purpose::STANDARD.encode(encode_pnm(&img)),
        })
    }
}

fn run_loop(
    sim: Simulation,
    base: ScenarioConfig,
    rx: Receiver<(u64, Command)>,
    shared: &Shared,
    opts: &ServeOptions,
) -> Result<(), ScenarioError> {
    let dt = Duration::from_secs_f64(base.dt);
    let mut st = LoopState {
        sim,
        base,
        paused: false,
        last: None,
        snapshot: 0,
        image_id: 0,
        applied: 0,
    };
    let start = Instant::now();
    let (mut next_step, mut next_state, mut next_frame) = (start, start, start);
    while !shared.stop.load(Ordering::SeqCst) {
        let mut changed = false;
        while let Ok((ticket, cmd)) = rx.try_recv() {
            // a rejected mutation (e.g. gains that fail validation) leaves the session untouched
            let _ = st.apply(cmd);
            st.applied = ticket;
            changed = true;
        }
        let now = Instant::now();
        if now >= next_step {
            if !st.paused {
                st.last = Some(st.sim.step()?);
            }
            next_step += dt;
            if next_step < now {
                // fell behind: drop the backlog instead of bursting
                next_step = now + dt;
            }
        }
        let now = Instant::now();
        if changed || now >= next_state {
            let s = Arc::new(st.state());
            shared.mailbox.lock().expect("mailbox lock").state = Some(s);
            if now >= next_state {
                next_state = now + opts.state_period;
            }
        }
        if now >= next_frame {
            let f = Arc::new(st.frame(opts.frame_shrink)?);
            shared.mailbox.lock().expect("mailbox lock").frame = Some(f);
            next_frame = now + opts.frame_period;
        }
        let wake = next_step.min(next_state).min(next_frame);
        if let Some(d) = wake.checked_duration_since(Instant::now()) {
            std::thread::sleep(d.min(Duration::from_millis(5)));
        }
    }
    Ok(())
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut clients = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                clients.push(std::thread::spawn(move || {
                    let _ = client(stream, shared);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(_) => std::thread::sleep(Duration::from_millis(10)),
        }
        clients.retain(|c| !c.is_finished());
    }
    for c in clients {
        let _ = c.join();
    }
}

/// Accepts the `v1` subprotocol when offered; refuses clients that offer only others.
fn negotiate(req: &Request, mut resp: Response) -> Result<Response, ErrorResponse> {
    let Some(offered) = req.headers().get("Sec-WebSocket-Protocol") else {
        return Ok(resp);
    };
    let offered = offered.to_str().unwrap_or("");
    if offered.split(',').any(|p| p.trim() == PROTOCOL_VERSION) {
        resp.headers_mut().insert(
            "Sec-WebSocket-Protocol",
            PROTOCOL_VERSION.parse().expect("static header value"),
        );
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some(format!("unsupported protocol; this server speaks {PROTOCOL_VERSION}")));
        *err.status_mut() = tungstenite::http::StatusCode::BAD_REQUEST;
        Err(err)
    }
}

struct Client {
    ws: WebSocket<TcpStream>,
    seq: u64,
    /// Accepted inbound `(seq, ticket)` pairs waiting for the loop to apply them.
    pending: Vec<(u64, u64)>,
}

impl Client {
    fn send(&mut self, body: Outbound) -> tungstenite::Result<()> {
        self.seq += 1;
        let text = serde_json::to_string(&Envelope { seq: self.seq, body }).expect("outbound is serializable");
        self.ws.send(Message::text(text))
    }
}

fn client(stream: TcpStream, shared: Arc<Shared>) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    let ws = tungstenite::accept_hdr(stream, negotiate).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let mut c = Client {
        ws,
        seq: 0,
        pending: Vec::new(),
    };
    let (mut sent_state, mut sent_frame) = (0u64, 0u64);
    let intrinsics = shared.intrinsics;
    c.send(Outbound::Hello {
        version: PROTOCOL_VERSION.into(),
        width: intrinsics.width,
        height: intrinsics.height,
        gain_names: GAIN_NAMES.iter().map(|s| s.to_string()).collect(),
    })?;
    while !shared.stop.load(Ordering::SeqCst) {
        match c.ws.read() {
            Ok(Message::Text(text)) => handle_text(&mut c, &text, &shared)?,
            Ok(Message::Binary(_)) => c.send(Outbound::Error {
                ack: None,
                message: "binary messages are not supported".into(),
            })?,
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        let (state, frame) = {
            let mb = shared.mailbox.lock().expect("mailbox lock");
            (mb.state.clone(), mb.frame.clone())
        };
        if let Some(s) = state.filter(|s| s.snapshot > sent_state) {
            sent_state = s.snapshot;
            // acks go out just before the first state that reflects them
            let (done, waiting): (Vec<_>, Vec<_>) = c.pending.drain(..).partition(|&(_, t)| t <= s.commands_applied);
            c.pending = waiting;
            for (ack, _) in done {
                c.send(Outbound::Ack { ack })?;
            }
            c.send(Outbound::State((*s).clone()))?;
        }
        if let Some(f) = frame.filter(|f| f.image_id > sent_frame) {
            sent_frame = f.image_id;
            c.send(Outbound::Frame((*f).clone()))?;
        }
    }
    let _ = c.ws.close(None);
    let _ = c.ws.flush();
    Ok(())
}

fn handle_text(c: &mut Client, text: &str, shared: &Shared) -> tungstenite::Result<()> {
    let env = match parse_inbound(text) {
        Ok(env) => env,
        Err((ack, message)) => return c.send(Outbound::Error { ack, message }),
    };
    let seq = env.seq;
    let cmd = match env.body.validate(&shared.intrinsics) {
        Ok(cmd) => cmd,
        Err(message) => return c.send(Outbound::Error { ack: Some(seq), message }),
    };
    let queued = {
        let mut q = shared.queue.lock().expect("queue lock");
        let ticket = q.1 + 1;
        q.0.try_send((ticket, cmd)).map(|()| {
            q.1 = ticket;
            ticket
        })
    };
    match queued {
        Ok(ticket) => {
            c.pending.push((seq, ticket));
            Ok(())
        }
        Err(TrySendError::Full(_)) => c.send(Outbound::Error {
            ack: Some(seq),
            message: "command queue full; retry".into(),
        }),
        Err(TrySendError::Disconnected(_)) => Err(tungstenite::Error::ConnectionClosed),
    }
}
