//! Live teleoperation over WebSocket.
//!
//! A simulation thread runs the locomotion loop at 100 Hz and the policy
//! every 10th tick; the network side only forwards client commands in and
//! state snapshots out. Protocol (JSON text frames):
//!
//! * client to server: `{"type":"command","vx":f,"vtheta":f}`, `{"type":"reset"}`
//! * server to client: `{"type":"state", ...}`, see [`StateMessage`]

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tokio_tungstenite::tungstenite::Message;

use crate::agent::Policy;
use crate::env::{
    apply_rate_limit, kinematic_update, spawn_state, AgentState, EnvConfig, EnvError, FrameEncoder, Observation, Pose,
    Velocity, VelocityCommand, LATENT_DIM,
};
use crate::geometry::Scene;
use crate::mpc::{differential_drive, plant_step, MpcConfig, MpcController, MpcError, WipState};
use crate::render::{quantize, render_frame, RenderError};

pub const LOCOMOTION_HZ: f64 = 100.0;
/// Locomotion ticks per policy tick.
pub const POLICY_DIVIDER: u64 = 10;
pub const THUMBNAIL_SIZE: usize = 32;
pub const TRAIL_LEN: usize = 200;
pub const AUTO_RESET_SECONDS: f64 = 2.0;
const AUTO_RESET_TICKS: u64 = (AUTO_RESET_SECONDS * LOCOMOTION_HZ) as u64;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { vx: f64, vtheta: f64 },
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessagePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageVelocity {
    pub vx: f64,
    pub vtheta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    pub pose: MessagePose,
    pub velocity: MessageVelocity,
    pub user_cmd: [f64; 2],
    pub correction: [f64; 2],
    pub min_clearance: f64,
    pub collided: bool,
    pub depth_b64: String,
    pub trail: Vec<[f64; 2]>,
}

/// 32x32 grayscale depth, linear 0..255 over `[0, max_range]`, base64.
pub fn depth_thumbnail(scene: &Scene, pose: &Pose, env: &EnvConfig) -> Result<String, RenderError> {
    let frame = render_frame(scene, pose, &env.camera)?;
    let small = frame.depth.downsample(THUMBNAIL_SIZE, THUMBNAIL_SIZE);
    let range = scene.max_range() as f32;
    let bytes: Vec<u8> = small.data.iter().map(|&d| quantize(d / range)).collect();
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    /// Use the training kinematics instead of MPC plus the nonlinear plant.
    pub kinematic: bool,
    pub seed: u64,
}

/// One simulated robot with its locomotion stack and policy.
pub struct TeleopSession {
    scene: Arc<Scene>,
    env: EnvConfig,
    mpc: MpcController,
    mpc_config: MpcConfig,
    encoder: Option<Arc<dyn FrameEncoder>>,
    policy: Box<dyn Policy + Send>,
    options: SessionOptions,
    rng: ChaCha8Rng,
    state: AgentState,
    wip: WipState,
    yaw_rate: f64,
    user_cmd: VelocityCommand,
    correction: [f64; 2],
    corrected: VelocityCommand,
    /// Held planar velocity in kinematic mode.
    kinematic_velocity: Velocity,
    wheel_speeds: (f64, f64),
    tick: u64,
    policy_ticks: u64,
    collided_at: Option<u64>,
    trail: VecDeque<[f64; 2]>,
}

impl TeleopSession {
    pub fn new(
        scene: Arc<Scene>,
        env: EnvConfig,
        mpc_config: MpcConfig,
        encoder: Option<Arc<dyn FrameEncoder>>,
        policy: Box<dyn Policy + Send>,
        options: SessionOptions,
    ) -> Result<Self, TeleopError> {
        env.validate()?;
        let mut session = Self {
            mpc: MpcController::new(mpc_config.clone())?,
            mpc_config,
            scene,
            env,
            encoder,
            policy,
            options,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            state: AgentState::default(),
            wip: WipState::default(),
            yaw_rate: 0.0,
            user_cmd: VelocityCommand::default(),
            correction: [0.0; 2],
            corrected: VelocityCommand::default(),
            kinematic_velocity: Velocity::default(),
            wheel_speeds: (0.0, 0.0),
            tick: 0,
            policy_ticks: 0,
            collided_at: None,
            trail: VecDeque::with_capacity(TRAIL_LEN),
        };
        session.reset()?;
        Ok(session)
    }

    pub fn reset(&mut self) -> Result<(), TeleopError> {
        self.state = spawn_state(&self.scene, &self.env, &mut self.rng)?;
        self.wip = WipState::default();
        self.yaw_rate = 0.0;
        self.kinematic_velocity = Velocity::default();
        self.wheel_speeds = (0.0, 0.0);
        self.correction = [0.0; 2];
        self.corrected = self.user_cmd;
        self.collided_at = None;
        self.trail.clear();
        self.mpc.reset();
        Ok(())
    }

    pub fn set_state(&mut self, state: AgentState) {
        self.state = state;
        self.wip = WipState::default();
        self.yaw_rate = 0.0;
        self.kinematic_velocity = Velocity::default();
        self.collided_at = None;
        self.trail.clear();
        self.mpc.reset();
    }

    /// Latest user command, clamped to `[-1, 1]` per component.
    pub fn set_command(&mut self, vx: f64, vtheta: f64) {
        self.user_cmd = VelocityCommand::new(vx, vtheta).clamped();
    }

    pub fn user_command(&self) -> VelocityCommand {
        self.user_cmd
    }

    pub fn correction(&self) -> [f64; 2] {
        self.correction
    }

    pub fn corrected_command(&self) -> VelocityCommand {
        self.corrected
    }

    pub fn pose(&self) -> Pose {
        self.state.pose
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / LOCOMOTION_HZ
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn policy_ticks(&self) -> u64 {
        self.policy_ticks
    }

    pub fn collided(&self) -> bool {
        self.collided_at.is_some()
    }

    pub fn wheel_speeds(&self) -> (f64, f64) {
        self.wheel_speeds
    }

    pub fn clearance(&self) -> f64 {
        self.scene.min_clearance(&self.env.footprint(&self.state.pose))
    }

    fn measured_velocity(&self) -> [f64; 2] {
        let (v, w) = if self.options.kinematic {
            (self.kinematic_velocity.v_x, self.kinematic_velocity.v_theta)
        } else {
            (self.wip.r_dot, self.yaw_rate)
        };
        [(v / self.env.v_x_max).clamp(-1.0, 1.0), (w / self.env.v_theta_max).clamp(-1.0, 1.0)]
    }

    fn observation(&self) -> Result<Vec<f32>, TeleopError> {
        let latent = match &self.encoder {
            Some(encoder) => {
                let b = self.scene.bounds();
                let mut pose = self.state.pose;
                pose.x = pose.x.clamp(b.min.x, b.max.x);
                pose.y = pose.y.clamp(b.min.y, b.max.y);
                let frame = render_frame(&self.scene, &pose, &self.env.camera)?;
                encoder.encode_frame(&frame.rgb).map_err(TeleopError::Encoder)?
            }
            None => vec![0.0; LATENT_DIM],
        };
        Ok(Observation { user_cmd: self.user_cmd, measured_velocity: self.measured_velocity(), latent }.to_vec())
    }

    /// Advances one locomotion tick. Returns true when this tick ran the policy.
    pub fn tick(&mut self) -> Result<bool, TeleopError> {
        let policy_tick = self.tick % POLICY_DIVIDER == 0;
        if let Some(at) = self.collided_at {
            self.tick += 1;
            if self.tick - at >= AUTO_RESET_TICKS {
                self.reset()?;
            }
            return Ok(false);
        }
        if policy_tick {
            self.correction = self.policy.act(&self.observation()?);
            self.corrected = self.user_cmd.corrected(self.correction);
            self.policy_ticks += 1;
            if self.options.kinematic {
                let noiseless = 0.0;
                self.kinematic_velocity = Velocity {
                    v_x: apply_rate_limit(
                        self.kinematic_velocity.v_x,
                        self.corrected.v_x * self.env.v_x_max,
                        self.env.a_max,
                        self.env.dt,
                        noiseless,
                        self.env.v_x_max,
                        &mut self.rng,
                    ),
                    v_theta: apply_rate_limit(
                        self.kinematic_velocity.v_theta,
                        self.corrected.v_theta * self.env.v_theta_max,
                        self.env.yaw_a_max,
                        self.env.dt,
                        noiseless,
                        self.env.v_theta_max,
                        &mut self.rng,
                    ),
                };
            }
        }
        let dt = 1.0 / LOCOMOTION_HZ;
        if self.options.kinematic {
            self.state = kinematic_update(&self.state, self.kinematic_velocity, dt);
            self.wheel_speeds = differential_drive(
                self.kinematic_velocity.v_x,
                self.kinematic_velocity.v_theta,
                self.mpc_config.wheel_radius,
                self.mpc_config.track,
            );
        } else {
            self.yaw_rate = self.corrected.v_theta * self.env.v_theta_max;
            let out = self.mpc.step(&self.wip, self.corrected.v_x * self.env.v_x_max);
            let fell = match out {
                Ok(out) => {
                    self.wheel_speeds =
                        differential_drive(out.velocity, self.yaw_rate, self.mpc_config.wheel_radius, self.mpc_config.track);
                    let before = self.wip.r;
                    self.wip = plant_step(self.mpc_config.g, self.mpc_config.l, &self.wip, out.acceleration, dt);
                    let ds = self.wip.r - before;
                    let pose = &mut self.state.pose;
                    let (sin, cos) = pose.yaw.sin_cos();
                    pose.x += ds * cos;
                    pose.y += ds * sin;
                    pose.yaw = crate::env::wrap_angle(pose.yaw + self.yaw_rate * dt);
                    pose.pitch = self.wip.phi;
                    self.wip.phi.abs() > std::f64::consts::FRAC_PI_2
                }
                Err(e) => {
                    log::warn!("locomotion failure, resetting: {e}");
                    true
                }
            };
            if fell {
                self.collided_at = Some(self.tick);
            }
        }
        if self.trail.len() == TRAIL_LEN {
            self.trail.pop_front();
        }
        self.trail.push_back([self.state.pose.x, self.state.pose.y]);
        if self.clearance() < self.env.collision_margin {
            self.collided_at = Some(self.tick);
        }
        self.tick += 1;
        Ok(policy_tick)
    }

    pub fn state_message(&self) -> Result<StateMessage, TeleopError> {
        let p = self.state.pose;
        let v = self.measured_velocity();
        Ok(StateMessage {
            kind: "state".into(),
            t: self.time(),
            pose: MessagePose { x: p.x, y: p.y, yaw: p.yaw, pitch: p.pitch },
            velocity: MessageVelocity { vx: v[0] * self.env.v_x_max, vtheta: v[1] * self.env.v_theta_max },
            user_cmd: self.user_cmd.as_array(),
            correction: self.correction,
            min_clearance: self.clearance(),
            collided: self.collided(),
            depth_b64: depth_thumbnail(&self.scene, &p, &self.env)?,
            trail: self.trail.iter().copied().collect(),
        })
    }
}

/// Events from the network side into the simulation thread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimEvent {
    Command { vx: f64, vtheta: f64 },
    Reset,
    /// The controlling client went away.
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { speed: 1.0 }
    }
}

/// Wall-clock message period regardless of `speed`.
pub const MESSAGE_PERIOD: Duration = Duration::from_millis(100);

fn run_simulation(
    mut session: TeleopSession,
    options: ServeOptions,
    events: mpsc::Receiver<SimEvent>,
    states: broadcast::Sender<String>,
    stop: Arc<AtomicBool>,
) {
    let tick_wall = Duration::from_secs_f64(1.0 / (LOCOMOTION_HZ * options.speed));
    let start = Instant::now();
    let mut next_message = start;
    let mut ticks: u64 = 0;
    while !stop.load(Ordering::Relaxed) {
        while let Ok(ev) = events.try_recv() {
            match ev {
                SimEvent::Command { vx, vtheta } => session.set_command(vx, vtheta),
                SimEvent::Released => session.set_command(0.0, 0.0),
                SimEvent::Reset => {
                    if let Err(e) = session.reset() {
                        log::error!("reset failed: {e}");
                    }
                }
            }
        }
        let policy_tick = match session.tick() {
            Ok(p) => p,
            Err(e) => {
                log::error!("simulation error: {e}");
                return;
            }
        };
        ticks += 1;
        let now = Instant::now();
        if (policy_tick || session.collided()) && now >= next_message {
            next_message += MESSAGE_PERIOD;
            if next_message < now {
                next_message = now + MESSAGE_PERIOD;
            }
            match session.state_message() {
                Ok(msg) => {
                    let _ = states.send(serde_json::to_string(&msg).expect("state serializes"));
                }
                Err(e) => log::error!("state message: {e}"),
            }
        }
        let due = start + tick_wall * ticks as u32;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

/// Running server; dropping the handle leaves it running, [`ServerHandle::stop`] ends it.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<std::thread::JoinHandle<()>>,
    net: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub async fn stop(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.net.abort();
        if let Some(sim) = self.sim.take() {
            let _ = tokio::task::spawn_blocking(move || sim.join()).await;
        }
    }

    /// Waits for the network task, which runs until the process is interrupted.
    pub async fn wait(mut self) {
        let _ = (&mut self.net).await;
    }
}

/// Binds `addr` and starts the simulation thread plus the acceptor. The
/// first client to connect controls the robot; later clients only receive
/// state until the controller disconnects.
pub async fn spawn_server(session: TeleopSession, addr: SocketAddr, options: ServeOptions) -> Result<ServerHandle, TeleopError> {
    if !(options.speed > 0.0 && options.speed.is_finite()) {
        return Err(TeleopError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "speed must be positive")));
    }
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (event_tx, event_rx) = mpsc::channel();
    let (state_tx, _) = broadcast::channel::<String>(64);
    let stop = Arc::new(AtomicBool::new(false));
    let sim = {
        let (states, stop) = (state_tx.clone(), stop.clone());
        std::thread::spawn(move || run_simulation(session, options, event_rx, states, stop))
    };
    let controller: Arc<Mutex<Option<u64>>> = Arc::new(Mutex::new(None));
    let next_id = Arc::new(AtomicU64::new(0));
    let net = tokio::spawn(async move {
        loop {
            let Ok((stream, peer)) = listener.accept().await else { continue };
            let id = next_id.fetch_add(1, Ordering::Relaxed);
            let events = event_tx.clone();
            let states = state_tx.subscribe();
            let controller = controller.clone();
            tokio::spawn(async move {
                if let Err(e) = handle_client(stream, id, events, states, controller).await {
                    log::info!("client {peer}: {e}");
                }
            });
        }
    });
    Ok(ServerHandle { addr, stop, sim: Some(sim), net })
}

async fn handle_client(
    stream: tokio::net::TcpStream,
    id: u64,
    events: mpsc::Sender<SimEvent>,
    mut states: broadcast::Receiver<String>,
    controller: Arc<Mutex<Option<u64>>>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let in_control = {
        let mut c = controller.lock().expect("controller lock");
        if c.is_none() {
            *c = Some(id);
        }
        *c == Some(id)
    };
    let (mut sink, mut source) = ws.split();
    let result = loop {
        tokio::select! {
            msg = source.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    if !in_control {
                        continue;
                    }
                    match serde_json::from_str::<ClientMessage>(&text) {
                        Ok(ClientMessage::Command { vx, vtheta }) if vx.is_finite() && vtheta.is_finite() => {
                            let _ = events.send(SimEvent::Command { vx, vtheta });
                        }
                        Ok(ClientMessage::Reset) => {
                            let _ = events.send(SimEvent::Reset);
                        }
                        _ => log::debug!("client {id}: ignoring {text}"),
                    }
                }
                Some(Ok(Message::Close(_))) | None => break Ok(()),
                Some(Ok(_)) => {}
                Some(Err(e)) => break Err(e),
            },
            state = states.recv() => match state {
                Ok(text) => {
                    if let Err(e) = sink.send(Message::Text(text)).await {
                        break Err(e);
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break Ok(()),
            },
        }
    };
    if in_control {
        *controller.lock().expect("controller lock") = None;
        let _ = events.send(SimEvent::Released);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{FnPolicy, ZeroPolicy};
    use crate::geometry::{Aabb, ConvexObstacle, Vec2};

    fn scene() -> Arc<Scene> {
        let wall = ConvexObstacle::new(
            vec![Vec2::new(5.0, 0.0), Vec2::new(6.0, 0.0), Vec2::new(6.0, 6.0), Vec2::new(5.0, 6.0)],
            [0.5; 3],
            1.0,
        )
        .unwrap();
        Arc::new(Scene::new(Aabb::new(0.0, 0.0, 6.0, 6.0), vec![wall], [0.8; 3], [0.3; 3], 10.0).unwrap())
    }

    fn session(policy: Box<dyn Policy + Send>, kinematic: bool) -> TeleopSession {
        let env = EnvConfig { camera: crate::render::CameraModel { width: 32, height: 32, ..Default::default() }, ..EnvConfig::default() };
        let mut s = TeleopSession::new(scene(), env, MpcConfig::default(), None, policy, SessionOptions { kinematic, seed: 1 }).unwrap();
        s.set_state(AgentState { pose: Pose { x: 2.0, y: 3.0, yaw: 0.0, pitch: 0.0 }, ..AgentState::default() });
        s
    }

    #[test]
    fn thumbnail_length() {
        let s = session(Box::new(ZeroPolicy), false);
        let msg = s.state_message().unwrap();
        assert_eq!(msg.depth_b64.len(), 1024usize.div_ceil(3) * 4);
        assert_eq!(msg.pose.x, 2.0);
        let bytes = base64::engine::general_purpose::STANDARD.decode(&msg.depth_b64).unwrap();
        assert_eq!(bytes.len(), 1024);
    }

    #[test]
    fn policy_runs_every_tenth_tick() {
        let mut s = session(Box::new(ZeroPolicy), false);
        let flags: Vec<bool> = (0..35).map(|_| s.tick().unwrap()).collect();
        for (i, f) in flags.iter().enumerate() {
            assert_eq!(*f, i % 10 == 0, "tick {i}");
        }
        assert_eq!(s.policy_ticks(), 4);
    }

    #[test]
    fn idle_session_stays_at_rest() {
        let mut s = session(Box::new(ZeroPolicy), false);
        for _ in 0..100 {
            s.tick().unwrap();
        }
        assert!((s.pose().x - 2.0).abs() < 1e-9 && (s.pose().y - 3.0).abs() < 1e-9);
        assert!(!s.collided());
    }

    #[test]
    fn command_is_clamped_and_combined_like_the_env() {
        let policy = FnPolicy(|_: &[f32]| [-0.4, 0.7]);
        let mut s = session(Box::new(policy), false);
        s.set_command(3.0, 0.5);
        assert_eq!(s.user_command().as_array(), [1.0, 0.5]);
        s.tick().unwrap();
        assert_eq!(s.correction(), [-0.4, 0.7]);
        assert_eq!(s.corrected_command(), VelocityCommand::new(1.0, 0.5).corrected([-0.4, 0.7]));
        assert_eq!(s.corrected_command().as_array(), [0.6, 1.0]);
        // correction holds between policy ticks
        for _ in 0..9 {
            assert!(!s.tick().unwrap());
            assert_eq!(s.correction(), [-0.4, 0.7]);
        }
    }

    #[test]
    fn driving_into_the_wall_collides_then_auto_resets() {
        for kinematic in [false, true] {
            let mut s = session(Box::new(ZeroPolicy), kinematic);
            s.set_command(1.0, 0.0);
            let mut collided_tick = None;
            for _ in 0..3000 {
                s.tick().unwrap();
                if s.collided() {
                    collided_tick = Some(s.ticks());
                    break;
                }
            }
            let at = collided_tick.expect("reaches the wall");
            let msg = s.state_message().unwrap();
            assert!(msg.collided);
            assert!(msg.min_clearance < 0.02);
            let frozen = s.pose();
            for _ in 0..AUTO_RESET_TICKS - 2 {
                s.tick().unwrap();
                assert!(s.collided());
                assert_eq!(s.pose(), frozen);
            }
            s.tick().unwrap();
            assert!(!s.collided(), "reset {} ticks after collision", s.ticks() - at);
            assert!(s.clearance() > 0.5);
        }
    }

    #[test]
    fn wheels_follow_differential_drive() {
        let mut s = session(Box::new(ZeroPolicy), true);
        s.set_command(0.0, 1.0);
        for _ in 0..60 {
            s.tick().unwrap();
        }
        let (l, r) = s.wheel_speeds();
        assert!(l < 0.0 && r > 0.0 && (l + r).abs() < 1e-9);
    }

    #[test]
    fn trail_is_capped() {
        let mut s = session(Box::new(ZeroPolicy), true);
        s.set_command(0.2, 0.5);
        for _ in 0..450 {
            s.tick().unwrap();
        }
        assert_eq!(s.state_message().unwrap().trail.len(), TRAIL_LEN);
    }

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            serde_json::from_str::<ClientMessage>(r#"{"type":"command","vx":0.5,"vtheta":-1}"#).unwrap(),
            ClientMessage::Command { vx: 0.5, vtheta: -1.0 }
        );
        assert_eq!(serde_json::from_str::<ClientMessage>(r#"{"type":"reset"}"#).unwrap(), ClientMessage::Reset);
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"fly"}"#).is_err());
    }
}
