//! Pure-navigation environment: the policy adds a correction to a joystick
//! command, the corrected command drives a rate-limited kinematic unicycle,
//! and the episode ends on contact or timeout.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Disc, Scene, Vec2};
use crate::render::{self, AugmentRanges, CameraModel, Frame, Image, RenderError};

pub const LATENT_DIM: usize = 32;
pub const OBS_DIM: usize = 4 + LATENT_DIM;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("no spawn point with {clearance} m clearance after {attempts} attempts")]
    SpawnFailed { clearance: f64, attempts: usize },
    #[error("invalid env config: {0}")]
    Config(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("encoding frame: {0}")]
    Encoder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Camera tilt used for rendering only, within `[-pi/4, pi/4]`.
    pub pitch: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Normalized joystick command; both components in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v_x: f64,
    pub v_theta: f64,
}

impl VelocityCommand {
    pub const FULL_FORWARD: VelocityCommand = VelocityCommand { v_x: 1.0, v_theta: 0.0 };

    pub fn new(v_x: f64, v_theta: f64) -> Self {
        Self { v_x, v_theta }
    }

    pub fn clamped(self) -> Self {
        Self {
            v_x: self.v_x.clamp(-1.0, 1.0),
            v_theta: self.v_theta.clamp(-1.0, 1.0),
        }
    }

    /// `clamp(user + correction)`, the command the locomotion stack receives.
    pub fn corrected(self, correction: [f64; 2]) -> Self {
        Self::new(self.v_x + correction[0], self.v_theta + correction[1]).clamped()
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.v_x, self.v_theta]
    }
}

/// Realized physical velocity: m/s and rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub v_x: f64,
    pub v_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub velocity: Velocity,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub policy_rate_hz: f64,
    pub v_x_max: f64,
    pub v_theta_max: f64,
    /// Linear acceleration limit, m/s^2.
    pub a_max: f64,
    /// Yaw acceleration limit, rad/s^2.
    pub yaw_a_max: f64,
    pub limit_yaw_rate: bool,
    pub velocity_noise_sigma: f64,
    pub yaw_noise_sigma: f64,
    pub pitch_noise_sigma: f64,
    pub collision_margin: f64,
    pub spawn_clearance: f64,
    pub max_spawn_attempts: usize,
    pub max_episode_steps: usize,
    pub footprint_radius: f64,
    pub crash_reward: f64,
    /// Observe the corrected command instead of the realized velocity.
    pub observe_commanded_velocity: bool,
    pub camera: CameraModel,
    pub augment: AugmentRanges,
    pub augment_enabled: bool,
    /// Near limit of the log-depth mapping; the far limit is the scene range.
    pub depth_min: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            policy_rate_hz: 10.0,
            v_x_max: 1.0,
            v_theta_max: 1.0,
            a_max: 2.0,
            yaw_a_max: 4.0,
            limit_yaw_rate: true,
            velocity_noise_sigma: 0.02,
            yaw_noise_sigma: 0.02,
            pitch_noise_sigma: 0.05,
            collision_margin: 0.02,
            spawn_clearance: 0.5,
            max_spawn_attempts: 10_000,
            max_episode_steps: 200,
            footprint_radius: 0.2,
            crash_reward: -100.0,
            observe_commanded_velocity: false,
            camera: CameraModel::default(),
            augment: AugmentRanges::default(),
            augment_enabled: true,
            depth_min: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("dt", self.dt),
            ("policy_rate_hz", self.policy_rate_hz),
            ("v_x_max", self.v_x_max),
            ("v_theta_max", self.v_theta_max),
            ("a_max", self.a_max),
            ("yaw_a_max", self.yaw_a_max),
            ("collision_margin", self.collision_margin),
            ("spawn_clearance", self.spawn_clearance),
            ("footprint_radius", self.footprint_radius),
            ("depth_min", self.depth_min),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be positive, got {value}")));
            }
        }
        for (name, value) in [
            ("velocity_noise_sigma", self.velocity_noise_sigma),
            ("yaw_noise_sigma", self.yaw_noise_sigma),
            ("pitch_noise_sigma", self.pitch_noise_sigma),
        ] {
            if !(value >= 0.0) {
                return Err(EnvError::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.crash_reward < 0.0) {
            return Err(EnvError::Config("crash_reward must be negative".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(EnvError::Config("max_episode_steps must be positive".into()));
        }
        if (self.dt * self.policy_rate_hz - 1.0).abs() > 1e-9 {
            return Err(EnvError::Config(format!(
                "dt {} inconsistent with policy rate {} Hz",
                self.dt, self.policy_rate_hz
            )));
        }
        self.camera.validate()?;
        Ok(())
    }

    pub fn footprint(&self, pose: &Pose) -> Disc {
        Disc::new(pose.position(), self.footprint_radius)
    }

    /// One control period of the corrected-command dynamics: rate limit,
    /// noise and velocity clamp, then the kinematic update.
    pub fn integrate<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        corrected: VelocityCommand,
        rng: &mut R,
    ) -> AgentState {
        let v_x = apply_rate_limit(
            state.velocity.v_x,
            corrected.v_x * self.v_x_max,
            self.a_max,
            self.dt,
            self.velocity_noise_sigma,
            self.v_x_max,
            rng,
        );
        let yaw_target = corrected.v_theta * self.v_theta_max;
        let v_theta = if self.limit_yaw_rate {
            apply_rate_limit(
                state.velocity.v_theta,
                yaw_target,
                self.yaw_a_max,
                self.dt,
                self.yaw_noise_sigma,
                self.v_theta_max,
                rng,
            )
        } else {
            (yaw_target + gaussian(self.yaw_noise_sigma, rng)).clamp(-self.v_theta_max, self.v_theta_max)
        };
        kinematic_update(state, Velocity { v_x, v_theta }, self.dt)
    }

    pub fn sample_pitch<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        gaussian(self.pitch_noise_sigma, rng).clamp(-FRAC_PI_4, FRAC_PI_4)
    }
}

fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// `1 - |a|_1` on a collision-free transition, `crash_reward` otherwise.
pub fn compute_reward(action: [f64; 2], collided: bool, crash_reward: f64) -> f64 {
    if collided {
        crash_reward
    } else {
        1.0 - (action[0].abs() + action[1].abs())
    }
}

/// Rate-limited velocity update with additive Gaussian noise and a final
/// clamp to `±v_max`.
pub fn apply_rate_limit<R: Rng + ?Sized>(
    v_prev: f64,
    v_target: f64,
    a_max: f64,
    dt: f64,
    sigma: f64,
    v_max: f64,
    rng: &mut R,
) -> f64 {
    let step = a_max * dt;
    let limited = v_target.clamp(v_prev - step, v_prev + step);
    (limited + gaussian(sigma, rng)).clamp(-v_max, v_max)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Explicit unicycle update using the heading at the start of the period.
pub fn kinematic_update(state: &AgentState, velocity: Velocity, dt: f64) -> AgentState {
    let (sin, cos) = state.pose.yaw.sin_cos();
    AgentState {
        pose: Pose {
            x: state.pose.x + velocity.v_x * cos * dt,
            y: state.pose.y + velocity.v_x * sin * dt,
            yaw: wrap_angle(state.pose.yaw + velocity.v_theta * dt),
            pitch: state.pose.pitch,
        },
        velocity,
        step_count: state.step_count + 1,
    }
}

/// Uniform spawn over the bounds, rejected until the footprint grown by
/// `spawn_clearance` is collision free.
pub fn spawn_state<R: Rng + ?Sized>(
    scene: &Scene,
    config: &EnvConfig,
    rng: &mut R,
) -> Result<AgentState, EnvError> {
    let b = scene.bounds();
    let grown = config.footprint_radius + config.spawn_clearance;
    for _ in 0..config.max_spawn_attempts {
        let p = Vec2::new(rng.gen_range(b.min.x..=b.max.x), rng.gen_range(b.min.y..=b.max.y));
        if scene.min_clearance(&Disc::new(p, grown)) > 0.0 {
            let yaw = wrap_angle(rng.gen_range(-PI..PI));
            return Ok(AgentState {
                pose: Pose { x: p.x, y: p.y, yaw, pitch: 0.0 },
                velocity: Velocity::default(),
                step_count: 0,
            });
        }
    }
    Err(EnvError::SpawnFailed {
        clearance: config.spawn_clearance,
        attempts: config.max_spawn_attempts,
    })
}

/// Maps an RGB frame to the policy-facing latent vector.
pub trait FrameEncoder: Send + Sync {
    fn encode_frame(&self, rgb: &Image) -> Result<Vec<f32>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub user_cmd: VelocityCommand,
    /// Normalized velocity, each component in `[-1, 1]`.
    pub measured_velocity: [f64; 2],
    pub latent: Vec<f32>,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.push(self.user_cmd.v_x as f32);
        v.push(self.user_cmd.v_theta as f32);
        v.push(self.measured_velocity[0] as f32);
        v.push(self.measured_velocity[1] as f32);
        v.extend_from_slice(&self.latent);
        v.resize(OBS_DIM, 0.0);
        v
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: AgentState,
    pub observation: Observation,
    pub reward: f64,
    /// Episode finished, by collision or timeout.
    pub done: bool,
    pub collided: bool,
    pub clearance: f64,
}

impl StepOutcome {
    pub fn truncated(&self) -> bool {
        self.done && !self.collided
    }
}

/// One line of an episode trace export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: Pose,
    pub command: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub clearance: f64,
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Single-threaded environment instance with its own RNG stream.
#[derive(Clone)]
pub struct NavEnv {
    scene: Arc<Scene>,
    config: EnvConfig,
    encoder: Option<Arc<dyn FrameEncoder>>,
    rng: ChaCha8Rng,
    state: AgentState,
    last_command: VelocityCommand,
    done: bool,
}

impl NavEnv {
    pub fn new(
        scene: Arc<Scene>,
        config: EnvConfig,
        encoder: Option<Arc<dyn FrameEncoder>>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            scene,
            config,
            encoder,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: AgentState::default(),
            last_command: VelocityCommand::default(),
            done: true,
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Restarts the noise/spawn stream, e.g. to replay a trial.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.done = true;
    }

    pub fn clearance(&self) -> f64 {
        self.scene.min_clearance(&self.config.footprint(&self.state.pose))
    }

    pub fn reset(&mut self, user_cmd: VelocityCommand) -> Result<Observation, EnvError> {
        let mut state = spawn_state(&self.scene, &self.config, &mut self.rng)?;
        state.pose.pitch = self.config.sample_pitch(&mut self.rng);
        self.state = state;
        self.last_command = VelocityCommand::default();
        self.done = false;
        self.observe(user_cmd)
    }

    /// Places the agent at a given state, e.g. for scripted evaluations.
    pub fn reset_to(&mut self, state: AgentState, user_cmd: VelocityCommand) -> Result<Observation, EnvError> {
        self.state = state;
        self.last_command = VelocityCommand::default();
        self.done = false;
        self.observe(user_cmd)
    }

    pub fn step(&mut self, user_cmd: VelocityCommand, action: [f64; 2]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let corrected = user_cmd.corrected(action);
        let mut next = self.config.integrate(&self.state, corrected, &mut self.rng);
        next.pose.pitch = self.config.sample_pitch(&mut self.rng);
        self.state = next;
        self.last_command = corrected;

        let clearance = self.clearance();
        let collided = clearance < self.config.collision_margin;
        let done = collided || next.step_count >= self.config.max_episode_steps;
        self.done = done;
        let reward = compute_reward(action, collided, self.config.crash_reward);
        let observation = self.observe(user_cmd)?;
        Ok(StepOutcome {
            state: next,
            observation,
            reward,
            done,
            collided,
            clearance,
        })
    }

    /// Renders the current view: raw depth and (optionally augmented) RGB.
    pub fn render(&mut self) -> Result<Frame, EnvError> {
        let b = self.scene.bounds();
        let mut pose = self.state.pose;
        pose.x = pose.x.clamp(b.min.x, b.max.x);
        pose.y = pose.y.clamp(b.min.y, b.max.y);
        let mut frame = render::render_frame(&self.scene, &pose, &self.config.camera)?;
        if self.config.augment_enabled {
            let params = self.config.augment.sample(&mut self.rng);
            frame.rgb = render::augment(&frame.rgb, &params, &mut self.rng);
        }
        Ok(frame)
    }

    fn observe(&mut self, user_cmd: VelocityCommand) -> Result<Observation, EnvError> {
        let measured_velocity = if self.config.observe_commanded_velocity {
            self.last_command.as_array()
        } else {
            [
                self.state.velocity.v_x / self.config.v_x_max,
                self.state.velocity.v_theta / self.config.v_theta_max,
            ]
        };
        let latent = match self.encoder.clone() {
            Some(encoder) => {
                let frame = self.render()?;
                encoder.encode_frame(&frame.rgb).map_err(EnvError::Encoder)?
            }
            None => vec![0.0; LATENT_DIM],
        };
        Ok(Observation { user_cmd, measured_velocity, latent })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, ConvexObstacle};

    fn open_scene() -> Arc<Scene> {
        Arc::new(Scene::new(Aabb::new(-5.0, -5.0, 5.0, 5.0), vec![], [0.8; 3], [0.3; 3], 12.0).unwrap())
    }

    fn quiet() -> EnvConfig {
        EnvConfig {
            velocity_noise_sigma: 0.0,
            yaw_noise_sigma: 0.0,
            pitch_noise_sigma: 0.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reward_branches() {
        assert_eq!(compute_reward([0.0, 0.0], false, -100.0), 1.0);
        assert!((compute_reward([0.3, -0.2], false, -100.0) - 0.5).abs() < 1e-15);
        assert_eq!(compute_reward([0.7, 0.1], true, -100.0), -100.0);
    }

    #[test]
    fn rate_limit_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((apply_rate_limit(0.0, 1.0, 2.0, 0.1, 0.0, 1.0, &mut rng) - 0.2).abs() < 1e-15);
        assert_eq!(apply_rate_limit(0.2, 0.2, 2.0, 0.1, 0.0, 1.0, &mut rng), 0.2);
        assert_eq!(apply_rate_limit(0.95, 3.0, 2.0, 0.1, 0.0, 1.0, &mut rng), 1.0);
    }

    #[test]
    fn kinematic_examples() {
        let s = AgentState::default();
        let a = kinematic_update(&s, Velocity { v_x: 1.0, v_theta: 0.0 }, 0.1);
        assert!((a.pose.x - 0.1).abs() < 1e-15 && a.pose.y == 0.0 && a.pose.yaw == 0.0);
        let north = AgentState { pose: Pose { yaw: PI / 2.0, ..Pose::default() }, ..s };
        let b = kinematic_update(&north, Velocity { v_x: 1.0, v_theta: 0.0 }, 0.1);
        assert!(b.pose.x.abs() < 1e-15 && (b.pose.y - 0.1).abs() < 1e-15);
        let c = kinematic_update(&s, Velocity { v_x: 0.0, v_theta: 1.0 }, 0.1);
        assert_eq!((c.pose.x, c.pose.y), (0.0, 0.0));
        assert!((c.pose.yaw - 0.1).abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn step_in_open_space_moves_forward() {
        let mut env = NavEnv::new(open_scene(), quiet(), None, 1).unwrap();
        env.reset_to(AgentState::default(), VelocityCommand::FULL_FORWARD).unwrap();
        let out = env.step(VelocityCommand::FULL_FORWARD, [0.0, 0.0]).unwrap();
        assert!(out.state.pose.x > 0.0);
        assert_eq!(out.reward, 1.0);
        assert!(!out.done);
        assert_eq!(out.observation.to_vec().len(), OBS_DIM);
    }

    #[test]
    fn full_cancel_next_to_wall() {
        let mut env = NavEnv::new(open_scene(), quiet(), None, 1).unwrap();
        // footprint 0.2, clearance 0.1 to the +x wall
        let start = AgentState {
            pose: Pose { x: 4.7, ..Pose::default() },
            ..AgentState::default()
        };
        env.reset_to(start, VelocityCommand::FULL_FORWARD).unwrap();
        let out = env.step(VelocityCommand::FULL_FORWARD, [-1.0, 0.0]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        assert!((out.state.pose.x - 4.7).abs() < 1e-15);
    }

    #[test]
    fn collision_terminates_with_crash_reward() {
        let mut env = NavEnv::new(open_scene(), quiet(), None, 1).unwrap();
        // moving at 0.5 m/s: after one step the clearance is 0.065 - 0.05 = 0.015
        let start = AgentState {
            pose: Pose { x: 5.0 - 0.2 - 0.065, ..Pose::default() },
            velocity: Velocity { v_x: 0.5, v_theta: 0.0 },
            step_count: 0,
        };
        env.reset_to(start, VelocityCommand::new(0.5, 0.0)).unwrap();
        let out = env.step(VelocityCommand::new(0.5, 0.0), [0.0, 0.0]).unwrap();
        assert!((out.clearance - 0.015).abs() < 1e-12);
        assert!(out.collided && out.done);
        assert_eq!(out.reward, -100.0);
        assert!(matches!(env.step(VelocityCommand::default(), [0.0, 0.0]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn timeout_yields_normal_reward() {
        let config = EnvConfig { max_episode_steps: 3, ..quiet() };
        let mut env = NavEnv::new(open_scene(), config, None, 2).unwrap();
        env.reset_to(AgentState::default(), VelocityCommand::default()).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = Some(env.step(VelocityCommand::default(), [0.0, 0.0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.collided && last.truncated());
        assert_eq!(last.reward, 1.0);
    }

    #[test]
    fn spawn_respects_clearance_and_fails_when_covered() {
        let scene = open_scene();
        let config = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = spawn_state(&scene, &config, &mut rng).unwrap();
            assert!(scene.min_clearance(&config.footprint(&s.pose)) >= 0.5);
        }
        let block = ConvexObstacle::new(
            vec![
                Vec2::new(-5.0, -5.0),
                Vec2::new(5.0, -5.0),
                Vec2::new(5.0, 5.0),
                Vec2::new(-5.0, 5.0),
            ],
            [0.0; 3],
            1.0,
        )
        .unwrap();
        let covered = Scene::new(Aabb::new(-5.0, -5.0, 5.0, 5.0), vec![block], [0.0; 3], [0.0; 3], 5.0).unwrap();
        assert!(matches!(
            spawn_state(&covered, &config, &mut rng),
            Err(EnvError::SpawnFailed { .. })
        ));
    }

    #[test]
    fn config_rejects_inconsistent_rate() {
        let config = EnvConfig { dt: 0.05, ..EnvConfig::default() };
        assert!(config.validate().is_err());
        let config = EnvConfig { crash_reward: 1.0, ..EnvConfig::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let config = EnvConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<EnvConfig>(&text).unwrap(), config);
        let partial: EnvConfig = serde_json::from_str(r#"{"a_max": 3.0}"#).unwrap();
        assert_eq!(partial.a_max, 3.0);
        assert_eq!(partial.dt, 0.1);
    }

    #[test]
    fn trace_is_json_lines() {
        let rec = TraceRecord {
            step: 1,
            pose: Pose::default(),
            command: [1.0, 0.0],
            action: [0.0, 0.0],
            reward: 1.0,
            clearance: 2.0,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[rec.clone(), rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    }
}
