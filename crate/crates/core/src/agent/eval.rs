use serde::{Deserialize, Serialize};

use super::{Actor, AgentError};
use crate::env::{NavEnv, VelocityCommand, ACTION_DIM};

/// Deterministic observation-to-correction map.
pub trait Policy {
    fn act(&self, obs: &[f32]) -> [f64; ACTION_DIM];
}

impl Policy for Actor {
    fn act(&self, obs: &[f32]) -> [f64; ACTION_DIM] {
        self.deterministic_action(obs)
    }
}

/// No correction: the user command passes through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, _obs: &[f32]) -> [f64; ACTION_DIM] {
        [0.0; ACTION_DIM]
    }
}

pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f32]) -> [f64; ACTION_DIM]> Policy for FnPolicy<F> {
    fn act(&self, obs: &[f32]) -> [f64; ACTION_DIM] {
        (self.0)(obs)
    }
}

pub const HISTOGRAM_BIN_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub trials: usize,
    pub episode_cap_seconds: f64,
    pub user_cmd: [f64; 2],
    pub mean_policy: f64,
    pub median_policy: f64,
    pub mean_baseline: f64,
    pub median_baseline: f64,
    /// Counts per `HISTOGRAM_BIN_SECONDS`-wide bin; the cap falls in the last bin.
    pub histogram_policy: Vec<usize>,
    pub histogram_baseline: Vec<usize>,
    pub policy_seconds: Vec<f64>,
    pub baseline_seconds: Vec<f64>,
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ (trial as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_episode<P: Policy + ?Sized>(policy: &P, env: &mut NavEnv, seed: u64, cmd: VelocityCommand) -> Result<f64, AgentError> {
    env.reseed(seed);
    let mut obs = env.reset(cmd)?.to_vec();
    let mut steps = 0usize;
    loop {
        let out = env.step(cmd, policy.act(&obs))?;
        steps += 1;
        if out.done {
            return Ok(steps as f64 * env.config().dt);
        }
        obs = out.observation.to_vec();
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn histogram(values: &[f64], cap: f64) -> Vec<usize> {
    let bins = ((cap / HISTOGRAM_BIN_SECONDS).ceil() as usize).max(1);
    let mut h = vec![0; bins];
    for &v in values {
        h[((v / HISTOGRAM_BIN_SECONDS) as usize).min(bins - 1)] += 1;
    }
    h
}

/// Runs `trials` paired episodes: each trial seed is used once with the
/// policy and once with no correction, so both start from the same spawn.
pub fn evaluate_survival<P: Policy + ?Sized>(
    policy: &P,
    env: &mut NavEnv,
    trials: usize,
    user_cmd: VelocityCommand,
    seed: u64,
) -> Result<SurvivalReport, AgentError> {
    if trials == 0 {
        return Err(AgentError::Config("trials must be at least 1".into()));
    }
    let mut policy_seconds = Vec::with_capacity(trials);
    let mut baseline_seconds = Vec::with_capacity(trials);
    for trial in 0..trials {
        let s = trial_seed(seed, trial);
        policy_seconds.push(run_episode(policy, env, s, user_cmd)?);
        baseline_seconds.push(run_episode(&ZeroPolicy, env, s, user_cmd)?);
    }
    let cap = env.config().max_episode_steps as f64 * env.config().dt;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SurvivalReport {
        trials,
        episode_cap_seconds: cap,
        user_cmd: user_cmd.as_array(),
        mean_policy: mean(&policy_seconds),
        median_policy: median(&policy_seconds),
        mean_baseline: mean(&baseline_seconds),
        median_baseline: median(&baseline_seconds),
        histogram_policy: histogram(&policy_seconds, cap),
        histogram_baseline: histogram(&baseline_seconds, cap),
        policy_seconds,
        baseline_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPoint {
    pub x: f64,
    pub y: f64,
    pub ax: f64,
    pub atheta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionField {
    pub steps: usize,
    pub threshold: f64,
    pub near_radius: f64,
    /// Fraction of recorded points whose position is within `near_radius`
    /// of an obstacle or wall.
    pub near_fraction: f64,
    pub points: Vec<CorrectionPoint>,
}

/// Distance from the robot centre that counts as "near" an obstacle or wall.
const NEAR_RADIUS: f64 = 1.0;

/// Rolls out `steps` steps at full forward, resetting on episode end, and
/// records every pose where `|a|_1 > threshold`.
pub fn correction_field<P: Policy + ?Sized>(
    policy: &P,
    env: &mut NavEnv,
    steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<CorrectionField, AgentError> {
    if steps == 0 {
        return Err(AgentError::Config("steps must be at least 1".into()));
    }
    let cmd = VelocityCommand::FULL_FORWARD;
    env.reseed(seed);
    let mut obs = env.reset(cmd)?.to_vec();
    let mut points = Vec::new();
    let mut near = 0usize;
    for _ in 0..steps {
        let action = policy.act(&obs);
        if action[0].abs() + action[1].abs() > threshold {
            let pose = env.state().pose;
            if env.scene().point_clearance(&pose.position()) <= NEAR_RADIUS {
                near += 1;
            }
            points.push(CorrectionPoint { x: pose.x, y: pose.y, ax: action[0], atheta: action[1] });
        }
        let out = env.step(cmd, action)?;
        obs = if out.done { env.reset(cmd)?.to_vec() } else { out.observation.to_vec() };
    }
    let near_fraction = if points.is_empty() { 0.0 } else { near as f64 / points.len() as f64 };
    Ok(CorrectionField { steps, threshold, near_radius: NEAR_RADIUS, near_fraction, points })
}
