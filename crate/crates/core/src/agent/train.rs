use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::evaluate_survival;
use super::{Actor, Agent, AgentError, ReplayBuffer, Transition};
use crate::env::{NavEnv, VelocityCommand};
use crate::nn::WeightsFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    /// Initial (or fixed) entropy coefficient.
    pub alpha: f64,
    pub auto_alpha: bool,
    pub target_entropy: f64,
    pub batch_size: usize,
    /// Uniform random actions and no updates before this many steps.
    pub warmup_steps: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub buffer_capacity: usize,
    pub total_steps: usize,
    /// Probability that a training episode uses the full-forward command;
    /// otherwise the command is uniform over forward speeds and turn rates.
    pub full_forward_prob: f64,
    /// Survival evaluation every this many steps; 0 disables.
    pub eval_every: usize,
    pub eval_trials: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![256, 256],
            critic_hidden: vec![1024, 1024],
            gamma: 0.99,
            alpha: 0.2,
            auto_alpha: false,
            target_entropy: -2.0,
            batch_size: 256,
            warmup_steps: 1000,
            lr: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            buffer_capacity: 1_000_000,
            total_steps: 500_000,
            full_forward_prob: 0.5,
            eval_every: 0,
            eval_trials: 20,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Small networks for smoke runs and tests.
    pub fn tiny() -> Self {
        Self {
            actor_hidden: vec![16, 16],
            critic_hidden: vec![32, 32],
            batch_size: 8,
            warmup_steps: 50,
            total_steps: 500,
            buffer_capacity: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity smaller than batch_size");
        }
        if !(0.0..=1.0).contains(&self.full_forward_prob) {
            return bad("full_forward_prob must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn sample_command<R: Rng + ?Sized>(&self, rng: &mut R) -> VelocityCommand {
        if rng.gen_bool(self.full_forward_prob) {
            VelocityCommand::FULL_FORWARD
        } else {
            VelocityCommand::new(rng.gen_range(0.0..=1.0), rng.gen_range(-1.0..=1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// Environment steps taken so far, including this episode.
    pub step: usize,
    pub episode_return: f64,
    pub length: usize,
    pub collided: bool,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub q_mean: Option<f64>,
    pub alpha: f64,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub mean_survival: f64,
    pub mean_baseline: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub evals: Vec<EvalPoint>,
    pub updates: usize,
    pub buffer_size: usize,
}

impl TrainLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.episodes {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Trains on one environment with one critic and one actor update per step
/// after warmup. Only collisions are terminal for bootstrapping; time-limit
/// resets are not.
pub fn train(env: &mut NavEnv, config: AgentConfig) -> Result<(Agent, TrainLog), AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = Agent::new(config.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut log = TrainLog::default();
    let mut eval_env = if config.eval_every > 0 { Some(env.clone()) } else { None };

    let mut cmd = config.sample_command(&mut rng);
    let mut obs = env.reset(cmd)?.to_vec();
    let (mut ep_return, mut ep_len) = (0.0, 0usize);
    let mut last: Option<(f64, f64, f64)> = None;

    for step in 0..config.total_steps {
        let action = if step < config.warmup_steps {
            [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
        } else {
            agent.actor.sample_action(&obs, &mut rng, false).0
        };
        let out = env.step(cmd, action)?;
        let next = out.observation.to_vec();
        buffer.push(Transition {
            obs: std::mem::take(&mut obs),
            action: [action[0] as f32, action[1] as f32],
            reward: out.reward as f32,
            next_obs: next.clone(),
            done: out.collided,
        });
        ep_return += out.reward;
        ep_len += 1;

        if step >= config.warmup_steps && buffer.len() >= config.batch_size {
            let batch = buffer.sample(config.batch_size, &mut rng);
            let c = agent.critic_update(&batch, &mut rng)?;
            if !c.loss.is_finite() {
                return Err(AgentError::NonFinite { what: "critic loss", step });
            }
            let a = agent.actor_update(&batch, &mut rng)?;
            if !a.loss.is_finite() {
                return Err(AgentError::NonFinite { what: "actor loss", step });
            }
            last = Some((c.loss, a.loss, c.q_mean));
            log.updates += 1;
        }

        if out.done {
            log.episodes.push(EpisodeLog {
                step: step + 1,
                episode_return: ep_return,
                length: ep_len,
                collided: out.collided,
                critic_loss: last.map(|l| l.0),
                actor_loss: last.map(|l| l.1),
                q_mean: last.map(|l| l.2),
                alpha: agent.alpha(),
                buffer_size: buffer.len(),
            });
            cmd = config.sample_command(&mut rng);
            obs = env.reset(cmd)?.to_vec();
            ep_return = 0.0;
            ep_len = 0;
        } else {
            obs = next;
        }

        if let Some(eval_env) = eval_env.as_mut() {
            if (step + 1) % config.eval_every == 0 {
                let report = evaluate_survival(
                    &agent.actor,
                    eval_env,
                    config.eval_trials,
                    VelocityCommand::FULL_FORWARD,
                    config.seed ^ 0xe7a1,
                )?;
                log::info!("step {}: survival {:.2}s (baseline {:.2}s)", step + 1, report.mean_policy, report.mean_baseline);
                log.evals.push(EvalPoint {
                    step: step + 1,
                    mean_survival: report.mean_policy,
                    mean_baseline: report.mean_baseline,
                });
            }
        }
    }
    log.buffer_size = buffer.len();
    Ok((agent, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub config_hash: String,
    /// Hash of the frozen encoder the policy was trained against, if any.
    pub encoder_hash: Option<String>,
}

/// Actor weights with the metadata needed to pair them with an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub meta: CheckpointMeta,
    pub actor: WeightsFile,
}

impl PolicyCheckpoint {
    pub fn new(agent: &Agent, step: usize, encoder_hash: Option<String>) -> Self {
        Self {
            meta: CheckpointMeta { step, config_hash: agent.config.hash(), encoder_hash },
            actor: WeightsFile::from_network(&agent.actor.net),
        }
    }

    pub fn actor(&self) -> Result<Actor, AgentError> {
        Actor::from_weights(&self.actor)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::geometry::{Aabb, Scene};
    use std::sync::Arc;

    fn env() -> NavEnv {
        let scene = Arc::new(Scene::new(Aabb::new(0.0, 0.0, 4.0, 4.0), vec![], [0.8; 3], [0.3; 3], 10.0).unwrap());
        NavEnv::new(scene, EnvConfig::default(), None, 1).unwrap()
    }

    #[test]
    fn smoke_run_fills_buffer_and_updates() {
        let config = AgentConfig::tiny();
        let (agent, log) = train(&mut env(), config.clone()).unwrap();
        assert_eq!(log.buffer_size, 500);
        assert_eq!(log.updates, 500 - config.warmup_steps);
        assert!(!log.episodes.is_empty());
        assert!(log.episodes.iter().any(|e| e.critic_loss.is_some()));
        let ckpt = PolicyCheckpoint::new(&agent, 500, None);
        let actor = ckpt.actor().unwrap();
        let obs = vec![0.2; crate::env::OBS_DIM];
        assert_eq!(actor.deterministic_action(&obs), agent.actor.deterministic_action(&obs));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let config = AgentConfig { total_steps: 120, ..AgentConfig::tiny() };
        let (a, la) = train(&mut env(), config.clone()).unwrap();
        let (b, lb) = train(&mut env(), config).unwrap();
        assert_eq!(la, lb);
        assert_eq!(
            WeightsFile::from_network(&a.actor.net),
            WeightsFile::from_network(&b.actor.net)
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = AgentConfig { batch_size: 1, ..AgentConfig::tiny() };
        assert!(matches!(train(&mut env(), config), Err(AgentError::Config(_))));
    }
}
