//! Off-policy actor-critic producing additive joystick corrections.
//!
//! The critic update follows CrossQ: no target networks, batch-normalized
//! critics, and a single joint forward pass over current and next
//! state-action pairs so both share batch statistics.

mod eval;
mod replay;
mod train;

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, ACTION_DIM, OBS_DIM};
use crate::nn::{Adam, AdamConfig, Mode, Network, NetworkSpec, NnError, Real, Tensor, WeightsFile};

pub use eval::{
    correction_field, evaluate_survival, CorrectionField, CorrectionPoint, FnPolicy, Policy, SurvivalReport,
    ZeroPolicy, HISTOGRAM_BIN_SECONDS,
};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{train, AgentConfig, EpisodeLog, EvalPoint, PolicyCheckpoint, CheckpointMeta, TrainLog};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("bad agent config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `a = tanh(u)` for one action dimension, where
/// `u ~ N(mean, exp(log_std)^2)`.
pub fn squashed_log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - log1m_tanh_sq(u)
}

/// Splits one actor output row into mean and clamped log-std, remembering
/// which log-std entries were clamped.
fn head<T: Real>(row: &[T]) -> ([f64; ACTION_DIM], [f64; ACTION_DIM], [bool; ACTION_DIM]) {
    let mut mean = [0.0; ACTION_DIM];
    let mut log_std = [0.0; ACTION_DIM];
    let mut clamped = [false; ACTION_DIM];
    for j in 0..ACTION_DIM {
        mean[j] = row[j].to_f64().unwrap_or(f64::NAN);
        let raw = row[ACTION_DIM + j].to_f64().unwrap_or(f64::NAN);
        log_std[j] = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        clamped[j] = !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
    }
    (mean, log_std, clamped)
}

/// Reparameterized sample from one actor output row with standard normal
/// `noise`. Returns the squashed action and its log-probability.
pub fn sample_from_output<T: Real>(row: &[T], noise: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], f64) {
    let (mean, log_std, _) = head(row);
    let mut action = [0.0; ACTION_DIM];
    let mut log_prob = 0.0;
    for j in 0..ACTION_DIM {
        let u = mean[j] + log_std[j].exp() * noise[j];
        action[j] = u.tanh();
        log_prob += squashed_log_prob(u, mean[j], log_std[j]);
    }
    (action, log_prob)
}

pub fn actor_spec(obs_dim: usize, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp_with_batch_norm(obs_dim, hidden, 2 * ACTION_DIM)
}

pub fn critic_spec(obs_dim: usize, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp_with_batch_norm(obs_dim + ACTION_DIM, hidden, 1)
}

/// `[obs | action]` rows.
fn concat_rows<T: Real>(obs: &[T], actions: &[T], obs_dim: usize, out: &mut Vec<T>) {
    for (o, a) in obs.chunks_exact(obs_dim).zip(actions.chunks_exact(ACTION_DIM)) {
        out.extend_from_slice(o);
        out.extend_from_slice(a);
    }
}

/// Soft Bellman targets `r + gamma (1 - done) (min_i Q_i(s', a') - alpha log pi(a'|s'))`.
pub fn critic_targets(
    rewards: &[f64],
    dones: &[f64],
    next_q: [&[f64]; 2],
    next_log_prob: &[f64],
    gamma: f64,
    alpha: f64,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|b| {
            let soft = next_q[0][b].min(next_q[1][b]) - alpha * next_log_prob[b];
            rewards[b] + gamma * (1.0 - dones[b]) * soft
        })
        .collect()
}

/// Inputs to one critic step; `next_actions` and `next_log_prob` come from
/// the current policy.
pub struct CriticInputs<'a, T> {
    pub batch: usize,
    pub obs: &'a [T],
    pub actions: &'a [T],
    pub rewards: &'a [f64],
    pub next_obs: &'a [T],
    pub next_actions: &'a [T],
    pub next_log_prob: &'a [f64],
    pub dones: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct CriticStep<T> {
    /// Sum over both critics of the mean squared TD error.
    pub loss: f64,
    pub q_mean: f64,
    pub target_mean: f64,
    pub targets: Vec<f64>,
    pub grads: [Vec<Vec<T>>; 2],
}

/// Joint train-mode pass of `(s, a)` and `(s', a')` through both critics and
/// the gradients of the squared TD loss. Targets are constants.
pub fn critic_step<T: Real>(
    critics: [&mut Network<T>; 2],
    input: &CriticInputs<'_, T>,
    gamma: f64,
    alpha: f64,
) -> Result<CriticStep<T>, NnError> {
    let n = input.batch;
    let obs_dim = critics[0].input_len() - ACTION_DIM;
    let mut joint = Vec::with_capacity(2 * n * (obs_dim + ACTION_DIM));
    concat_rows(input.obs, input.actions, obs_dim, &mut joint);
    concat_rows(input.next_obs, input.next_actions, obs_dim, &mut joint);
    let joint = Tensor::new(vec![2 * n, obs_dim + ACTION_DIM], joint);

    let [c0, c1] = critics;
    let (q0, cache0) = c0.forward(&joint, Mode::Train)?;
    let (q1, cache1) = c1.forward(&joint, Mode::Train)?;
    let f = |t: &Tensor<T>| t.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>();
    let (q0, q1) = (f(&q0), f(&q1));
    let targets = critic_targets(input.rewards, input.dones, [&q0[n..], &q1[n..]], input.next_log_prob, gamma, alpha);

    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for (q, net, cache) in [(&q0, &*c0, &cache0), (&q1, &*c1, &cache1)] {
        let mut g = vec![T::zero(); 2 * n];
        for b in 0..n {
            let err = q[b] - targets[b];
            loss += err * err / n as f64;
            g[b] = T::lit(2.0 * err / n as f64);
        }
        grads.push(net.backward(cache, &Tensor::new(vec![2 * n, 1], g), true).params);
    }
    let q_mean = (q0[..n].iter().sum::<f64>() + q1[..n].iter().sum::<f64>()) / (2 * n) as f64;
    let target_mean = targets.iter().sum::<f64>() / n as f64;
    let g1 = grads.pop().expect("two critics");
    let g0 = grads.pop().expect("two critics");
    Ok(CriticStep { loss, q_mean, target_mean, targets, grads: [g0, g1] })
}

#[derive(Debug, Clone)]
pub struct ActorStep<T> {
    /// `mean(alpha log pi - min_i Q_i)`.
    pub loss: f64,
    pub mean_log_prob: f64,
    pub mean_log_std: f64,
    pub grads: Vec<Vec<T>>,
}

/// Reparameterized actor loss and its gradient. The actor runs in train
/// mode; critics run in eval mode and are not modified. `noise` holds one
/// standard normal pair per row.
pub fn actor_step<T: Real>(
    actor: &mut Network<T>,
    critics: [&Network<T>; 2],
    obs: &[T],
    batch: usize,
    noise: &[[f64; ACTION_DIM]],
    alpha: f64,
) -> Result<ActorStep<T>, NnError> {
    let obs_dim = actor.input_len();
    let (out, cache) = actor.forward(&Tensor::new(vec![batch, obs_dim], obs.to_vec()), Mode::Train)?;

    let mut critic_in = Vec::with_capacity(batch * (obs_dim + ACTION_DIM));
    let mut pre = Vec::with_capacity(batch);
    let mut log_probs = Vec::with_capacity(batch);
    let mut log_std_sum = 0.0;
    for b in 0..batch {
        let row = out.row(b);
        let (mean, log_std, clamped) = head(row);
        let (action, lp) = sample_from_output(row, &noise[b]);
        critic_in.extend_from_slice(&obs[b * obs_dim..(b + 1) * obs_dim]);
        critic_in.extend(action.iter().map(|&a| T::lit(a)));
        pre.push((mean, log_std, clamped, action));
        log_probs.push(lp);
        log_std_sum += log_std.iter().sum::<f64>();
    }
    let critic_in = Tensor::new(vec![batch, obs_dim + ACTION_DIM], critic_in);
    let (qa, ca) = critics[0].forward_eval(&critic_in)?;
    let (qb, cb) = critics[1].forward_eval(&critic_in)?;

    let mut pick_a = vec![T::zero(); batch];
    let mut pick_b = vec![T::zero(); batch];
    let mut loss = 0.0;
    for b in 0..batch {
        let (x, y) = (qa.data[b].to_f64().unwrap_or(f64::NAN), qb.data[b].to_f64().unwrap_or(f64::NAN));
        if x <= y {
            pick_a[b] = T::one();
        } else {
            pick_b[b] = T::one();
        }
        loss += (alpha * log_probs[b] - x.min(y)) / batch as f64;
    }
    let da = critics[0].backward(&ca, &Tensor::new(vec![batch, 1], pick_a), false).input;
    let db = critics[1].backward(&cb, &Tensor::new(vec![batch, 1], pick_b), false).input;

    let width = obs_dim + ACTION_DIM;
    let mut dout = vec![T::zero(); batch * 2 * ACTION_DIM];
    for (b, (_, log_std, clamped, action)) in pre.iter().enumerate() {
        for j in 0..ACTION_DIM {
            let k = b * width + obs_dim + j;
            let dq = da.data[k].to_f64().unwrap_or(f64::NAN) + db.data[k].to_f64().unwrap_or(f64::NAN);
            let a = action[j];
            let sigma = log_std[j].exp();
            let eps = noise[b][j];
            // derivative of the per-sample loss with respect to u
            let g_u = alpha * 2.0 * a - dq * (1.0 - a * a);
            dout[b * 2 * ACTION_DIM + j] = T::lit(g_u / batch as f64);
            if !clamped[j] {
                dout[b * 2 * ACTION_DIM + ACTION_DIM + j] = T::lit((-alpha + g_u * sigma * eps) / batch as f64);
            }
        }
    }
    let grads = actor.backward(&cache, &Tensor::new(out.shape.clone(), dout), true).params;
    Ok(ActorStep {
        loss,
        mean_log_prob: log_probs.iter().sum::<f64>() / batch as f64,
        mean_log_std: log_std_sum / (batch * ACTION_DIM) as f64,
        grads,
    })
}

/// Squashed Gaussian policy network.
#[derive(Debug, Clone)]
pub struct Actor {
    pub net: Network<f32>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self, NnError> {
        Ok(Self { net: Network::new(actor_spec(OBS_DIM, hidden), rng)? })
    }

    pub fn from_weights(weights: &WeightsFile) -> Result<Self, AgentError> {
        let net = weights.to_network()?;
        if net.input_len() != OBS_DIM || net.output_len() != 2 * ACTION_DIM {
            return Err(AgentError::Checkpoint(format!(
                "actor maps {} -> {}, expected {OBS_DIM} -> {}",
                net.input_len(),
                net.output_len(),
                2 * ACTION_DIM
            )));
        }
        Ok(Self { net })
    }

    fn output(&self, obs: &[f32]) -> Vec<f32> {
        assert_eq!(obs.len(), OBS_DIM, "observation length");
        self.net
            .infer(&Tensor::new(vec![1, OBS_DIM], obs.to_vec()))
            .expect("actor shape checked at construction")
            .data
    }

    /// Eval-mode action. Deterministic gives `tanh(mean)` and no log-prob.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f32], rng: &mut R, deterministic: bool) -> ([f64; ACTION_DIM], Option<f64>) {
        let out = self.output(obs);
        if deterministic {
            let (mean, _, _) = head(&out);
            return ([mean[0].tanh(), mean[1].tanh()], None);
        }
        let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let (a, lp) = sample_from_output(&out, &noise);
        (a, Some(lp))
    }

    pub fn deterministic_action(&self, obs: &[f32]) -> [f64; ACTION_DIM] {
        let (mean, _, _) = head(&self.output(obs));
        [mean[0].tanh(), mean[1].tanh()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub q_mean: f64,
    pub actor_loss: f64,
    pub log_prob: f64,
    pub alpha: f64,
}

/// Actor, exactly two critics and their optimizers. There are no target
/// networks.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: Actor,
    critics: [Network<f32>; 2],
    actor_opt: Adam<f32>,
    critic_opts: [Adam<f32>; 2],
    log_alpha: f64,
    alpha_opt: Adam<f64>,
}

fn sizes(net: &Network<f32>) -> Vec<usize> {
    net.params().iter().map(|p| p.len()).collect()
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = Actor::new(&config.actor_hidden, rng)?;
        let critics = [
            Network::new(critic_spec(OBS_DIM, &config.critic_hidden), rng)?,
            Network::new(critic_spec(OBS_DIM, &config.critic_hidden), rng)?,
        ];
        let adam = AdamConfig { lr: config.lr, beta1: config.adam_beta1, beta2: config.adam_beta2, eps: 1e-8 };
        Ok(Self {
            actor_opt: Adam::new(adam, &sizes(&actor.net)),
            critic_opts: [Adam::new(adam, &sizes(&critics[0])), Adam::new(adam, &sizes(&critics[1]))],
            alpha_opt: Adam::new(adam, &[1]),
            log_alpha: config.alpha.ln(),
            actor,
            critics,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn critics(&self) -> &[Network<f32>; 2] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Network<f32>; 2] {
        &mut self.critics
    }

    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<CriticStep<f32>, AgentError> {
        let n = batch.size;
        let next_out = self.actor.net.infer(&Tensor::new(vec![n, OBS_DIM], batch.next_obs.clone()))?;
        let mut next_actions = Vec::with_capacity(n * ACTION_DIM);
        let mut next_log_prob = Vec::with_capacity(n);
        for b in 0..n {
            let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let (a, lp) = sample_from_output(next_out.row(b), &noise);
            next_actions.extend(a.iter().map(|&v| v as f32));
            next_log_prob.push(lp);
        }
        let rewards: Vec<f64> = batch.rewards.iter().map(|&r| r as f64).collect();
        let dones: Vec<f64> = batch.dones.iter().map(|&d| d as f64).collect();
        let input = CriticInputs {
            batch: n,
            obs: &batch.obs,
            actions: &batch.actions,
            rewards: &rewards,
            next_obs: &batch.next_obs,
            next_actions: &next_actions,
            next_log_prob: &next_log_prob,
            dones: &dones,
        };
        let alpha = self.alpha();
        let [c0, c1] = &mut self.critics;
        let step = critic_step([c0, c1], &input, self.config.gamma, alpha)?;
        for i in 0..2 {
            self.critics[i].apply_adam(&mut self.critic_opts[i], &step.grads[i]);
        }
        Ok(step)
    }

    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<ActorStep<f32>, AgentError> {
        let noise: Vec<[f64; 2]> = (0..batch.size)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let alpha = self.alpha();
        let step = actor_step(
            &mut self.actor.net,
            [&self.critics[0], &self.critics[1]],
            &batch.obs,
            batch.size,
            &noise,
            alpha,
        )?;
        self.actor.net.apply_adam(&mut self.actor_opt, &step.grads);
        if self.config.auto_alpha {
            let grad = -(step.mean_log_prob + self.config.target_entropy);
            let mut p = vec![self.log_alpha];
            self.alpha_opt.step(&mut [&mut p], &[vec![grad]]);
            self.log_alpha = p[0];
        }
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_params(net: &mut Network<f32>) {
        for p in net.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_actor_acts_zero() {
        let mut actor = Actor::new(&[8, 8], &mut rng(0)).unwrap();
        zero_params(&mut actor.net);
        let (a, lp) = actor.sample_action(&[0.3; OBS_DIM], &mut rng(1), true);
        assert_eq!(a, [0.0, 0.0]);
        assert!(lp.is_none());
    }

    #[test]
    fn stochastic_actions_stay_in_box() {
        let mut actor = Actor::new(&[8], &mut rng(2)).unwrap();
        // widen the policy so tanh saturates often
        let last = actor.net.params_mut().len() - 1;
        actor.net.params_mut()[last].copy_from_slice(&[3.0, -3.0, 2.0, 2.0]);
        let mut r = rng(3);
        for i in 0..10_000 {
            let obs = vec![(i % 7) as f32 * 0.1; OBS_DIM];
            let (a, lp) = actor.sample_action(&obs, &mut r, false);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(lp.unwrap().is_finite());
        }
    }

    #[test]
    fn squashed_density_integrates_to_gaussian_cdf() {
        // P(a <= a0) by trapezoid quadrature of exp(log_prob) over a in (-1, a0]
        // against the Gaussian CDF at atanh(a0).
        let (mean, log_std) = (0.3, -0.4);
        let density = |a: f64| {
            let u: f64 = a.atanh();
            squashed_log_prob(u, mean, log_std).exp()
        };
        for &a0 in &[-0.5, 0.0, 0.4, 0.9] {
            let steps = 200_000;
            let lo = -1.0 + 1e-12;
            let h = (a0 - lo) / steps as f64;
            let mut integral = 0.5 * (density(lo) + density(a0));
            for i in 1..steps {
                integral += density(lo + i as f64 * h);
            }
            integral *= h;
            let z = (f64::atanh(a0) - mean) / f64::exp(log_std);
            let cdf = 0.5 * (1.0 + erf(z / 2f64.sqrt()));
            assert!((integral - cdf).abs() < 1e-3, "a0 {a0}: {integral} vs {cdf}");
        }
    }

    /// Abramowitz-Stegun 7.1.26 is too coarse; use a series/continued
    /// fraction pair accurate to ~1e-12.
    fn erf(x: f64) -> f64 {
        if x.abs() < 3.0 {
            let mut sum = x;
            let mut term = x;
            let mut n = 0.0;
            loop {
                n += 1.0;
                term *= -x * x / n;
                let add = term / (2.0 * n + 1.0);
                sum += add;
                if add.abs() < 1e-17 {
                    break;
                }
            }
            2.0 / PI.sqrt() * sum
        } else {
            // erfc continued fraction
            let mut f = 0.0;
            for k in (1..60).rev() {
                f = (k as f64 / 2.0) / (x.abs() + f);
            }
            let erfc = (-x * x).exp() / PI.sqrt() / (x.abs() + f);
            x.signum() * (1.0 - erfc)
        }
    }

    #[test]
    fn log1m_tanh_sq_matches_direct_formula() {
        for &u in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log1m_tanh_sq(u) - direct).abs() < 1e-12);
        }
        assert!(log1m_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn terminal_and_myopic_targets_reduce_to_reward() {
        let r = [1.0, -100.0, 0.5];
        let q = [3.0, 4.0, 5.0];
        let lp = [-1.0, 2.0, 0.3];
        let done = critic_targets(&r, &[1.0; 3], [&q, &q], &lp, 0.99, 0.2);
        assert_eq!(done, r.to_vec());
        let myopic = critic_targets(&r, &[0.0; 3], [&q, &q], &lp, 0.0, 0.0);
        assert_eq!(myopic, r.to_vec());
        let soft = critic_targets(&r, &[0.0; 3], [&q, &[2.0, 9.0, 9.0]], &lp, 0.5, 0.2);
        assert!((soft[0] - (1.0 + 0.5 * (2.0 + 0.2))).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_matches_hand_evaluation() {
        // Critic = BN(input) -> Dense(3 -> 1). With a batch made of one
        // transition repeated, the joint pass holds two distinct rows x and
        // x' (each n times); per feature BN maps them to +-d/sqrt(d^2 + eps)
        // with d = |x - x'| / 2.
        let spec = NetworkSpec::mlp_with_batch_norm(1 + ACTION_DIM, &[], 1);
        let mut c = [Network::<f64>::new(spec.clone(), &mut rng(4)).unwrap(), Network::<f64>::new(spec, &mut rng(5)).unwrap()];
        let w = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]];
        let bias = [0.1, -0.2];
        for i in 0..2 {
            let mut p = c[i].params_mut();
            p[2].copy_from_slice(&w[i]);
            p[3].copy_from_slice(&[bias[i]]);
        }
        let n = 4;
        let (s, a, s2, a2) = ([0.2], [0.5, -0.3], [1.0], [-0.1, 0.7]);
        let x = [s[0], a[0], a[1]];
        let x2 = [s2[0], a2[0], a2[1]];
        let eps = 1e-5;
        let norm = |v: f64, other: f64| {
            let d = (v - other) / 2.0;
            d / (d * d + eps).sqrt()
        };
        let q = |i: usize, p: &[f64; 3], o: &[f64; 3]| (0..3).map(|k| w[i][k] * norm(p[k], o[k])).sum::<f64>() + bias[i];
        let (r, gamma, alpha, lp) = (0.7, 0.9, 0.2, -0.4);
        let y = r + gamma * (q(0, &x2, &x).min(q(1, &x2, &x)) - alpha * lp);
        let expect = (q(0, &x, &x2) - y).powi(2) + (q(1, &x, &x2) - y).powi(2);

        let rep = |v: &[f64]| v.iter().cycle().take(v.len() * n).copied().collect::<Vec<f64>>();
        let input = CriticInputs {
            batch: n,
            obs: &rep(&s),
            actions: &rep(&a),
            rewards: &[r; 4],
            next_obs: &rep(&s2),
            next_actions: &rep(&a2),
            next_log_prob: &[lp; 4],
            dones: &[0.0; 4],
        };
        let [c0, c1] = &mut c;
        let step = critic_step([c0, c1], &input, gamma, alpha).unwrap();
        assert!((step.loss - expect).abs() < 1e-10, "{} vs {}", step.loss, expect);
    }

    #[test]
    fn critic_step_moves_running_stats_actor_step_does_not() {
        let config = AgentConfig::tiny();
        let mut agent = Agent::new(config, &mut rng(6)).unwrap();
        let mut r = rng(7);
        let t: Vec<Transition> = (0..8)
            .map(|i| Transition {
                obs: (0..OBS_DIM).map(|k| ((i * k) % 5) as f32 * 0.2).collect(),
                action: [0.1 * i as f32, -0.05],
                reward: 1.0,
                next_obs: (0..OBS_DIM).map(|k| ((i + k) % 3) as f32 * 0.3).collect(),
                done: i == 3,
            })
            .collect();
        let batch = Batch::from_transitions(&t.iter().collect::<Vec<_>>());
        let snapshot = |a: &Agent| a.critics().iter().flat_map(|c| c.buffers().into_iter().cloned()).collect::<Vec<_>>();
        let before = snapshot(&agent);
        agent.actor_update(&batch, &mut r).unwrap();
        assert_eq!(before, snapshot(&agent));
        agent.critic_update(&batch, &mut r).unwrap();
        assert_ne!(before, snapshot(&agent));
        assert_eq!(agent.critics().len(), 2);
    }

    fn tiny_actor_setup(seed: u64, zero_critics: bool) -> (Network<f64>, [Network<f64>; 2], Vec<f64>, Vec<[f64; 2]>) {
        let obs_dim = 3;
        let mut r = rng(seed);
        let actor = Network::<f64>::new(actor_spec(obs_dim, &[8]), &mut r).unwrap();
        let mut critics = [
            Network::<f64>::new(critic_spec(obs_dim, &[8]), &mut r).unwrap(),
            Network::<f64>::new(critic_spec(obs_dim, &[8]), &mut r).unwrap(),
        ];
        for c in critics.iter_mut() {
            let warm = Tensor::new(vec![6, obs_dim + 2], (0..30).map(|_| r.gen_range(-1.0..1.0)).collect());
            c.forward(&warm, Mode::Train).unwrap();
            if zero_critics {
                let mut p = c.params_mut();
                let n = p.len();
                p[n - 2].iter_mut().for_each(|v| *v = 0.0);
                p[n - 1].iter_mut().for_each(|v| *v = 1.5);
            }
        }
        let batch = 5;
        let obs: Vec<f64> = (0..batch * obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let noise: Vec<[f64; 2]> = (0..batch).map(|_| [r.sample(StandardNormal), r.sample(StandardNormal)]).collect();
        (actor, critics, obs, noise)
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (mut actor, critics, obs, noise) = tiny_actor_setup(8, false);
        let alpha = 0.3;
        let step = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, alpha).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for t in 0..actor.params().len() {
            for i in 0..actor.params()[t].len() {
                let orig = actor.params()[t][i];
                actor.params_mut()[t][i] = orig + h;
                let up = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, alpha).unwrap().loss;
                actor.params_mut()[t][i] = orig - h;
                let down = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, alpha).unwrap().loss;
                actor.params_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = step.grads[t][i];
                let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn no_signal_gives_zero_actor_gradient() {
        let (mut actor, critics, obs, noise) = tiny_actor_setup(9, true);
        let step = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, 0.0).unwrap();
        assert!(step.grads.iter().flatten().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn entropy_alone_raises_std() {
        let (mut actor, critics, obs, noise) = tiny_actor_setup(10, true);
        // The squashed entropy peaks at a finite std, so start narrow.
        let last = actor.params().len() - 1;
        actor.params_mut()[last].copy_from_slice(&[0.0, 0.0, -2.0, -2.0]);
        let sizes: Vec<usize> = actor.params().iter().map(|p| p.len()).collect();
        let mut opt = Adam::<f64>::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, &sizes);
        let first = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, 0.5).unwrap();
        let mut r = rng(11);
        for _ in 0..50 {
            let noise: Vec<[f64; 2]> = (0..5).map(|_| [r.sample(StandardNormal), r.sample(StandardNormal)]).collect();
            let step = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, 0.5).unwrap();
            actor.apply_adam(&mut opt, &step.grads);
        }
        let last = actor_step(&mut actor, [&critics[0], &critics[1]], &obs, 5, &noise, 0.5).unwrap();
        assert!(last.mean_log_std > first.mean_log_std + 0.1, "{} -> {}", first.mean_log_std, last.mean_log_std);
    }
}
