//! Offline reinforcement learning on logged intersection data.
//!
//! Three trainers over a frozen [`ReplayBuffer`]: behavior cloning (plain
//! regression onto the logged actions), TD3 (twin delayed deterministic
//! policy gradient), and TD3+BC (TD3 with a behavior-cloning term whose
//! weight is normalized by the critic's own scale, so the trade-off is
//! invariant to critic magnitude). The buffer is never refilled: training is
//! strictly offline.
//!
//! Update rules:
//! - BC: one Adam step on `mean_i ||actor(s_i) - a_i||^2`.
//! - Critics: smoothed target action `clamp(actor_target(s') + noise)`, TD
//!   target `y = r + gamma * (1 - done) * min(Q'_1, Q'_2)`, one Adam step per
//!   critic on the mean squared TD error.
//! - Actor (every `policy_delay`-th step): minimize
//!   `-lambda * mean Q_1(s, actor(s)) + mean ||actor(s) - a||^2` with
//!   `lambda = alpha / (mean|Q_1| + 1e-8)` for TD3+BC, or plain
//!   `-mean Q_1` for TD3; followed by polyak updates of all targets.
//!
//! Batch reductions run through [`fold_chunks`] with a fixed chunk size, so
//! the sequential and rayon paths produce bit-identical results, and every
//! random choice in a run is derived from one `(algorithm, seed)` pair.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dataset::{encode_observation, Batch, NormStats, ReplayBuffer, OBS_DIM};
use crate::env::{DensitySpec, Env, EnvConfig};
use crate::kinematics::ActionVector;
use crate::nn::{
    adam_update, polyak_update, AdamHyper, AdamState, Checkpoint, ForwardTrace, GradientBundle,
    Mlp, NnError, OutputActivation,
};
use crate::par::{fold_chunks, Parallelism};
use crate::seeding;
use crate::world::Observation;

/// Denominator guard in `lambda = alpha / (mean|Q| + LAMBDA_EPS)`.
pub const LAMBDA_EPS: f64 = 1e-8;

/// Fixed chunk size for batch gradient accumulation; chunk boundaries depend
/// only on the batch size, never on the execution mode.
pub const GRAD_CHUNK: usize = 32;

/// z-score for the 95% normal-approximation confidence interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Error)]
pub enum OfflineRlError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch rows do not match network dimensions")]
    BatchShape,
    #[error("noise count {got} does not match batch size {expected}")]
    NoiseMismatch { expected: usize, got: usize },
    #[error("checkpoint is {got_in}->{got_out}, expected {want_in}->{want_out}")]
    CheckpointShape { want_in: usize, want_out: usize, got_in: usize, got_out: usize },
    #[error("normalization stats in checkpoint have the wrong dimension")]
    CheckpointNorm,
    #[error("runs disagree in curve length or step indices")]
    CurveMismatch,
    #[error("no runs to aggregate")]
    NoRuns,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The three offline algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Bc,
    Td3,
    Td3Bc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Bc, Algorithm::Td3, Algorithm::Td3Bc];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Td3 => "td3",
            Algorithm::Td3Bc => "td3+bc",
        }
    }

    pub fn from_name(s: &str) -> Option<Algorithm> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Hyperparameters for one training protocol. `policy_noise` and
/// `noise_clip` are fractions of the per-dimension action bound.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub tau: f64,
    pub alpha_td3bc: f64,
    pub gamma: f64,
    pub lr: f64,
    /// Hidden layer widths of both the actor and the critics.
    pub hidden: Vec<usize>,
    /// Episodes per evaluation checkpoint, cycling low/middle/high density.
    pub eval_episodes: usize,
    /// Seeds of the independent runs in the multi-seed protocol.
    pub seeds: Vec<u64>,
    /// Execution mode for batch reductions; results are identical either way.
    pub parallelism: Parallelism,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 20_000,
            eval_every: 400,
            batch_size: 256,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            tau: 0.005,
            alpha_td3bc: 2.5,
            gamma: 0.99,
            lr: 3e-4,
            hidden: vec![32, 32],
            eval_episodes: 10,
            seeds: derive_run_seeds(0, 10),
            parallelism: Parallelism::Sequential,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OfflineRlError> {
        let fail = |m: &str| Err(OfflineRlError::Config(m.to_string()));
        if self.max_steps == 0 || self.eval_every == 0 {
            return fail("max_steps and eval_every must be positive");
        }
        if self.max_steps % self.eval_every != 0 {
            return fail("eval_every must divide max_steps");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.policy_delay == 0 {
            return fail("policy_delay must be at least 1");
        }
        if !(self.alpha_td3bc > 0.0 && self.alpha_td3bc.is_finite()) {
            return fail("alpha_td3bc must be positive and finite");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive and finite");
        }
        if !(self.policy_noise >= 0.0 && self.noise_clip >= 0.0) {
            return fail("noise parameters must be non-negative");
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be positive");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// Independent per-run seeds for the multi-seed protocol.
pub fn derive_run_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seeding::derive(master, "train-run", i)).collect()
}

/// Per-dimension action bounds `[v_cap, v_cap, yaw_rate_cap]`.
pub fn action_caps(cfg: &EnvConfig) -> [f64; 3] {
    [cfg.kinematics.v_cap, cfg.kinematics.v_cap, cfg.kinematics.yaw_rate_cap]
}

/// Policy network: observation in, bounded action out.
pub fn new_actor(
    obs_dim: usize,
    hidden: &[usize],
    caps: [f64; 3],
    rng: &mut impl Rng,
) -> Result<Mlp, NnError> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(obs_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(ActionVector::DIM);
    Mlp::init(&sizes, OutputActivation::TanhScaled(caps.to_vec()), rng)
}

/// Q network: observation and action in, scalar value out.
pub fn new_critic(obs_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Mlp, NnError> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(obs_dim + ActionVector::DIM);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::init(&sizes, OutputActivation::Identity, rng)
}

/// Clipped Gaussian target-policy smoothing noise, per sample and dimension:
/// `clamp(N(0, sigma_frac * cap), +-clip_frac * cap)`.
pub fn sample_policy_noise<R: Rng>(
    rng: &mut R,
    n: usize,
    caps: [f64; 3],
    sigma_frac: f64,
    clip_frac: f64,
) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let mut v = [0.0; 3];
            for (j, out) in v.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                let clip = clip_frac * caps[j];
                *out = (z * sigma_frac * caps[j]).clamp(-clip, clip);
            }
            v
        })
        .collect()
}

/// Everything one TD3 or TD3+BC run mutates: the actor, the twin critics,
/// their targets, and the per-network Adam states.
#[derive(Debug, Clone)]
pub struct Td3State {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub actor_adam: AdamState,
    pub critic1_adam: AdamState,
    pub critic2_adam: AdamState,
    pub caps: [f64; 3],
}

impl Td3State {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Result<Td3State, OfflineRlError> {
        Td3State::with_dims(OBS_DIM, &cfg.hidden, action_caps(&cfg.env), cfg.lr, seed)
    }

    /// Fresh networks with targets cloned from the online ones.
    pub fn with_dims(
        obs_dim: usize,
        hidden: &[usize],
        caps: [f64; 3],
        lr: f64,
        seed: u64,
    ) -> Result<Td3State, OfflineRlError> {
        let hyper = AdamHyper { lr, ..AdamHyper::default() };
        let actor = new_actor(obs_dim, hidden, caps, &mut seeding::rng(seed, "init-actor", 0))?;
        let critic1 = new_critic(obs_dim, hidden, &mut seeding::rng(seed, "init-critic1", 0))?;
        let critic2 = new_critic(obs_dim, hidden, &mut seeding::rng(seed, "init-critic2", 0))?;
        Ok(Td3State {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor_adam: AdamState::new(&actor, hyper),
            critic1_adam: AdamState::new(&critic1, hyper),
            critic2_adam: AdamState::new(&critic2, hyper),
            actor,
            critic1,
            critic2,
            caps,
        })
    }

    fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), OfflineRlError> {
        if batch.obs.is_empty() {
            return Err(OfflineRlError::EmptyBatch);
        }
        let n = batch.obs.len();
        if batch.actions.len() != n
            || batch.rewards.len() != n
            || batch.next_obs.len() != n
            || batch.not_done.len() != n
        {
            return Err(OfflineRlError::BatchShape);
        }
        let d = self.obs_dim();
        if batch.obs.iter().chain(&batch.next_obs).any(|r| r.len() != d) {
            return Err(OfflineRlError::BatchShape);
        }
        Ok(())
    }

    /// Per-sample TD targets `[y, y1, y2]`: `y_c = r + gamma * not_done *
    /// Q'_c(s', a')` per target critic and `y = r + gamma * not_done *
    /// min(Q'_1, Q'_2)`, evaluated at the smoothed target action
    /// `a' = clamp(actor_target(s') + noise)`. By construction `y <= y1` and
    /// `y <= y2`.
    pub fn td_targets(
        &self,
        batch: &Batch,
        noise: &[[f64; 3]],
        gamma: f64,
    ) -> Result<Vec<[f64; 3]>, OfflineRlError> {
        self.check_batch(batch)?;
        if noise.len() != batch.obs.len() {
            return Err(OfflineRlError::NoiseMismatch {
                expected: batch.obs.len(),
                got: noise.len(),
            });
        }
        let mut out = Vec::with_capacity(batch.obs.len());
        let mut x = Vec::with_capacity(self.obs_dim() + ActionVector::DIM);
        for i in 0..batch.obs.len() {
            let a = self.actor_target.forward(&batch.next_obs[i])?;
            x.clear();
            x.extend_from_slice(&batch.next_obs[i]);
            for j in 0..ActionVector::DIM {
                x.push((a[j] + noise[i][j]).clamp(-self.caps[j], self.caps[j]));
            }
            let q1 = self.critic1_target.forward(&x)?[0];
            let q2 = self.critic2_target.forward(&x)?[0];
            let scale = gamma * batch.not_done[i];
            let r = batch.rewards[i];
            out.push([r + scale * q1.min(q2), r + scale * q1, r + scale * q2]);
        }
        Ok(out)
    }

    /// One Adam step per critic on the mean squared TD error against the
    /// twin-minimum target. Returns the pre-step losses.
    pub fn critic_update(
        &mut self,
        batch: &Batch,
        noise: &[[f64; 3]],
        gamma: f64,
        mode: Parallelism,
    ) -> Result<(f64, f64), OfflineRlError> {
        let y: Vec<f64> = self.td_targets(batch, noise, gamma)?.iter().map(|t| t[0]).collect();
        let n = batch.obs.len();
        let inv_n = 1.0 / n as f64;
        let (g1, g2, l1, l2) = fold_chunks(
            mode,
            n,
            GRAD_CHUNK,
            |s, e| {
                let mut g1 = GradientBundle::zeros(&self.critic1);
                let mut g2 = GradientBundle::zeros(&self.critic2);
                let (mut l1, mut l2) = (0.0, 0.0);
                let mut trace = ForwardTrace::default();
                let mut dx = Vec::new();
                let mut x = Vec::with_capacity(self.obs_dim() + ActionVector::DIM);
                for i in s..e {
                    x.clear();
                    x.extend_from_slice(&batch.obs[i]);
                    x.extend_from_slice(&batch.actions[i]);
                    self.critic1.forward_trace_into(&x, &mut trace).expect("dims checked");
                    let d = trace.output()[0] - y[i];
                    l1 += d * d;
                    self.critic1
                        .backward_into(&trace, &[2.0 * d * inv_n], &mut g1, &mut dx)
                        .expect("dims checked");
                    self.critic2.forward_trace_into(&x, &mut trace).expect("dims checked");
                    let d = trace.output()[0] - y[i];
                    l2 += d * d;
                    self.critic2
                        .backward_into(&trace, &[2.0 * d * inv_n], &mut g2, &mut dx)
                        .expect("dims checked");
                }
                (g1, g2, l1, l2)
            },
            |(mut g1, mut g2, l1, l2), (h1, h2, m1, m2)| {
                g1.add(&h1);
                g2.add(&h2);
                (g1, g2, l1 + m1, l2 + m2)
            },
        )
        .expect("batch checked non-empty");
        adam_update(&mut self.critic1, &g1, &mut self.critic1_adam)?;
        adam_update(&mut self.critic2, &g2, &mut self.critic2_adam)?;
        Ok((l1 * inv_n, l2 * inv_n))
    }

    /// One delayed policy update. `alpha = None` is plain TD3 (maximize the
    /// first critic); `alpha = Some(a)` adds the behavior-cloning term with
    /// weight `lambda = a / (mean|Q_1| + 1e-8)`, which makes the update
    /// invariant to rescaling the critic. Always followed by polyak updates
    /// of the actor and critic targets. Returns the pre-step loss.
    pub fn actor_update(
        &mut self,
        batch: &Batch,
        alpha: Option<f64>,
        tau: f64,
        mode: Parallelism,
    ) -> Result<f64, OfflineRlError> {
        self.check_batch(batch)?;
        let n = batch.obs.len();
        let inv_n = 1.0 / n as f64;
        let obs_dim = self.obs_dim();

        // The critic scale, measured at the current policy's actions.
        let lambda = match alpha {
            None => 1.0,
            Some(a) => {
                let sum_abs = fold_chunks(
                    mode,
                    n,
                    GRAD_CHUNK,
                    |s, e| {
                        let mut acc = 0.0;
                        let mut x = Vec::with_capacity(obs_dim + ActionVector::DIM);
                        for i in s..e {
                            let act = self.actor.forward(&batch.obs[i]).expect("dims checked");
                            x.clear();
                            x.extend_from_slice(&batch.obs[i]);
                            x.extend_from_slice(&act);
                            acc += self.critic1.forward(&x).expect("dims checked")[0].abs();
                        }
                        acc
                    },
                    |a, b| a + b,
                )
                .expect("batch checked non-empty");
                a / (sum_abs * inv_n + LAMBDA_EPS)
            }
        };

        let with_bc = alpha.is_some();
        let (grad, q_sum, bc_sum) = fold_chunks(
            mode,
            n,
            GRAD_CHUNK,
            |s, e| {
                let mut g = GradientBundle::zeros(&self.actor);
                let mut scratch = GradientBundle::zeros(&self.critic1);
                let (mut q_sum, mut bc_sum) = (0.0, 0.0);
                let mut trace_a = ForwardTrace::default();
                let mut trace_c = ForwardTrace::default();
                let mut dx = Vec::new();
                let mut dxa = Vec::new();
                let mut x = Vec::with_capacity(obs_dim + ActionVector::DIM);
                let mut upstream = [0.0; ActionVector::DIM];
                for i in s..e {
                    self.actor.forward_trace_into(&batch.obs[i], &mut trace_a).expect("dims checked");
                    let act: [f64; 3] = trace_a.output().try_into().expect("actor outputs 3 dims");
                    x.clear();
                    x.extend_from_slice(&batch.obs[i]);
                    x.extend_from_slice(&act);
                    self.critic1.forward_trace_into(&x, &mut trace_c).expect("dims checked");
                    q_sum += trace_c.output()[0];
                    // dQ/d(input); the action block is the tail. The scratch
                    // parameter gradients are discarded.
                    self.critic1
                        .backward_into(&trace_c, &[1.0], &mut scratch, &mut dx)
                        .expect("dims checked");
                    for j in 0..ActionVector::DIM {
                        upstream[j] = -lambda * inv_n * dx[obs_dim + j];
                        if with_bc {
                            let d = act[j] - batch.actions[i][j];
                            bc_sum += d * d;
                            upstream[j] += 2.0 * d * inv_n;
                        }
                    }
                    self.actor
                        .backward_into(&trace_a, &upstream, &mut g, &mut dxa)
                        .expect("dims checked");
                }
                (g, q_sum, bc_sum)
            },
            |(mut g, q, b), (h, q2, b2)| {
                g.add(&h);
                (g, q + q2, b + b2)
            },
        )
        .expect("batch checked non-empty");

        adam_update(&mut self.actor, &grad, &mut self.actor_adam)?;
        self.polyak_targets(tau)?;
        Ok(-lambda * q_sum * inv_n + if with_bc { bc_sum * inv_n } else { 0.0 })
    }

    /// Moves all three targets toward their online networks.
    pub fn polyak_targets(&mut self, tau: f64) -> Result<(), OfflineRlError> {
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        self.polyak_critic_targets(tau)
    }

    /// Moves only the critic targets; used when the actor is held fixed.
    pub fn polyak_critic_targets(&mut self, tau: f64) -> Result<(), OfflineRlError> {
        polyak_update(&mut self.critic1_target, &self.critic1, tau)?;
        polyak_update(&mut self.critic2_target, &self.critic2, tau)?;
        Ok(())
    }
}

/// One Adam step on the behavior-cloning loss
/// `mean_i ||actor(s_i) - a_i||^2` (summed over action dimensions).
/// Returns the pre-step loss.
pub fn bc_update(
    actor: &mut Mlp,
    adam: &mut AdamState,
    batch: &Batch,
    mode: Parallelism,
) -> Result<f64, OfflineRlError> {
    if batch.obs.is_empty() {
        return Err(OfflineRlError::EmptyBatch);
    }
    if batch.actions.len() != batch.obs.len()
        || batch.obs.iter().any(|r| r.len() != actor.input_dim())
        || actor.output_dim() != ActionVector::DIM
    {
        return Err(OfflineRlError::BatchShape);
    }
    let n = batch.obs.len();
    let inv_n = 1.0 / n as f64;
    let (grad, loss_sum) = fold_chunks(
        mode,
        n,
        GRAD_CHUNK,
        |s, e| {
            let mut g = GradientBundle::zeros(actor);
            let mut loss = 0.0;
            let mut trace = ForwardTrace::default();
            let mut dx = Vec::new();
            let mut upstream = [0.0; ActionVector::DIM];
            for i in s..e {
                actor.forward_trace_into(&batch.obs[i], &mut trace).expect("dims checked");
                let out = trace.output();
                for j in 0..ActionVector::DIM {
                    let d = out[j] - batch.actions[i][j];
                    loss += d * d;
                    upstream[j] = 2.0 * d * inv_n;
                }
                actor.backward_into(&trace, &upstream, &mut g, &mut dx).expect("dims checked");
            }
            (g, loss)
        },
        |(mut g, l), (h, m)| {
            g.add(&h);
            (g, l + m)
        },
    )
    .expect("batch checked non-empty");
    adam_update(actor, &grad, adam)?;
    Ok(loss_sum * inv_n)
}

/// One combined TD3 / TD3+BC training step: critics every call, actor and
/// targets only when the 1-based `step` index is a multiple of
/// `cfg.policy_delay`. Returns the first critic's pre-step loss.
pub fn td3_train_step(
    state: &mut Td3State,
    step: usize,
    batch: &Batch,
    noise: &[[f64; 3]],
    cfg: &TrainConfig,
    algorithm: Algorithm,
) -> Result<f64, OfflineRlError> {
    let (l1, _) = state.critic_update(batch, noise, cfg.gamma, cfg.parallelism)?;
    if step % cfg.policy_delay == 0 {
        let alpha = match algorithm {
            Algorithm::Bc => {
                return Err(OfflineRlError::Config("bc has no TD3 step".to_string()))
            }
            Algorithm::Td3 => None,
            Algorithm::Td3Bc => Some(cfg.alpha_td3bc),
        };
        state.actor_update(batch, alpha, cfg.tau, cfg.parallelism)?;
    }
    Ok(l1)
}

/// The result of one `(algorithm, seed)` training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `(step, normalized reward)` per evaluation checkpoint; steps strictly
    /// increasing, exactly `max_steps / eval_every` entries.
    pub curve: Vec<(usize, f64)>,
    /// Per-step training loss: the BC objective for BC, the first critic's
    /// mean squared TD error otherwise.
    pub losses: Vec<f64>,
    /// Final actor with the observation normalization baked in.
    pub checkpoint: Checkpoint,
}

/// Runs `cfg.max_steps` gradient steps of `algorithm` on the frozen buffer,
/// evaluating every `cfg.eval_every` steps. Fully deterministic per seed.
pub fn train(
    algorithm: Algorithm,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainRun, OfflineRlError> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(OfflineRlError::EmptyBuffer);
    }
    let caps = action_caps(&cfg.env);
    let mut batch_rng = seeding::rng(seed, "batch", 0);
    let mut noise_rng = seeding::rng(seed, "noise", 0);
    let eval_seed = seeding::derive(seed, "eval", 0);

    enum Trainer {
        Bc(Mlp, AdamState),
        Td3(Td3State),
    }
    let mut trainer = match algorithm {
        Algorithm::Bc => {
            let actor =
                new_actor(OBS_DIM, &cfg.hidden, caps, &mut seeding::rng(seed, "init-actor", 0))?;
            let adam = AdamState::new(&actor, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
            Trainer::Bc(actor, adam)
        }
        Algorithm::Td3 | Algorithm::Td3Bc => Trainer::Td3(Td3State::new(cfg, seed)?),
    };

    let norm = buffer.norm();
    let mut curve = Vec::with_capacity(cfg.max_steps / cfg.eval_every);
    let mut losses = Vec::with_capacity(cfg.max_steps);
    for step in 1..=cfg.max_steps {
        let batch = buffer.sample_batch(&mut batch_rng, cfg.batch_size);
        let loss = match &mut trainer {
            Trainer::Bc(actor, adam) => bc_update(actor, adam, &batch, cfg.parallelism)?,
            Trainer::Td3(state) => {
                let noise = sample_policy_noise(
                    &mut noise_rng,
                    cfg.batch_size,
                    caps,
                    cfg.policy_noise,
                    cfg.noise_clip,
                );
                td3_train_step(state, step, &batch, &noise, cfg, algorithm)?
            }
        };
        losses.push(loss);
        if step % cfg.eval_every == 0 {
            let actor = match &trainer {
                Trainer::Bc(a, _) => a,
                Trainer::Td3(s) => &s.actor,
            };
            let mut policy = |obs: &Observation| -> ActionVector {
                let raw = encode_observation(obs);
                let out = actor.forward(&norm.normalize(&raw)).expect("actor dims fixed");
                ActionVector::from_array([out[0], out[1], out[2]])
            };
            curve.push((step, evaluate_policy(&mut policy, &cfg.env, cfg.eval_episodes, eval_seed)));
        }
    }
    let actor = match trainer {
        Trainer::Bc(a, _) => a,
        Trainer::Td3(s) => s.actor,
    };
    Ok(TrainRun {
        algorithm,
        seed,
        curve,
        losses,
        checkpoint: Checkpoint { net: actor, norm: Some((norm.mean.clone(), norm.std.clone())) },
    })
}

/// Mean per-step normalized reward over deterministic-policy episodes with
/// densities cycling low/middle/high. Episode seeds derive from `seed`, so a
/// fixed seed always replays the same scenes.
pub fn evaluate_policy<F>(policy: &mut F, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> f64
where
    F: FnMut(&Observation) -> ActionVector,
{
    evaluate_policy_on(policy, env_cfg, episodes, seed, &DensitySpec::CLASSES)
}

/// [`evaluate_policy`] over an explicit density list (cycled by episode).
/// Each episode contributes its per-step mean of the normalized reward; the
/// result is the mean over episodes, so it lives in `(-inf, 1]`.
pub fn evaluate_policy_on<F>(
    policy: &mut F,
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
    densities: &[DensitySpec],
) -> f64
where
    F: FnMut(&Observation) -> ActionVector,
{
    assert!(episodes > 0, "need at least one evaluation episode");
    assert!(!densities.is_empty(), "need at least one density class");
    let mut total = 0.0;
    for ep in 0..episodes {
        let ep_seed = seeding::derive(seed, "eval-episode", ep as u64);
        let (mut env, mut obs) = Env::reset(*env_cfg, ep_seed, densities[ep % densities.len()]);
        let mut sum = 0.0;
        let mut steps = 0usize;
        loop {
            let out = env.step(policy(&obs)).expect("evaluation policy produced a bad step");
            sum += out.rewards.normalized;
            steps += 1;
            obs = out.observation;
            if out.termination.is_some() {
                break;
            }
        }
        total += sum / steps as f64;
    }
    total / episodes as f64
}

/// Uniform random policy within the action caps; deterministic per seed.
pub fn random_policy(seed: u64, caps: [f64; 3]) -> impl FnMut(&Observation) -> ActionVector {
    let mut rng = seeding::rng(seed, "random-policy", 0);
    move |_| {
        let mut a = [0.0; 3];
        for (j, out) in a.iter_mut().enumerate() {
            *out = rng.random_range(-caps[j]..=caps[j]);
        }
        ActionVector::from_array(a)
    }
}

/// A saved actor ready to drive: encodes the observation, applies the
/// checkpoint's normalization, and runs the network.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    net: Mlp,
    norm: Option<NormStats>,
}

impl TrainedPolicy {
    pub fn new(ck: Checkpoint) -> Result<TrainedPolicy, OfflineRlError> {
        if ck.net.input_dim() != OBS_DIM || ck.net.output_dim() != ActionVector::DIM {
            return Err(OfflineRlError::CheckpointShape {
                want_in: OBS_DIM,
                want_out: ActionVector::DIM,
                got_in: ck.net.input_dim(),
                got_out: ck.net.output_dim(),
            });
        }
        if let Some((m, s)) = &ck.norm {
            if m.len() != OBS_DIM || s.len() != OBS_DIM || s.iter().any(|v| *v <= 0.0) {
                return Err(OfflineRlError::CheckpointNorm);
            }
        }
        let norm = ck.norm.map(|(mean, std)| NormStats { mean, std });
        Ok(TrainedPolicy { net: ck.net, norm })
    }

    pub fn load(path: &Path) -> Result<TrainedPolicy, OfflineRlError> {
        TrainedPolicy::new(Checkpoint::load(path)?)
    }

    pub fn act(&self, obs: &Observation) -> ActionVector {
        let raw = encode_observation(obs);
        let x = match &self.norm {
            Some(n) => n.normalize(&raw),
            None => raw.to_vec(),
        };
        let out = self.net.forward(&x).expect("dims validated at construction");
        ActionVector::from_array([out[0], out[1], out[2]])
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

/// Cross-seed aggregate of training curves.
#[derive(Debug, Clone)]
pub struct AggregateCurve {
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    /// `(ci_low, ci_high)` per step as `mean +- 1.96 * std / sqrt(n)`;
    /// `None` with fewer than two runs.
    pub ci: Option<(Vec<f64>, Vec<f64>)>,
}

/// Per-step mean and 95% normal-approximation confidence interval across
/// runs. All runs must share the same evaluation steps.
pub fn aggregate_runs(runs: &[TrainRun]) -> Result<AggregateCurve, OfflineRlError> {
    let first = runs.first().ok_or(OfflineRlError::NoRuns)?;
    let steps: Vec<usize> = first.curve.iter().map(|p| p.0).collect();
    for r in runs {
        if r.curve.len() != steps.len() || r.curve.iter().zip(&steps).any(|(p, s)| p.0 != *s) {
            return Err(OfflineRlError::CurveMismatch);
        }
    }
    let n = runs.len();
    let mut mean = Vec::with_capacity(steps.len());
    let mut lo = Vec::with_capacity(steps.len());
    let mut hi = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let m = runs.iter().map(|r| r.curve[k].1).sum::<f64>() / n as f64;
        mean.push(m);
        if n >= 2 {
            let var =
                runs.iter().map(|r| (r.curve[k].1 - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let half = CI_Z * var.sqrt() / (n as f64).sqrt();
            lo.push(m - half);
            hi.push(m + half);
        }
    }
    Ok(AggregateCurve { steps, mean, ci: (n >= 2).then_some((lo, hi)) })
}
