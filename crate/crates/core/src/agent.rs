//! Actor-Critic and PPO training loops with optional variance-reduced
//! experience replay.
//!
//! Each iteration collects a fresh batch under the current policy, caches the
//! new snapshot's likelihoods, picks the reuse set, and then runs a fixed
//! number of minibatch updates over the transitions of the reuse set. With
//! replay disabled the reuse set is just the current iteration, which gives
//! the on-policy baseline.

use std::time::Instant;

use log::{debug, info};
use rand::{Rng, RngCore};

use crate::env::{EnvState, Environment};
use crate::error::{Error, Result};
use crate::estimator::{
    mixture_ratio, reuse_trace_variance, screen, ReuseSet, Reweighting, SampleGradient,
};
use crate::nn::Adam;
use crate::policy::{kl_divergence, ActorCritic};
use crate::replay::{PolicySnapshot, ReplayStore, SnapshotEvaluator, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ActorCritic,
    Ppo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub vrer: bool,
    /// Selection constant; candidates may have up to `c` times the on-policy
    /// trace variance.
    pub c: f64,
    pub iterations: usize,
    /// Transitions collected per iteration.
    pub batch_size: usize,
    /// Minibatch updates per iteration.
    pub offline_steps: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub optimizer: OptimizerKind,
    /// Samples per snapshot used to estimate trace variances; `None` uses all.
    pub n_eval: Option<usize>,
    /// Oldest snapshots beyond this many are evicted with their transitions.
    pub max_snapshots: Option<usize>,
    /// Multiplies rewards before learning; logged returns are unscaled.
    pub reward_scale: f64,
    /// Standardize advantages within each minibatch.
    pub adv_norm: bool,
    pub clip: f64,
    /// PPO stops the iteration's updates once the mean KL from the
    /// iteration's starting policy exceeds this.
    pub kl_stop: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ActorCritic,
            vrer: true,
            c: 1.5,
            iterations: 100,
            batch_size: 500,
            offline_steps: 10,
            minibatch: 64,
            gamma: 0.99,
            lr_actor: 0.005,
            lr_critic: 0.005,
            optimizer: OptimizerKind::Adam,
            n_eval: None,
            max_snapshots: None,
            reward_scale: 1.0,
            adv_norm: false,
            clip: 0.2,
            kl_stop: 0.015,
        }
    }
}

impl AgentConfig {
    /// PPO defaults: separate learning rates, clipping, normalized advantages.
    pub fn ppo() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            lr_actor: 0.001,
            lr_critic: 0.005,
            adv_norm: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.c > 1.0 && self.c.is_finite()) {
            return fail(format!("c must be finite and exceed 1, got {}", self.c));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.minibatch == 0 {
            return fail("minibatch must be positive".into());
        }
        if self.n_eval.is_some_and(|m| m < 2) {
            return fail("n_eval must be at least 2".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return fail("reward_scale must be positive".into());
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return fail("clip must be positive".into());
        }
        if self.kl_stop.is_nan() || self.kl_stop <= 0.0 {
            return fail("kl_stop must be positive".into());
        }
        Ok(())
    }
}

/// Per-iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean undiscounted return of episodes finished during the iteration;
    /// carried over when none finished.
    pub mean_return: f64,
    /// Trace variance of the gradient estimate over the reuse set at the
    /// iteration's starting policy.
    pub trace_var: f64,
    pub reuse_size: usize,
    /// Offline updates actually taken (PPO may stop early).
    pub updates: usize,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<IterationLog>,
    pub model: ActorCritic,
    pub store: ReplayStore,
}

/// `r + γ V(s') - V(s)` with no bootstrap from terminal states.
pub fn td_error(reward: f64, value: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    let bootstrap = if done { 0.0 } else { gamma * next_value };
    reward + bootstrap - value
}

/// One semi-gradient TD(0) step on the critic alone.
pub fn critic_update(model: &mut ActorCritic, t: &Transition, gamma: f64, lr: f64) -> Result<f64> {
    let eval = model.evaluate(&t.state)?;
    let next = if t.done { 0.0 } else { model.value(&t.next_state)? };
    let delta = td_error(t.reward, eval.value(), next, t.done, gamma);
    let mut grad = vec![0.0; model.parameter_count()];
    model.accumulate_value_grad(&eval, delta, &mut grad)?;
    let mut params = model.params();
    for i in model.critic_range().chain(model.trunk_range()) {
        params[i] += lr * grad[i];
    }
    model.set_params(&params)?;
    Ok(delta)
}

/// `δ_k ∇log π_k(a|s)` with the TD error of the model's own critic.
pub struct TdGradient<'a> {
    pub model: &'a ActorCritic,
    pub gamma: f64,
}

impl TdGradient<'_> {
    pub fn advantage(&self, t: &Transition) -> Result<f64> {
        let v = self.model.value(&t.state)?;
        let next = if t.done { 0.0 } else { self.model.value(&t.next_state)? };
        Ok(td_error(t.reward, v, next, t.done, self.gamma))
    }
}

impl SampleGradient for TdGradient<'_> {
    fn dim(&self) -> usize {
        self.model.parameter_count()
    }

    fn sample_gradient(&self, t: &Transition, out: &mut [f64]) -> Result<()> {
        let eval = self.model.evaluate(&t.state)?;
        let next = if t.done { 0.0 } else { self.model.value(&t.next_state)? };
        let delta = td_error(t.reward, eval.value(), next, t.done, self.gamma);
        self.model.accumulate_score(&eval, &t.action, delta, out)
    }
}

/// Keeps an episode running across iterations.
struct Rollout<'e> {
    env: &'e mut dyn Environment,
    state: EnvState,
    episode_return: f64,
    last_mean: Option<f64>,
}

impl<'e> Rollout<'e> {
    fn new(env: &'e mut dyn Environment, rng: &mut dyn RngCore) -> Self {
        let state = env.reset(rng);
        Self {
            env,
            state,
            episode_return: 0.0,
            last_mean: None,
        }
    }

    fn collect<R: Rng>(
        &mut self,
        model: &ActorCritic,
        k: usize,
        n: usize,
        reward_scale: f64,
        rng: &mut R,
    ) -> Result<(Vec<Transition>, f64)> {
        let mut batch = Vec::with_capacity(n);
        let mut finished = Vec::new();
        for _ in 0..n {
            let (action, _) = model.act(&self.state.observation, rng)?;
            let (next, reward) = self.env.step(&action)?;
            self.episode_return += reward;
            batch.push(Transition {
                state: std::mem::take(&mut self.state.observation),
                action,
                next_state: next.observation.clone(),
                reward: reward * reward_scale,
                policy_index: k,
                done: next.done,
            });
            if next.finished() {
                finished.push(self.episode_return);
                self.episode_return = 0.0;
                self.state = self.env.reset(rng);
            } else {
                self.state = next;
            }
        }
        let mean = if finished.is_empty() {
            self.last_mean.unwrap_or(self.episode_return)
        } else {
            finished.iter().sum::<f64>() / finished.len() as f64
        };
        if !finished.is_empty() {
            self.last_mean = Some(mean);
        }
        Ok((batch, mean))
    }
}

/// Applies ascent steps with the actor rate on policy coordinates (including
/// any shared trunk) and the critic rate on the value head.
struct Stepper {
    kind: OptimizerKind,
    lr: Vec<f64>,
    adam: Adam,
}

impl Stepper {
    fn new(model: &ActorCritic, cfg: &AgentConfig) -> Self {
        let mut lr = vec![cfg.lr_actor; model.parameter_count()];
        for i in model.critic_range() {
            lr[i] = cfg.lr_critic;
        }
        Self {
            kind: cfg.optimizer,
            adam: Adam::new(lr.len()),
            lr,
        }
    }

    fn ascend(&mut self, model: &mut ActorCritic, grad: &[f64]) -> Result<()> {
        let mut params = model.params();
        match self.kind {
            OptimizerKind::Sgd => {
                if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteGradient(i));
                }
                for ((p, g), lr) in params.iter_mut().zip(grad).zip(&self.lr) {
                    *p += lr * g;
                }
            }
            OptimizerKind::Adam => self.adam.ascend(&mut params, grad, &self.lr)?,
        }
        model.set_params(&params)
    }
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values {
        *v = (*v - mean) / (sd + 1e-8);
    }
}

/// Actor-Critic update on one minibatch: mixture-weighted policy gradient
/// and TD(0) critic step, both from the TD error of the current critic.
fn actor_critic_step(
    model: &mut ActorCritic,
    store: &ReplayStore,
    reuse: &ReuseSet,
    minibatch: &[usize],
    cfg: &AgentConfig,
    stepper: &mut Stepper,
) -> Result<()> {
    let k = reuse.current();
    let total: usize = reuse.indices().iter().map(|&i| store.range_of(i).len()).sum();
    let weights: Vec<f64> = reuse
        .indices()
        .iter()
        .map(|&i| store.range_of(i).len() as f64 / total as f64)
        .collect();
    let mut comp = vec![0.0; weights.len()];
    let mut evals = Vec::with_capacity(minibatch.len());
    let mut deltas = Vec::with_capacity(minibatch.len());
    for &j in minibatch {
        let t = store.transition(j);
        let eval = model.evaluate(&t.state)?;
        let next = if t.done { 0.0 } else { model.value(&t.next_state)? };
        deltas.push(td_error(t.reward, eval.value(), next, t.done, cfg.gamma));
        evals.push(eval);
    }
    let mut advantages = deltas.clone();
    if cfg.adv_norm {
        standardize(&mut advantages);
    }
    let m = minibatch.len() as f64;
    let mut grad = vec![0.0; model.parameter_count()];
    for (idx, &j) in minibatch.iter().enumerate() {
        let t = store.transition(j);
        let f = if reuse.len() == 1 {
            1.0
        } else {
            for (slot, &u) in comp.iter_mut().zip(reuse.indices()) {
                *slot = store.log_likelihood(u, j)?;
            }
            mixture_ratio(store.log_likelihood(k, j)?, &comp, &weights)
        };
        model.accumulate_score(&evals[idx], &t.action, f * advantages[idx] / m, &mut grad)?;
        model.accumulate_value_grad(&evals[idx], deltas[idx] / m, &mut grad)?;
    }
    stepper.ascend(model, &grad)
}

/// Clipped-surrogate update on one minibatch. Ratios compare the current
/// policy with each transition's generating snapshot.
fn ppo_step(
    model: &mut ActorCritic,
    store: &ReplayStore,
    minibatch: &[usize],
    cfg: &AgentConfig,
    stepper: &mut Stepper,
) -> Result<()> {
    let mut evals = Vec::with_capacity(minibatch.len());
    let mut deltas = Vec::with_capacity(minibatch.len());
    let mut ratios = Vec::with_capacity(minibatch.len());
    for &j in minibatch {
        let t = store.transition(j);
        let eval = model.evaluate(&t.state)?;
        let next = if t.done { 0.0 } else { model.value(&t.next_state)? };
        deltas.push(td_error(t.reward, eval.value(), next, t.done, cfg.gamma));
        let lp = model.log_prob_at(&eval, &t.action)?;
        ratios.push((lp - store.log_likelihood(t.policy_index, j)?).exp());
        evals.push(eval);
    }
    let mut advantages = deltas.clone();
    if cfg.adv_norm {
        standardize(&mut advantages);
    }
    let m = minibatch.len() as f64;
    let mut grad = vec![0.0; model.parameter_count()];
    for (idx, &j) in minibatch.iter().enumerate() {
        let t = store.transition(j);
        let (r, a) = (ratios[idx], advantages[idx]);
        let clipped = (a > 0.0 && r > 1.0 + cfg.clip) || (a < 0.0 && r < 1.0 - cfg.clip);
        if !clipped {
            model.accumulate_score(&evals[idx], &t.action, r * a / m, &mut grad)?;
        }
        model.accumulate_value_grad(&evals[idx], deltas[idx] / m, &mut grad)?;
    }
    stepper.ascend(model, &grad)
}

/// Runs the configured algorithm for `cfg.iterations` iterations.
pub fn train<R: Rng>(
    env: &mut dyn Environment,
    mut model: ActorCritic,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    // Without replay only the current batch is ever read back.
    let cap = if cfg.vrer { cfg.max_snapshots } else { Some(1) };
    let mut store = ReplayStore::with_capacity_limit(cap);
    let mut evaluator = SnapshotEvaluator::new(model.clone());
    let mut stepper = Stepper::new(&model, cfg);
    let mut rollout = Rollout::new(env, rng);
    let mut logs = Vec::with_capacity(cfg.iterations);

    for k in 0..cfg.iterations {
        let (batch, mean_return) =
            rollout.collect(&model, k, cfg.batch_size, cfg.reward_scale, rng)?;
        let kl_states: Vec<Vec<f64>> = batch.iter().take(128).map(|t| t.state.clone()).collect();
        store.append_batch(batch)?;
        store.extend_cache(
            PolicySnapshot {
                index: k,
                params: model.params(),
            },
            &mut evaluator,
        )?;

        let grads = TdGradient {
            model: &model,
            gamma: cfg.gamma,
        };
        let reuse = if cfg.vrer {
            screen(&grads, &store, k, cfg.c, cfg.n_eval, rng)?.reuse
        } else {
            ReuseSet::only(k)
        };
        let kind = match cfg.algorithm {
            Algorithm::ActorCritic => Reweighting::Mixture,
            Algorithm::Ppo => Reweighting::Clipped(cfg.clip),
        };
        let trace_var = reuse_trace_variance(
            &grads,
            &store,
            &reuse,
            kind,
            cfg.n_eval,
            |t| grads.advantage(t),
            rng,
        )?;

        let old = model.clone();
        let mut updates = 0;
        for _ in 0..cfg.offline_steps {
            let mb = store.batch_for(&reuse, cfg.minibatch, rng)?;
            match cfg.algorithm {
                Algorithm::ActorCritic => {
                    actor_critic_step(&mut model, &store, &reuse, &mb, cfg, &mut stepper)?
                }
                Algorithm::Ppo => ppo_step(&mut model, &store, &mb, cfg, &mut stepper)?,
            }
            updates += 1;
            if cfg.algorithm == Algorithm::Ppo {
                let states: Vec<&[f64]> = kl_states.iter().map(Vec::as_slice).collect();
                let kl = kl_divergence(&old, &model, &states)?;
                if kl > cfg.kl_stop {
                    debug!("iteration {k}: KL {kl:.4} exceeds limit after {updates} updates");
                    break;
                }
            }
        }

        let log = IterationLog {
            iteration: k,
            mean_return,
            trace_var,
            reuse_size: reuse.len(),
            updates,
            wall_time: start.elapsed().as_secs_f64(),
        };
        info!(
            "iter {k}: return {:.2} trace_var {:.3e} reuse {}",
            log.mean_return, log.trace_var, log.reuse_size
        );
        logs.push(log);
    }
    Ok(TrainOutcome {
        logs,
        model,
        store,
    })
}

/// Actor-Critic with the configured replay setting.
pub fn train_actor_critic_vrer<R: Rng>(
    env: &mut dyn Environment,
    model: ActorCritic,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let cfg = AgentConfig {
        algorithm: Algorithm::ActorCritic,
        ..cfg.clone()
    };
    train(env, model, &cfg, rng)
}

/// PPO with the configured replay setting.
pub fn train_ppo_vrer<R: Rng>(
    env: &mut dyn Environment,
    model: ActorCritic,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let cfg = AgentConfig {
        algorithm: Algorithm::Ppo,
        ..cfg.clone()
    };
    train(env, model, &cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CartPole;
    use crate::policy::{ActionSpace, Architecture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> AgentConfig {
        AgentConfig {
            iterations: 4,
            batch_size: 40,
            offline_steps: 3,
            minibatch: 16,
            ..AgentConfig::default()
        }
    }

    fn model(seed: u64, arch: &Architecture) -> ActorCritic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActorCritic::new(4, ActionSpace::Discrete(2), arch, &mut rng).unwrap()
    }

    #[test]
    fn td_error_reference_values() {
        assert_eq!(td_error(1.0, 2.0, 3.0, false, 0.5), 0.5);
        assert_eq!(td_error(1.0, 2.0, 3.0, true, 0.5), -1.0);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig { c: 1.0, ..Default::default() }.validate().is_err());
        assert!(AgentConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(AgentConfig { lr_actor: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn critic_update_moves_value_toward_target() {
        let mut m = model(1, &Architecture::actor_critic_default());
        let t = Transition {
            state: vec![0.1, 0.0, 0.0, 0.0],
            action: crate::policy::Action::Discrete(0),
            next_state: vec![0.0; 4],
            reward: 1.0,
            policy_index: 0,
            done: true,
        };
        let before = (1.0 - m.value(&t.state).unwrap()).abs();
        for _ in 0..50 {
            critic_update(&mut m, &t, 0.9, 0.01).unwrap();
        }
        let after = (1.0 - m.value(&t.state).unwrap()).abs();
        assert!(after < before * 0.5, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        for (cfg, arch) in [
            (small_cfg(), Architecture::actor_critic_default()),
            (
                AgentConfig {
                    iterations: 4,
                    batch_size: 40,
                    offline_steps: 3,
                    minibatch: 16,
                    ..AgentConfig::ppo()
                },
                Architecture::ppo_default(),
            ),
        ] {
            let run = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                train(&mut CartPole::new(), model(2, &arch), &cfg, &mut rng).unwrap()
            };
            let (a, b) = (run(7), run(7));
            assert_eq!(a.model.params(), b.model.params());
            let strip = |o: &TrainOutcome| {
                o.logs
                    .iter()
                    .map(|l| (l.mean_return, l.trace_var, l.reuse_size))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&a), strip(&b));
        }
    }

    #[test]
    fn baseline_reuses_only_the_current_batch() {
        let cfg = AgentConfig {
            vrer: false,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = train(
            &mut CartPole::new(),
            model(3, &Architecture::actor_critic_default()),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert!(out.logs.iter().all(|l| l.reuse_size == 1));
        assert_eq!(out.store.snapshots().len(), 1);
        assert_eq!(out.store.len(), 40);
    }

    #[test]
    fn reuse_set_never_exceeds_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = train(
            &mut CartPole::new(),
            model(4, &Architecture::actor_critic_default()),
            &small_cfg(),
            &mut rng,
        )
        .unwrap();
        for l in &out.logs {
            assert!(l.reuse_size >= 1 && l.reuse_size <= l.iteration + 1);
            assert!(l.trace_var.is_finite() && l.trace_var >= 0.0);
        }
    }
}
