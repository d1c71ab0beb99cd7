//! Stochastic policy heads and the critic, packaged as one actor-critic model.
//!
//! The model owns a [`MultiHeadNet`] whose head 0 is the actor and head 1 the
//! critic. Its flat parameter vector is the network's vector, followed by the
//! Gaussian log standard deviation when the action space is continuous.
//!
//! Likelihoods of the truncated Gaussian use the untruncated Normal density at
//! the stored (possibly clamped) action. The same convention is applied to
//! every policy in a ratio, so ratios stay consistent with each other.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, MultiHeadNet, MultiTape};

/// Likelihoods are floored here before any ratio is formed.
pub const LIKELIHOOD_FLOOR: f64 = 1e-30;

pub const ACTOR_HEAD: usize = 0;
pub const CRITIC_HEAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// A scalar action restricted to `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
}

impl ActionSpace {
    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
            (ActionSpace::Interval { lo, hi }, Action::Continuous(a)) => {
                a.is_finite() && *a >= *lo && *a <= *hi
            }
            _ => false,
        }
    }
}

/// How the actor head's output becomes an action distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyHead {
    /// Softmax probabilities over `n` actions.
    Categorical { actions: usize },
    /// Normal with mean `center + half_width * out` (or `tanh(out)` in place
    /// of `out` when `squash` is set) and a learned, state-independent log
    /// standard deviation; draws are clamped to `[lo, hi]`.
    TruncatedGaussian { lo: f64, hi: f64, squash: bool },
}

impl PolicyHead {
    pub fn for_space(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => PolicyHead::Categorical { actions: n },
            ActionSpace::Interval { lo, hi } => PolicyHead::TruncatedGaussian {
                lo,
                hi,
                squash: true,
            },
        }
    }

    fn actor_outputs(&self) -> usize {
        match self {
            PolicyHead::Categorical { actions } => *actions,
            PolicyHead::TruncatedGaussian { .. } => 1,
        }
    }

    fn actor_activation(&self) -> Activation {
        match self {
            PolicyHead::Categorical { .. } => Activation::Softmax,
            PolicyHead::TruncatedGaussian { .. } => Activation::Identity,
        }
    }
}

/// Network shape of an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// One shared hidden layer feeding linear actor and critic outputs.
    SharedTrunk { hidden: usize, activation: Activation },
    /// Independent actor and critic networks with the given hidden widths.
    Separate { hidden: Vec<usize>, activation: Activation },
}

impl Architecture {
    /// One shared 128-unit layer.
    pub fn actor_critic_default() -> Self {
        Architecture::SharedTrunk {
            hidden: 128,
            activation: Activation::Relu,
        }
    }

    /// Two separate 64-64 networks.
    pub fn ppo_default() -> Self {
        Architecture::Separate {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

/// One forward pass through the model at a given state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    tape: MultiTape,
}

impl Evaluation {
    pub fn actor_output(&self) -> &[f64] {
        self.tape.head_output(ACTOR_HEAD)
    }

    pub fn value(&self) -> f64 {
        self.tape.head_output(CRITIC_HEAD)[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    net: MultiHeadNet,
    head: PolicyHead,
    log_std: f64,
    input_scale: Vec<f64>,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        observation_dim: usize,
        space: ActionSpace,
        architecture: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        let head = PolicyHead::for_space(space);
        let out = head.actor_outputs();
        let net = match architecture {
            Architecture::SharedTrunk { hidden, activation } => {
                let trunk = DenseNet::new(&[observation_dim, *hidden], &[*activation], rng)?;
                let actor = DenseNet::new(&[*hidden, out], &[head.actor_activation()], rng)?;
                let critic = DenseNet::new(&[*hidden, 1], &[Activation::Identity], rng)?;
                MultiHeadNet::new(Some(trunk), vec![actor, critic])?
            }
            Architecture::Separate { hidden, activation } => {
                let build = |last: usize, last_act: Activation, rng: &mut R| {
                    let mut sizes = vec![observation_dim];
                    sizes.extend(hidden);
                    sizes.push(last);
                    let mut acts = vec![*activation; hidden.len()];
                    acts.push(last_act);
                    DenseNet::new(&sizes, &acts, rng)
                };
                let actor = build(out, head.actor_activation(), rng)?;
                let critic = build(1, Activation::Identity, rng)?;
                MultiHeadNet::new(None, vec![actor, critic])?
            }
        };
        Self::from_parts(net, head, vec![1.0; observation_dim])
    }

    /// Wraps an existing network. Head 0 must match the policy head and head
    /// 1 must emit one value.
    pub fn from_parts(net: MultiHeadNet, head: PolicyHead, input_scale: Vec<f64>) -> Result<Self> {
        if net.head_count() != 2 {
            return Err(Error::Structure(
                "actor-critic needs exactly an actor and a critic head".into(),
            ));
        }
        if net.head(ACTOR_HEAD).output_dim() != head.actor_outputs() {
            return Err(Error::Structure("actor head width does not match the action space".into()));
        }
        if net.head(CRITIC_HEAD).output_dim() != 1 {
            return Err(Error::Structure("critic head must emit a scalar".into()));
        }
        if input_scale.len() != net.input_dim() {
            return Err(Error::Dimension {
                expected: net.input_dim(),
                got: input_scale.len(),
                context: "input scale",
            });
        }
        let log_std = match head {
            PolicyHead::TruncatedGaussian { lo, hi, .. } => (0.5 * (hi - lo) / 3.0).ln(),
            PolicyHead::Categorical { .. } => 0.0,
        };
        Ok(Self {
            net,
            head,
            log_std,
            input_scale,
        })
    }

    /// Observations are divided elementwise by `scale` before entering the
    /// network.
    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.net.input_dim() {
            return Err(Error::Dimension {
                expected: self.net.input_dim(),
                got: scale.len(),
                context: "input scale",
            });
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn head(&self) -> PolicyHead {
        self.head
    }

    pub fn net(&self) -> &MultiHeadNet {
        &self.net
    }

    pub fn observation_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn has_log_std(&self) -> bool {
        matches!(self.head, PolicyHead::TruncatedGaussian { .. })
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count() + usize::from(self.has_log_std())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.flatten();
        if self.has_log_std() {
            p.push(self.log_std);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
                context: "actor-critic parameters",
            });
        }
        let n = self.net.parameter_count();
        self.net.unflatten(&params[..n])?;
        if self.has_log_std() {
            self.log_std = params[n];
        }
        Ok(())
    }

    /// Parameters shared by actor and critic.
    pub fn trunk_range(&self) -> Range<usize> {
        self.net.trunk_range()
    }

    /// Parameters only the critic touches.
    pub fn critic_range(&self) -> Range<usize> {
        self.net.head_range(CRITIC_HEAD)
    }

    /// Actor-head network parameters (the log std lives at `log_std_index`).
    pub fn actor_range(&self) -> Range<usize> {
        self.net.head_range(ACTOR_HEAD)
    }

    pub fn log_std_index(&self) -> Option<usize> {
        self.has_log_std().then(|| self.net.parameter_count())
    }

    fn scaled(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_scale.len() {
            return Err(Error::Dimension {
                expected: self.input_scale.len(),
                got: state.len(),
                context: "state",
            });
        }
        Ok(state
            .iter()
            .zip(&self.input_scale)
            .map(|(s, k)| s / k)
            .collect())
    }

    pub fn evaluate(&self, state: &[f64]) -> Result<Evaluation> {
        let x = self.scaled(state)?;
        Ok(Evaluation {
            tape: self.net.forward(&x)?,
        })
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        let x = self.scaled(state)?;
        Ok(self.net.predict_head(&x, CRITIC_HEAD)?[0])
    }

    fn actor_output(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = self.scaled(state)?;
        self.net.predict_head(&x, ACTOR_HEAD)
    }

    fn gaussian_mean(&self, out: &[f64]) -> f64 {
        self.gaussian_mean_and_slope(out).0
    }

    /// Mean and its derivative with respect to the raw actor output.
    fn gaussian_mean_and_slope(&self, out: &[f64]) -> (f64, f64) {
        match self.head {
            PolicyHead::TruncatedGaussian { lo, hi, squash } => {
                let half = 0.5 * (hi - lo);
                let center = 0.5 * (lo + hi);
                if squash {
                    let t = out[0].tanh();
                    (center + half * t, half * (1.0 - t * t))
                } else {
                    (center + half * out[0], half)
                }
            }
            PolicyHead::Categorical { .. } => unreachable!("not a Gaussian head"),
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.log_std.exp()
    }

    fn check_action(&self, action: &Action) -> Result<()> {
        match (self.head, action) {
            (PolicyHead::Categorical { actions }, Action::Discrete(a)) if *a < actions => Ok(()),
            (PolicyHead::TruncatedGaussian { .. }, Action::Continuous(a)) if a.is_finite() => {
                Ok(())
            }
            _ => Err(Error::InvalidAction(format!("{action:?}"))),
        }
    }

    fn log_prob_of_output(&self, out: &[f64], action: &Action) -> Result<f64> {
        self.check_action(action)?;
        Ok(match (self.head, action) {
            (PolicyHead::Categorical { .. }, Action::Discrete(a)) => {
                out[*a].max(LIKELIHOOD_FLOOR).ln()
            }
            (PolicyHead::TruncatedGaussian { .. }, Action::Continuous(a)) => {
                let mu = self.gaussian_mean(out);
                normal_log_density(*a, mu, self.log_std)
            }
            _ => unreachable!(),
        })
    }

    /// Draws `a ~ π(·|s)`.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        let out = self.actor_output(state)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::PolicyDegenerate);
        }
        Ok(self.sample_from_output(&out, rng))
    }

    fn sample_from_output<R: Rng + ?Sized>(&self, out: &[f64], rng: &mut R) -> Action {
        match self.head {
            PolicyHead::Categorical { actions } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, p) in out.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(a);
                    }
                }
                Action::Discrete(actions - 1)
            }
            PolicyHead::TruncatedGaussian { lo, hi, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                let raw = self.gaussian_mean(out) + self.std_dev() * z;
                Action::Continuous(raw.clamp(lo, hi))
            }
        }
    }

    /// Samples an action and returns it with its log-likelihood, using a
    /// single forward pass.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Action, f64)> {
        let out = self.actor_output(state)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::PolicyDegenerate);
        }
        let a = self.sample_from_output(&out, rng);
        let lp = self.log_prob_of_output(&out, &a)?;
        Ok((a, lp))
    }

    pub fn log_prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        let out = self.actor_output(state)?;
        self.log_prob_of_output(&out, action)
    }

    pub fn log_prob_at(&self, eval: &Evaluation, action: &Action) -> Result<f64> {
        self.log_prob_of_output(eval.actor_output(), action)
    }

    /// Full-length ∇ log π(a|s).
    pub fn score(&self, state: &[f64], action: &Action) -> Result<Vec<f64>> {
        let eval = self.evaluate(state)?;
        let mut g = vec![0.0; self.parameter_count()];
        self.accumulate_score(&eval, action, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale * ∇ log π(a|s)` into `grad`.
    pub fn accumulate_score(
        &self,
        eval: &Evaluation,
        action: &Action,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_action(action)?;
        let n = self.net.parameter_count();
        let out = eval.actor_output();
        match (self.head, action) {
            (PolicyHead::Categorical { actions }, Action::Discrete(a)) => {
                let mut seed = vec![0.0; actions];
                seed[*a] = scale / out[*a].max(f64::MIN_POSITIVE);
                self.net
                    .backward_head_accumulate(&eval.tape, ACTOR_HEAD, &seed, &mut grad[..n])
            }
            (PolicyHead::TruncatedGaussian { .. }, Action::Continuous(a)) => {
                let (mu, slope) = self.gaussian_mean_and_slope(out);
                let var = (2.0 * self.log_std).exp();
                let seed = [scale * (a - mu) / var * slope];
                self.net
                    .backward_head_accumulate(&eval.tape, ACTOR_HEAD, &seed, &mut grad[..n])?;
                grad[n] += scale * (-1.0 + (a - mu) * (a - mu) / var);
                Ok(())
            }
            _ => unreachable!(),
        }
    }

    /// Full-length ∇ V(s).
    pub fn value_grad(&self, state: &[f64]) -> Result<Vec<f64>> {
        let eval = self.evaluate(state)?;
        let mut g = vec![0.0; self.parameter_count()];
        self.accumulate_value_grad(&eval, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale * ∇ V(s)` into `grad`.
    pub fn accumulate_value_grad(
        &self,
        eval: &Evaluation,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let n = self.net.parameter_count();
        self.net
            .backward_head_accumulate(&eval.tape, CRITIC_HEAD, &[scale], &mut grad[..n])
    }

    /// Action probabilities (categorical) or `[mean, std]` (Gaussian) at `state`.
    pub fn distribution(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor_output(state)?;
        Ok(match self.head {
            PolicyHead::Categorical { .. } => out,
            PolicyHead::TruncatedGaussian { .. } => vec![self.gaussian_mean(&out), self.std_dev()],
        })
    }
}

/// log N(x; mu, exp(log_std)^2)
pub fn normal_log_density(x: f64, mu: f64, log_std: f64) -> f64 {
    let var = (2.0 * log_std).exp();
    -0.5 * (2.0 * PI).ln() - log_std - (x - mu) * (x - mu) / (2.0 * var)
}

/// KL(p || q) for two categorical distributions.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(LIKELIHOOD_FLOOR)).ln())
        .sum()
}

/// KL(N(mu_p, sd_p²) || N(mu_q, sd_q²)).
pub fn gaussian_kl(mu_p: f64, sd_p: f64, mu_q: f64, sd_q: f64) -> f64 {
    (sd_q / sd_p).ln() + (sd_p * sd_p + (mu_p - mu_q).powi(2)) / (2.0 * sd_q * sd_q) - 0.5
}

/// Mean over `states` of KL(π_old(·|s) ‖ π_new(·|s)).
pub fn kl_divergence(old: &ActorCritic, new: &ActorCritic, states: &[&[f64]]) -> Result<f64> {
    if old.head != new.head {
        return Err(Error::Structure("policies have different action spaces".into()));
    }
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in states {
        let p = old.distribution(s)?;
        let q = new.distribution(s)?;
        total += match old.head {
            PolicyHead::Categorical { .. } => categorical_kl(&p, &q),
            PolicyHead::TruncatedGaussian { .. } => gaussian_kl(p[0], p[1], q[0], q[1]),
        };
    }
    Ok(total / states.len() as f64)
}
