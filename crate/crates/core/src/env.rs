//! Benchmark tasks behind one episodic interface.
//!
//! CartPole and Acrobot follow the classic control formulations (CartPole-v1
//! and Acrobot-v1 dynamics, thresholds and 500-step limits). The fermentation
//! task is a fed-batch Monod-kinetics stand-in whose goal is to hold the
//! substrate concentration at 20 g/L.

use std::f64::consts::PI;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSpace};

/// What the agent sees after `reset` or `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    /// The episode reached a terminal state.
    pub done: bool,
    /// The episode hit its step limit without terminating.
    pub truncated: bool,
    pub t: usize,
}

impl EnvState {
    pub fn finished(&self) -> bool {
        self.done || self.truncated
    }
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;

    /// Typical magnitude of each observation coordinate, used to scale
    /// network inputs.
    fn observation_scale(&self) -> Vec<f64> {
        vec![1.0; self.observation_dim()]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState;

    fn step(&mut self, action: &Action) -> Result<(EnvState, f64)>;
}

pub const ENV_NAMES: [&str; 3] = ["cartpole", "acrobot", "fermentation"];

/// Builds an environment from its name.
pub fn make(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new())),
        "acrobot" => Ok(Box::new(Acrobot::new())),
        "fermentation" => Ok(Box::new(Fermentation::new())),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

fn discrete(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        other => Err(Error::InvalidAction(format!("{other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// CartPole

#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    t: usize,
    finished: bool,
}

impl CartPole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;
    pub const MAX_STEPS: usize = 500;

    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            t: 0,
            finished: true,
        }
    }

    /// Starts an episode from an explicit `(x, x_dot, theta, theta_dot)`.
    pub fn reset_to(&mut self, state: [f64; 4]) -> EnvState {
        self.state = state;
        self.t = 0;
        self.finished = false;
        self.observe(false, false)
    }

    fn observe(&self, done: bool, truncated: bool) -> EnvState {
        EnvState {
            observation: self.state.to_vec(),
            done,
            truncated,
            t: self.t,
        }
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn observation_scale(&self) -> Vec<f64> {
        vec![1.0, 1.0, 0.2, 1.0]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState {
        let mut s = [0.0; 4];
        for v in &mut s {
            *v = rng.random_range(-0.05..0.05);
        }
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<(EnvState, f64)> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let a = discrete(action, 2)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if a == 1 { Self::FORCE } else { -Self::FORCE };
        let total_mass = Self::MASS_CART + Self::MASS_POLE;
        let pml = Self::MASS_POLE * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pml * theta_acc * cos / total_mass;

        self.state = [
            x + Self::TAU * x_dot,
            x_dot + Self::TAU * x_acc,
            theta + Self::TAU * theta_dot,
            theta_dot + Self::TAU * theta_acc,
        ];
        self.t += 1;
        let done = self.state[0].abs() > Self::X_LIMIT || self.state[2].abs() > Self::THETA_LIMIT;
        let truncated = !done && self.t >= Self::MAX_STEPS;
        self.finished = done || truncated;
        Ok((self.observe(done, truncated), 1.0))
    }
}

// ---------------------------------------------------------------------------
// Acrobot

#[derive(Debug, Clone)]
pub struct Acrobot {
    // theta1, theta2, dtheta1, dtheta2
    state: [f64; 4],
    t: usize,
    finished: bool,
}

impl Acrobot {
    pub const DT: f64 = 0.2;
    pub const MAX_STEPS: usize = 500;
    const LINK_LENGTH_1: f64 = 1.0;
    const LINK_MASS_1: f64 = 1.0;
    const LINK_MASS_2: f64 = 1.0;
    const LINK_COM_1: f64 = 0.5;
    const LINK_COM_2: f64 = 0.5;
    const LINK_MOI: f64 = 1.0;
    const MAX_VEL_1: f64 = 4.0 * PI;
    const MAX_VEL_2: f64 = 9.0 * PI;
    const GRAVITY: f64 = 9.8;

    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            t: 0,
            finished: true,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 4]) -> EnvState {
        self.state = state;
        self.t = 0;
        self.finished = false;
        self.observe(false, false)
    }

    fn observe(&self, done: bool, truncated: bool) -> EnvState {
        let [t1, t2, d1, d2] = self.state;
        EnvState {
            observation: vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2],
            done,
            truncated,
            t: self.t,
        }
    }

    fn terminal(&self) -> bool {
        let [t1, t2, ..] = self.state;
        -t1.cos() - (t2 + t1).cos() > 1.0
    }

    fn derivatives(s: [f64; 5]) -> [f64; 5] {
        let (m1, m2) = (Self::LINK_MASS_1, Self::LINK_MASS_2);
        let l1 = Self::LINK_LENGTH_1;
        let (lc1, lc2) = (Self::LINK_COM_1, Self::LINK_COM_2);
        let (i1, i2) = (Self::LINK_MOI, Self::LINK_MOI);
        let g = Self::GRAVITY;
        let [theta1, theta2, dtheta1, dtheta2, a] = s;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
            + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
            + phi2;
        let ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
        [dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0]
    }
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = (x + PI).rem_euclid(two_pi) - PI;
    if y < -PI {
        y += two_pi;
    }
    y
}

impl Environment for Acrobot {
    fn name(&self) -> &'static str {
        "acrobot"
    }

    fn observation_dim(&self) -> usize {
        6
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(3)
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn observation_scale(&self) -> Vec<f64> {
        vec![1.0, 1.0, 1.0, 1.0, 4.0, 8.0]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState {
        let mut s = [0.0; 4];
        for v in &mut s {
            *v = rng.random_range(-0.1..0.1);
        }
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<(EnvState, f64)> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let torque = discrete(action, 3)? as f64 - 1.0;
        let y0 = [self.state[0], self.state[1], self.state[2], self.state[3], torque];
        let next = rk4(Self::derivatives, y0, Self::DT);
        self.state = [
            wrap_angle(next[0]),
            wrap_angle(next[1]),
            next[2].clamp(-Self::MAX_VEL_1, Self::MAX_VEL_1),
            next[3].clamp(-Self::MAX_VEL_2, Self::MAX_VEL_2),
        ];
        self.t += 1;
        let done = self.terminal();
        let truncated = !done && self.t >= Self::MAX_STEPS;
        self.finished = done || truncated;
        let reward = if done { 0.0 } else { -1.0 };
        Ok((self.observe(done, truncated), reward))
    }
}

fn rk4<const N: usize>(f: impl Fn([f64; N]) -> [f64; N], y: [f64; N], h: f64) -> [f64; N] {
    let add = |a: [f64; N], b: [f64; N], s: f64| {
        let mut out = a;
        for i in 0..N {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(y);
    let k2 = f(add(y, k1, h / 2.0));
    let k3 = f(add(y, k2, h / 2.0));
    let k4 = f(add(y, k3, h));
    let mut out = y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

// ---------------------------------------------------------------------------
// Fed-batch fermentation

/// Kinetic constants of the Monod-type fed-batch model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinetics {
    /// Maximum specific growth rate, 1/h.
    pub mu_max: f64,
    /// Substrate half-saturation constant, g/L.
    pub k_s: f64,
    /// Nitrogen half-saturation constant, g/L.
    pub k_n: f64,
    /// Biomass yield on substrate, g/g.
    pub yield_xs: f64,
    /// Substrate maintenance coefficient, g/(g h).
    pub maintenance: f64,
    /// Nitrogen consumed per unit biomass grown, g/g.
    pub yield_nx: f64,
    /// Specific citrate production rate, g/(g h).
    pub q_c: f64,
    /// Substrate concentration in the feed, g/L.
    pub feed_concentration: f64,
}

impl Default for Kinetics {
    fn default() -> Self {
        Self {
            mu_max: 0.25,
            k_s: 5.0,
            k_n: 0.05,
            yield_xs: 0.5,
            maintenance: 0.01,
            yield_nx: 0.1,
            q_c: 0.02,
            feed_concentration: 400.0,
        }
    }
}

/// Process state in engineering units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FermentationState {
    /// Lipid-free cell mass, g/L.
    pub x_f: f64,
    /// Citrate, g/L.
    pub c: f64,
    /// Substrate, g/L.
    pub s: f64,
    /// Nitrogen, g/L.
    pub n: f64,
    /// Working volume, L.
    pub v: f64,
    /// Elapsed time, h.
    pub t: f64,
    pub dx_f: f64,
    pub dc: f64,
    pub ds: f64,
}

impl FermentationState {
    /// `(X_f, C, S, N, V, t, dX_f, dC, dS)`
    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.x_f, self.c, self.s, self.n, self.v, self.t, self.dx_f, self.dc, self.ds,
        ]
    }
}

pub const SUBSTRATE_SETPOINT: f64 = 20.0;

/// Setpoint-tracking reward `-(S - 20)^2`. The environment scores the
/// substrate reached at the end of each decision epoch.
pub fn fermentation_reward(substrate: f64) -> f64 {
    -(substrate - SUBSTRATE_SETPOINT).powi(2)
}

#[derive(Debug, Clone)]
pub struct Fermentation {
    pub kinetics: Kinetics,
    /// Maximum feed rate, L/h.
    pub max_feed: f64,
    /// Length of one decision epoch, h.
    pub epoch_hours: f64,
    /// RK4 step inside an epoch, h.
    pub inner_step: f64,
    pub horizon: usize,
    pub nominal: FermentationState,
    state: FermentationState,
    last_feed: f64,
    epoch: usize,
    finished: bool,
}

impl Fermentation {
    pub fn new() -> Self {
        let nominal = FermentationState {
            x_f: 1.0,
            c: 0.0,
            s: 30.0,
            n: 1.5,
            v: 10.0,
            t: 0.0,
            dx_f: 0.0,
            dc: 0.0,
            ds: 0.0,
        };
        Self {
            kinetics: Kinetics::default(),
            max_feed: 0.04,
            epoch_hours: 2.0,
            inner_step: 0.1,
            horizon: 50,
            nominal,
            state: nominal,
            last_feed: 0.0,
            epoch: 0,
            finished: true,
        }
    }

    pub fn state(&self) -> FermentationState {
        self.state
    }

    /// Time derivatives of `(X_f, C, S, N, V)` at feed rate `u`.
    pub fn rates(&self, y: [f64; 5], u: f64) -> [f64; 5] {
        let k = &self.kinetics;
        let [x, _c, s, n, v] = y;
        let (s, n, x) = (s.max(0.0), n.max(0.0), x.max(0.0));
        let mu = k.mu_max * s / (k.k_s + s) * n / (k.k_n + n);
        let dilution = u / v;
        // Maintenance stops once substrate is exhausted.
        let maint = k.maintenance * x * s / (s + 1e-3);
        [
            mu * x,
            k.q_c * x,
            -mu * x / k.yield_xs - maint + dilution * k.feed_concentration - s * dilution,
            -k.yield_nx * mu * x - n * dilution,
            u,
        ]
    }

    /// Starts an episode from an explicit process state.
    pub fn reset_to(&mut self, state: FermentationState) -> EnvState {
        self.state = state;
        self.last_feed = 0.0;
        self.epoch = 0;
        self.finished = false;
        self.refresh_rates();
        self.observe(false, false)
    }

    fn refresh_rates(&mut self) {
        let st = self.state;
        let r = self.rates([st.x_f, st.c, st.s, st.n, st.v], self.last_feed);
        self.state.dx_f = r[0];
        self.state.dc = r[1];
        self.state.ds = r[2];
    }

    fn observe(&self, done: bool, truncated: bool) -> EnvState {
        EnvState {
            observation: self.state.observation(),
            done,
            truncated,
            t: self.epoch,
        }
    }
}

impl Default for Fermentation {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Fermentation {
    fn name(&self) -> &'static str {
        "fermentation"
    }

    fn observation_dim(&self) -> usize {
        9
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Interval {
            lo: 0.0,
            hi: self.max_feed,
        }
    }

    fn max_steps(&self) -> usize {
        self.horizon
    }

    fn observation_scale(&self) -> Vec<f64> {
        vec![10.0, 1.0, 20.0, 1.0, 10.0, 100.0, 1.0, 0.2, 5.0]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState {
        let mut s = self.nominal;
        let mut jitter = |v: f64| v * (1.0 + rng.random_range(-0.05..=0.05));
        s.x_f = jitter(s.x_f);
        s.c = jitter(s.c);
        s.s = jitter(s.s);
        s.n = jitter(s.n);
        s.v = jitter(s.v);
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<(EnvState, f64)> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let u = match action {
            Action::Continuous(u) if u.is_finite() => u.clamp(0.0, self.max_feed),
            other => return Err(Error::InvalidAction(format!("{other:?}"))),
        };
        let st = self.state;
        let mut y = [st.x_f, st.c, st.s, st.n, st.v];
        let steps = (self.epoch_hours / self.inner_step).round().max(1.0) as usize;
        let h = self.epoch_hours / steps as f64;
        for _ in 0..steps {
            y = rk4(|y| self.rates(y, u), y, h);
            for v in &mut y[..4] {
                *v = v.max(0.0);
            }
        }
        self.state.x_f = y[0];
        self.state.c = y[1];
        self.state.s = y[2];
        self.state.n = y[3];
        self.state.v = y[4];
        let reward = fermentation_reward(self.state.s);
        self.state.t += self.epoch_hours;
        self.last_feed = u;
        self.refresh_rates();
        self.epoch += 1;
        let truncated = self.epoch >= self.horizon;
        self.finished = truncated;
        Ok((self.observe(false, truncated), reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resets_are_reproducible() {
        for name in ENV_NAMES {
            let mut a = make(name).unwrap();
            let mut b = make(name).unwrap();
            let sa = a.reset(&mut ChaCha8Rng::seed_from_u64(11));
            let sb = b.reset(&mut ChaCha8Rng::seed_from_u64(11));
            assert_eq!(sa, sb);
            assert_eq!(sa.observation.len(), a.observation_dim());
        }
    }

    #[test]
    fn cartpole_reset_is_small() {
        let mut env = CartPole::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = env.reset(&mut rng);
            assert_eq!(s.observation.len(), 4);
            assert!(s.observation.iter().all(|v| (-0.05..=0.05).contains(v)));
        }
    }

    #[test]
    fn cartpole_push_right_accelerates_cart() {
        let mut env = CartPole::new();
        env.reset_to([0.0; 4]);
        let (s, r) = env.step(&Action::Discrete(1)).unwrap();
        // One Euler step: x_dot' = tau * force / total_mass' where at theta = 0
        // temp = 10 / 1.1, theta_acc = -temp / (0.5 * (4/3 - 0.1/1.1)),
        // x_acc = temp - 0.05 * theta_acc / 1.1.
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert!(s.observation[1] > 0.0);
        assert!((s.observation[1] - 0.02 * x_acc).abs() < 1e-15);
        assert_eq!(s.observation[0], 0.0);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn cartpole_terminates_and_refuses_further_steps() {
        let mut env = CartPole::new();
        env.reset_to([0.0, 0.0, 0.25, 0.0]);
        let (s, _) = env.step(&Action::Discrete(0)).unwrap();
        assert!(s.done);
        assert_eq!(env.step(&Action::Discrete(0)), Err(Error::EpisodeFinished));
    }

    #[test]
    fn cartpole_truncates_at_step_limit() {
        let mut env = CartPole::new();
        let mut s = env.reset_to([0.0; 4]);
        let mut steps = 0;
        // balance with a bang-bang controller on the pole angle
        while !s.finished() {
            let a = if s.observation[2] + 0.5 * s.observation[3] > 0.0 { 1 } else { 0 };
            s = env.step(&Action::Discrete(a)).unwrap().0;
            steps += 1;
        }
        assert!(s.truncated && !s.done);
        assert_eq!(steps, CartPole::MAX_STEPS);
    }

    #[test]
    fn acrobot_hanging_at_rest_stays_put_and_pays_minus_one() {
        let mut env = Acrobot::new();
        env.reset_to([0.0; 4]);
        let (s, r) = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(r, -1.0);
        assert!(!s.done);
        assert!((s.observation[0] - 1.0).abs() < 1e-12);
        assert!(s.observation[4].abs() < 1e-12);
    }

    #[test]
    fn acrobot_tip_above_bar_terminates() {
        let mut env = Acrobot::new();
        // Both links pointing up: -cos(pi) - cos(2 pi) = 0 ... start slightly
        // below and let the step cross the line is fragile; check the
        // predicate on an upright configuration instead.
        env.reset_to([PI - 0.01, 0.0, 0.0, 0.0]);
        assert!(env.terminal());
        env.reset_to([0.0, 0.0, 0.0, 0.0]);
        assert!(!env.terminal());
    }

    #[test]
    fn fermentation_reward_reference_values() {
        assert_eq!(fermentation_reward(20.0), 0.0);
        assert_eq!(fermentation_reward(25.0), -25.0);
    }

    #[test]
    fn fermentation_reset_stays_near_nominal() {
        let mut env = Fermentation::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = env.reset(&mut rng);
            let nominal = env.nominal.s;
            assert!((s.observation[2] - nominal).abs() <= 0.05 * nominal + 1e-12);
            assert_eq!(s.observation[5], 0.0);
        }
    }

    #[test]
    fn unfed_process_depletes_substrate_below_setpoint() {
        let mut env = Fermentation::new();
        env.reset_to(env.nominal);
        let mut min_s = f64::INFINITY;
        let mut rewards = Vec::new();
        loop {
            let (s, r) = env.step(&Action::Continuous(0.0)).unwrap();
            rewards.push(r);
            min_s = min_s.min(s.observation[2]);
            if s.finished() {
                break;
            }
        }
        assert_eq!(rewards.len(), 50);
        assert!(min_s < 5.0, "substrate only fell to {min_s}");
        assert!(rewards.iter().all(|r| *r <= 0.0));
    }

    #[test]
    fn fermentation_substrate_rises_only_with_feed_and_volume_never_shrinks() {
        let mut env = Fermentation::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        env.reset(&mut rng);
        let mut prev = env.state();
        for k in 0..50 {
            let u = if k % 3 == 0 { 0.0 } else { rng.random_range(0.0..=0.2) };
            let (s, _) = env.step(&Action::Continuous(u)).unwrap();
            let cur = env.state();
            if u == 0.0 {
                assert!(cur.s <= prev.s + 1e-12);
                assert_eq!(cur.v, prev.v);
            }
            assert!(cur.v >= prev.v);
            assert!(cur.x_f >= 0.0 && cur.c >= 0.0 && cur.s >= 0.0 && cur.n >= 0.0);
            assert_eq!(s.observation.len(), 9);
            prev = cur;
        }
    }
}
