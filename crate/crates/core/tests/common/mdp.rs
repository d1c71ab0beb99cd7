//! A two-state, two-action discounted MDP solved in closed form.
//!
//! Policies are linear softmax over a one-hot state encoding; the six actor
//! parameters are laid out as the library lays out a `2 -> 2` dense layer:
//! `W[a][s]` row-major followed by the bias `b[a]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrer::nn::Activation;
use vrer::policy::{ActionSpace, ActorCritic, Architecture};

pub const ACTOR_PARAMS: usize = 6;

pub struct Mdp {
    /// `p[s][a][s']`
    pub p: [[[f64; 2]; 2]; 2],
    pub r: [[f64; 2]; 2],
    pub gamma: f64,
    pub start: [f64; 2],
}

pub type Table = [[f64; 2]; 2];

impl Mdp {
    pub fn standard() -> Self {
        Self {
            p: [[[0.9, 0.1], [0.2, 0.8]], [[0.7, 0.3], [0.05, 0.95]]],
            r: [[1.0, 0.0], [0.0, 2.0]],
            gamma: 0.9,
            start: [0.6, 0.4],
        }
    }

    /// `I - γ P_π` as a 2x2 matrix.
    fn resolvent_matrix(&self, pi: &Table) -> Table {
        let mut m = [[0.0; 2]; 2];
        for (s, row) in m.iter_mut().enumerate() {
            for (t, cell) in row.iter_mut().enumerate() {
                let p: f64 = (0..2).map(|a| pi[s][a] * self.p[s][a][t]).sum();
                *cell = f64::from(u8::from(s == t)) - self.gamma * p;
            }
        }
        m
    }

    pub fn values(&self, pi: &Table) -> [f64; 2] {
        let m = self.resolvent_matrix(pi);
        let rhs = [0, 1].map(|s| (0..2).map(|a| pi[s][a] * self.r[s][a]).sum::<f64>());
        solve(m, rhs)
    }

    pub fn objective(&self, pi: &Table) -> f64 {
        let v = self.values(pi);
        self.start[0] * v[0] + self.start[1] * v[1]
    }

    /// Normalized discounted state-action occupancy `ρ(s,a)`.
    pub fn occupancy(&self, pi: &Table) -> Table {
        let m = self.resolvent_matrix(pi);
        let mt = [[m[0][0], m[1][0]], [m[0][1], m[1][1]]];
        let d = solve(mt, self.start).map(|x| x * (1.0 - self.gamma));
        [0, 1].map(|s| [0, 1].map(|a| d[s] * pi[s][a]))
    }

    pub fn advantages(&self, pi: &Table) -> Table {
        let v = self.values(pi);
        [0, 1].map(|s| {
            [0, 1].map(|a| {
                let next: f64 = (0..2).map(|t| self.p[s][a][t] * v[t]).sum();
                self.r[s][a] + self.gamma * next - v[s]
            })
        })
    }
}

fn solve(m: Table, b: [f64; 2]) -> [f64; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        (b[0] * m[1][1] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - m[1][0] * b[0]) / det,
    ]
}

/// `π[s][a]` computed directly from the six actor parameters.
pub fn softmax_policy(theta: &[f64]) -> Table {
    [0, 1].map(|s| {
        let z = [0, 1].map(|a| theta[a * 2 + s] + theta[4 + a]);
        let m = z[0].max(z[1]);
        let e = z.map(|v| (v - m).exp());
        [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
    })
}

/// Central finite-difference gradient of the exact objective.
pub fn objective_gradient(mdp: &Mdp, theta: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..ACTOR_PARAMS)
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (mdp.objective(&softmax_policy(&up)) - mdp.objective(&softmax_policy(&down)))
                / (2.0 * h)
        })
        .collect()
}

pub fn one_hot(s: usize) -> [f64; 2] {
    let mut x = [0.0; 2];
    x[s] = 1.0;
    x
}

/// Library model whose actor carries `theta`; the critic is irrelevant here.
pub fn library_policy(theta: &[f64]) -> ActorCritic {
    let arch = Architecture::Separate {
        hidden: vec![],
        activation: Activation::Tanh,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ActorCritic::new(2, ActionSpace::Discrete(2), &arch, &mut rng).unwrap();
    let mut params = model.params();
    params[..ACTOR_PARAMS].copy_from_slice(theta);
    model.set_params(&params).unwrap();
    model
}

/// Cell index `2s + a` for sampling from an occupancy table.
pub fn cells(t: &Table) -> [f64; 4] {
    [t[0][0], t[0][1], t[1][0], t[1][1]]
}
