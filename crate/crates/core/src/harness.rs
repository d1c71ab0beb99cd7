//! Macro-replicated experiments, CSV curves and curve comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{train, AgentConfig, Algorithm, IterationLog, OptimizerKind};
use crate::env::{make, ENV_NAMES};
use crate::error::{Error, Result};
use crate::policy::{ActorCritic, Architecture};

pub const CSV_HEADER: &str =
    "iter,return_mean,return_ci,tracevar_mean,tracevar_ci,reuse_size_mean,walltime_s";

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub env: String,
    pub agent: AgentConfig,
    pub macro_reps: usize,
    /// Replication `r` is seeded with `seed + r`.
    pub seed: u64,
    pub jobs: usize,
}

impl ExperimentSpec {
    /// Tuned defaults for an environment and algorithm.
    pub fn defaults(env: &str, algorithm: Algorithm) -> Result<Self> {
        if !ENV_NAMES.contains(&env) {
            return Err(Error::UnknownEnv(env.to_string()));
        }
        let mut agent = match algorithm {
            Algorithm::ActorCritic => AgentConfig::default(),
            Algorithm::Ppo => AgentConfig::ppo(),
        };
        agent.n_eval = Some(100);
        match (env, algorithm) {
            ("cartpole", Algorithm::ActorCritic) => {
                agent.minibatch = 128;
                agent.lr_actor = 0.005;
                agent.lr_critic = 0.005;
            }
            (_, Algorithm::ActorCritic) => {
                agent.minibatch = 128;
                agent.lr_actor = 0.001;
                agent.lr_critic = 0.001;
            }
            (_, Algorithm::Ppo) => {}
        }
        if env == "fermentation" {
            agent.gamma = 0.9;
        }
        agent.reward_scale = match env {
            "fermentation" => 1e-3,
            _ => 0.01,
        };
        Ok(Self {
            env: env.to_string(),
            agent,
            macro_reps: 30,
            seed: 0,
            jobs: 1,
        })
    }

    /// Sets one option from its `key=value` spelling.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        fn switch(key: &str, value: &str) -> Result<bool> {
            match value.trim() {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key} expects on|off, got {value:?}"))),
            }
        }
        fn optional(key: &str, value: &str) -> Result<Option<usize>> {
            match value.trim() {
                "all" | "none" => Ok(None),
                v => parse(key, v).map(Some),
            }
        }
        let a = &mut self.agent;
        match key.trim().replace('-', "_").as_str() {
            "env" => {
                if !ENV_NAMES.contains(&value.trim()) {
                    return Err(Error::UnknownEnv(value.trim().to_string()));
                }
                self.env = value.trim().to_string();
            }
            "algo" => a.algorithm = parse_algorithm(value)?,
            "vrer" => a.vrer = switch(key, value)?,
            "c" => a.c = parse(key, value)?,
            "iters" => a.iterations = parse(key, value)?,
            "n" => a.batch_size = parse(key, value)?,
            "koff" => a.offline_steps = parse(key, value)?,
            "gamma" => a.gamma = parse(key, value)?,
            "lr_actor" => a.lr_actor = parse(key, value)?,
            "lr_critic" => a.lr_critic = parse(key, value)?,
            "minibatch" => a.minibatch = parse(key, value)?,
            "n_eval" => a.n_eval = optional(key, value)?,
            "max_snapshots" => a.max_snapshots = optional(key, value)?,
            "reward_scale" => a.reward_scale = parse(key, value)?,
            "adv_norm" => a.adv_norm = switch(key, value)?,
            "clip" => a.clip = parse(key, value)?,
            "kl_stop" => a.kl_stop = parse(key, value)?,
            "optimizer" => {
                a.optimizer = match value.trim() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
                }
            }
            "macro_reps" => self.macro_reps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.macro_reps == 0 {
            return Err(Error::Config("macro_reps must be positive".into()));
        }
        self.agent.validate()
    }

    /// Canonical `key=value` listing, readable by [`parse_config`].
    pub fn to_config(&self) -> String {
        let a = &self.agent;
        let onoff = |b: bool| if b { "on" } else { "off" };
        let opt = |o: Option<usize>| o.map_or("all".to_string(), |v| v.to_string());
        let mut s = String::new();
        for (k, v) in [
            ("env", self.env.clone()),
            ("algo", algorithm_name(a.algorithm).to_string()),
            ("vrer", onoff(a.vrer).to_string()),
            ("c", a.c.to_string()),
            ("iters", a.iterations.to_string()),
            ("n", a.batch_size.to_string()),
            ("koff", a.offline_steps.to_string()),
            ("gamma", a.gamma.to_string()),
            ("lr_actor", a.lr_actor.to_string()),
            ("lr_critic", a.lr_critic.to_string()),
            ("minibatch", a.minibatch.to_string()),
            ("n_eval", opt(a.n_eval)),
            ("max_snapshots", opt(a.max_snapshots)),
            ("reward_scale", a.reward_scale.to_string()),
            ("adv_norm", onoff(a.adv_norm).to_string()),
            ("clip", a.clip.to_string()),
            ("kl_stop", a.kl_stop.to_string()),
            (
                "optimizer",
                match a.optimizer {
                    OptimizerKind::Sgd => "sgd",
                    OptimizerKind::Adam => "adam",
                }
                .to_string(),
            ),
            ("macro_reps", self.macro_reps.to_string()),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
        ] {
            writeln!(s, "{k}={v}").expect("string write");
        }
        s
    }
}

pub fn parse_algorithm(value: &str) -> Result<Algorithm> {
    match value.trim() {
        "ac" => Ok(Algorithm::ActorCritic),
        "ppo" => Ok(Algorithm::Ppo),
        other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
    }
}

pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::ActorCritic => "ac",
        Algorithm::Ppo => "ppo",
    }
}

/// Parses flat `key=value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            line: no + 1,
            reason: "expected key=value".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Builds the network that matches the algorithm and environment.
pub fn build_model(env: &str, algorithm: Algorithm, rng: &mut ChaCha8Rng) -> Result<ActorCritic> {
    let e = make(env)?;
    let arch = match algorithm {
        Algorithm::ActorCritic => Architecture::actor_critic_default(),
        Algorithm::Ppo => Architecture::ppo_default(),
    };
    ActorCritic::new(e.observation_dim(), e.action_space(), &arch, rng)?
        .with_input_scale(e.observation_scale())
}

/// One macro-replication with seed `spec.seed + rep`.
pub fn run_replication(spec: &ExperimentSpec, rep: usize) -> Result<Vec<IterationLog>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed + rep as u64);
    let model = build_model(&spec.env, spec.agent.algorithm, &mut rng)?;
    let mut env = make(&spec.env)?;
    Ok(train(env.as_mut(), model, &spec.agent, &mut rng)?.logs)
}

/// Runs every macro-replication on `spec.jobs` worker threads.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<Vec<IterationLog>>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        (0..spec.macro_reps)
            .into_par_iter()
            .map(|r| run_replication(spec, r))
            .collect()
    })
}

/// One row of an aggregated learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    pub return_mean: f64,
    /// Half-width of the normal-approximation 95% band.
    pub return_ci: f64,
    pub tracevar_mean: f64,
    pub tracevar_ci: f64,
    pub reuse_size_mean: f64,
    pub walltime_s: f64,
}

/// Mean and 95% half-width `1.96 s / √n` (zero for a single value).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Aggregates replications iteration by iteration, up to the shortest run.
pub fn aggregate(runs: &[Vec<IterationLog>]) -> Vec<CurvePoint> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col = |f: fn(&IterationLog) -> f64| runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>();
            let (return_mean, return_ci) = mean_ci(&col(|l| l.mean_return));
            let (tracevar_mean, tracevar_ci) = mean_ci(&col(|l| l.trace_var));
            let (reuse_size_mean, _) = mean_ci(&col(|l| l.reuse_size as f64));
            let (walltime_s, _) = mean_ci(&col(|l| l.wall_time));
            CurvePoint {
                iter: i,
                return_mean,
                return_ci,
                tracevar_mean,
                tracevar_ci,
                reuse_size_mean,
                walltime_s,
            }
        })
        .collect()
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for p in points {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.iter,
            p.return_mean,
            p.return_ci,
            p.tracevar_mean,
            p.tracevar_ci,
            p.reuse_size_mean,
            p.walltime_s
        )
        .expect("string write");
    }
    s
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Format {
                line: 1,
                reason: "unexpected CSV header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| {
            let bad = || Error::Format {
                line: no + 1,
                reason: "expected 7 numeric fields".into(),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad());
            Ok(CurvePoint {
                iter: f[0].trim().parse().map_err(|_| bad())?,
                return_mean: num(1)?,
                return_ci: num(2)?,
                tracevar_mean: num(3)?,
                tracevar_ci: num(4)?,
                reuse_size_mean: num(5)?,
                walltime_s: num(6)?,
            })
        })
        .collect()
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, curve_to_csv(points))?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    curve_from_csv(&std::fs::read_to_string(path)?)
}

/// First iteration whose mean return reaches `threshold`.
pub fn first_crossing(points: &[CurvePoint], threshold: f64) -> Option<usize> {
    points
        .iter()
        .find(|p| p.return_mean >= threshold)
        .map(|p| p.iter)
}

/// Ordinal comparison of two curves (typically with and without replay).
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub crossing_a: Option<usize>,
    pub crossing_b: Option<usize>,
    pub final_a: (f64, f64),
    pub final_b: (f64, f64),
    /// Share of iterations from `warmup` on where `a` has the lower mean
    /// trace variance.
    pub lower_tracevar_share: f64,
}

impl Comparison {
    /// `a` reaches the threshold, and strictly earlier than `b` if `b` does.
    pub fn a_crosses_first(&self) -> bool {
        match (self.crossing_a, self.crossing_b) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

pub fn compare(a: &[CurvePoint], b: &[CurvePoint], threshold: f64, warmup: usize) -> Comparison {
    let len = a.len().min(b.len());
    let last = |c: &[CurvePoint]| {
        c.get(len.wrapping_sub(1))
            .map_or((f64::NAN, f64::NAN), |p| (p.return_mean, p.return_ci))
    };
    let window: Vec<bool> = (warmup..len)
        .map(|i| a[i].tracevar_mean < b[i].tracevar_mean)
        .collect();
    let lower_tracevar_share = if window.is_empty() {
        f64::NAN
    } else {
        window.iter().filter(|&&x| x).count() as f64 / window.len() as f64
    };
    Comparison {
        threshold,
        crossing_a: first_crossing(&a[..len], threshold),
        crossing_b: first_crossing(&b[..len], threshold),
        final_a: last(a),
        final_b: last(b),
        lower_tracevar_share,
    }
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let cross = |c: Option<usize>| c.map_or("never".to_string(), |i| i.to_string());
        writeln!(
            f,
            "first iteration with mean return >= {}: a={} b={}",
            self.threshold,
            cross(self.crossing_a),
            cross(self.crossing_b)
        )?;
        writeln!(
            f,
            "final mean return: a={:.2} ± {:.2}  b={:.2} ± {:.2}",
            self.final_a.0, self.final_a.1, self.final_b.0, self.final_b.1
        )?;
        write!(
            f,
            "share of post-warm-up iterations where a has lower trace variance: {:.3}",
            self.lower_tracevar_share
        )
    }
}

/// Runs the same experiment for each selection constant.
pub fn sweep_c(spec: &ExperimentSpec, values: &[f64]) -> Result<BTreeMap<String, Vec<CurvePoint>>> {
    let mut out = BTreeMap::new();
    for &c in values {
        let mut s = spec.clone();
        s.agent.c = c;
        s.agent.vrer = true;
        out.insert(c.to_string(), aggregate(&run_experiment(&s)?));
    }
    Ok(out)
}

/// Whether every pair of final returns lies within each other's 95% bands.
pub fn finals_overlap(curves: &[&[CurvePoint]]) -> bool {
    let finals: Vec<(f64, f64)> = curves
        .iter()
        .filter_map(|c| c.last().map(|p| (p.return_mean, p.return_ci)))
        .collect();
    finals.iter().all(|&(m1, h1)| {
        finals
            .iter()
            .all(|&(m2, h2)| (m1 - m2).abs() <= h1.min(h2) + f64::EPSILON)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(i: usize, ret: f64, tv: f64) -> IterationLog {
        IterationLog {
            iteration: i,
            mean_return: ret,
            trace_var: tv,
            reuse_size: 1,
            updates: 1,
            wall_time: 0.5,
        }
    }

    #[test]
    fn ci_uses_normal_half_width() {
        let (m, h) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let runs = vec![
            vec![log(0, 10.0, 1.0), log(1, 20.0, 0.5)],
            vec![log(0, 12.0, 3.0), log(1, 22.0, 0.25)],
        ];
        let curve = aggregate(&runs);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1].return_mean, 21.0);
        let back = curve_from_csv(&curve_to_csv(&curve)).unwrap();
        assert_eq!(back, curve);
        assert!(curve_from_csv("bad,header\n").is_err());
    }

    #[test]
    fn config_round_trip_and_overrides() {
        let mut spec = ExperimentSpec::defaults("cartpole", Algorithm::ActorCritic).unwrap();
        spec.apply("c", "2.5").unwrap();
        spec.apply("vrer", "off").unwrap();
        spec.apply("n-eval", "all").unwrap();
        let text = format!("# comment\n{}\n", spec.to_config());
        let mut other = ExperimentSpec::defaults("acrobot", Algorithm::Ppo).unwrap();
        for (k, v) in parse_config(&text).unwrap() {
            other.apply(&k, &v).unwrap();
        }
        assert_eq!(other, spec);
        assert!(spec.apply("nope", "1").is_err());
        assert!(spec.apply("c", "x").is_err());
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn comparison_reports_crossings_and_variance_share() {
        let pts = |rets: &[f64], tv: f64| {
            rets.iter()
                .enumerate()
                .map(|(i, &r)| CurvePoint {
                    iter: i,
                    return_mean: r,
                    return_ci: 1.0,
                    tracevar_mean: tv,
                    tracevar_ci: 0.0,
                    reuse_size_mean: 1.0,
                    walltime_s: 0.0,
                })
                .collect::<Vec<_>>()
        };
        let a = pts(&[0.0, 450.0, 500.0], 1.0);
        let b = pts(&[0.0, 100.0, 420.0], 2.0);
        let cmp = compare(&a, &b, 400.0, 0);
        assert_eq!((cmp.crossing_a, cmp.crossing_b), (Some(1), Some(2)));
        assert!(cmp.a_crosses_first());
        assert_eq!(cmp.lower_tracevar_share, 1.0);
        assert!(!finals_overlap(&[&a, &b]));
        assert!(finals_overlap(&[&a, &a]));
    }

    #[test]
    fn tiny_experiment_runs_end_to_end() {
        let mut spec = ExperimentSpec::defaults("cartpole", Algorithm::ActorCritic).unwrap();
        for (k, v) in [("iters", "3"), ("n", "30"), ("macro_reps", "2"), ("minibatch", "8")] {
            spec.apply(k, v).unwrap();
        }
        let runs = run_experiment(&spec).unwrap();
        assert_eq!(runs.len(), 2);
        let untimed = |logs: &[IterationLog]| {
            logs.iter()
                .map(|l| (l.mean_return, l.trace_var, l.reuse_size, l.updates))
                .collect::<Vec<_>>()
        };
        assert_ne!(untimed(&runs[0]), untimed(&runs[1]));
        assert_eq!(untimed(&runs[0]), untimed(&run_replication(&spec, 0).unwrap()));
        assert_eq!(aggregate(&runs).len(), 3);
    }
}
