use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use vrer::agent::Algorithm;
use vrer::harness::{
    aggregate, compare, finals_overlap, parse_algorithm, parse_config, read_curve, run_experiment,
    sweep_c, write_curve, ExperimentSpec,
};

#[derive(Parser)]
#[command(name = "vrer", version, about = "Policy-gradient training with variance-reduced experience replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with macro-replications and write the aggregated curve.
    Run(RunArgs),
    /// Compare two curve files (a is usually the replay variant).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Return level used for the crossing iteration.
        #[arg(long, default_value_t = 400.0)]
        threshold: f64,
        /// Iterations skipped before counting trace-variance wins.
        #[arg(long, default_value_t = 10)]
        warmup: usize,
    },
    /// Repeat a replay run for several selection constants.
    SweepC {
        /// Comma-separated values of c.
        #[arg(long, value_delimiter = ',', default_value = "1.2,1.5,2,4")]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    env: Option<String>,
    /// ac | ppo
    #[arg(long)]
    algo: Option<String>,
    /// on | off
    #[arg(long)]
    vrer: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    koff: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr_actor: Option<f64>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    macro_reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// on | off
    #[arg(long)]
    adv_norm: Option<String>,
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k, val));
            }
        };
        push("vrer", self.vrer.clone());
        push("c", self.c.map(|x| x.to_string()));
        push("iters", self.iters.map(|x| x.to_string()));
        push("n", self.n.map(|x| x.to_string()));
        push("koff", self.koff.map(|x| x.to_string()));
        push("gamma", self.gamma.map(|x| x.to_string()));
        push("lr_actor", self.lr_actor.map(|x| x.to_string()));
        push("lr_critic", self.lr_critic.map(|x| x.to_string()));
        push("minibatch", self.minibatch.map(|x| x.to_string()));
        push("macro_reps", self.macro_reps.map(|x| x.to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("jobs", self.jobs.map(|x| x.to_string()));
        push("adv_norm", self.adv_norm.clone());
        v
    }

    /// Defaults for the chosen env/algorithm, then the config file, then flags.
    fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let file = match &self.config {
            Some(path) => parse_config(
                &std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
            )?,
            None => Vec::new(),
        };
        let from_file = |key: &str| file.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let env = self.env.clone().or_else(|| from_file("env")).unwrap_or_else(|| "cartpole".into());
        let algo = match self.algo.clone().or_else(|| from_file("algo")) {
            Some(a) => parse_algorithm(&a)?,
            None => Algorithm::ActorCritic,
        };
        let mut spec = ExperimentSpec::defaults(&env, algo)?;
        for (k, v) in &file {
            if k != "env" && k != "algo" {
                spec.apply(k, v)?;
            }
        }
        for (k, v) in self.overrides() {
            spec.apply(k, &v)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run(args: &RunArgs) -> anyhow::Result<()> {
    let spec = args.spec()?;
    info!("running {} replications on {}", spec.macro_reps, spec.env);
    let curve = aggregate(&run_experiment(&spec)?);
    std::fs::create_dir_all(&args.out)?;
    write_curve(&args.out.join("curve.csv"), &curve)?;
    std::fs::write(args.out.join("config.txt"), spec.to_config())?;
    if let Some(last) = curve.last() {
        println!(
            "final mean return {:.2} ± {:.2} after {} iterations; curve in {}",
            last.return_mean,
            last.return_ci,
            curve.len(),
            args.out.join("curve.csv").display()
        );
    }
    Ok(())
}

fn compare_files(a: &Path, b: &Path, threshold: f64, warmup: usize) -> anyhow::Result<()> {
    let ca = read_curve(a).with_context(|| format!("reading {}", a.display()))?;
    let cb = read_curve(b).with_context(|| format!("reading {}", b.display()))?;
    if ca.is_empty() || cb.is_empty() {
        bail!("both curves need at least one row");
    }
    println!("{}", compare(&ca, &cb, threshold, warmup));
    Ok(())
}

fn sweep(values: &[f64], args: &RunArgs) -> anyhow::Result<()> {
    let spec = args.spec()?;
    let curves = sweep_c(&spec, values)?;
    std::fs::create_dir_all(&args.out)?;
    for (c, curve) in &curves {
        write_curve(&args.out.join(format!("c-{c}.csv")), curve)?;
        if let Some(last) = curve.last() {
            println!("c={c}: final mean return {:.2} ± {:.2}", last.return_mean, last.return_ci);
        }
    }
    let all: Vec<&[_]> = curves.values().map(Vec::as_slice).collect();
    println!("final returns within each other's 95% bands: {}", finals_overlap(&all));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VRER_LOG", "warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(&args),
        Command::Compare {
            a,
            b,
            threshold,
            warmup,
        } => compare_files(&a, &b, threshold, warmup),
        Command::SweepC { values, run } => sweep(&values, &run),
    }
}
