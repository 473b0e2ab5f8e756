use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drmdp::experiment::diagnostics::{check_pessimism, initial_weighted, suboptimality_against};
use drmdp::experiment::{default_behavior, load_config, run_checks, run_sweep};
use drmdp::io::{load_dataset, load_instance, save_dataset, save_instance};
use drmdp::{
    build_hard_instance, collect_offline_dataset, random_simplex_mdp, robust_value_iteration, run_algorithm,
    AlgoConfig, AlgorithmKind, BetaMode, HardInstanceParams, ModelSpec, PolicyTable, RewardMode,
    StochasticPolicy, TabularLinearDRMDP,
};

const SWEEP_HELP: &str = "\
Output files (in output_dir):
  sweep.csv     one row per (algorithm, K, seed), in that order:
                  algorithm          drpvi | va | modified_va
                  K                  trajectories per split
                  seed               seed index in 0..seeds
                  run_seed           derive_seed(base_seed, K, seed), shared by all algorithms
                  budget             trajectories consumed (2K for the variance-aware variants)
                  subopt_init        suboptimality weighted by the initial distribution
                  subopt_s<j>        suboptimality from start state j
                  phi_lambda         uncertainty function with Λ (λ = 1), initial-weighted
                  phi_sigma_star     uncertainty function with Σ* (λ = 1/H²), initial-weighted
                  kappa              population feature coverage of the behavior policy
                  beta               penalty multiplier used
                  bound_upper        beta · phi (Λ for drpvi, Σ* otherwise)
                  bound_phi_hard     4 d^{3/2} H / √K on the hard family
                  pessimism_violated whether V̂ exceeded V* anywhere by more than 1e-9
                  max_excess         max over (h, s) of V̂ − V*
  summary.csv   algorithm, K, n, mean_subopt, se_subopt, violation_rate
  slopes.csv    algorithm, slope, intercept, points (least squares of ln mean vs ln K)
  timings.csv   algorithm, K, seed, wall_ms
  subopt.svg    log-log plot of mean suboptimality with a K^-1/2 guide (when plot = true)

Config file: `key = value` lines, `#` comments. Keys: instance (hard|random|<path>),
d, horizon, rho, xi_seed, delta_gap, k_for_delta, reward_noise_std, num_states,
num_actions, feature_dim, instance_seed, delta_from_k, k_values, seeds, algorithms,
base_seed, workers, output_dir, drpvi_full_budget, compute_phi, plot, and the
algorithm keys lambda, beta_mode, beta, c2, delta_fail, alpha_grid_size,
reward_mode, variance_c, variance_d_exponent, kappa, unit_variance.";

#[derive(Parser)]
#[command(
    name = "drmdp",
    version,
    about = "Distributionally robust offline RL on linear MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instance JSON file.
    #[command(subcommand)]
    GenInstance(GenInstance),
    /// Sample an offline dataset (JSON lines) under the nominal kernel.
    Collect(CollectArgs),
    /// Exact robust dynamic programming: V*, Q*, π* and worst-case kernels as JSON.
    SolveExact {
        #[arg(long)]
        instance: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one algorithm on a dataset and write its output as JSON.
    Run(RunArgs),
    /// Run a K-sweep described by a config file.
    #[command(after_long_help = SWEEP_HELP)]
    Sweep {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `workers` from the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the randomized invariant suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

#[derive(Subcommand)]
enum GenInstance {
    /// Hard two-state family.
    Hard {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Explicit gap; otherwise d^{3/2}/√(2 k_for_delta).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        k_for_delta: Option<usize>,
        /// Random signs; all +1 when omitted.
        #[arg(long)]
        xi_seed: Option<u64>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Random simplex-feature instance.
    Random {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    instance: PathBuf,
    /// `behavior` (hard-family behavior or uniform), `uniform`, `optimal`, or a
    /// JSON file holding a deterministic `[h][s]` or stochastic `[h][s][a]` policy.
    #[arg(long, default_value = "behavior")]
    policy: String,
    #[arg(short = 'k', long)]
    trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Second dataset for the variance-aware variants. Without it `data` is split alternately.
    #[arg(long)]
    data_prime: Option<PathBuf>,
    #[arg(long, default_value = "drpvi")]
    algorithm: AlgorithmKind,
    /// Manual β; the theoretical value is used when omitted.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta_fail: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    alpha_grid_size: Option<usize>,
    #[arg(long)]
    reward_mode: Option<RewardMode>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    unit_variance: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn emit(json: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}")?;
            Ok(())
        }
    }
}

fn load_policy(spec: &str, mdp: &TabularLinearDRMDP) -> Result<StochasticPolicy> {
    let (hz, ns, na) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let policy = match spec {
        "behavior" => default_behavior(mdp),
        "uniform" => StochasticPolicy::uniform(hz, ns, na),
        "optimal" => robust_value_iteration(mdp).policy.to_stochastic(na),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading policy {path}"))?;
            match serde_json::from_str::<PolicyTable>(&text) {
                Ok(det) => det.to_stochastic(na),
                Err(_) => serde_json::from_str::<StochasticPolicy>(&text)
                    .with_context(|| format!("{path} is neither a [h][s] nor a [h][s][a] policy"))?,
            }
        }
    };
    policy.validate(mdp)?;
    Ok(policy)
}

fn gen_instance(cmd: GenInstance) -> Result<()> {
    match cmd {
        GenInstance::Hard {
            d,
            horizon,
            rho,
            delta,
            k_for_delta,
            xi_seed,
            noise,
            output,
        } => {
            let mut p = HardInstanceParams::new(d, horizon, rho).with_noise(noise);
            if let Some(k) = k_for_delta {
                p = p.with_k_for_delta(k);
            }
            if let Some(x) = delta {
                p = p.with_delta(x);
            }
            if let Some(s) = xi_seed {
                p = p.with_random_xi(s);
            }
            if !p.in_lower_bound_regime() {
                eprintln!("note: rho = {rho} is above 3/4, outside the lower-bound regime");
            }
            let (mdp, _) = build_hard_instance(&p)?;
            save_instance(&mdp, &output)?;
            eprintln!(
                "hard instance (delta = {}) written to {}",
                p.delta(),
                output.display()
            );
        }
        GenInstance::Random {
            states,
            actions,
            horizon,
            dim,
            rho,
            seed,
            output,
        } => {
            let mdp = random_simplex_mdp(states, actions, horizon, dim, seed)?.with_uniform_rho(rho);
            mdp.validate()?;
            save_instance(&mdp, &output)?;
            eprintln!("random instance written to {}", output.display());
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mdp = load_instance(&args.instance)?;
    let data = load_dataset(&args.data)?;
    let mut cfg = match args.beta {
        Some(b) => AlgoConfig::manual(b),
        None => AlgoConfig {
            beta_mode: BetaMode::Theory,
            ..AlgoConfig::default()
        },
    };
    cfg.lambda = args.lambda;
    cfg.kappa = args.kappa;
    cfg.unit_variance = args.unit_variance;
    if let Some(x) = args.delta_fail {
        cfg.delta_fail = x;
    }
    if let Some(x) = args.c2 {
        cfg.c2 = x;
    }
    if let Some(x) = args.alpha_grid_size {
        cfg.alpha_grid_size = x;
    }
    if let Some(x) = args.reward_mode {
        cfg.reward_mode = x;
    }

    let spec = ModelSpec::from_mdp(&mdp);
    let out = if args.algorithm.is_variance_aware() {
        let (main, prime) = match &args.data_prime {
            Some(p) => (data, load_dataset(p)?),
            None => data.split_alternating(),
        };
        run_algorithm(args.algorithm, &main, Some(&prime), &spec, &cfg)?
    } else {
        if args.data_prime.is_some() {
            bail!("--data-prime is only used by the variance-aware algorithms");
        }
        run_algorithm(args.algorithm, &data, None, &spec, &cfg)?
    };

    let exact = robust_value_iteration(&mdp);
    let gaps = suboptimality_against(&exact, &mdp, &out.policy)?;
    let pess = check_pessimism(&out, &exact)?;
    eprintln!(
        "{}: beta {:.4}, suboptimality {:.6e} (initial-weighted), per state {:?}, max V̂ − V* {:.3e}",
        out.algorithm,
        out.beta,
        initial_weighted(&mdp, &gaps),
        gaps,
        pess.max_excess
    );
    emit(&serde_json::to_string_pretty(&out)?, args.output.as_deref())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenInstance(g) => gen_instance(g)?,
        Command::Collect(a) => {
            let mdp = load_instance(&a.instance)?;
            let policy = load_policy(&a.policy, &mdp)?;
            let data = collect_offline_dataset(&mdp, &policy, a.trajectories, a.seed)?;
            save_dataset(&data, &a.output)?;
            eprintln!(
                "{} trajectories written to {}",
                a.trajectories,
                a.output.display()
            );
        }
        Command::SolveExact { instance, output } => {
            let mdp = load_instance(&instance)?;
            let res = robust_value_iteration(&mdp);
            emit(&serde_json::to_string_pretty(&res)?, output.as_deref())?;
        }
        Command::Run(a) => run(a)?,
        Command::Sweep {
            config,
            output_dir,
            workers,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let res = run_sweep(&cfg)?;
            for s in &res.slopes {
                eprintln!("{}: slope {:.4} over {} K values", s.algorithm, s.slope, s.points);
            }
            eprintln!("{} rows written to {}", res.rows.len(), cfg.output_dir.display());
        }
        Command::Check { seed, cases } => {
            let outcomes = run_checks(seed, cases)?;
            let mut failed = 0;
            for o in &outcomes {
                let status = if o.passed() { "ok" } else { "FAILED" };
                println!(
                    "{:<16} {status:>6}  {} cases, {} failures",
                    o.name, o.cases, o.failures
                );
                if let Some(d) = &o.detail {
                    println!("    {d}");
                }
                failed += usize::from(!o.passed());
            }
            if failed > 0 {
                bail!("{failed} suite(s) failed");
            }
        }
    }
    Ok(())
}
