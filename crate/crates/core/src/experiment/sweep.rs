//! Seeded K-sweeps.
//!
//! Every `(K, seed index)` cell collects `2K` trajectories with
//! `run_seed = derive_seed([base_seed, K, seed index])` and runs every
//! requested algorithm on them. The variance-aware variants split the data
//! into alternating halves `D` and `D′`; DRPVI uses all `2K` trajectories
//! (or only `D` when `drpvi_full_budget = false`). Because the seed does not
//! involve the algorithm, all algorithms in a cell see the same data and
//! comparisons between them are paired.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{InstanceSource, SweepConfig};
use super::diagnostics::{
    check_pessimism, compute_phi_report, initial_weighted, suboptimality_against, PhiWeights,
};
use super::plot::{loglog_svg, Series};
use crate::algorithms::{run_algorithm, AlgorithmKind, ModelSpec};
use crate::error::{invalid, Result};
use crate::instances::{build_hard_instance, random_simplex_mdp};
use crate::io::load_instance;
use crate::mdp::{collect_offline_dataset, StochasticPolicy, TabularLinearDRMDP};
use crate::robust_dp::{compute_kappa, robust_value_iteration, RobustDPResult};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: AlgorithmKind,
    pub k: usize,
    pub seed: usize,
    pub run_seed: u64,
    /// Trajectories consumed by the algorithm.
    pub budget: usize,
    /// `μ₀`-weighted suboptimality.
    pub subopt_init: f64,
    /// Suboptimality at every start state.
    pub subopt: Vec<f64>,
    /// `μ₀`-weighted `Φ(Λ⁻¹)` with `λ = 1` on the algorithm's main dataset.
    pub phi_lambda: Option<f64>,
    /// `μ₀`-weighted `Φ(Σ*⁻¹)` with `λ = 1/H²`.
    pub phi_sigma_star: Option<f64>,
    pub kappa: f64,
    pub beta: f64,
    /// `β · Φ` with the covariance matching the algorithm.
    pub bound_upper: Option<f64>,
    /// `4 d^{3/2} H / √K` on the hard family (boolean `d`).
    pub bound_phi_hard: Option<f64>,
    pub pessimism_violated: bool,
    pub max_excess: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: AlgorithmKind,
    pub k: usize,
    pub n: usize,
    pub mean_subopt: f64,
    pub se_subopt: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub algorithm: AlgorithmKind,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub num_states: usize,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub slopes: Vec<SlopeRow>,
}

/// Seed of the `(K, seed index)` cell.
pub fn run_seed(base_seed: u64, k: usize, seed_index: usize) -> u64 {
    derive_seed(&[base_seed, k as u64, seed_index as u64])
}

/// Behavior policy used when none is given: the hard-family policy when the
/// instance carries hard-instance metadata, uniform otherwise.
pub fn default_behavior(mdp: &TabularLinearDRMDP) -> StochasticPolicy {
    match &mdp.metadata {
        Some(meta) if mdp.num_actions == 1 << meta.d => {
            let mut support: Vec<usize> = (0..meta.d).map(|i| 1usize << i).collect();
            support.push(0);
            StochasticPolicy::uniform_over(mdp.horizon, mdp.num_states, mdp.num_actions, &support)
        }
        _ => StochasticPolicy::uniform(mdp.horizon, mdp.num_states, mdp.num_actions),
    }
}

struct Stage {
    k: usize,
    mdp: TabularLinearDRMDP,
    behavior: StochasticPolicy,
    spec: ModelSpec,
    opt: RobustDPResult,
    kappa: f64,
    hard_d: Option<usize>,
}

fn stages(cfg: &SweepConfig) -> Result<Vec<Stage>> {
    let shared = match &cfg.instance {
        InstanceSource::File(path) => {
            let mdp = load_instance(path)?;
            let behavior = default_behavior(&mdp);
            Some((mdp, behavior))
        }
        InstanceSource::Random {
            num_states,
            num_actions,
            horizon,
            feature_dim,
            seed,
            rho,
        } => {
            let mdp = random_simplex_mdp(*num_states, *num_actions, *horizon, *feature_dim, *seed)?
                .with_uniform_rho(*rho);
            let behavior = default_behavior(&mdp);
            Some((mdp, behavior))
        }
        InstanceSource::Hard(p) if !cfg.delta_from_k => Some(build_hard_instance(p)?),
        InstanceSource::Hard(_) => None,
    };
    cfg.k_values
        .iter()
        .map(|&k| {
            let (mdp, behavior) = match (&shared, &cfg.instance) {
                (Some(pair), _) => pair.clone(),
                (None, InstanceSource::Hard(p)) => build_hard_instance(&p.clone().with_k_for_delta(k))?,
                (None, _) => unreachable!("only the hard family is rebuilt per K"),
            };
            let kappa = compute_kappa(&mdp, &behavior)?;
            let hard_d = mdp.metadata.as_ref().map(|m| m.d);
            Ok(Stage {
                k,
                spec: ModelSpec::from_mdp(&mdp),
                opt: robust_value_iteration(&mdp),
                mdp,
                behavior,
                kappa,
                hard_d,
            })
        })
        .collect()
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run_cell(cfg: &SweepConfig, stage: &Stage, seed_index: usize) -> Result<Vec<SweepRow>> {
    let k = stage.k;
    let rs = run_seed(cfg.base_seed, k, seed_index);
    let both = collect_offline_dataset(&stage.mdp, &stage.behavior, 2 * k, rs)?;
    let (d_main, d_prime) = both.split_alternating();
    let hf = stage.mdp.horizon as f64;
    let mut rows = Vec::with_capacity(cfg.algorithms.len());
    for &alg in &cfg.algorithms {
        let started = Instant::now();
        let main = if alg == AlgorithmKind::Drpvi && cfg.drpvi_full_budget {
            &both
        } else {
            &d_main
        };
        let prime = alg.is_variance_aware().then_some(&d_prime);
        let out = run_algorithm(alg, main, prime, &stage.spec, &cfg.algo)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let budget = if alg.is_variance_aware() {
            2 * k
        } else {
            main.num_trajectories
        };

        let subopt = suboptimality_against(&stage.opt, &stage.mdp, &out.policy)?;
        let pess = check_pessimism(&out, &stage.opt)?;
        let (phi_lambda, phi_sigma_star) = if cfg.compute_phi {
            let pl = compute_phi_report(&stage.mdp, main, &stage.opt.policy, PhiWeights::Lambda, 1.0)?;
            let ps = compute_phi_report(
                &stage.mdp,
                main,
                &stage.opt.policy,
                PhiWeights::SigmaStar,
                1.0 / (hf * hf),
            )?;
            (
                Some(initial_weighted(&stage.mdp, &pl)),
                Some(initial_weighted(&stage.mdp, &ps)),
            )
        } else {
            (None, None)
        };
        let bound_upper = if alg.is_variance_aware() {
            phi_sigma_star
        } else {
            phi_lambda
        }
        .map(|p| out.beta * p);
        let bound_phi_hard = stage
            .hard_d
            .filter(|_| main.num_trajectories > 0)
            .map(|d| 4.0 * (d as f64).powf(1.5) * hf / (main.num_trajectories as f64).sqrt());
        rows.push(SweepRow {
            algorithm: alg,
            k,
            seed: seed_index,
            run_seed: rs,
            budget,
            subopt_init: initial_weighted(&stage.mdp, &subopt),
            subopt,
            phi_lambda,
            phi_sigma_star,
            kappa: stage.kappa,
            beta: out.beta,
            bound_upper,
            bound_phi_hard,
            pessimism_violated: pess.violated,
            max_excess: pess.max_excess,
            wall_ms,
        });
    }
    Ok(rows)
}

/// Least-squares fit of `ln y = slope · ln x + intercept` over points with `y > 0`.
pub fn loglog_slope(points: &[(f64, f64)]) -> (f64, f64, usize) {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return (f64::NAN, f64::NAN, n);
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, n)
}

fn summarize(cfg: &SweepConfig, rows: &[SweepRow]) -> (Vec<SummaryRow>, Vec<SlopeRow>) {
    let mut summary = Vec::new();
    let mut slopes = Vec::new();
    for &alg in &cfg.algorithms {
        let mut curve = Vec::new();
        for &k in &cfg.k_values {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.algorithm == alg && r.k == k).collect();
            let xs: Vec<f64> = cell.iter().map(|r| r.subopt_init).collect();
            let n = xs.len();
            let mean = mean_of(&xs);
            let se = if n > 1 {
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            let viol = cell.iter().filter(|r| r.pessimism_violated).count() as f64 / n as f64;
            summary.push(SummaryRow {
                algorithm: alg,
                k,
                n,
                mean_subopt: mean,
                se_subopt: se,
                violation_rate: viol,
            });
            curve.push((k as f64, mean));
        }
        let (slope, intercept, points) = loglog_slope(&curve);
        slopes.push(SlopeRow {
            algorithm: alg,
            slope,
            intercept,
            points,
        });
    }
    (summary, slopes)
}

/// Runs every cell and assembles rows in `(algorithm, K, seed)` order.
pub fn execute_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let stages = stages(cfg)?;
    let cells: Vec<(usize, usize)> = (0..stages.len())
        .flat_map(|i| (0..cfg.seeds).map(move |s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let per_cell: Vec<Vec<SweepRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, s)| run_cell(cfg, &stages[i], s))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::with_capacity(cells.len() * cfg.algorithms.len());
    for (j, _) in cfg.algorithms.iter().enumerate() {
        for cell in &per_cell {
            rows.push(cell[j].clone());
        }
    }
    let (summary, slopes) = summarize(cfg, &rows);
    Ok(SweepResult {
        num_states: stages[0].mdp.num_states,
        rows,
        summary,
        slopes,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Main CSV header for `num_states` states.
pub fn csv_header(num_states: usize) -> String {
    let mut h = String::from("algorithm,K,seed,run_seed,budget,subopt_init");
    for s in 0..num_states {
        let _ = write!(h, ",subopt_s{s}");
    }
    h.push_str(
        ",phi_lambda,phi_sigma_star,kappa,beta,bound_upper,bound_phi_hard,pessimism_violated,max_excess",
    );
    h
}

pub fn rows_csv(result: &SweepResult) -> String {
    let mut out = csv_header(result.num_states);
    out.push('\n');
    for r in &result.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.algorithm, r.k, r.seed, r.run_seed, r.budget, r.subopt_init
        );
        for g in &r.subopt {
            let _ = write!(out, ",{g}");
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{},{}",
            opt(r.phi_lambda),
            opt(r.phi_sigma_star),
            r.kappa,
            r.beta,
            opt(r.bound_upper),
            opt(r.bound_phi_hard),
            r.pessimism_violated,
            r.max_excess
        );
    }
    out
}

pub fn summary_csv(result: &SweepResult) -> String {
    let mut out = String::from("algorithm,K,n,mean_subopt,se_subopt,violation_rate\n");
    for s in &result.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.algorithm, s.k, s.n, s.mean_subopt, s.se_subopt, s.violation_rate
        );
    }
    out
}

pub fn slopes_csv(result: &SweepResult) -> String {
    let mut out = String::from("algorithm,slope,intercept,points\n");
    for s in &result.slopes {
        let _ = writeln!(out, "{},{},{},{}", s.algorithm, s.slope, s.intercept, s.points);
    }
    out
}

pub fn timings_csv(result: &SweepResult) -> String {
    let mut out = String::from("algorithm,K,seed,wall_ms\n");
    for r in &result.rows {
        let _ = writeln!(out, "{},{},{},{:.3}", r.algorithm, r.k, r.seed, r.wall_ms);
    }
    out
}

pub fn plot_svg(result: &SweepResult) -> String {
    let mut names: Vec<AlgorithmKind> = Vec::new();
    for s in &result.summary {
        if !names.contains(&s.algorithm) {
            names.push(s.algorithm);
        }
    }
    let series: Vec<Series> = names
        .iter()
        .map(|&alg| Series {
            name: alg.name().to_string(),
            points: result
                .summary
                .iter()
                .filter(|s| s.algorithm == alg)
                .map(|s| (s.k as f64, s.mean_subopt, s.se_subopt))
                .collect(),
        })
        .collect();
    loglog_svg(
        "Mean suboptimality vs K",
        "K (trajectories per dataset)",
        "mean suboptimality",
        &series,
    )
}

/// Writes `sweep.csv`, `summary.csv`, `slopes.csv`, `timings.csv` and optionally `subopt.svg`.
pub fn write_sweep(result: &SweepResult, dir: &Path, plot: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), rows_csv(result))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(result))?;
    std::fs::write(dir.join("slopes.csv"), slopes_csv(result))?;
    std::fs::write(dir.join("timings.csv"), timings_csv(result))?;
    if plot {
        std::fs::write(dir.join("subopt.svg"), plot_svg(result))?;
    }
    Ok(())
}

/// [`execute_sweep`] followed by [`write_sweep`] into `cfg.output_dir`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let result = execute_sweep(cfg)?;
    write_sweep(&result, &cfg.output_dir, cfg.plot)?;
    Ok(result)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::algorithms::AlgoConfig;
    use crate::instances::HardInstanceParams;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn row_count_and_worker_independence(
            n_alg in 1usize..4, n_k in 1usize..4, seeds in 1usize..4, workers in 1usize..4, base in any::<u64>(),
        ) {
            let cfg = SweepConfig {
                instance: InstanceSource::Hard(HardInstanceParams::new(1, 2, 0.3).with_delta(0.5)),
                k_values: (0..n_k).map(|i| 8 << i).collect(),
                seeds,
                algorithms: AlgorithmKind::ALL[..n_alg].to_vec(),
                algo: AlgoConfig::manual(0.1),
                base_seed: base,
                workers,
                compute_phi: false,
                plot: false,
                ..SweepConfig::default()
            };
            let a = execute_sweep(&cfg).unwrap();
            prop_assert_eq!(a.rows.len(), n_alg * n_k * seeds);
            prop_assert!(a.rows.iter().all(|r| r.subopt.iter().all(|&g| g >= -1e-9)));
            let serial = execute_sweep(&SweepConfig { workers: 1, ..cfg }).unwrap();
            prop_assert_eq!(rows_csv(&a), rows_csv(&serial));
            prop_assert_eq!(slopes_csv(&a), slopes_csv(&serial));
        }
    }
}
