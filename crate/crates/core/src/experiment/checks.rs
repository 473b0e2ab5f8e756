//! Randomized invariant suites run by the `check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{run_algorithm, AlgoConfig, AlgorithmKind, ModelSpec};
use crate::error::Result;
use crate::instances::{
    build_hard_instance, hard_instance_optimal_value, random_simplex_mdp, HardInstanceParams,
};
use crate::io::{instance_from_json, instance_to_json, read_dataset, write_dataset};
use crate::mdp::{collect_offline_dataset, PolicyTable, StochasticPolicy};
use crate::robust_dp::{range_shrinkage_bound, robust_policy_evaluation, robust_value_iteration};
use crate::seed::derive_seed;
use crate::tv::{tv_dual_inf, tv_dual_sup};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(what());
            }
        }
    }

    fn done(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

/// Dual value against a direct evaluation of the greedy worst case, plus
/// the sandwich `inf ≤ E_μ⁰[V] ≤ sup`.
fn tv_checks(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("tv_dual");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..cases {
        let n = rng.random_range(1..=6);
        let mu0 = random_dist(&mut rng, n);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let rho = rng.random_range(0.0..=1.0);
        let sol = tv_dual_inf(&mu0, &v, rho)?;
        let direct: f64 = sol.worst_distribution.iter().zip(&v).map(|(p, x)| p * x).sum();
        let mean: f64 = mu0.iter().zip(&v).map(|(p, x)| p * x).sum();
        let sup = tv_dual_sup(&mu0, &v, rho)?;
        let ok = (sol.value - direct).abs() < 1e-9 && sol.value <= mean + 1e-12 && mean <= sup + 1e-12;
        t.record(ok, || {
            format!("case {c}: dual {} vs transport {direct}", sol.value)
        });
    }
    Ok(t.done())
}

/// Random instances validate, `π*` dominates random deterministic policies,
/// and values respect the range-shrinkage bound when `ρ > 0`.
fn dp_checks(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("robust_dp");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..cases {
        let ns = rng.random_range(1..=4);
        let na = rng.random_range(1..=3);
        let hz = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let rho = rng.random_range(0.0..=1.0);
        let mdp = random_simplex_mdp(ns, na, hz, d, derive_seed(&[seed, c as u64]))?.with_uniform_rho(rho);
        t.record(mdp.validate().is_ok(), || {
            format!("case {c}: generated instance invalid")
        });
        let opt = robust_value_iteration(&mdp);
        let policy = PolicyTable(
            (0..hz)
                .map(|_| (0..ns).map(|_| rng.random_range(0..na)).collect())
                .collect(),
        );
        let eval = robust_policy_evaluation(&mdp, &policy, None)?;
        let dominated = (0..hz).all(|h| (0..ns).all(|s| eval.v.get(h, s) <= opt.v.get(h, s) + 1e-10));
        t.record(dominated, || {
            format!("case {c}: a policy beats the optimal value")
        });
        if rho > 0.0 {
            let mut within = true;
            for h in 0..hz {
                let bound = range_shrinkage_bound(rho, hz, h + 1)?;
                let (lo, hi) = opt.v.0[h]
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
                within &= hi - lo <= bound + 1e-9;
            }
            t.record(within, || {
                format!("case {c}: value range exceeds the shrinkage bound")
            });
        }
    }
    Ok(t.done())
}

/// Closed-form optimal value of the hard family against exact DP.
fn hard_checks(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("hard_instance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..cases {
        let d = rng.random_range(1..=4);
        let hz = rng.random_range(1..=4);
        let rho = rng.random_range(0.0..=0.75);
        let p = HardInstanceParams::new(d, hz, rho)
            .with_delta(0.5)
            .with_random_xi(derive_seed(&[seed, c as u64]));
        let (mdp, _) = build_hard_instance(&p)?;
        let dp = robust_value_iteration(&mdp).v.get(0, 0);
        let closed = hard_instance_optimal_value(&p)?;
        t.record((dp - closed).abs() < 1e-10, || {
            format!("case {c}: DP {dp} vs closed form {closed}")
        });
    }
    Ok(t.done())
}

/// Instance and dataset files survive a round trip unchanged.
fn io_checks(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("io_roundtrip");
    for c in 0..cases {
        let s = derive_seed(&[seed, c as u64]);
        let mdp = random_simplex_mdp(3, 2, 3, 2, s)?.with_uniform_rho(0.3);
        let back = instance_from_json(&instance_to_json(&mdp)?)?;
        t.record(back == mdp, || format!("case {c}: instance changed"));
        let pi = StochasticPolicy::uniform(3, 3, 2);
        let data = collect_offline_dataset(&mdp, &pi, 5, s)?;
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf)?;
        let again = read_dataset(buf.as_slice())?;
        t.record(again == data, || format!("case {c}: dataset changed"));
    }
    Ok(t.done())
}

/// Outputs are clipped to `[0, H − h]`, the policy is greedy, and DRPVI
/// weights respect their norm bound.
fn algorithm_checks(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("algorithms");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..cases {
        let s = derive_seed(&[seed, c as u64]);
        let hz = rng.random_range(1..=3);
        let mdp = random_simplex_mdp(3, 2, hz, 2, s)?.with_uniform_rho(rng.random_range(0.0..=1.0));
        let spec = ModelSpec::from_mdp(&mdp);
        let data = collect_offline_dataset(&mdp, &StochasticPolicy::uniform(hz, 3, 2), 40, s)?;
        let (main, prime) = data.split_alternating();
        for kind in AlgorithmKind::ALL {
            let cfg = AlgoConfig::manual(rng.random_range(0.0..1.0));
            let out = run_algorithm(
                kind,
                &main,
                kind.is_variance_aware().then_some(&prime),
                &spec,
                &cfg,
            )?;
            let mut ok = kind.is_variance_aware() || out.weight_bound_ok;
            for h in 0..hz {
                let cap = (hz - h) as f64;
                for st in 0..3 {
                    let q = &out.q_hat.0[h][st];
                    ok &= q.iter().all(|&x| (0.0..=cap).contains(&x));
                    let best = q.iter().copied().fold(f64::MIN, f64::max);
                    ok &= q[out.policy.action(h, st)] == best && out.v_hat.get(h, st) == best;
                }
            }
            t.record(ok, || format!("case {c}: {kind} output violates an invariant"));
        }
    }
    Ok(t.done())
}

/// Runs every suite with `cases` random cases each.
pub fn run_checks(seed: u64, cases: usize) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        tv_checks(derive_seed(&[seed, 1]), cases)?,
        dp_checks(derive_seed(&[seed, 2]), cases)?,
        hard_checks(derive_seed(&[seed, 3]), cases)?,
        io_checks(derive_seed(&[seed, 4]), cases.min(20))?,
        algorithm_checks(derive_seed(&[seed, 5]), cases.min(20))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for o in run_checks(7, 15).unwrap() {
            assert!(o.passed(), "{}: {:?}", o.name, o.detail);
            assert!(o.cases > 0);
        }
    }
}
