//! Exact robust dynamic programming on tabular d-rectangular linear DRMDPs.
//!
//! Because the uncertainty set is a product of per-factor TV balls that do not
//! depend on `(s, a)`, the inner infimum at step `h` splits into `d`
//! independent TV problems, one per factor measure `μ⁰_{h,i}`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{argmax_first, PolicyTable, QTable, StochasticPolicy, TabularLinearDRMDP, ValueTable};
use crate::tv::{dual_max, greedy_transport, sup_unchecked};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustDPResult {
    pub v: ValueTable,
    pub q: QTable,
    pub policy: PolicyTable,
    /// `[h][i][s']`: worst-case factor measure at step `h`.
    pub worst_factors: Vec<Vec<Vec<f64>>>,
    /// `[h][s][a][s']`: `Σ_i φ_i(s,a) · worst_factors[h][i]`.
    pub worst_kernels: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Per-factor robust expectations `inf_{μ ∈ U(μ⁰_{h,i})} E_μ[V_next]` and the minimizers.
pub(crate) fn factor_infima(
    mdp: &TabularLinearDRMDP,
    h: usize,
    v_next: &[f64],
    rho: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    mdp.factor_measures[h]
        .iter()
        .map(|mu0| {
            let (value, _) = dual_max(mu0, v_next, rho);
            (value, greedy_transport(mu0, v_next, rho))
        })
        .unzip()
}

fn resolve_rho(mdp: &TabularLinearDRMDP, rho_override: Option<&[f64]>) -> Result<Vec<f64>> {
    let levels = match rho_override {
        Some(r) => r.to_vec(),
        None => mdp.uncertainty_levels.clone(),
    };
    if levels.len() != mdp.horizon {
        return Err(Error::Shape(format!(
            "{} uncertainty levels for horizon {}",
            levels.len(),
            mdp.horizon
        )));
    }
    if let Some(r) = levels.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(invalid(format!("uncertainty level {r} outside [0, 1]")));
    }
    Ok(levels)
}

enum Rule<'a> {
    Greedy,
    Deterministic(&'a PolicyTable),
    Stochastic(&'a StochasticPolicy),
}

fn backward(mdp: &TabularLinearDRMDP, rule: Rule<'_>, levels: &[f64]) -> RobustDPResult {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut v = ValueTable::zeros(hz, ns);
    let mut q = QTable::zeros(hz, ns, na);
    let mut policy = PolicyTable::constant(hz, ns, 0);
    let mut worst_factors = vec![Vec::new(); hz];
    let mut worst_kernels = vec![vec![vec![vec![0.0; ns]; na]; ns]; hz];
    let zeros = vec![0.0; ns];

    for h in (0..hz).rev() {
        let v_next = if h + 1 < hz {
            v.0[h + 1].clone()
        } else {
            zeros.clone()
        };
        let (nu, rows) = factor_infima(mdp, h, &v_next, levels[h]);
        for s in 0..ns {
            for a in 0..na {
                let phi = mdp.phi(s, a);
                let inner: f64 = phi.iter().zip(&nu).map(|(p, n)| p * n).sum();
                q.0[h][s][a] = mdp.mean_reward(h, s, a) + inner;
                let kernel = &mut worst_kernels[h][s][a];
                for (w, row) in phi.iter().zip(&rows) {
                    for (k, p) in kernel.iter_mut().zip(row) {
                        *k += w * p;
                    }
                }
            }
            let qs = &q.0[h][s];
            let (a_star, value) = match &rule {
                Rule::Greedy => {
                    let a = argmax_first(qs);
                    (a, qs[a])
                }
                Rule::Deterministic(pi) => {
                    let a = pi.action(h, s);
                    (a, qs[a])
                }
                Rule::Stochastic(pi) => {
                    let p = pi.probs(h, s);
                    (argmax_first(p), p.iter().zip(qs).map(|(w, x)| w * x).sum())
                }
            };
            policy.0[h][s] = a_star;
            v.0[h][s] = value;
        }
        worst_factors[h] = rows;
    }
    RobustDPResult {
        v,
        q,
        policy,
        worst_factors,
        worst_kernels,
    }
}

/// Robust value of a deterministic policy; `rho_override` replaces the instance's radii.
pub fn robust_policy_evaluation(
    mdp: &TabularLinearDRMDP,
    policy: &PolicyTable,
    rho_override: Option<&[f64]>,
) -> Result<RobustDPResult> {
    policy.validate(mdp)?;
    let levels = resolve_rho(mdp, rho_override)?;
    Ok(backward(mdp, Rule::Deterministic(policy), &levels))
}

/// Robust value of a stochastic policy. The returned `policy` field holds the
/// most likely action per state and is informational only.
pub fn robust_policy_evaluation_stochastic(
    mdp: &TabularLinearDRMDP,
    policy: &StochasticPolicy,
    rho_override: Option<&[f64]>,
) -> Result<RobustDPResult> {
    policy.validate(mdp)?;
    let levels = resolve_rho(mdp, rho_override)?;
    Ok(backward(mdp, Rule::Stochastic(policy), &levels))
}

/// Optimal robust values and a greedy optimal policy (smallest action index on ties).
pub fn robust_value_iteration(mdp: &TabularLinearDRMDP) -> RobustDPResult {
    backward(mdp, Rule::Greedy, &mdp.uncertainty_levels)
}

/// Same as [`robust_value_iteration`] under replacement radii.
pub fn robust_value_iteration_with(mdp: &TabularLinearDRMDP, rho_override: &[f64]) -> Result<RobustDPResult> {
    let levels = resolve_rho(mdp, Some(rho_override))?;
    Ok(backward(mdp, Rule::Greedy, &levels))
}

/// Upper bound `(1 − (1 − ρ)^{H−h+1}) / ρ` on `max_s V_h − min_s V_h`.
///
/// `h` is 1-based, so `H − h + 1` is the number of remaining steps.
pub fn range_shrinkage_bound(rho: f64, horizon: usize, h: usize) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!(
            "range shrinkage needs rho in (0, 1], got {rho}; use H - h + 1 at rho = 0"
        )));
    }
    if h == 0 || h > horizon {
        return Err(invalid(format!("step {h} outside 1..={horizon}")));
    }
    let remaining = (horizon - h + 1) as i32;
    Ok((1.0 - (1.0 - rho).powi(remaining)) / rho)
}

fn check_weight_matrix(m: &DMatrix<f64>, d: usize, h: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::Shape(format!(
            "weight matrix {h} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "weight matrix {h} is not symmetric"
        )));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(format!("weight matrix {h}")));
    }
    Ok(())
}

/// Worst-case cumulative diagonal penalty along `policy`:
///
/// `sup_{P ∈ U^ρ(P⁰)} Σ_h E^{π,P}[Σ_i φ_i(s_h,a_h) √(M_h)_{ii} | s_1 = s]`,
///
/// evaluated for every start state `s` by a backward sup-recursion.
pub fn uncertainty_function(
    mdp: &TabularLinearDRMDP,
    policy: &PolicyTable,
    weight_matrices: &[DMatrix<f64>],
) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    if weight_matrices.len() != mdp.horizon {
        return Err(Error::Shape(format!(
            "{} weight matrices for horizon {}",
            weight_matrices.len(),
            mdp.horizon
        )));
    }
    for (h, m) in weight_matrices.iter().enumerate() {
        check_weight_matrix(m, mdp.feature_dim, h)?;
    }
    let ns = mdp.num_states;
    let mut w_next = vec![0.0; ns];
    for h in (0..mdp.horizon).rev() {
        let roots: Vec<f64> = weight_matrices[h].diagonal().iter().map(|x| x.sqrt()).collect();
        let sups: Vec<f64> = mdp.factor_measures[h]
            .iter()
            .map(|mu0| sup_unchecked(mu0, &w_next, mdp.uncertainty_levels[h]))
            .collect();
        let w: Vec<f64> = (0..ns)
            .map(|s| {
                let phi = mdp.phi(s, policy.action(h, s));
                let cost: f64 = phi.iter().zip(&roots).map(|(p, r)| p * r).sum();
                let cont: f64 = phi.iter().zip(&sups).map(|(p, u)| p * u).sum();
                cost + cont
            })
            .collect();
        w_next = w;
    }
    Ok(w_next)
}

/// `[h][s]` state marginals of `policy` started from `init`, with transitions
/// supplied by `kernel(h, s, a, out)`.
pub fn state_occupancy(
    mdp: &TabularLinearDRMDP,
    policy: &StochasticPolicy,
    init: &[f64],
    mut kernel: impl FnMut(usize, usize, usize, &mut [f64]),
) -> Vec<Vec<f64>> {
    let ns = mdp.num_states;
    let mut out = Vec::with_capacity(mdp.horizon);
    let mut current = init.to_vec();
    let mut buf = vec![0.0; ns];
    for h in 0..mdp.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if current[s] == 0.0 {
                continue;
            }
            for (a, &pa) in policy.probs(h, s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                kernel(h, s, a, &mut buf);
                for (n, p) in next.iter_mut().zip(&buf) {
                    *n += current[s] * pa * p;
                }
            }
        }
        out.push(std::mem::replace(&mut current, next));
    }
    out
}

/// `E^{π^b, P⁰}[φ(s_h, a_h) φ(s_h, a_h)ᵀ]` for every step.
pub fn feature_second_moments(
    mdp: &TabularLinearDRMDP,
    behavior: &StochasticPolicy,
) -> Result<Vec<DMatrix<f64>>> {
    behavior.validate(mdp)?;
    let occ = state_occupancy(mdp, behavior, &mdp.initial_distribution, |h, s, a, out| {
        mdp.kernel_into(h, s, a, out)
    });
    let d = mdp.feature_dim;
    Ok(occ
        .iter()
        .enumerate()
        .map(|(h, dist)| {
            let mut m = DMatrix::zeros(d, d);
            for (s, &ps) in dist.iter().enumerate() {
                for (a, &pa) in behavior.probs(h, s).iter().enumerate() {
                    let w = ps * pa;
                    if w == 0.0 {
                        continue;
                    }
                    let phi = mdp.phi(s, a);
                    for i in 0..d {
                        for j in 0..d {
                            m[(i, j)] += w * phi[i] * phi[j];
                        }
                    }
                }
            }
            m
        })
        .collect())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::try_new(m.clone(), 1e-12, 0)
        .expect("symmetric eigensolver does not converge without an iteration cap")
        .eigenvalues
        .min()
}

/// Feature coverage `κ = min_h λ_min(E^{π^b,P⁰}[φφᵀ])`, floored at zero.
pub fn compute_kappa(mdp: &TabularLinearDRMDP, behavior: &StochasticPolicy) -> Result<f64> {
    let moments = feature_second_moments(mdp, behavior)?;
    let kappa = moments.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    Ok(kappa.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_hard_instance, random_simplex_mdp, HardInstanceParams};
    use crate::mdp::test_support::one_hot_chain;
    use crate::mdp::{FeatureMap, StochasticPolicy};
    use crate::tv::tv_dual_inf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Standard (non-robust) finite-horizon value iteration on the nominal kernel.
    fn nominal_vi(mdp: &TabularLinearDRMDP) -> Vec<Vec<f64>> {
        let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
        let mut v = vec![vec![0.0; ns]; hz + 1];
        for h in (0..hz).rev() {
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let p = crate::mdp::nominal_kernel(mdp, h, s, a).unwrap();
                    let q =
                        mdp.mean_reward(h, s, a) + p.iter().zip(&v[h + 1]).map(|(x, y)| x * y).sum::<f64>();
                    best = best.max(q);
                }
                v[h][s] = best;
            }
        }
        v.truncate(hz);
        v
    }

    fn random_policy(mdp: &TabularLinearDRMDP, rng: &mut ChaCha8Rng) -> PolicyTable {
        PolicyTable(
            (0..mdp.horizon)
                .map(|_| {
                    (0..mdp.num_states)
                        .map(|_| rng.random_range(0..mdp.num_actions))
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn reward_one_chain_without_uncertainty() {
        let mdp = one_hot_chain(4, 0);
        let pi = PolicyTable::constant(4, 2, 0);
        let res = robust_policy_evaluation(&mdp, &pi, None).unwrap();
        assert_eq!(res.v.0[0], vec![4.0, 4.0]);
    }

    #[test]
    fn full_radius_matches_vertex_enumeration() {
        // ρ = 1 allows any factor measure, so the infimum over kernels is the
        // minimum over one-hot factor rows. Enumerate them by brute force.
        let mut mdp = random_simplex_mdp(2, 2, 2, 2, 31).unwrap();
        mdp.uncertainty_levels = vec![1.0, 1.0];
        let pi = PolicyTable(vec![vec![0, 1], vec![1, 0]]);
        let res = robust_policy_evaluation(&mdp, &pi, None).unwrap();

        let mut best = [f64::INFINITY; 2];
        // Four factor rows (2 steps x 2 factors), each a vertex of the 2-simplex.
        for code in 0..16u32 {
            let vertex = |h: usize, i: usize| ((code >> (2 * h + i)) & 1) as usize;
            let mut v2 = [0.0; 2];
            for s in 0..2 {
                v2[s] = mdp.mean_reward(1, s, pi.action(1, s));
            }
            for s in 0..2 {
                let a = pi.action(0, s);
                let phi = mdp.phi(s, a);
                let cont: f64 = (0..2).map(|i| phi[i] * v2[vertex(0, i)]).sum();
                let val = mdp.mean_reward(0, s, a) + cont;
                best[s] = best[s].min(val);
            }
        }
        for s in 0..2 {
            assert!((res.v.0[0][s] - best[s]).abs() < 1e-12);
        }
        // Worst kernels are Dirac at the per-step argmin of V_2.
        let argmin = if res.v.0[1][0] <= res.v.0[1][1] { 0 } else { 1 };
        for row in &res.worst_factors[0] {
            assert!((row[argmin] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_instance_values() {
        let params = HardInstanceParams::new(2, 3, 0.5).with_delta(0.1);
        let (mdp, _) = build_hard_instance(&params).unwrap();
        let opt = robust_value_iteration(&mdp);
        assert!((opt.v.0[0][0] - 0.2).abs() < 1e-12);
        for h in 0..3 {
            assert_eq!(opt.v.0[h][1], 0.0);
        }
        let eval = robust_policy_evaluation(&mdp, &opt.policy, None).unwrap();
        assert!((eval.v.0[0][0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_agrees_with_standard_vi() {
        for seed in 0..10 {
            let mdp = random_simplex_mdp(4, 3, 4, 3, seed).unwrap();
            let robust = robust_value_iteration(&mdp);
            let plain = nominal_vi(&mdp);
            for h in 0..4 {
                for s in 0..4 {
                    assert!((robust.v.0[h][s] - plain[h][s]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn greedy_policy_is_a_fixed_point() {
        for seed in 0..10 {
            let mdp = random_simplex_mdp(4, 3, 4, 3, seed)
                .unwrap()
                .with_uniform_rho(0.3);
            let opt = robust_value_iteration(&mdp);
            let eval = robust_policy_evaluation(&mdp, &opt.policy, None).unwrap();
            for h in 0..4 {
                for s in 0..4 {
                    assert!((opt.v.0[h][s] - eval.v.0[h][s]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bellman_consistency() {
        let mdp = random_simplex_mdp(5, 3, 3, 4, 9).unwrap().with_uniform_rho(0.4);
        let res = robust_value_iteration(&mdp);
        for h in 0..3 {
            let v_next = if h + 1 < 3 {
                res.v.0[h + 1].clone()
            } else {
                vec![0.0; 5]
            };
            for s in 0..5 {
                for a in 0..3 {
                    let mut q = mdp.mean_reward(h, s, a);
                    for i in 0..4 {
                        q += mdp.phi(s, a)[i]
                            * tv_dual_inf(&mdp.factor_measures[h][i], &v_next, 0.4)
                                .unwrap()
                                .value;
                    }
                    assert!((res.q.0[h][s][a] - q).abs() < 1e-9);
                    let replay: f64 = res.worst_kernels[h][s][a]
                        .iter()
                        .zip(&v_next)
                        .map(|(p, v)| p * v)
                        .sum();
                    assert!((q - mdp.mean_reward(h, s, a) - replay).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn optimal_value_dominates_every_deterministic_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..50 {
            let na = rng.random_range(1..=4);
            let hz = rng.random_range(1..=3);
            let ns = 2;
            let rho = rng.random_range(0.0..=1.0);
            let mdp = random_simplex_mdp(ns, na, hz, 2, seed)
                .unwrap()
                .with_uniform_rho(rho);
            let opt = robust_value_iteration(&mdp);
            let slots = ns * hz;
            for code in 0..na.pow(slots as u32) {
                let mut c = code;
                let table = (0..hz)
                    .map(|_| {
                        (0..ns)
                            .map(|_| {
                                let a = c % na;
                                c /= na;
                                a
                            })
                            .collect()
                    })
                    .collect();
                let v = robust_policy_evaluation(&mdp, &PolicyTable(table), None).unwrap();
                for s in 0..ns {
                    assert!(opt.v.0[0][s] >= v.v.0[0][s] - 1e-10);
                }
            }
        }
    }

    #[test]
    fn range_shrinkage_examples() {
        assert_eq!(range_shrinkage_bound(1.0, 5, 2).unwrap(), 1.0);
        assert_eq!(range_shrinkage_bound(0.5, 3, 2).unwrap(), 1.5);
        let near_zero = range_shrinkage_bound(1e-9, 10, 3).unwrap();
        assert!((near_zero - 8.0).abs() < 1e-6);
        assert!(range_shrinkage_bound(0.0, 3, 1).is_err());
        assert!(range_shrinkage_bound(0.5, 3, 4).is_err());
    }

    #[test]
    fn range_shrinkage_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for seed in 0..100 {
            let rho = rng.random_range(0.01..=1.0);
            let mdp = random_simplex_mdp(4, 3, 5, 3, seed)
                .unwrap()
                .with_uniform_rho(rho);
            let pi = random_policy(&mdp, &mut rng);
            let res = robust_policy_evaluation(&mdp, &pi, None).unwrap();
            for h in 0..5 {
                let row = &res.v.0[h];
                let spread = row.iter().cloned().fold(f64::MIN, f64::max)
                    - row.iter().cloned().fold(f64::MAX, f64::min);
                assert!(spread <= range_shrinkage_bound(rho, 5, h + 1).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn optimal_value_nonincreasing_in_rho() {
        let base = random_simplex_mdp(4, 3, 4, 3, 17).unwrap();
        let mut prev: Option<RobustDPResult> = None;
        for j in 0..=10 {
            let res = robust_value_iteration(&base.clone().with_uniform_rho(j as f64 / 10.0));
            if let Some(p) = &prev {
                for h in 0..4 {
                    for s in 0..4 {
                        assert!(res.v.0[h][s] <= p.v.0[h][s] + 1e-12);
                    }
                }
            }
            prev = Some(res);
        }
    }

    #[test]
    fn identity_weights_give_horizon() {
        let mdp = random_simplex_mdp(3, 2, 4, 3, 3).unwrap().with_uniform_rho(0.5);
        let pi = PolicyTable::constant(4, 3, 1);
        let eye = vec![DMatrix::identity(3, 3); 4];
        let phi = uncertainty_function(&mdp, &pi, &eye).unwrap();
        for x in phi {
            assert!((x - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_radius_phi_is_nominal_expectation() {
        let mdp = random_simplex_mdp(3, 2, 3, 2, 8).unwrap();
        let pi = PolicyTable(vec![vec![0, 1, 0], vec![1, 1, 0], vec![0, 0, 1]]);
        let mats: Vec<DMatrix<f64>> = (0..3)
            .map(|h| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 + h as f64, 4.0])))
            .collect();
        let got = uncertainty_function(&mdp, &pi, &mats).unwrap();
        // Forward occupancy under the nominal kernel from each start state.
        for s0 in 0..3 {
            let mut init = vec![0.0; 3];
            init[s0] = 1.0;
            let occ = state_occupancy(&mdp, &pi.to_stochastic(2), &init, |h, s, a, out| {
                mdp.kernel_into(h, s, a, out)
            });
            let mut total = 0.0;
            for h in 0..3 {
                for s in 0..3 {
                    let phi = mdp.phi(s, pi.action(h, s));
                    let cost: f64 = (0..2).map(|i| phi[i] * mats[h][(i, i)].sqrt()).sum();
                    total += occ[h][s] * cost;
                }
            }
            assert!((got[s0] - total).abs() < 1e-12);
        }
    }

    #[test]
    fn non_pd_weights_rejected() {
        let mdp = random_simplex_mdp(2, 2, 1, 2, 1).unwrap();
        let pi = PolicyTable::constant(1, 2, 0);
        let bad = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])];
        assert!(matches!(
            uncertainty_function(&mdp, &pi, &bad),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn kappa_examples() {
        // Every feature is e₁: rank-one covariance.
        let features = FeatureMap::from_fn(2, 2, 3, |_, _| vec![1.0, 0.0, 0.0]).unwrap();
        let mut mdp = random_simplex_mdp(2, 2, 2, 3, 0).unwrap();
        mdp.features = features;
        mdp.reward_params = vec![vec![0.5, 0.0, 0.0]; 2];
        let pi = StochasticPolicy::uniform(2, 2, 2);
        assert_eq!(compute_kappa(&mdp, &pi).unwrap(), 0.0);

        // One state, d actions with φ(a) = e_a, uniform behavior: E[φφᵀ] = I/d.
        let d = 4;
        let features = FeatureMap::from_fn(1, d, d, |_, a| {
            let mut e = vec![0.0; d];
            e[a] = 1.0;
            e
        })
        .unwrap();
        let mdp = TabularLinearDRMDP {
            num_states: 1,
            num_actions: d,
            horizon: 2,
            feature_dim: d,
            features,
            factor_measures: vec![vec![vec![1.0]; d]; 2],
            reward_params: vec![vec![0.0; d]; 2],
            reward_noise_std: 0.0,
            uncertainty_levels: vec![0.0; 2],
            initial_distribution: vec![1.0],
            metadata: None,
        };
        let kappa = compute_kappa(&mdp, &StochasticPolicy::uniform(2, 1, d)).unwrap();
        assert!((kappa - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kappa_bounded_by_inverse_dim() {
        for seed in 0..30 {
            let d = 1 + (seed as usize % 5);
            let mdp = random_simplex_mdp(4, 3, 3, d, seed).unwrap();
            let kappa = compute_kappa(&mdp, &StochasticPolicy::uniform(3, 4, 3)).unwrap();
            assert!(kappa <= 1.0 / d as f64 + 1e-12);
        }
    }
}
