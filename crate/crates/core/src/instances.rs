//! Benchmark instances: the two-state hard family and random simplex-feature MDPs.
//!
//! Hard family layout: state 0 is `x₁`, state 1 is `x₂`. Action index `a`
//! encodes the bit vector `(a₁, …, a_d)` with `a_i = (a >> i) & 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{FeatureMap, HardInstanceMeta, StochasticPolicy, TabularLinearDRMDP};
use crate::seed::derive_seed;

/// Largest supported boolean dimension (the action set has `2^d` elements).
pub const MAX_HARD_D: usize = 12;

/// Default sample budget used to size the reward gap.
pub const DEFAULT_K_FOR_DELTA: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    pub d: usize,
    pub horizon: usize,
    pub rho: f64,
    /// `[h][i] ∈ {−1, +1}`.
    pub xi: Vec<Vec<i8>>,
    pub k_for_delta: usize,
    /// Overrides `d^{3/2} / √(2 K_for_delta)` when set.
    pub delta_gap: Option<f64>,
    pub reward_noise_std: f64,
}

impl HardInstanceParams {
    /// `ξ ≡ +1`, unit reward noise and the default budget for the gap.
    pub fn new(d: usize, horizon: usize, rho: f64) -> Self {
        Self {
            d,
            horizon,
            rho,
            xi: vec![vec![1; d]; horizon],
            k_for_delta: DEFAULT_K_FOR_DELTA,
            delta_gap: None,
            reward_noise_std: 1.0,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta_gap = Some(delta);
        self
    }

    pub fn with_k_for_delta(mut self, k: usize) -> Self {
        self.k_for_delta = k;
        self.delta_gap = None;
        self
    }

    pub fn with_xi(mut self, xi: Vec<Vec<i8>>) -> Self {
        self.xi = xi;
        self
    }

    /// Independent fair signs drawn from `seed`.
    pub fn with_random_xi(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5157]));
        let coin = Uniform::new(0u8, 2).expect("nonempty range");
        self.xi = (0..self.horizon)
            .map(|_| {
                (0..self.d)
                    .map(|_| if coin.sample(&mut rng) == 1 { 1 } else { -1 })
                    .collect()
            })
            .collect();
        self
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.reward_noise_std = std;
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta_gap.unwrap_or_else(|| {
            let d = self.d as f64;
            d.powf(1.5) / (2.0 * self.k_for_delta as f64).sqrt()
        })
    }

    /// Whether `ρ` lies in the range the lower-bound construction covers.
    pub fn in_lower_bound_regime(&self) -> bool {
        self.rho <= 0.75
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_HARD_D {
            return Err(invalid(format!(
                "hard instance needs 1 <= d <= {MAX_HARD_D}, got {}",
                self.d
            )));
        }
        if self.horizon == 0 {
            return Err(invalid("hard instance needs horizon >= 1"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(invalid(format!(
                "hard instance needs rho in (0, 1], got {}",
                self.rho
            )));
        }
        if self.xi.len() != self.horizon || self.xi.iter().any(|r| r.len() != self.d) {
            return Err(invalid(format!("xi must be {} x {}", self.horizon, self.d)));
        }
        if self.xi.iter().flatten().any(|&x| x != 1 && x != -1) {
            return Err(invalid("xi entries must be -1 or +1"));
        }
        if self.delta_gap.is_none() && self.k_for_delta == 0 {
            return Err(invalid("k_for_delta must be >= 1"));
        }
        let delta = self.delta();
        // The largest mean reward is exactly δ (all bits on, ξ ≡ +1).
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid(format!(
                "reward gap delta = {delta} must lie in (0, 1] to keep mean rewards in [0, 1]"
            )));
        }
        if !(self.reward_noise_std.is_finite() && self.reward_noise_std >= 0.0) {
            return Err(invalid("reward noise std must be finite and >= 0"));
        }
        Ok(())
    }

    /// Action index with bit `i` set exactly when `ξ_{h,i} = +1`.
    pub fn optimal_action(&self, h: usize) -> usize {
        self.xi[h]
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1)
            .map(|(i, _)| 1usize << i)
            .sum()
    }
}

/// Hard instance and its behavior policy (uniform over `{e₁, …, e_d, 0}`).
pub fn build_hard_instance(params: &HardInstanceParams) -> Result<(TabularLinearDRMDP, StochasticPolicy)> {
    params.validate()?;
    let d = params.d;
    let dim = d + 2;
    let na = 1usize << d;
    let df = d as f64;
    let features = FeatureMap::from_fn(2, na, dim, |s, a| {
        let mut phi = vec![0.0; dim];
        if s == 0 {
            let mut ones = 0;
            for (i, p) in phi.iter_mut().enumerate().take(d) {
                if (a >> i) & 1 == 1 {
                    *p = 1.0 / df;
                    ones += 1;
                }
            }
            phi[d] = 1.0 - ones as f64 / df;
        } else {
            phi[d + 1] = 1.0;
        }
        phi
    })?;
    let mut rows = vec![vec![1.0, 0.0]; d + 1];
    rows.push(vec![0.0, 1.0]);
    let delta = params.delta();
    let reward_params = params
        .xi
        .iter()
        .map(|xi_h| {
            let mut theta: Vec<f64> = xi_h.iter().map(|&x| delta * f64::from(x + 1) / 2.0).collect();
            theta.push(delta / 2.0);
            theta.push(0.0);
            theta
        })
        .collect();
    let mut levels = vec![0.0; params.horizon];
    levels[0] = params.rho;
    let mdp = TabularLinearDRMDP {
        num_states: 2,
        num_actions: na,
        horizon: params.horizon,
        feature_dim: dim,
        features,
        factor_measures: vec![rows; params.horizon],
        reward_params,
        reward_noise_std: params.reward_noise_std,
        uncertainty_levels: levels,
        initial_distribution: vec![(df + 1.0) / (df + 2.0), 1.0 / (df + 2.0)],
        metadata: Some(HardInstanceMeta {
            d,
            horizon: params.horizon,
            rho: params.rho,
            xi: params.xi.clone(),
            delta_gap: delta,
        }),
    };
    mdp.validate()?;
    let mut support: Vec<usize> = (0..d).map(|i| 1usize << i).collect();
    support.push(0);
    let behavior = StochasticPolicy::uniform_over(params.horizon, 2, na, &support);
    Ok((mdp, behavior))
}

/// Closed-form optimal robust value at `x₁`.
pub fn hard_instance_optimal_value(params: &HardInstanceParams) -> Result<f64> {
    params.validate()?;
    let df = params.d as f64;
    let step = |h: usize| {
        let plus: f64 = params.xi[h].iter().map(|&x| f64::from(1 + x) / 2.0).sum();
        df + plus
    };
    let tail: f64 = (1..params.horizon).map(step).sum();
    Ok(params.delta() / (2.0 * df) * (step(0) + (1.0 - params.rho) * tail))
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Random instance with flat-Dirichlet features, factor rows and initial
/// distribution, `θ_h ~ U[0,1]^d`, no reward noise and `ρ = 0`.
pub fn random_simplex_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<TabularLinearDRMDP> {
    if num_states == 0 || num_actions == 0 || horizon == 0 || feature_dim == 0 {
        return Err(invalid("random instance dimensions must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = FeatureMap::from_fn(num_states, num_actions, feature_dim, |_, _| {
        dirichlet_row(&mut rng, feature_dim)
    })?;
    let factor_measures = (0..horizon)
        .map(|_| {
            (0..feature_dim)
                .map(|_| dirichlet_row(&mut rng, num_states))
                .collect()
        })
        .collect();
    let unit = Uniform::new_inclusive(0.0, 1.0).expect("valid range");
    let reward_params = (0..horizon)
        .map(|_| (0..feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let initial_distribution = dirichlet_row(&mut rng, num_states);
    let mdp = TabularLinearDRMDP {
        num_states,
        num_actions,
        horizon,
        feature_dim,
        features,
        factor_measures,
        reward_params,
        reward_noise_std: 0.0,
        uncertainty_levels: vec![0.0; horizon],
        initial_distribution,
        metadata: None,
    };
    mdp.validate()?;
    Ok(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{collect_offline_dataset, nominal_kernel, PolicyTable};
    use crate::robust_dp::{
        compute_kappa, feature_second_moments, min_eigenvalue, robust_policy_evaluation_stochastic,
        robust_value_iteration,
    };
    use nalgebra::DMatrix;

    #[test]
    fn hard_instance_structure() {
        for d in 1..=4 {
            let params = HardInstanceParams::new(d, 3, 0.5);
            let (mdp, behavior) = build_hard_instance(&params).unwrap();
            assert_eq!(mdp.feature_dim, d + 2);
            assert_eq!(mdp.num_actions, 1 << d);
            mdp.features.check_simplex().unwrap();
            let df = d as f64;
            assert!((mdp.initial_distribution[0] - (df + 1.0) / (df + 2.0)).abs() < 1e-15);
            for h in 0..3 {
                for a in 0..mdp.num_actions {
                    assert_eq!(mdp.mean_reward(h, 1, a), 0.0);
                    assert_eq!(nominal_kernel(&mdp, h, 1, a).unwrap(), vec![0.0, 1.0]);
                    assert_eq!(nominal_kernel(&mdp, h, 0, a).unwrap(), vec![1.0, 0.0]);
                }
            }
            let support: usize = behavior.probs(0, 0).iter().filter(|&&p| p > 0.0).count();
            assert_eq!(support, d + 1);
            assert_eq!(mdp.uncertainty_levels[0], 0.5);
            assert!(mdp.uncertainty_levels[1..].iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn hard_instance_rejects_bad_params() {
        assert!(build_hard_instance(&HardInstanceParams::new(13, 2, 0.5)).is_err());
        assert!(build_hard_instance(&HardInstanceParams::new(2, 2, 0.0)).is_err());
        assert!(build_hard_instance(&HardInstanceParams::new(2, 2, 0.5).with_delta(1.5)).is_err());
        // d^{3/2}/√(2K) > 1 for a tiny budget.
        assert!(build_hard_instance(&HardInstanceParams::new(4, 2, 0.5).with_k_for_delta(2)).is_err());
        let bad_xi = HardInstanceParams::new(2, 2, 0.5).with_xi(vec![vec![1, 0], vec![1, 1]]);
        assert!(build_hard_instance(&bad_xi).is_err());
        assert!(!HardInstanceParams::new(2, 2, 0.9).in_lower_bound_regime());
    }

    #[test]
    fn closed_form_examples() {
        let p = HardInstanceParams::new(2, 3, 0.5).with_delta(0.1);
        assert!((hard_instance_optimal_value(&p).unwrap() - 0.2).abs() < 1e-15);
        let neg = p.clone().with_xi(vec![vec![-1, -1]; 3]);
        let expected = 0.1 / 2.0 * (1.0 + 0.5 * 2.0);
        assert!((hard_instance_optimal_value(&neg).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_dp() {
        for seed in 0..20u64 {
            let d = 1 + seed as usize % 3;
            let h = [2, 3, 5][seed as usize % 3];
            let rho = [0.1, 0.5, 0.75][(seed as usize / 3) % 3];
            let params = HardInstanceParams::new(d, h, rho)
                .with_delta(0.3)
                .with_random_xi(seed);
            let (mdp, _) = build_hard_instance(&params).unwrap();
            let dp = robust_value_iteration(&mdp);
            let closed = hard_instance_optimal_value(&params).unwrap();
            assert!((dp.v.0[0][0] - closed).abs() < 1e-10);
            for step in 0..h {
                assert_eq!(dp.v.0[step][1], 0.0);
                assert_eq!(dp.policy.action(step, 0), params.optimal_action(step));
            }
        }
    }

    #[test]
    fn uniform_policy_gap() {
        for (d, h, rho) in [(2, 3, 0.5), (3, 4, 0.2), (1, 2, 0.75)] {
            let params = HardInstanceParams::new(d, h, rho)
                .with_delta(0.4)
                .with_random_xi(d as u64);
            let (mdp, _) = build_hard_instance(&params).unwrap();
            let uniform = StochasticPolicy::uniform(h, 2, mdp.num_actions);
            let v = robust_policy_evaluation_stochastic(&mdp, &uniform, None).unwrap();
            let gap = hard_instance_optimal_value(&params).unwrap() - v.v.0[0][0];
            let expected = 0.4 / 4.0 * (1.0 + (1.0 - rho) * (h as f64 - 1.0));
            assert!((gap - expected).abs() < 1e-10);
        }
    }

    /// `(1/(d+2)) [Σ_j φ_j φ_jᵀ + e_{d+1}e_{d+1}ᵀ + e_{d+2}e_{d+2}ᵀ]` with `φ_j = e_j/d + (1 − 1/d) e_{d+1}`.
    fn closed_form_behavior_covariance(d: usize) -> DMatrix<f64> {
        let dim = d + 2;
        let df = d as f64;
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..d {
            let mut phi = nalgebra::DVector::zeros(dim);
            phi[j] = 1.0 / df;
            phi[d] = 1.0 - 1.0 / df;
            m += &phi * phi.transpose();
        }
        m[(d, d)] += 1.0;
        m[(d + 1, d + 1)] += 1.0;
        m / (df + 2.0)
    }

    #[test]
    fn behavior_covariance_and_kappa() {
        for d in 1..=4 {
            let (mdp, behavior) = build_hard_instance(&HardInstanceParams::new(d, 3, 0.5)).unwrap();
            let moments = feature_second_moments(&mdp, &behavior).unwrap();
            let closed = closed_form_behavior_covariance(d);
            for m in &moments {
                assert!((m - &closed).amax() < 1e-12);
            }
            let kappa = compute_kappa(&mdp, &behavior).unwrap();
            assert!(kappa > 0.0);
            assert!((kappa - min_eigenvalue(&closed)).abs() < 1e-12);
        }
    }

    #[test]
    fn behavior_covariance_monte_carlo() {
        let (mdp, behavior) = build_hard_instance(&HardInstanceParams::new(2, 2, 0.5)).unwrap();
        let data = collect_offline_dataset(&mdp, &behavior, 20_000, 4).unwrap();
        let closed = closed_form_behavior_covariance(2);
        let mut emp = DMatrix::zeros(4, 4);
        for t in data.step_slice(1) {
            let phi = nalgebra::DVector::from_column_slice(mdp.phi(t.state, t.action));
            emp += &phi * phi.transpose();
        }
        emp /= 20_000.0;
        assert!((emp - closed).amax() < 0.02);
    }

    #[test]
    fn optimal_policy_is_robust_optimal() {
        let params = HardInstanceParams::new(3, 4, 0.5)
            .with_random_xi(11)
            .with_delta(0.5);
        let (mdp, _) = build_hard_instance(&params).unwrap();
        let pi: Vec<Vec<usize>> = (0..4).map(|h| vec![params.optimal_action(h), 0]).collect();
        let v = crate::robust_dp::robust_policy_evaluation(&mdp, &PolicyTable(pi), None).unwrap();
        assert!((v.v.0[0][0] - hard_instance_optimal_value(&params).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn random_instances_are_valid_and_deterministic() {
        for seed in 0..100 {
            let mdp = random_simplex_mdp(5, 3, 3, 4, seed).unwrap();
            mdp.validate().unwrap();
            assert_eq!(mdp, random_simplex_mdp(5, 3, 3, 4, seed).unwrap());
        }
        assert_ne!(
            random_simplex_mdp(3, 2, 2, 2, 1).unwrap(),
            random_simplex_mdp(3, 2, 2, 2, 2).unwrap()
        );
    }

    #[test]
    fn one_dimensional_features_share_one_kernel() {
        let mdp = random_simplex_mdp(4, 3, 2, 1, 6).unwrap();
        for h in 0..2 {
            let reference = nominal_kernel(&mdp, h, 0, 0).unwrap();
            for s in 0..4 {
                for a in 0..3 {
                    assert_eq!(mdp.phi(s, a), &[1.0]);
                    assert_eq!(nominal_kernel(&mdp, h, s, a).unwrap(), reference);
                }
            }
        }
    }
}
