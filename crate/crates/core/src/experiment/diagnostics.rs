//! Suboptimality, pessimism, uncertainty-function and coverage diagnostics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmOutput;
use crate::error::{Error, Result};
use crate::estimators::{build_covariance, slice_rows};
use crate::mdp::{OfflineDataset, PolicyTable, StochasticPolicy, TabularLinearDRMDP, Transition};
use crate::robust_dp::{
    robust_policy_evaluation, robust_policy_evaluation_stochastic, robust_value_iteration, state_occupancy,
    uncertainty_function, RobustDPResult,
};

/// `V^{*,ρ}_1(s) − V^{π̂,ρ}_1(s)` for every state.
pub fn evaluate_suboptimality(mdp: &TabularLinearDRMDP, policy: &PolicyTable) -> Result<Vec<f64>> {
    let opt = robust_value_iteration(mdp);
    suboptimality_against(&opt, mdp, policy)
}

/// Same as [`evaluate_suboptimality`] with a precomputed optimum.
pub fn suboptimality_against(
    opt: &RobustDPResult,
    mdp: &TabularLinearDRMDP,
    policy: &PolicyTable,
) -> Result<Vec<f64>> {
    let v = robust_policy_evaluation(mdp, policy, None)?;
    Ok(opt.v.0[0].iter().zip(&v.v.0[0]).map(|(a, b)| a - b).collect())
}

pub fn evaluate_suboptimality_stochastic(
    mdp: &TabularLinearDRMDP,
    policy: &StochasticPolicy,
) -> Result<Vec<f64>> {
    let opt = robust_value_iteration(mdp);
    let v = robust_policy_evaluation_stochastic(mdp, policy, None)?;
    Ok(opt.v.0[0].iter().zip(&v.v.0[0]).map(|(a, b)| a - b).collect())
}

/// `Σ_s μ₀(s) x(s)`.
pub fn initial_weighted(mdp: &TabularLinearDRMDP, per_state: &[f64]) -> f64 {
    mdp.initial_distribution
        .iter()
        .zip(per_state)
        .map(|(p, x)| p * x)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PessimismReport {
    /// `max_{h,s} V̂_h(s) − V^{*,ρ}_h(s)`.
    pub max_excess: f64,
    /// `(h, s)` attaining the maximum, `h` 0-based.
    pub worst_at: (usize, usize),
    pub violated: bool,
}

pub const PESSIMISM_TOL: f64 = 1e-9;

pub fn check_pessimism(output: &AlgorithmOutput, exact: &RobustDPResult) -> Result<PessimismReport> {
    let (vh, vs) = (&output.v_hat.0, &exact.v.0);
    if vh.len() != vs.len() || vh.iter().zip(vs).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape(
            "estimated and exact value tables differ in shape".into(),
        ));
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_at = (0, 0);
    for (h, (row_hat, row)) in vh.iter().zip(vs).enumerate() {
        for (s, (a, b)) in row_hat.iter().zip(row).enumerate() {
            if a - b > max_excess {
                max_excess = a - b;
                worst_at = (h, s);
            }
        }
    }
    Ok(PessimismReport {
        max_excess,
        worst_at,
        violated: max_excess > PESSIMISM_TOL,
    })
}

/// Covariance used to weight the uncertainty function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiWeights {
    /// `Λ_h = Σ φφᵀ + λI`.
    Lambda,
    /// `Σ*_h = Σ φφᵀ / 𝕍_h V*_{h+1} + λI` with `𝕍 = max{1, Var_{P⁰}}`.
    SigmaStar,
}

/// `max{1, Var_{P⁰_h(·|s,a)}(V*_{h+1})}` for every `(s, a)`.
pub fn truncated_variances(mdp: &TabularLinearDRMDP, opt: &RobustDPResult, h: usize) -> Vec<Vec<f64>> {
    let zeros = vec![0.0; mdp.num_states];
    let v_next = opt.v.step(h + 1).unwrap_or(&zeros);
    let mut kernel = vec![0.0; mdp.num_states];
    (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| {
                    mdp.kernel_into(h, s, a, &mut kernel);
                    let m1: f64 = kernel.iter().zip(v_next).map(|(p, v)| p * v).sum();
                    let m2: f64 = kernel.iter().zip(v_next).map(|(p, v)| p * v * v).sum();
                    (m2 - m1 * m1).max(1.0)
                })
                .collect()
        })
        .collect()
}

/// Per-step covariance matrices built from `data`.
pub fn step_covariances(
    mdp: &TabularLinearDRMDP,
    data: &OfflineDataset,
    which: PhiWeights,
    lambda: f64,
) -> Result<Vec<DMatrix<f64>>> {
    data.check_against(mdp.num_states, mdp.num_actions, mdp.horizon)?;
    let opt = match which {
        PhiWeights::Lambda => None,
        PhiWeights::SigmaStar => Some(robust_value_iteration(mdp)),
    };
    (0..mdp.horizon)
        .map(|h| {
            let slice: Vec<&Transition> = data.step_slice(h).collect();
            let rows = slice_rows(&mdp.features, &slice);
            let weights = opt.as_ref().map(|o| {
                let var = truncated_variances(mdp, o, h);
                slice.iter().map(|t| var[t.state][t.action]).collect::<Vec<_>>()
            });
            Ok(
                build_covariance(mdp.feature_dim, &rows, lambda, weights.as_deref())?
                    .matrix()
                    .clone(),
            )
        })
        .collect()
}

/// `Φ(M⁻¹, s)` for every start state, with `M_h` built from `data`.
pub fn compute_phi_report(
    mdp: &TabularLinearDRMDP,
    data: &OfflineDataset,
    pi_star: &PolicyTable,
    which: PhiWeights,
    lambda: f64,
) -> Result<Vec<f64>> {
    let inverses = step_covariances(mdp, data, which, lambda)?
        .into_iter()
        .map(|m| {
            m.cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::NotPositiveDefinite("step covariance".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    uncertainty_function(mdp, pi_star, &inverses)
}

/// Largest `t ≥ 0` with `A − t e_i e_iᵀ ⪰ 0` for a symmetric PSD `A`:
/// `1 / (e_iᵀ A⁺ e_i)` when `e_i ∈ range(A)`, otherwise 0.
pub fn max_rank_one_step(a: &DMatrix<f64>, i: usize) -> f64 {
    let eig = SymmetricEigen::try_new(a.clone(), 1e-12, 0)
        .expect("symmetric eigensolver does not converge without an iteration cap");
    let scale = eig.eigenvalues.amax().max(1.0);
    let tol = 1e-10 * scale;
    let mut quad = 0.0;
    let mut null_mass = 0.0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let q = eig.eigenvectors[(i, j)];
        if lam > tol {
            quad += q * q / lam;
        } else {
            null_mass += q * q;
        }
    }
    if null_mass > 1e-9 {
        0.0
    } else {
        1.0 / quad
    }
}

/// Largest `c` with `Λ_h ⪰ λI + K c E^{π*,P}[(φ_i 1_i)(φ_i 1_i)ᵀ | s_1 = s]` for all
/// `h`, `i`, start states `s`, and `P` in {nominal kernel, DP worst-case kernel}.
///
/// Returns `+∞` when no constraint binds (for instance `K = 0`).
pub fn check_partial_coverage(
    mdp: &TabularLinearDRMDP,
    data: &OfflineDataset,
    pi_star: &PolicyTable,
) -> Result<f64> {
    pi_star.validate(mdp)?;
    data.check_against(mdp.num_states, mdp.num_actions, mdp.horizon)?;
    let k = data.num_trajectories;
    if k == 0 {
        return Ok(f64::INFINITY);
    }
    let ns = mdp.num_states;
    let d = mdp.feature_dim;
    let opt = robust_value_iteration(mdp);
    let stoch = pi_star.to_stochastic(mdp.num_actions);

    // A_h = Λ_h − λI = Σ φφᵀ.
    let grams: Vec<DMatrix<f64>> = (0..mdp.horizon)
        .map(|h| {
            let mut g = DMatrix::zeros(d, d);
            for t in data.step_slice(h) {
                let phi = nalgebra::DVector::from_column_slice(mdp.phi(t.state, t.action));
                g += &phi * phi.transpose();
            }
            g
        })
        .collect();
    let steps: Vec<Vec<f64>> = grams
        .iter()
        .map(|g| (0..d).map(|i| max_rank_one_step(g, i)).collect())
        .collect();

    let mut c = f64::INFINITY;
    for s0 in 0..ns {
        let mut init = vec![0.0; ns];
        init[s0] = 1.0;
        let nominal = state_occupancy(mdp, &stoch, &init, |h, s, a, out| mdp.kernel_into(h, s, a, out));
        let worst = state_occupancy(mdp, &stoch, &init, |h, s, a, out| {
            out.copy_from_slice(&opt.worst_kernels[h][s][a])
        });
        for occ in [&nominal, &worst] {
            for h in 0..mdp.horizon {
                for i in 0..d {
                    let m: f64 = (0..ns)
                        .map(|s| {
                            let phi = mdp.phi(s, pi_star.action(h, s))[i];
                            occ[h][s] * phi * phi
                        })
                        .sum();
                    if m > 0.0 {
                        c = c.min(steps[h][i] / (k as f64 * m));
                    }
                }
            }
        }
    }
    Ok(c)
}
