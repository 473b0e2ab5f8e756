//! The total-variation inner problem `inf_{μ: TV(μ, μ⁰) ≤ ρ} E_μ[V]`.
//!
//! TV is `½‖μ − μ⁰‖₁`, so `ρ` bounds the total mass that may be moved.
//! The infimum equals the one-dimensional dual
//!
//! ```text
//! max_α  E_{μ⁰}[min(V, α)] − ρ (α − min_s min(V(s), α))
//! ```
//!
//! whose objective is piecewise linear in `α` with kinks only at the levels
//! of `V`, so it is maximized exactly by scanning those levels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::check_distribution;

/// Optimal value, smallest maximizing threshold and a distribution attaining the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub value: f64,
    pub alpha_star: f64,
    pub worst_distribution: Vec<f64>,
}

/// Elementwise `min(V, α)`.
pub fn truncate(values: &[f64], alpha: f64) -> Vec<f64> {
    values.iter().map(|&v| v.min(alpha)).collect()
}

/// `min(max(x, lo), hi)`.
pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(invalid(format!("clip bounds reversed: lo={lo} > hi={hi}")));
    }
    Ok(x.max(lo).min(hi))
}

fn check_inputs(mu0: &[f64], values: &[f64], rho: f64) -> Result<()> {
    check_distribution(mu0, "mu0")?;
    if mu0.len() != values.len() {
        return Err(Error::Shape(format!(
            "mu0 has {} entries but values has {}",
            mu0.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values must be finite"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!("rho = {rho} outside [0, 1]")));
    }
    Ok(())
}

/// Smallest index attaining the minimum.
fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Exact dual maximization over the value levels of `V`.
///
/// Returns `(value, alpha_star)`. Inputs are assumed valid.
pub(crate) fn dual_max(mu0: &[f64], values: &[f64], rho: f64) -> (f64, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let v_min = values[order[0]];

    // Walk the levels upward. At level v: E[min(V, v)] = below + v * above_mass,
    // where `below` sums μ·V over states with V ≤ v.
    let mut below = 0.0;
    let mut above_mass: f64 = mu0.iter().sum();
    let mut best = (f64::NEG_INFINITY, v_min);
    let mut idx = 0;
    while idx < order.len() {
        let level = values[order[idx]];
        while idx < order.len() && values[order[idx]] == level {
            let s = order[idx];
            below += mu0[s] * values[s];
            above_mass -= mu0[s];
            idx += 1;
        }
        let objective = below + level * above_mass.max(0.0) - rho * (level - v_min);
        if objective > best.0 {
            best = (objective, level);
        }
    }
    best
}

/// Exact infimum of `E_μ[V]` over the TV ball of radius `rho` around `mu0`.
pub fn tv_dual_inf(mu0: &[f64], values: &[f64], rho: f64) -> Result<DualSolution> {
    check_inputs(mu0, values, rho)?;
    let (value, alpha_star) = dual_max(mu0, values, rho);
    let worst_distribution = greedy_transport(mu0, values, rho);
    Ok(DualSolution {
        value,
        alpha_star,
        worst_distribution,
    })
}

/// Greedy mass transport realizing the infimum: up to `rho` mass leaves the
/// highest-valued states and lands on the argmin (smallest index on ties).
pub fn tv_worst_case_distribution(mu0: &[f64], values: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_inputs(mu0, values, rho)?;
    Ok(greedy_transport(mu0, values, rho))
}

pub(crate) fn greedy_transport(mu0: &[f64], values: &[f64], rho: f64) -> Vec<f64> {
    let sink = argmin_first(values);
    let mut order: Vec<usize> = (0..values.len()).filter(|&s| s != sink).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut out = mu0.to_vec();
    let mut budget = rho;
    for s in order {
        if budget <= 0.0 {
            break;
        }
        let moved = out[s].min(budget);
        out[s] -= moved;
        out[sink] += moved;
        budget -= moved;
    }
    out
}

/// Supremum of `E_μ[V]` over the TV ball, via `C − inf E_μ[C − V]` with `C = max V`.
pub fn tv_dual_sup(mu0: &[f64], values: &[f64], rho: f64) -> Result<f64> {
    check_inputs(mu0, values, rho)?;
    Ok(sup_unchecked(mu0, values, rho))
}

pub(crate) fn sup_unchecked(mu0: &[f64], values: &[f64], rho: f64) -> f64 {
    let c = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flipped: Vec<f64> = values.iter().map(|v| c - v).collect();
    c - dual_max(mu0, &flipped, rho).0
}
