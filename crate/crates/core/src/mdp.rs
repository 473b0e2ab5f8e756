//! Tabular d-rectangular linear DRMDPs, policies, value tables and offline
//! datasets collected under the nominal kernel.
//!
//! Steps are 0-based in memory (`0..horizon`). The on-disk dataset format
//! uses 1-based `h`; see [`crate::io`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::PROB_TOL;

/// Dense feature table `φ(s, a) ∈ R^d`, stored row-major over `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(num_states: usize, num_actions: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions * dim {
            return Err(Error::Shape(format!(
                "feature table has {} entries, expected {}x{}x{}",
                data.len(),
                num_states,
                num_actions,
                dim
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            data,
        })
    }

    /// Builds the table from a closure evaluated at every `(s, a)`.
    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(num_states * num_actions * dim);
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = f(s, a);
                if row.len() != dim {
                    return Err(Error::Shape(format!(
                        "feature ({s},{a}) has length {}, expected {dim}",
                        row.len()
                    )));
                }
                data.extend_from_slice(&row);
            }
        }
        Self::new(num_states, num_actions, dim, data)
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All rows in `(s, a)` order; row `s * num_actions + a`.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Checks `φ_i ≥ 0` and `Σ_i φ_i = 1` at every `(s, a)`.
    pub fn check_simplex(&self) -> Result<()> {
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                check_distribution(self.phi(s, a), &format!("features[{s}][{a}]"))?;
            }
        }
        Ok(())
    }
}

/// Optional provenance recorded with hard-family instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceMeta {
    pub d: usize,
    pub horizon: usize,
    pub rho: f64,
    pub xi: Vec<Vec<i8>>,
    pub delta_gap: f64,
}

/// Finite-horizon linear MDP with factor measures and per-step TV radii.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularLinearDRMDP {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub feature_dim: usize,
    pub features: FeatureMap,
    /// `[h][i][s']`: factor measure `μ⁰_{h,i}`.
    pub factor_measures: Vec<Vec<Vec<f64>>>,
    /// `[h][i]`: reward parameter `θ_h`.
    pub reward_params: Vec<Vec<f64>>,
    pub reward_noise_std: f64,
    /// `[h]`: TV radius `ρ_h ∈ [0, 1]`.
    pub uncertainty_levels: Vec<f64>,
    pub initial_distribution: Vec<f64>,
    pub metadata: Option<HardInstanceMeta>,
}

impl TabularLinearDRMDP {
    /// Validates every structural invariant; errors carry the offending field path.
    pub fn validate(&self) -> Result<()> {
        let (ns, na, hz, d) = (self.num_states, self.num_actions, self.horizon, self.feature_dim);
        if ns == 0 || na == 0 || hz == 0 || d == 0 {
            return Err(inst(
                "dims",
                "num_states, num_actions, horizon, feature_dim must be >= 1",
            ));
        }
        if self.features.num_states() != ns || self.features.num_actions() != na || self.features.dim() != d {
            return Err(inst("features", "shape does not match declared dimensions"));
        }
        self.features.check_simplex()?;

        if self.factor_measures.len() != hz {
            return Err(inst(
                "factor_measures",
                format!("has {} steps, expected {hz}", self.factor_measures.len()),
            ));
        }
        for (h, mat) in self.factor_measures.iter().enumerate() {
            if mat.len() != d {
                return Err(inst(
                    &format!("factor_measures[{h}]"),
                    format!("has {} rows, expected {d}", mat.len()),
                ));
            }
            for (i, row) in mat.iter().enumerate() {
                let path = format!("factor_measures[{h}][{i}]");
                if row.len() != ns {
                    return Err(inst(&path, format!("has {} entries, expected {ns}", row.len())));
                }
                check_distribution(row, &path)?;
            }
        }

        if self.reward_params.len() != hz {
            return Err(inst("reward_params", format!("expected {hz} steps")));
        }
        let norm_cap = (d as f64).sqrt();
        for (h, theta) in self.reward_params.iter().enumerate() {
            let path = format!("reward_params[{h}]");
            if theta.len() != d {
                return Err(inst(&path, format!("has length {}, expected {d}", theta.len())));
            }
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(inst(&path, "non-finite entry"));
            }
            let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > norm_cap + PROB_TOL {
                return Err(inst(&path, format!("norm {norm} exceeds sqrt(d) = {norm_cap}")));
            }
            for s in 0..ns {
                for a in 0..na {
                    let r = dot(self.features.phi(s, a), theta);
                    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&r) {
                        return Err(inst(
                            &path,
                            format!("mean reward {r} at (s={s}, a={a}) outside [0, 1]"),
                        ));
                    }
                }
            }
        }

        if !(self.reward_noise_std.is_finite() && self.reward_noise_std >= 0.0) {
            return Err(inst("reward_noise_std", "must be finite and >= 0"));
        }
        if self.uncertainty_levels.len() != hz {
            return Err(inst("uncertainty_levels", format!("expected {hz} entries")));
        }
        for (h, &rho) in self.uncertainty_levels.iter().enumerate() {
            if !(0.0..=1.0).contains(&rho) {
                return Err(inst(
                    &format!("uncertainty_levels[{h}]"),
                    format!("{rho} outside [0, 1]"),
                ));
            }
        }
        if self.initial_distribution.len() != ns {
            return Err(inst("initial_distribution", format!("expected {ns} entries")));
        }
        check_distribution(&self.initial_distribution, "initial_distribution")?;
        Ok(())
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        self.features.phi(s, a)
    }

    /// Mean reward `⟨φ(s,a), θ_h⟩`.
    #[inline]
    pub fn mean_reward(&self, h: usize, s: usize, a: usize) -> f64 {
        dot(self.phi(s, a), &self.reward_params[h])
    }

    pub fn check_indices(&self, h: usize, s: usize, a: usize) -> Result<()> {
        check_index("step", h, self.horizon)?;
        check_index("state", s, self.num_states)?;
        check_index("action", a, self.num_actions)
    }

    /// Replaces every step's radius with `rho`.
    pub fn with_uniform_rho(mut self, rho: f64) -> Self {
        self.uncertainty_levels = vec![rho; self.horizon];
        self
    }

    /// Nominal kernel written into `out` without index checks.
    pub(crate) fn kernel_into(&self, h: usize, s: usize, a: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (w, row) in self.phi(s, a).iter().zip(&self.factor_measures[h]) {
            if *w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }
}

fn inst(path: &str, reason: impl Into<String>) -> Error {
    Error::InvalidInstance {
        path: path.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index >= bound {
        return Err(Error::IndexOutOfRange { what, index, bound });
    }
    Ok(())
}

/// Nonnegative entries summing to one within [`PROB_TOL`].
pub fn check_distribution(p: &[f64], path: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution {
            path: path.to_string(),
            reason: "empty".into(),
        });
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidDistribution {
            path: path.to_string(),
            reason: format!("entry {x} is negative or non-finite"),
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution {
            path: path.to_string(),
            reason: format!("sums to {total}"),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `P⁰_h(·|s,a) = Σ_i φ_i(s,a) μ⁰_{h,i}(·)`.
pub fn nominal_kernel(mdp: &TabularLinearDRMDP, h: usize, s: usize, a: usize) -> Result<Vec<f64>> {
    mdp.check_indices(h, s, a)?;
    let mut out = vec![0.0; mdp.num_states];
    mdp.kernel_into(h, s, a, &mut out);
    Ok(out)
}

/// Deterministic per-step decision rules, `[h][s] -> action`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable(pub Vec<Vec<usize>>);

impl PolicyTable {
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self(vec![vec![action; num_states]; horizon])
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.0[h][s]
    }

    pub fn validate(&self, mdp: &TabularLinearDRMDP) -> Result<()> {
        if self.0.len() != mdp.horizon {
            return Err(Error::Shape(format!(
                "policy has {} steps, instance has {}",
                self.0.len(),
                mdp.horizon
            )));
        }
        for rule in &self.0 {
            if rule.len() != mdp.num_states {
                return Err(Error::Shape("policy rule does not cover every state".into()));
            }
            for &a in rule {
                check_index("action", a, mdp.num_actions)?;
            }
        }
        Ok(())
    }

    pub fn to_stochastic(&self, num_actions: usize) -> StochasticPolicy {
        StochasticPolicy(
            self.0
                .iter()
                .map(|rule| {
                    rule.iter()
                        .map(|&a| {
                            let mut p = vec![0.0; num_actions];
                            p[a] = 1.0;
                            p
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Per-step action distributions, `[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy(pub Vec<Vec<Vec<f64>>>);

impl StochasticPolicy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = vec![1.0 / num_actions as f64; num_actions];
        Self(vec![vec![p; num_states]; horizon])
    }

    /// Uniform over `support` in every state and step.
    pub fn uniform_over(horizon: usize, num_states: usize, num_actions: usize, support: &[usize]) -> Self {
        let mut p = vec![0.0; num_actions];
        for &a in support {
            p[a] = 1.0 / support.len() as f64;
        }
        Self(vec![vec![p; num_states]; horizon])
    }

    #[inline]
    pub fn probs(&self, h: usize, s: usize) -> &[f64] {
        &self.0[h][s]
    }

    pub fn validate(&self, mdp: &TabularLinearDRMDP) -> Result<()> {
        if self.0.len() != mdp.horizon {
            return Err(Error::Shape(format!(
                "policy has {} steps, instance has {}",
                self.0.len(),
                mdp.horizon
            )));
        }
        for (h, rule) in self.0.iter().enumerate() {
            if rule.len() != mdp.num_states {
                return Err(Error::Shape(format!(
                    "policy step {h} does not cover every state"
                )));
            }
            for (s, p) in rule.iter().enumerate() {
                if p.len() != mdp.num_actions {
                    return Err(Error::Shape(format!(
                        "policy[{h}][{s}] has {} actions, expected {}",
                        p.len(),
                        mdp.num_actions
                    )));
                }
                check_distribution(p, &format!("policy[{h}][{s}]"))?;
            }
        }
        Ok(())
    }
}

/// `[h][s]` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable(pub Vec<Vec<f64>>);

impl ValueTable {
    pub fn zeros(horizon: usize, num_states: usize) -> Self {
        Self(vec![vec![0.0; num_states]; horizon])
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.0[h][s]
    }

    /// `V_{h+1}` as a slice, or `None` past the horizon (where `V ≡ 0`).
    pub fn step(&self, h: usize) -> Option<&[f64]> {
        self.0.get(h).map(Vec::as_slice)
    }

    pub fn horizon(&self) -> usize {
        self.0.len()
    }
}

/// `[h][s][a]` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable(pub Vec<Vec<Vec<f64>>>);

impl QTable {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self(vec![vec![vec![0.0; num_actions]; num_states]; horizon])
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.0[h][s][a]
    }
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One `(k, h, s, a, r, s')` record. `step` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub trajectory: usize,
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// `K` trajectories of length `H`, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub num_trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    /// One provenance id per trajectory; independent collections never share ids.
    pub trajectory_ids: Vec<u64>,
}

impl OfflineDataset {
    /// Sorts transitions into `(k, h)` order and checks every structural invariant.
    pub fn from_transitions(
        num_trajectories: usize,
        horizon: usize,
        seed: u64,
        mut transitions: Vec<Transition>,
        trajectory_ids: Vec<u64>,
    ) -> Result<Self> {
        transitions.sort_by_key(|t| (t.trajectory, t.step));
        let ds = Self {
            num_trajectories,
            horizon,
            seed,
            transitions,
            trajectory_ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, hz) = (self.num_trajectories, self.horizon);
        if hz == 0 {
            return Err(Error::InvalidDataset("horizon must be >= 1".into()));
        }
        if self.trajectory_ids.len() != k {
            return Err(Error::InvalidDataset(format!(
                "{} provenance ids for {k} trajectories",
                self.trajectory_ids.len()
            )));
        }
        if self.transitions.len() != k * hz {
            // Find the first gap to give a useful message.
            for traj in 0..k {
                for h in 0..hz {
                    let present = self
                        .transitions
                        .iter()
                        .any(|t| t.trajectory == traj && t.step == h);
                    if !present {
                        return Err(Error::InvalidDataset(format!(
                            "trajectory {traj} is missing step h={}",
                            h + 1
                        )));
                    }
                }
            }
            return Err(Error::InvalidDataset(format!(
                "expected {} transitions, found {}",
                k * hz,
                self.transitions.len()
            )));
        }
        for (idx, t) in self.transitions.iter().enumerate() {
            let (traj, h) = (idx / hz, idx % hz);
            if t.trajectory != traj || t.step != h {
                return Err(Error::InvalidDataset(format!(
                    "trajectory {traj} is missing step h={} (or has a duplicate)",
                    h + 1
                )));
            }
            if h + 1 < hz {
                let next = &self.transitions[idx + 1];
                if next.state != t.next_state {
                    return Err(Error::InvalidDataset(format!(
                        "trajectory {traj}: next_state at h={} is {} but state at h={} is {}",
                        h + 1,
                        t.next_state,
                        h + 2,
                        next.state
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks state/action indices against an instance.
    pub fn check_against(&self, num_states: usize, num_actions: usize, horizon: usize) -> Result<()> {
        if self.horizon != horizon {
            return Err(Error::Shape(format!(
                "dataset horizon {} does not match instance horizon {horizon}",
                self.horizon
            )));
        }
        for t in &self.transitions {
            check_index("state", t.state, num_states)?;
            check_index("state", t.next_state, num_states)?;
            check_index("action", t.action, num_actions)?;
        }
        Ok(())
    }

    /// All transitions at step `h`, in trajectory order.
    pub fn step_slice(&self, h: usize) -> impl Iterator<Item = &Transition> + '_ {
        self.transitions.iter().skip(h).step_by(self.horizon.max(1))
    }

    /// First `n` trajectories (nested datasets for monotonicity studies).
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.num_trajectories);
        Self {
            num_trajectories: n,
            horizon: self.horizon,
            seed: self.seed,
            transitions: self.transitions[..n * self.horizon].to_vec(),
            trajectory_ids: self.trajectory_ids[..n].to_vec(),
        }
    }

    /// Even trajectories go to the first dataset, odd ones to the second.
    pub fn split_alternating(&self) -> (Self, Self) {
        let mut parts = [self.empty_like(), self.empty_like()];
        for k in 0..self.num_trajectories {
            let part = &mut parts[k % 2];
            let new_k = part.num_trajectories;
            for t in &self.transitions[k * self.horizon..(k + 1) * self.horizon] {
                part.transitions.push(Transition {
                    trajectory: new_k,
                    ..*t
                });
            }
            part.trajectory_ids.push(self.trajectory_ids[k]);
            part.num_trajectories += 1;
        }
        let [a, b] = parts;
        (a, b)
    }

    fn empty_like(&self) -> Self {
        Self {
            num_trajectories: 0,
            horizon: self.horizon,
            seed: self.seed,
            transitions: Vec::new(),
            trajectory_ids: Vec::new(),
        }
    }

    /// Errors on the first provenance id the two datasets share.
    pub fn ensure_disjoint(&self, other: &Self) -> Result<()> {
        let mine: std::collections::HashSet<u64> = self.trajectory_ids.iter().copied().collect();
        match other.trajectory_ids.iter().find(|id| mine.contains(id)) {
            Some(&id) => Err(Error::OverlappingDatasets(id)),
            None => Ok(()),
        }
    }
}

/// Provenance id of trajectory `k` in a collection seeded with `seed`.
pub fn trajectory_id(seed: u64, k: usize) -> u64 {
    derive_seed(&[seed, k as u64])
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Samples `K` trajectories under the nominal kernel and `behavior`.
///
/// A pure function of its arguments: the RNG is seeded from `seed` alone.
pub fn collect_offline_dataset(
    mdp: &TabularLinearDRMDP,
    behavior: &StochasticPolicy,
    num_trajectories: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    behavior.validate(mdp)?;
    let hz = mdp.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(num_trajectories * hz);
    let mut kernel = vec![0.0; mdp.num_states];
    for k in 0..num_trajectories {
        let mut s = sample_categorical(&mut rng, &mdp.initial_distribution);
        for h in 0..hz {
            let a = sample_categorical(&mut rng, behavior.probs(h, s));
            let mut r = mdp.mean_reward(h, s, a);
            if mdp.reward_noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                r += mdp.reward_noise_std * z;
            }
            mdp.kernel_into(h, s, a, &mut kernel);
            let next = sample_categorical(&mut rng, &kernel);
            transitions.push(Transition {
                trajectory: k,
                step: h,
                state: s,
                action: a,
                reward: r,
                next_state: next,
            });
            s = next;
        }
    }
    let ids = (0..num_trajectories).map(|k| trajectory_id(seed, k)).collect();
    Ok(OfflineDataset {
        num_trajectories,
        horizon: hz,
        seed,
        transitions,
        trajectory_ids: ids,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Two states, one action, one-hot features; kernel `h` sends everything to `target`.
    pub fn one_hot_chain(horizon: usize, target: usize) -> TabularLinearDRMDP {
        let features = FeatureMap::new(2, 1, 1, vec![1.0, 1.0]).unwrap();
        let mut row = vec![0.0; 2];
        row[target] = 1.0;
        TabularLinearDRMDP {
            num_states: 2,
            num_actions: 1,
            horizon,
            feature_dim: 1,
            features,
            factor_measures: vec![vec![row]; horizon],
            reward_params: vec![vec![1.0]; horizon],
            reward_noise_std: 0.0,
            uncertainty_levels: vec![0.0; horizon],
            initial_distribution: vec![0.5, 0.5],
            metadata: None,
        }
    }
}
