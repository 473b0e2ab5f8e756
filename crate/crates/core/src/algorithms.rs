//! DRPVI, VA-DRPVI and the modified VA-DRPVI.
//!
//! All three run the same backward pass. At step `h` they regress the
//! truncated next-step values `[V̂_{h+1}]_α` on the features for a set of
//! candidate thresholds `α`, pick the best `α` per factor through the TV
//! dual, subtract a diagonal pessimism penalty and act greedily.
//! They differ only in how the regression is weighted:
//!
//! * DRPVI: unit weights, ridge `λ = 1` by default.
//! * VA-DRPVI: weights `σ̂²(s, a; α)` estimated on an independent dataset,
//!   so the covariance depends on `α`; candidates are the value breakpoints
//!   plus a uniform grid on `[0, H]`.
//! * Modified VA-DRPVI: `α`-free weights `σ̂²(s, a)`, one covariance per step
//!   and exact breakpoint search.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{
    build_covariance, estimate_reward_params, estimate_variance_with, slice_rows, weighted_moment,
    CovarianceMatrix, VarianceEstimate,
};
use crate::mdp::{
    argmax_first, FeatureMap, OfflineDataset, PolicyTable, QTable, TabularLinearDRMDP, Transition, ValueTable,
};
use crate::robust_dp::min_eigenvalue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Drpvi,
    VaDrpvi,
    ModifiedVaDrpvi,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 3] = [Self::Drpvi, Self::VaDrpvi, Self::ModifiedVaDrpvi];

    /// Short name used in configs and CSV files.
    pub fn name(self) -> &'static str {
        match self {
            Self::Drpvi => "drpvi",
            Self::VaDrpvi => "va",
            Self::ModifiedVaDrpvi => "modified_va",
        }
    }

    /// Stable numeric id.
    pub fn id(self) -> u64 {
        match self {
            Self::Drpvi => 1,
            Self::VaDrpvi => 2,
            Self::ModifiedVaDrpvi => 3,
        }
    }

    pub fn is_variance_aware(self) -> bool {
        !matches!(self, Self::Drpvi)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "drpvi" => Ok(Self::Drpvi),
            "va" | "va_drpvi" => Ok(Self::VaDrpvi),
            "modified_va" | "modified_va_drpvi" => Ok(Self::ModifiedVaDrpvi),
            other => Err(invalid(format!(
                "unknown algorithm '{other}' (expected drpvi, va or modified_va)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    Theory,
    Manual,
}

impl FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "theory" => Ok(Self::Theory),
            "manual" => Ok(Self::Manual),
            other => Err(invalid(format!("unknown beta mode '{other}' (theory or manual)"))),
        }
    }
}

/// Where the reward parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    KnownTheta,
    RidgeEstimated,
    /// Ridge-estimated when the instance has reward noise, known otherwise.
    Auto,
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "known_theta" | "known" => Ok(Self::KnownTheta),
            "ridge_estimated" | "estimated" => Ok(Self::RidgeEstimated),
            "auto" => Ok(Self::Auto),
            other => Err(invalid(format!(
                "unknown reward mode '{other}' (known_theta, ridge_estimated or auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    /// Ridge parameter; `None` means 1 for DRPVI and `1/H²` for the variance-aware variants.
    pub lambda: Option<f64>,
    pub beta_mode: BetaMode,
    /// Pessimism multiplier used in manual mode.
    pub beta: f64,
    /// Constant in the variance-aware theory multiplier `c₂ √d √ι`.
    pub c2: f64,
    pub delta_fail: f64,
    pub alpha_grid_size: usize,
    pub reward_mode: RewardMode,
    /// `c_v` in the variance penalty `c_v d^p H³ √ι / √(K′κ)`.
    pub variance_c: f64,
    /// `p` in the variance penalty.
    pub variance_d_exponent: f64,
    /// Coverage constant for the variance penalty; estimated from `D′` when `None`.
    pub kappa: Option<f64>,
    /// Forces `σ̂² ≡ 1` in the variance-aware variants.
    pub unit_variance: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            beta_mode: BetaMode::Theory,
            beta: 1.0,
            c2: 1.0,
            delta_fail: 0.1,
            alpha_grid_size: 64,
            reward_mode: RewardMode::Auto,
            variance_c: 1.0,
            variance_d_exponent: 1.0,
            kappa: None,
            unit_variance: false,
        }
    }
}

impl AlgoConfig {
    /// Manual mode with the given multiplier.
    pub fn manual(beta: f64) -> Self {
        Self {
            beta_mode: BetaMode::Manual,
            beta,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.c2 >= 0.0 && self.c2.is_finite()) {
            return Err(invalid(format!("c2 must be >= 0, got {}", self.c2)));
        }
        if !(self.delta_fail > 0.0 && self.delta_fail < 1.0) {
            return Err(invalid(format!(
                "delta_fail must lie in (0, 1), got {}",
                self.delta_fail
            )));
        }
        if self.alpha_grid_size < 2 {
            return Err(invalid("alpha_grid_size must be >= 2"));
        }
        if !(self.variance_c >= 0.0 && self.variance_c.is_finite()) {
            return Err(invalid("variance_c must be >= 0"));
        }
        if !self.variance_d_exponent.is_finite() {
            return Err(invalid("variance_d_exponent must be finite"));
        }
        if let Some(k) = self.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(invalid(format!("kappa must be >= 0, got {k}")));
            }
        }
        Ok(())
    }
}

/// What the learner knows about the instance: features, reward parameters
/// and radii, but not the factor measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub features: FeatureMap,
    pub horizon: usize,
    pub reward_params: Vec<Vec<f64>>,
    pub reward_noise_std: f64,
    pub uncertainty_levels: Vec<f64>,
}

impl ModelSpec {
    pub fn from_mdp(mdp: &TabularLinearDRMDP) -> Self {
        Self {
            features: mdp.features.clone(),
            horizon: mdp.horizon,
            reward_params: mdp.reward_params.clone(),
            reward_noise_std: mdp.reward_noise_std,
            uncertainty_levels: mdp.uncertainty_levels.clone(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    fn check(&self, data: &OfflineDataset) -> Result<()> {
        if self.uncertainty_levels.len() != self.horizon || self.reward_params.len() != self.horizon {
            return Err(Error::Shape("model spec does not cover every step".into()));
        }
        data.check_against(self.num_states(), self.num_actions(), self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmOutput {
    pub algorithm: AlgorithmKind,
    pub policy: PolicyTable,
    pub v_hat: ValueTable,
    pub q_hat: QTable,
    /// `[h][s][a]`
    pub penalty: Vec<Vec<Vec<f64>>>,
    /// `[h][i]`: selected truncation level per factor.
    pub alpha: Vec<Vec<f64>>,
    /// `[h][i]`
    pub nu_hat: Vec<Vec<f64>>,
    /// `[h][i]`: `θ_h + ν̂_h` (with `θ̂_h` in place of `θ_h` when rewards are estimated).
    pub weights: Vec<Vec<f64>>,
    /// `[h]`: largest condition number among the covariances used at step `h`.
    pub condition_numbers: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub iota: f64,
    /// Variance penalty subtracted inside `σ̂²`, for the variance-aware variants.
    pub variance_penalty: Option<f64>,
    pub weight_bound: f64,
    pub weight_bound_ok: bool,
    pub num_trajectories: usize,
}

/// `ι = log(2 d H² K / δ)`, floored at 1.
pub fn iota(dim: usize, horizon: usize, k: usize, delta_fail: f64) -> f64 {
    let h = horizon as f64;
    let arg = 2.0 * dim as f64 * h * h * k as f64 / delta_fail;
    arg.ln().max(1.0)
}

/// `4 √d H √ι`.
pub fn theory_beta_drpvi(dim: usize, horizon: usize, iota: f64) -> f64 {
    4.0 * (dim as f64).sqrt() * horizon as f64 * iota.sqrt()
}

/// `c₂ √d √ι`.
pub fn theory_beta_va(dim: usize, iota: f64, c2: f64) -> f64 {
    c2 * (dim as f64).sqrt() * iota.sqrt()
}

fn sorted_unique(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// `{0, H} ∪ {V(s)}`, sorted.
pub fn breakpoints(v_next: &[f64], horizon: usize) -> Vec<f64> {
    let mut c = vec![0.0, horizon as f64];
    c.extend_from_slice(v_next);
    sorted_unique(c)
}

/// Per-factor index of the best candidate (smallest `α` on ties). At `ρ = 0`
/// the largest candidate is taken, which leaves the values untruncated.
fn select_alpha(zs: &[DVector<f64>], cands: &[f64], v_next: &[f64], rho: f64, dim: usize) -> Vec<usize> {
    if rho == 0.0 {
        return vec![cands.len() - 1; dim];
    }
    let vmin = v_next.iter().copied().fold(f64::INFINITY, f64::min);
    (0..dim)
        .map(|i| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (j, (&alpha, z)) in cands.iter().zip(zs).enumerate() {
                let val = z[i] - rho * (alpha - vmin.min(alpha));
                if val > best_val {
                    best_val = val;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `ν̂_i = max_α ẑ_i(α) − ρ (α − min_s [V(s)]_α)` over `candidates`.
///
/// Returns `(ν̂, α*)`; `α*_i` is the smallest maximizer.
pub fn compute_nu_hat(
    mut z_of_alpha: impl FnMut(f64) -> Vec<f64>,
    v_next: &[f64],
    rho: f64,
    candidates: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(invalid("candidate set for alpha is empty"));
    }
    if candidates.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(invalid("alpha candidates must be finite and >= 0"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!("rho {rho} outside [0, 1]")));
    }
    let cands = sorted_unique(candidates.to_vec());
    let zs: Vec<DVector<f64>> = cands.iter().map(|&a| DVector::from_vec(z_of_alpha(a))).collect();
    let dim = zs[0].len();
    if zs.iter().any(|z| z.len() != dim) {
        return Err(Error::Shape("z(alpha) changed length across candidates".into()));
    }
    let picks = select_alpha(&zs, &cands, v_next, rho, dim);
    let vmin = v_next.iter().copied().fold(f64::INFINITY, f64::min);
    let nu = picks
        .iter()
        .enumerate()
        .map(|(i, &j)| zs[j][i] - rho * (cands[j] - vmin.min(cands[j])))
        .collect();
    let alphas = picks.iter().map(|&j| cands[j]).collect();
    Ok((nu, alphas))
}

/// How sample weights are produced at each step.
enum Weighting<'a> {
    Unit,
    AlphaDependent(&'a VarianceStage<'a>),
    AlphaFree(&'a VarianceStage<'a>),
}

/// First-stage values and the `D′` data used for the variance regressions.
struct VarianceStage<'a> {
    data: &'a OfflineDataset,
    v_prime: ValueTable,
    penalty: f64,
    unit: bool,
    lambda: f64,
}

struct StepFit {
    alpha: f64,
    z: DVector<f64>,
    cov: usize,
}

struct Params {
    beta: f64,
    lambda: f64,
    iota: f64,
    variance_penalty: Option<f64>,
}

fn resolve_theta(
    spec: &ModelSpec,
    data: &OfflineDataset,
    cfg: &AlgoConfig,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    let estimate = match cfg.reward_mode {
        RewardMode::KnownTheta => false,
        RewardMode::RidgeEstimated => true,
        RewardMode::Auto => spec.reward_noise_std > 0.0,
    };
    if !estimate {
        return Ok(spec.reward_params.clone());
    }
    (0..spec.horizon)
        .map(|h| {
            let slice: Vec<&Transition> = data.step_slice(h).collect();
            estimate_reward_params(&spec.features, &slice, lambda)
        })
        .collect()
}

fn backward_pass(
    kind: AlgorithmKind,
    spec: &ModelSpec,
    data: &OfflineDataset,
    cfg: &AlgoConfig,
    params: Params,
    weighting: Weighting<'_>,
) -> Result<AlgorithmOutput> {
    let (ns, na, hz, d) = (spec.num_states(), spec.num_actions(), spec.horizon, spec.dim());
    let hf = hz as f64;
    let Params {
        beta,
        lambda,
        iota,
        variance_penalty,
    } = params;
    let theta = resolve_theta(spec, data, cfg, lambda)?;
    let k = data.num_trajectories;
    let weight_bound = 2.0 * hf * (d as f64 * k as f64 / lambda).sqrt();

    let mut v_hat = ValueTable::zeros(hz, ns);
    let mut q_hat = QTable::zeros(hz, ns, na);
    let mut policy = PolicyTable::constant(hz, ns, 0);
    let mut penalty = vec![vec![vec![0.0; na]; ns]; hz];
    let mut alpha_out = vec![Vec::new(); hz];
    let mut nu_out = vec![Vec::new(); hz];
    let mut w_out = vec![Vec::new(); hz];
    let mut cond = vec![0.0; hz];
    let zeros = vec![0.0; ns];

    for h in (0..hz).rev() {
        let v_next: Vec<f64> = if h + 1 < hz {
            v_hat.0[h + 1].clone()
        } else {
            zeros.clone()
        };
        let rho = spec.uncertainty_levels[h];
        let slice: Vec<&Transition> = data.step_slice(h).collect();
        let rows = slice_rows(&spec.features, &slice);
        let exact = breakpoints(&v_next, hz);

        let fit_one = |alpha: f64, cov: &CovarianceMatrix, w: Option<&[f64]>| {
            let targets: Vec<f64> = slice.iter().map(|t| v_next[t.next_state].min(alpha)).collect();
            cov.solve(&weighted_moment(d, &rows, &targets, w))
        };

        let mut covs: Vec<CovarianceMatrix> = Vec::new();
        let mut fits: Vec<StepFit> = Vec::new();
        match &weighting {
            Weighting::Unit => {
                covs.push(build_covariance(d, &rows, lambda, None)?);
                for &a in &exact {
                    fits.push(StepFit {
                        alpha: a,
                        z: fit_one(a, &covs[0], None),
                        cov: 0,
                    });
                }
            }
            Weighting::AlphaFree(stage) => {
                let sigma = stage_variance(stage, spec, h, None)?;
                let w = sigma.sample_weights(&slice);
                covs.push(build_covariance(d, &rows, lambda, Some(&w))?);
                for &a in &exact {
                    fits.push(StepFit {
                        alpha: a,
                        z: fit_one(a, &covs[0], Some(&w)),
                        cov: 0,
                    });
                }
            }
            Weighting::AlphaDependent(stage) => {
                let cands = if stage.unit {
                    exact.clone()
                } else {
                    let n = cfg.alpha_grid_size;
                    let mut c = exact.clone();
                    c.extend((0..n).map(|j| hf * j as f64 / (n - 1) as f64));
                    sorted_unique(c)
                };
                let mut last_weights: Option<Vec<f64>> = None;
                for &a in &cands {
                    let sigma = stage_variance(stage, spec, h, Some(a))?;
                    let w = sigma.sample_weights(&slice);
                    if last_weights.as_ref() != Some(&w) {
                        covs.push(build_covariance(d, &rows, lambda, Some(&w))?);
                        last_weights = Some(w);
                    }
                    let idx = covs.len() - 1;
                    let z = fit_one(a, &covs[idx], last_weights.as_deref());
                    fits.push(StepFit {
                        alpha: a,
                        z,
                        cov: idx,
                    });
                }
            }
        }

        let cands: Vec<f64> = fits.iter().map(|f| f.alpha).collect();
        let zs: Vec<DVector<f64>> = fits.iter().map(|f| f.z.clone()).collect();
        let picks = select_alpha(&zs, &cands, &v_next, rho, d);
        let vmin = v_next.iter().copied().fold(f64::INFINITY, f64::min);
        let mut nu = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut inv_diag = vec![0.0; d];
        let mut used = Vec::new();
        for i in 0..d {
            let fit = &fits[picks[i]];
            nu[i] = fit.z[i] - rho * (fit.alpha - vmin.min(fit.alpha));
            w[i] = theta[h][i] + nu[i];
            inv_diag[i] = covs[fit.cov].inverse_diagonal()[i];
            if !used.contains(&fit.cov) {
                used.push(fit.cov);
            }
        }
        cond[h] = used
            .iter()
            .map(|&c| covs[c].condition_number())
            .fold(f64::NEG_INFINITY, f64::max);

        let cap = (hz - h) as f64;
        for s in 0..ns {
            for a in 0..na {
                let phi = spec.features.phi(s, a);
                let mut mean = 0.0;
                let mut bonus = 0.0;
                for i in 0..d {
                    mean += phi[i] * w[i];
                    bonus += phi[i] * inv_diag[i].sqrt();
                }
                let g = beta * bonus;
                penalty[h][s][a] = g;
                q_hat.0[h][s][a] = (mean - g).clamp(0.0, cap);
            }
            let best = argmax_first(&q_hat.0[h][s]);
            policy.0[h][s] = best;
            v_hat.0[h][s] = q_hat.0[h][s][best];
        }
        alpha_out[h] = picks.iter().map(|&j| fits[j].alpha).collect();
        nu_out[h] = nu;
        w_out[h] = w;
    }

    let weight_bound_ok = k == 0
        || w_out
            .iter()
            .all(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt() <= weight_bound);
    Ok(AlgorithmOutput {
        algorithm: kind,
        policy,
        v_hat,
        q_hat,
        penalty,
        alpha: alpha_out,
        nu_hat: nu_out,
        weights: w_out,
        condition_numbers: cond,
        beta,
        lambda,
        iota,
        variance_penalty,
        weight_bound,
        weight_bound_ok,
        num_trajectories: k,
    })
}

fn stage_variance(
    stage: &VarianceStage<'_>,
    spec: &ModelSpec,
    h: usize,
    alpha: Option<f64>,
) -> Result<VarianceEstimate> {
    if stage.unit {
        return Ok(VarianceEstimate {
            values: vec![vec![1.0; spec.num_actions()]; spec.num_states()],
            penalty: stage.penalty,
        });
    }
    let slice: Vec<&Transition> = stage.data.step_slice(h).collect();
    let rows = slice_rows(&spec.features, &slice);
    let cov = build_covariance(spec.dim(), &rows, stage.lambda, None)?;
    let zeros = vec![0.0; spec.num_states()];
    let v_next = stage.v_prime.step(h + 1).unwrap_or(&zeros);
    estimate_variance_with(
        &cov,
        &spec.features,
        &slice,
        v_next,
        alpha,
        stage.penalty,
        spec.horizon,
    )
}

fn drpvi_params(spec: &ModelSpec, k: usize, cfg: &AlgoConfig) -> Params {
    let iota = iota(spec.dim(), spec.horizon, k, cfg.delta_fail);
    let beta = match cfg.beta_mode {
        BetaMode::Theory => theory_beta_drpvi(spec.dim(), spec.horizon, iota),
        BetaMode::Manual => cfg.beta,
    };
    Params {
        beta,
        lambda: cfg.lambda.unwrap_or(1.0),
        iota,
        variance_penalty: None,
    }
}

/// Distributionally robust pessimistic value iteration.
pub fn drpvi(data: &OfflineDataset, spec: &ModelSpec, cfg: &AlgoConfig) -> Result<AlgorithmOutput> {
    cfg.validate()?;
    spec.check(data)?;
    let params = drpvi_params(spec, data.num_trajectories, cfg);
    backward_pass(AlgorithmKind::Drpvi, spec, data, cfg, params, Weighting::Unit)
}

/// `min_h λ_min(Σ_{τ ∈ D′_h} φφᵀ / K′)`, floored at zero.
pub fn empirical_kappa(data: &OfflineDataset, features: &FeatureMap) -> f64 {
    let k = data.num_trajectories;
    if k == 0 {
        return 0.0;
    }
    let d = features.dim();
    (0..data.horizon)
        .map(|h| {
            let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
            for t in data.step_slice(h) {
                let phi = DVector::from_column_slice(features.phi(t.state, t.action));
                m += &phi * phi.transpose();
            }
            min_eigenvalue(&(m / k as f64))
        })
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// `c_v d^p H³ √ι / √(K′ κ)`; infinite when `K′ κ = 0`.
pub fn variance_penalty(
    dim: usize,
    horizon: usize,
    k_prime: usize,
    kappa: f64,
    iota: f64,
    cfg: &AlgoConfig,
) -> f64 {
    let denom = (k_prime as f64 * kappa).sqrt();
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    let h = horizon as f64;
    cfg.variance_c * (dim as f64).powf(cfg.variance_d_exponent) * h * h * h * iota.sqrt() / denom
}

fn variance_aware(
    kind: AlgorithmKind,
    data: &OfflineDataset,
    data_prime: &OfflineDataset,
    spec: &ModelSpec,
    cfg: &AlgoConfig,
) -> Result<AlgorithmOutput> {
    cfg.validate()?;
    spec.check(data)?;
    spec.check(data_prime)?;
    data.ensure_disjoint(data_prime)?;

    let stage_cfg = AlgoConfig {
        lambda: Some(1.0),
        ..cfg.clone()
    };
    let first = drpvi(data_prime, spec, &stage_cfg)?;

    let (d, hz) = (spec.dim(), spec.horizon);
    let hf = hz as f64;
    let k = data.num_trajectories;
    let iota = iota(d, hz, k, cfg.delta_fail);
    let beta = match cfg.beta_mode {
        BetaMode::Theory => theory_beta_va(d, iota, cfg.c2),
        BetaMode::Manual => cfg.beta,
    };
    let lambda = cfg.lambda.unwrap_or(1.0 / (hf * hf));
    let kappa = cfg
        .kappa
        .unwrap_or_else(|| empirical_kappa(data_prime, &spec.features));
    let iota_prime = iota_for(spec, data_prime, cfg);
    let penalty = variance_penalty(d, hz, data_prime.num_trajectories, kappa, iota_prime, cfg);
    let stage = VarianceStage {
        data: data_prime,
        v_prime: first.v_hat,
        penalty,
        unit: cfg.unit_variance,
        lambda,
    };
    let weighting = match kind {
        AlgorithmKind::VaDrpvi => Weighting::AlphaDependent(&stage),
        AlgorithmKind::ModifiedVaDrpvi => Weighting::AlphaFree(&stage),
        AlgorithmKind::Drpvi => unreachable!("DRPVI has no variance stage"),
    };
    let params = Params {
        beta,
        lambda,
        iota,
        variance_penalty: Some(penalty),
    };
    backward_pass(kind, spec, data, cfg, params, weighting)
}

fn iota_for(spec: &ModelSpec, data: &OfflineDataset, cfg: &AlgoConfig) -> f64 {
    iota(spec.dim(), spec.horizon, data.num_trajectories, cfg.delta_fail)
}

/// Variance-aware DRPVI with `α`-dependent variance weights.
pub fn va_drpvi(
    data: &OfflineDataset,
    data_prime: &OfflineDataset,
    spec: &ModelSpec,
    cfg: &AlgoConfig,
) -> Result<AlgorithmOutput> {
    variance_aware(AlgorithmKind::VaDrpvi, data, data_prime, spec, cfg)
}

/// Variance-aware DRPVI with `α`-free variance weights.
pub fn modified_va_drpvi(
    data: &OfflineDataset,
    data_prime: &OfflineDataset,
    spec: &ModelSpec,
    cfg: &AlgoConfig,
) -> Result<AlgorithmOutput> {
    variance_aware(AlgorithmKind::ModifiedVaDrpvi, data, data_prime, spec, cfg)
}

/// Dispatches on `kind`; variance-aware kinds require `data_prime`.
pub fn run_algorithm(
    kind: AlgorithmKind,
    data: &OfflineDataset,
    data_prime: Option<&OfflineDataset>,
    spec: &ModelSpec,
    cfg: &AlgoConfig,
) -> Result<AlgorithmOutput> {
    match (kind, data_prime) {
        (AlgorithmKind::Drpvi, _) => drpvi(data, spec, cfg),
        (AlgorithmKind::VaDrpvi, Some(p)) => va_drpvi(data, p, spec, cfg),
        (AlgorithmKind::ModifiedVaDrpvi, Some(p)) => modified_va_drpvi(data, p, spec, cfg),
        (_, None) => Err(invalid(format!("{kind} needs a second, independent dataset"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_hard_instance, random_simplex_mdp, HardInstanceParams};
    use crate::mdp::{collect_offline_dataset, StochasticPolicy};
    use crate::robust_dp::robust_value_iteration;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(seed: u64, k: usize, rho: f64) -> (TabularLinearDRMDP, OfflineDataset, OfflineDataset) {
        let mdp = random_simplex_mdp(4, 3, 3, 3, seed)
            .unwrap()
            .with_uniform_rho(rho);
        let behavior = StochasticPolicy::uniform(3, 4, 3);
        let both = collect_offline_dataset(&mdp, &behavior, 2 * k, seed ^ 0xABCD).unwrap();
        let (a, b) = both.split_alternating();
        (mdp, a, b)
    }

    #[test]
    fn nu_hat_zero_rho_takes_largest_alpha() {
        let (nu, alpha) =
            compute_nu_hat(|a| vec![a.min(2.0), -a], &[0.0, 2.0], 0.0, &[0.0, 2.0, 5.0]).unwrap();
        assert_eq!(nu, vec![2.0, -5.0]);
        assert_eq!(alpha, vec![5.0, 5.0]);
    }

    #[test]
    fn nu_hat_rejects_empty_candidates() {
        assert!(compute_nu_hat(|_| vec![0.0], &[0.0], 0.5, &[]).is_err());
    }

    #[test]
    fn nu_hat_two_level_values() {
        // Exact dual of E_μ[min(V, α)] for V ∈ {0, 1}: the maximizer is in {0, 1, H}.
        let mu = [0.3, 0.7];
        let v = [0.0f64, 1.0];
        let z = |a: f64| vec![mu[0] * v[0].min(a) + mu[1] * v[1].min(a)];
        for rho in [0.1, 0.5, 0.9] {
            let (nu, _) = compute_nu_hat(z, &v, rho, &[0.0, 1.0, 3.0]).unwrap();
            let dense: f64 = (0..=30_000)
                .map(|j| {
                    let a = j as f64 * 1e-4;
                    z(a)[0] - rho * (a - 0.0f64.min(a))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((nu[0] - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn nu_hat_breakpoints_match_dense_grid() {
        // ẑ(α) from a real ridge fit is piecewise linear in α with kinks at the values.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid: Vec<f64> = (0..=30_000).map(|j| j as f64 * 1e-4).collect();
        for seed in 0..20 {
            let (mdp, data, _) = random_setup(seed, 30, 0.0);
            let spec = ModelSpec::from_mdp(&mdp);
            // Even seeds put the values on the grid, odd seeds anywhere in [0, 3).
            let v: Vec<f64> = (0..4)
                .map(|_| {
                    if seed % 2 == 0 {
                        grid[rng.random_range(0..30_000)]
                    } else {
                        rng.random_range(0.0..3.0)
                    }
                })
                .collect();
            let rho = rng.random_range(0.05..1.0);
            let slice: Vec<&Transition> = data.step_slice(1).collect();
            let rows = slice_rows(&spec.features, &slice);
            let cov = build_covariance(3, &rows, 1.0, None).unwrap();
            let z = |a: f64| {
                let t: Vec<f64> = slice.iter().map(|t| v[t.next_state].min(a)).collect();
                cov.solve(&weighted_moment(3, &rows, &t, None))
                    .iter()
                    .copied()
                    .collect::<Vec<_>>()
            };
            let (nu, _) = compute_nu_hat(z, &v, rho, &breakpoints(&v, 3)).unwrap();
            let (dense, _) = compute_nu_hat(z, &v, rho, &grid).unwrap();
            for i in 0..3 {
                assert!(nu[i] >= dense[i] - 1e-12);
                let tol = if seed % 2 == 0 { 1e-6 } else { 1e-3 };
                assert!(nu[i] - dense[i] < tol, "{} vs {}", nu[i], dense[i]);
            }
        }
    }

    #[test]
    fn empty_data_single_step() {
        let mdp = random_simplex_mdp(3, 2, 1, 2, 4).unwrap().with_uniform_rho(0.4);
        let spec = ModelSpec::from_mdp(&mdp);
        let data = collect_offline_dataset(&mdp, &StochasticPolicy::uniform(1, 3, 2), 0, 0).unwrap();
        let cfg = AlgoConfig::manual(0.3);
        let out = drpvi(&data, &spec, &cfg).unwrap();
        for s in 0..3 {
            let best = (0..2).map(|a| mdp.mean_reward(0, s, a)).fold(f64::MIN, f64::max);
            // Λ = I, so the penalty is β Σ φ_i = β.
            assert!((out.v_hat.0[0][s] - (best - 0.3).clamp(0.0, 1.0)).abs() < 1e-15);
        }
        assert_eq!(out.alpha[0], vec![0.0, 0.0]);
        assert_eq!(out.nu_hat[0], vec![0.0, 0.0]);
    }

    #[test]
    fn zero_rho_zero_beta_matches_value_iteration() {
        let mdp = random_simplex_mdp(3, 2, 3, 2, 21).unwrap();
        let spec = ModelSpec::from_mdp(&mdp);
        let data = collect_offline_dataset(&mdp, &StochasticPolicy::uniform(3, 3, 2), 40_000, 5).unwrap();
        let out = drpvi(&data, &spec, &AlgoConfig::manual(0.0)).unwrap();
        let exact = robust_value_iteration(&mdp);
        for s in 0..3 {
            assert!((out.v_hat.0[0][s] - exact.v.0[0][s]).abs() < 0.05);
        }
    }

    #[test]
    fn unit_variance_reduces_to_drpvi() {
        for seed in 0..5 {
            let (mdp, data, prime) = random_setup(seed, 40, 0.3);
            let spec = ModelSpec::from_mdp(&mdp);
            let cfg = AlgoConfig {
                unit_variance: true,
                ..AlgoConfig::manual(0.7).with_lambda(0.5)
            };
            let base = drpvi(&data, &spec, &cfg).unwrap();
            for out in [
                va_drpvi(&data, &prime, &spec, &cfg).unwrap(),
                modified_va_drpvi(&data, &prime, &spec, &cfg).unwrap(),
            ] {
                assert_eq!(out.q_hat, base.q_hat);
                assert_eq!(out.v_hat, base.v_hat);
                assert_eq!(out.policy, base.policy);
                assert_eq!(out.alpha, base.alpha);
            }
        }
    }

    #[test]
    fn constant_first_stage_floors_variance() {
        // A huge manual β makes the first stage return V̂′ ≡ 0, so σ̂² ≡ 1 and
        // the modified variant reduces to DRPVI with λ = 1/H².
        let (mdp, data, prime) = random_setup(7, 30, 0.4);
        let spec = ModelSpec::from_mdp(&mdp);
        let cfg = AlgoConfig {
            kappa: Some(1.0),
            variance_c: 0.0,
            ..AlgoConfig::manual(1e6)
        };
        let va = modified_va_drpvi(&data, &prime, &spec, &cfg).unwrap();
        let base = drpvi(&data, &spec, &cfg.clone().with_lambda(1.0 / 9.0)).unwrap();
        assert_eq!(va.q_hat, base.q_hat);
    }

    #[test]
    fn overlapping_datasets_rejected() {
        let (mdp, data, _) = random_setup(1, 10, 0.2);
        let spec = ModelSpec::from_mdp(&mdp);
        let err = va_drpvi(&data, &data, &spec, &AlgoConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OverlappingDatasets(_)));
    }

    #[test]
    fn modified_matches_va_without_truncation() {
        // With ρ = 0 every factor selects α = H, where truncation is inactive;
        // the grid search in VA reaches the same α, so the two variants agree.
        for seed in 0..5 {
            let (mdp, data, prime) = random_setup(seed + 40, 200, 0.0);
            let spec = ModelSpec::from_mdp(&mdp);
            let cfg = AlgoConfig {
                kappa: Some(0.2),
                variance_c: 0.01,
                ..AlgoConfig::manual(0.2)
            };
            let a = va_drpvi(&data, &prime, &spec, &cfg).unwrap();
            let b = modified_va_drpvi(&data, &prime, &spec, &cfg).unwrap();
            assert!(a.alpha.iter().flatten().all(|&x| x == 3.0));
            for h in 0..3 {
                for s in 0..4 {
                    for act in 0..3 {
                        assert!((a.q_hat.0[h][s][act] - b.q_hat.0[h][s][act]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn hard_instance_drpvi_improves_with_data() {
        let params = HardInstanceParams::new(2, 3, 0.5).with_delta(0.5);
        let (mdp, behavior) = build_hard_instance(&params).unwrap();
        let spec = ModelSpec::from_mdp(&mdp);
        let cfg = AlgoConfig::manual(0.5);
        let exact = robust_value_iteration(&mdp);
        let mean_gap = |k: usize| {
            (0..20u64)
                .map(|seed| {
                    let data = collect_offline_dataset(&mdp, &behavior, k, seed * 7 + k as u64).unwrap();
                    let out = drpvi(&data, &spec, &cfg).unwrap();
                    let v = crate::robust_dp::robust_policy_evaluation(&mdp, &out.policy, None).unwrap();
                    exact.v.0[0][0] - v.v.0[0][0]
                })
                .sum::<f64>()
                / 20.0
        };
        assert!(mean_gap(4096) < mean_gap(256));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outputs_are_clipped_and_greedy(seed in 0u64..500, rho in 0.0f64..=1.0, beta in 0.0f64..2.0, k in 0usize..60) {
            let (mdp, data, prime) = random_setup(seed, k, rho);
            let spec = ModelSpec::from_mdp(&mdp);
            let cfg = AlgoConfig { kappa: Some(0.1), alpha_grid_size: 8, ..AlgoConfig::manual(beta) };
            for kind in AlgorithmKind::ALL {
                let out = run_algorithm(kind, &data, Some(&prime), &spec, &cfg).unwrap();
                for h in 0..3 {
                    let cap = (3 - h) as f64;
                    for s in 0..4 {
                        for a in 0..3 {
                            let q = out.q_hat.0[h][s][a];
                            prop_assert!((0.0..=cap).contains(&q));
                        }
                        let best = argmax_first(&out.q_hat.0[h][s]);
                        prop_assert_eq!(out.policy.0[h][s], best);
                        prop_assert_eq!(out.v_hat.0[h][s], out.q_hat.0[h][s][best]);
                    }
                }
                prop_assert!(out.weight_bound_ok || kind.is_variance_aware());
                let again = run_algorithm(kind, &data, Some(&prime), &spec, &cfg).unwrap();
                prop_assert_eq!(&out, &again);
            }
        }
    }
}
