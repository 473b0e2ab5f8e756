//! Flat `key = value` sweep configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys, repeated
//! keys and malformed values are errors that name the offending line.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoConfig, AlgorithmKind};
use crate::error::{invalid, Error, Result};
use crate::instances::HardInstanceParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstanceSource {
    /// JSON instance file.
    File(PathBuf),
    Hard(HardInstanceParams),
    Random {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        feature_dim: usize,
        seed: u64,
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub instance: InstanceSource,
    /// For the hard family: rebuild the instance at every `K` with `δ = d^{3/2}/√(2K)`.
    pub delta_from_k: bool,
    pub k_values: Vec<usize>,
    pub seeds: usize,
    pub algorithms: Vec<AlgorithmKind>,
    pub algo: AlgoConfig,
    pub base_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// DRPVI consumes all `2K` collected trajectories instead of the first half.
    pub drpvi_full_budget: bool,
    pub compute_phi: bool,
    pub plot: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSource::Hard(HardInstanceParams::new(2, 3, 0.5)),
            delta_from_k: false,
            k_values: vec![256, 1024, 4096],
            seeds: 5,
            algorithms: vec![AlgorithmKind::Drpvi],
            algo: AlgoConfig::default(),
            base_seed: 0,
            workers: 0,
            output_dir: PathBuf::from("sweep_out"),
            drpvi_full_budget: true,
            compute_phi: true,
            plot: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(invalid("k_values must not be empty"));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("k_values must be strictly increasing"));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds must be >= 1"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("algorithms must not be empty"));
        }
        let mut seen = self.algorithms.clone();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(invalid("algorithms must not repeat"));
        }
        if self.delta_from_k && !matches!(self.instance, InstanceSource::Hard(_)) {
            return Err(invalid("delta_from_k only applies to instance = hard"));
        }
        if let InstanceSource::Hard(p) = &self.instance {
            p.validate()?;
        }
        self.algo.validate()
    }
}

const KEYS: &[&str] = &[
    "instance",
    "d",
    "horizon",
    "rho",
    "xi_seed",
    "delta_gap",
    "k_for_delta",
    "reward_noise_std",
    "num_states",
    "num_actions",
    "feature_dim",
    "instance_seed",
    "delta_from_k",
    "k_values",
    "seeds",
    "algorithms",
    "base_seed",
    "workers",
    "output_dir",
    "drpvi_full_budget",
    "compute_phi",
    "plot",
    "lambda",
    "beta_mode",
    "beta",
    "c2",
    "delta_fail",
    "alpha_grid_size",
    "reward_mode",
    "variance_c",
    "variance_d_exponent",
    "kappa",
    "unit_variance",
];

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value.parse().map_err(|err| Error::Config {
        line: e.line,
        msg: format!("bad value '{}' for {}: {err}", e.value, e.key),
    })
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line: e.line,
            msg: format!("bad boolean '{}' for {}", e.value, e.key),
        }),
    }
}

fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|err| Error::Config {
                line: e.line,
                msg: format!("bad list item '{s}' for {}: {err}", e.key),
            })
        })
        .collect()
}

/// `k_values` accepts plain numbers and powers of two written `2^n`.
fn parse_k(e: &Entry) -> Result<Vec<usize>> {
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let parsed = match s.strip_prefix("2^") {
                Some(exp) => exp.parse::<u32>().ok().and_then(|n| 1usize.checked_shl(n)),
                None => s.parse().ok(),
            };
            parsed.ok_or_else(|| Error::Config {
                line: e.line,
                msg: format!("bad sample size '{s}'"),
            })
        })
        .collect()
}

/// Parses a configuration file's contents.
pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let mut entries: Vec<Entry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key = value, got '{trimmed}'"),
        })?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config {
                line,
                msg: format!("unknown key '{key}'"),
            });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key '{key}'"),
            });
        }
        entries.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
        });
    }
    let get = |k: &str| entries.iter().find(|e| e.key == k);

    let mut cfg = SweepConfig::default();
    let kind = get("instance").map_or("hard", |e| e.value.as_str());
    let hard_keys = ["d", "xi_seed", "delta_gap", "k_for_delta", "reward_noise_std"];
    let random_keys = ["num_states", "num_actions", "feature_dim", "instance_seed"];
    let foreign: &[&str] = match kind {
        "hard" => &random_keys,
        "random" => &hard_keys,
        _ => &[
            "d",
            "xi_seed",
            "delta_gap",
            "k_for_delta",
            "reward_noise_std",
            "num_states",
            "num_actions",
            "feature_dim",
            "instance_seed",
            "horizon",
            "rho",
        ],
    };
    if let Some(e) = foreign.iter().find_map(|k| get(k)) {
        return Err(Error::Config {
            line: e.line,
            msg: format!("key '{}' does not apply to instance = {kind}", e.key),
        });
    }
    cfg.instance = match kind {
        "hard" => {
            let d = get("d").map(parse_value).transpose()?.unwrap_or(2);
            let horizon = get("horizon").map(parse_value).transpose()?.unwrap_or(3);
            let rho = get("rho").map(parse_value).transpose()?.unwrap_or(0.5);
            let mut p = HardInstanceParams::new(d, horizon, rho);
            if let Some(e) = get("xi_seed") {
                p = p.with_random_xi(parse_value(e)?);
            }
            if let Some(e) = get("k_for_delta") {
                p = p.with_k_for_delta(parse_value(e)?);
            }
            if let Some(e) = get("delta_gap") {
                p = p.with_delta(parse_value(e)?);
            }
            if let Some(e) = get("reward_noise_std") {
                p = p.with_noise(parse_value(e)?);
            }
            InstanceSource::Hard(p)
        }
        "random" => InstanceSource::Random {
            num_states: get("num_states").map(parse_value).transpose()?.unwrap_or(5),
            num_actions: get("num_actions").map(parse_value).transpose()?.unwrap_or(3),
            horizon: get("horizon").map(parse_value).transpose()?.unwrap_or(3),
            feature_dim: get("feature_dim").map(parse_value).transpose()?.unwrap_or(3),
            seed: get("instance_seed").map(parse_value).transpose()?.unwrap_or(0),
            rho: get("rho").map(parse_value).transpose()?.unwrap_or(0.3),
        },
        path => InstanceSource::File(PathBuf::from(path)),
    };

    for e in &entries {
        match e.key.as_str() {
            "delta_from_k" => cfg.delta_from_k = parse_bool(e)?,
            "k_values" => cfg.k_values = parse_k(e)?,
            "seeds" => cfg.seeds = parse_value(e)?,
            "algorithms" => cfg.algorithms = parse_list(e)?,
            "base_seed" => cfg.base_seed = parse_value(e)?,
            "workers" => cfg.workers = parse_value(e)?,
            "output_dir" => cfg.output_dir = PathBuf::from(&e.value),
            "drpvi_full_budget" => cfg.drpvi_full_budget = parse_bool(e)?,
            "compute_phi" => cfg.compute_phi = parse_bool(e)?,
            "plot" => cfg.plot = parse_bool(e)?,
            "lambda" => cfg.algo.lambda = Some(parse_value(e)?),
            "beta_mode" => cfg.algo.beta_mode = parse_value(e)?,
            "beta" => cfg.algo.beta = parse_value(e)?,
            "c2" => cfg.algo.c2 = parse_value(e)?,
            "delta_fail" => cfg.algo.delta_fail = parse_value(e)?,
            "alpha_grid_size" => cfg.algo.alpha_grid_size = parse_value(e)?,
            "reward_mode" => cfg.algo.reward_mode = parse_value(e)?,
            "variance_c" => cfg.algo.variance_c = parse_value(e)?,
            "variance_d_exponent" => cfg.algo.variance_d_exponent = parse_value(e)?,
            "kappa" => cfg.algo.kappa = Some(parse_value(e)?),
            "unit_variance" => cfg.algo.unit_variance = parse_bool(e)?,
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<std::path::Path>) -> Result<SweepConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
