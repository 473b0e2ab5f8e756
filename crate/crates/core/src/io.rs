//! On-disk formats.
//!
//! Instances are a single JSON object with `features[s][a][i]`,
//! `factor_measures[h][i][s']`, `reward_params[h][i]`, `uncertainty_levels[h]`
//! and `initial_distribution[s]`, plus an optional `metadata` block for the
//! hard family. Datasets are JSON lines: a header `{"K", "H", "seed",
//! "trajectory_ids"}` followed by one `{"k", "h", "s", "a", "r", "s_next"}`
//! object per transition, with `k` 0-based and `h` 1-based.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    trajectory_id, FeatureMap, HardInstanceMeta, OfflineDataset, TabularLinearDRMDP, Transition,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    features: Vec<Vec<Vec<f64>>>,
    factor_measures: Vec<Vec<Vec<f64>>>,
    reward_params: Vec<Vec<f64>>,
    reward_noise_std: f64,
    uncertainty_levels: Vec<f64>,
    initial_distribution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<HardInstanceMeta>,
}

fn shape_err(path: &str, reason: String) -> Error {
    Error::InvalidInstance {
        path: path.to_string(),
        reason,
    }
}

pub fn instance_to_json(mdp: &TabularLinearDRMDP) -> Result<String> {
    let features = (0..mdp.num_states)
        .map(|s| (0..mdp.num_actions).map(|a| mdp.phi(s, a).to_vec()).collect())
        .collect();
    let file = InstanceFile {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        horizon: mdp.horizon,
        feature_dim: mdp.feature_dim,
        features,
        factor_measures: mdp.factor_measures.clone(),
        reward_params: mdp.reward_params.clone(),
        reward_noise_std: mdp.reward_noise_std,
        uncertainty_levels: mdp.uncertainty_levels.clone(),
        initial_distribution: mdp.initial_distribution.clone(),
        metadata: mdp.metadata.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn instance_from_json(text: &str) -> Result<TabularLinearDRMDP> {
    let file: InstanceFile = serde_json::from_str(text)?;
    let (ns, na, d) = (file.num_states, file.num_actions, file.feature_dim);
    if file.features.len() != ns {
        return Err(shape_err(
            "features",
            format!("has {} states, expected {ns}", file.features.len()),
        ));
    }
    let mut flat = Vec::with_capacity(ns * na * d);
    for (s, per_state) in file.features.iter().enumerate() {
        if per_state.len() != na {
            return Err(shape_err(
                &format!("features[{s}]"),
                format!("has {} actions, expected {na}", per_state.len()),
            ));
        }
        for (a, phi) in per_state.iter().enumerate() {
            if phi.len() != d {
                return Err(shape_err(
                    &format!("features[{s}][{a}]"),
                    format!("has length {}, expected {d}", phi.len()),
                ));
            }
            flat.extend_from_slice(phi);
        }
    }
    let mdp = TabularLinearDRMDP {
        num_states: ns,
        num_actions: na,
        horizon: file.horizon,
        feature_dim: d,
        features: FeatureMap::new(ns, na, d, flat)?,
        factor_measures: file.factor_measures,
        reward_params: file.reward_params,
        reward_noise_std: file.reward_noise_std,
        uncertainty_levels: file.uncertainty_levels,
        initial_distribution: file.initial_distribution,
        metadata: file.metadata,
    };
    mdp.validate()?;
    Ok(mdp)
}

pub fn save_instance(mdp: &TabularLinearDRMDP, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, instance_to_json(mdp)?)?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<TabularLinearDRMDP> {
    instance_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "H")]
    h: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory_ids: Option<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    k: usize,
    h: usize,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
}

pub fn write_dataset(data: &OfflineDataset, out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    let default_ids =
        (0..data.num_trajectories).all(|k| data.trajectory_ids[k] == trajectory_id(data.seed, k));
    let header = Header {
        k: data.num_trajectories,
        h: data.horizon,
        seed: data.seed,
        trajectory_ids: (!default_ids).then(|| data.trajectory_ids.clone()),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &data.transitions {
        let line = Line {
            k: t.trajectory,
            h: t.step + 1,
            s: t.state,
            a: t.action,
            r: t.reward,
            s_next: t.next_state,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(input: impl Read) -> Result<OfflineDataset> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break serde_json::from_str(&line)?;
                }
            }
            None => return Err(Error::InvalidDataset("empty dataset file".into())),
        }
    };
    let mut transitions = Vec::with_capacity(header.k * header.h);
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line =
            serde_json::from_str(&line).map_err(|e| Error::InvalidDataset(format!("line {}: {e}", n + 1)))?;
        if rec.h == 0 || rec.h > header.h {
            return Err(Error::InvalidDataset(format!(
                "line {}: step h={} outside 1..={}",
                n + 1,
                rec.h,
                header.h
            )));
        }
        if rec.k >= header.k {
            return Err(Error::InvalidDataset(format!(
                "line {}: trajectory {} but header declares K={}",
                n + 1,
                rec.k,
                header.k
            )));
        }
        transitions.push(Transition {
            trajectory: rec.k,
            step: rec.h - 1,
            state: rec.s,
            action: rec.a,
            reward: rec.r,
            next_state: rec.s_next,
        });
    }
    let ids = header
        .trajectory_ids
        .unwrap_or_else(|| (0..header.k).map(|k| trajectory_id(header.seed, k)).collect());
    OfflineDataset::from_transitions(header.k, header.h, header.seed, transitions, ids)
}

pub fn save_dataset(data: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    read_dataset(File::open(path)?)
}
