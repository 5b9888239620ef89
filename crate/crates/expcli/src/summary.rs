use std::fs;
use std::path::{Path, PathBuf};

use popcomm::metrics::{mean_std, spearman_rho};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::run::{
    read_manifest, read_profiles, read_turns, Manifest, ProfileRow, TurnRow, MANIFEST_FILE, SCHEMA_VERSION,
};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(xs: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Vec<f64> = xs.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(&v);
        Some(Stat { mean, std, n: v.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// Per-group mean interactive success over edges.
    pub acc_inter: Option<Stat>,
    /// Per-agent self-communication success.
    pub acc_self: Option<Stat>,
    pub p_marker: Option<Stat>,
    pub p_sov: Option<Stat>,
    pub order_entropy: Option<Stat>,
    pub mean_length: Option<Stat>,
    /// Spearman ρ(order entropy, marker use), one point per group (pooled).
    pub rho_group: Option<f64>,
    /// Same with one point per agent.
    pub rho_agent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub name: String,
    pub group_size: usize,
    pub n_groups: usize,
    pub sl: StageSummary,
    #[serde(rename = "final")]
    pub last: StageSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: String,
    pub value: Option<f64>,
    pub threshold: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub preset: String,
    pub conditions: Vec<ConditionSummary>,
    pub acceptance: Vec<Check>,
}

impl Summary {
    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

fn stage(name: &str, stage: &str, turns: &[TurnRow], profiles: &[ProfileRow]) -> StageSummary {
    let kind = if stage == "sl" { "sl" } else { "final" };
    let agents: Vec<&ProfileRow> = profiles
        .iter()
        .filter(|p| p.condition == name && p.stage == stage && p.scope == "agent")
        .collect();
    let groups: Vec<&ProfileRow> = profiles
        .iter()
        .filter(|p| p.condition == name && p.stage == stage && p.scope == "group")
        .collect();
    let rho = |rows: &[&ProfileRow]| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|p| Some((p.order_entropy?, p.p_marker?)))
            .unzip();
        spearman_rho(&xs, &ys)
    };
    StageSummary {
        acc_inter: Stat::of(
            turns
                .iter()
                .filter(|t| t.condition == name && t.kind == kind)
                .map(|t| t.acc_inter),
        ),
        acc_self: Stat::of(agents.iter().map(|p| p.acc_self)),
        p_marker: Stat::of(agents.iter().map(|p| p.p_marker)),
        p_sov: Stat::of(agents.iter().map(|p| p.p_sov)),
        order_entropy: Stat::of(agents.iter().map(|p| p.order_entropy)),
        mean_length: Stat::of(agents.iter().map(|p| p.mean_length)),
        rho_group: rho(&groups),
        rho_agent: rho(&agents),
    }
}

fn check(criterion: &str, value: Option<f64>, threshold: &str, pass: impl Fn(f64) -> bool) -> Check {
    Check {
        criterion: criterion.to_string(),
        value,
        threshold: threshold.to_string(),
        pass: value.map(pass).unwrap_or(false),
    }
}

fn final_mean(s: &Summary, cond: &str, f: impl Fn(&StageSummary) -> Option<Stat>) -> Option<f64> {
    s.condition(cond).and_then(|c| f(&c.last)).map(|x| x.mean)
}

/// Directional checks that a preset's desk run can support.
pub fn acceptance(s: &Summary) -> Vec<Check> {
    let mut out = Vec::new();
    match s.preset.as_str() {
        "selfplay-replication" => {
            let fixed = final_mean(s, "100s+67m", |x| x.p_marker);
            let flex = final_mean(s, "50s+67m", |x| x.p_marker);
            let diff = fixed.zip(flex).map(|(a, b)| b - a);
            out.push(check(
                "marker use after self-play: 50s+67m minus 100s+67m",
                diff,
                "> 0",
                |d| d > 0.0,
            ));
        }
        "selfplay-50m" => {
            let gain = s
                .condition("50s+50m")
                .and_then(|c| Some(c.last.acc_self?.mean - c.sl.acc_self?.mean));
            out.push(check("acc_self gain over self-play on 50s+50m", gain, ">= 0.15", |g| {
                g >= 0.15
            }));
        }
        "selfplay-ablation" => {
            let on = final_mean(s, "sigma=10", |x| x.acc_self);
            let off = final_mean(s, "sigma=inf", |x| x.acc_self);
            out.push(check(
                "final acc_self: sigma=10 minus sigma=inf",
                on.zip(off).map(|(a, b)| a - b),
                ">= 0.2",
                |d| d >= 0.2,
            ));
            out.push(check(
                "final acc_inter with sigma=inf",
                final_mean(s, "sigma=inf", |x| x.acc_inter),
                ">= 0.5",
                |v| v >= 0.5,
            ));
        }
        "group-size" => {
            let first = s.conditions.first().and_then(|c| c.last.rho_group);
            let last = s.conditions.last().and_then(|c| c.last.rho_group);
            if s.conditions.len() >= 2 {
                out.push(check(
                    &format!(
                        "group-level rho: {} minus {}",
                        s.conditions.last().map(|c| c.name.as_str()).unwrap_or(""),
                        s.conditions.first().map(|c| c.name.as_str()).unwrap_or("")
                    ),
                    first.zip(last).map(|(a, b)| b - a),
                    "> 0",
                    |d| d > 0.0,
                ));
            }
            for c in &s.conditions {
                out.push(check(
                    &format!("final acc_inter, {}", c.name),
                    c.last.acc_inter.map(|x| x.mean),
                    "in [0.5, 0.9]",
                    |v| (0.5..=0.9).contains(&v),
                ));
            }
        }
        _ => {}
    }
    out
}

/// Aggregates a finished run directory into `summary.json` and returns it.
/// Reads only the CSVs and the manifest, so repeated calls give the same bytes.
pub fn summarize(dir: &Path) -> Result<Summary> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Error::IncompleteRun(dir.to_path_buf(), "no manifest.json".into()));
    }
    let manifest: Manifest = read_manifest(dir)?;
    if !manifest.complete {
        return Err(Error::IncompleteRun(dir.to_path_buf(), "run did not finish".into()));
    }
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::IncompleteRun(
            dir.to_path_buf(),
            format!("schema version {} (expected {SCHEMA_VERSION})", manifest.schema_version),
        ));
    }
    let turns = read_turns(dir)?;
    let profiles = read_profiles(dir)?;
    let mut s = Summary {
        schema_version: SCHEMA_VERSION,
        preset: manifest.preset.clone(),
        conditions: manifest
            .conditions
            .iter()
            .map(|c| ConditionSummary {
                name: c.name.clone(),
                group_size: c.group_size,
                n_groups: c.n_groups,
                sl: stage(&c.name, "sl", &turns, &profiles),
                last: stage(&c.name, "final", &turns, &profiles),
            })
            .collect(),
        acceptance: Vec::new(),
    };
    for c in &s.conditions {
        let n = profiles
            .iter()
            .filter(|p| p.condition == c.name && p.stage == "final" && p.scope == "group")
            .count();
        if n != c.n_groups {
            return Err(Error::IncompleteRun(
                dir.to_path_buf(),
                format!("{}: {n} of {} groups have final profiles", c.name, c.n_groups),
            ));
        }
    }
    s.acceptance = acceptance(&s);
    let path: PathBuf = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&s)?;
    text.push('\n');
    fs::write(&path, text).at(&path)?;
    Ok(s)
}
