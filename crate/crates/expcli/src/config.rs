use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use popcomm::lang::GrammarSpec;
use popcomm::population::{comm_rounds_for, EvalEvery, Sigma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 100s+67m and 50s+67m agents, 60 self-play turns each.
    SelfplayReplication,
    /// Same as above with 50% marking: 100s+50m and 50s+50m.
    Selfplay50m,
    /// 50s+50m paired with each of five languages.
    MixedPairs,
    /// 80s+20m vs 20s+20m pairs with and without self-play.
    SelfplayAblation,
    /// Complete-graph groups of increasing size on 50s+50m.
    GroupSize,
    /// 50s+50m pairs for 200 rounds.
    PairsExtended,
}

pub const PRESETS: [Preset; 6] = [
    Preset::SelfplayReplication,
    Preset::Selfplay50m,
    Preset::MixedPairs,
    Preset::SelfplayAblation,
    Preset::GroupSize,
    Preset::PairsExtended,
];

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::SelfplayReplication => "selfplay-replication",
            Preset::Selfplay50m => "selfplay-50m",
            Preset::MixedPairs => "mixed-pairs",
            Preset::SelfplayAblation => "selfplay-ablation",
            Preset::GroupSize => "group-size",
            Preset::PairsExtended => "pairs-extended",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PRESETS
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("scale must be `desk` or `full`, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub scale: Scale,
    /// Groups per condition (agents for self-play presets). Defaults from the scale.
    pub seeds: Option<usize>,
    pub sigma: Option<Sigma>,
    pub rounds: Option<usize>,
    /// Group sizes for the group-size preset.
    pub sizes: Option<Vec<usize>>,
    pub eval: EvalEvery,
    pub out: PathBuf,
    pub threads: usize,
    pub master_seed: u64,
    pub checkpoints: bool,
}

impl ExperimentConfig {
    pub fn new(preset: Preset, scale: Scale, out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            preset,
            scale,
            seeds: None,
            sigma: None,
            rounds: None,
            sizes: None,
            eval: EvalEvery::Turn,
            out: out.into(),
            threads: 1,
            master_seed: 0,
            checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConditionKind {
    /// Independent agents doing only self-play on the replication split.
    SelfPlay { grammar: GrammarSpec, turns: usize },
    /// A complete-graph group; one grammar per agent.
    Group {
        grammars: Vec<GrammarSpec>,
        rounds: usize,
        sigma: Sigma,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub name: String,
    pub kind: ConditionKind,
    pub n_groups: usize,
}

impl Condition {
    pub fn group_size(&self) -> usize {
        match &self.kind {
            ConditionKind::SelfPlay { .. } => 1,
            ConditionKind::Group { grammars, .. } => grammars.len(),
        }
    }

    pub fn grammars(&self) -> Vec<GrammarSpec> {
        match &self.kind {
            ConditionKind::SelfPlay { grammar, .. } => vec![*grammar],
            ConditionKind::Group { grammars, .. } => grammars.clone(),
        }
    }
}

fn g(name: &str) -> GrammarSpec {
    name.parse().expect("preset grammar names are valid")
}

const SELFPLAY_TURNS: usize = 60;

/// Expands a preset into its conditions at the configured scale.
pub fn conditions(cfg: &ExperimentConfig) -> Result<Vec<Condition>> {
    let full = cfg.scale == Scale::Full;
    let sigma = cfg.sigma.unwrap_or(Sigma::Finite(10));
    let pick = |desk: usize, paper: usize| cfg.seeds.unwrap_or(if full { paper } else { desk });
    let selfplay = |names: [&str; 2]| -> Vec<Condition> {
        names
            .iter()
            .map(|n| Condition {
                name: n.to_string(),
                kind: ConditionKind::SelfPlay {
                    grammar: g(n),
                    turns: cfg.rounds.unwrap_or(SELFPLAY_TURNS),
                },
                n_groups: pick(10, 50),
            })
            .collect()
    };
    let pair = |name: String, a: &str, b: &str, rounds: usize, sigma: Sigma, n: usize| Condition {
        name,
        kind: ConditionKind::Group {
            grammars: vec![g(a), g(b)],
            rounds: cfg.rounds.unwrap_or(rounds),
            sigma,
        },
        n_groups: n,
    };
    let conds = match cfg.preset {
        Preset::SelfplayReplication => selfplay(["100s+67m", "50s+67m"]),
        Preset::Selfplay50m => selfplay(["100s+50m", "50s+50m"]),
        Preset::MixedPairs => ["50s+50m", "80s+20m", "20s+20m", "50s+80m", "80s+50m"]
            .iter()
            .map(|other| pair(format!("50s+50m~{other}"), "50s+50m", other, 100, sigma, pick(10, 50)))
            .collect(),
        Preset::SelfplayAblation => {
            let sigmas = match cfg.sigma {
                Some(s) => vec![s],
                None => vec![Sigma::Finite(10), Sigma::Infinite],
            };
            sigmas
                .into_iter()
                .map(|s| pair(format!("sigma={s}"), "80s+20m", "20s+20m", 100, s, pick(10, 20)))
                .collect()
        }
        Preset::GroupSize => {
            let sizes = cfg
                .sizes
                .clone()
                .unwrap_or(if full { vec![2, 4, 8, 20] } else { vec![2, 4, 8] });
            let agents = if full { 200 } else { 40 };
            sizes
                .into_iter()
                .map(|size| {
                    let rounds = comm_rounds_for(size)?;
                    Ok(Condition {
                        name: format!("size={size}"),
                        kind: ConditionKind::Group {
                            grammars: vec![g("50s+50m"); size],
                            rounds: cfg.rounds.unwrap_or(rounds),
                            sigma,
                        },
                        n_groups: cfg.seeds.unwrap_or((agents / size).max(1)),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Preset::PairsExtended => vec![pair(
            "rounds=200".into(),
            "50s+50m",
            "50s+50m",
            200,
            sigma,
            pick(20, 100),
        )],
    };
    if conds.iter().any(|c| c.n_groups == 0) {
        return Err(Error::Config("at least one group per condition is required".into()));
    }
    Ok(conds)
}

pub fn eval_name(e: EvalEvery) -> &'static str {
    match e {
        EvalEvery::Turn => "turn",
        EvalEvery::Round => "round",
    }
}

pub fn parse_eval(s: &str) -> Result<EvalEvery> {
    match s {
        "turn" => Ok(EvalEvery::Turn),
        "round" => Ok(EvalEvery::Round),
        _ => Err(Error::Config(format!("eval must be `turn` or `round`, got {s:?}"))),
    }
}
