//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: sampling a grammar, a stepwise two-agent
//! simulation, and the rank statistics used in the summaries. Results are
//! returned as JSON strings.

use popcomm::agent::Agent;
use popcomm::lang::{
    build_dataset, classify_utterance, generate_utterance, Dataset, GrammarSpec, Meaning, Order, SplitProfile,
};
use popcomm::metrics::{acc_inter, acc_self, order_entropy, production_profile, spearman_rho, PreferenceProfile};
use popcomm::population::{run_round, ConnectivityGraph, Sigma, TraceEvent, TurnRunner};
use popcomm::training::{inter_turn, self_turn, sl_train, RlConfig, SlConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Serialize)]
struct Profile {
    p_sov: Option<f64>,
    p_marker: Option<f64>,
    order_entropy: Option<f64>,
    n_classifiable: usize,
    n_total: usize,
    mean_length: Option<f64>,
}

impl From<PreferenceProfile> for Profile {
    fn from(p: PreferenceProfile) -> Self {
        Profile {
            p_sov: p.p_sov,
            p_marker: p.p_marker,
            order_entropy: p.order_entropy,
            n_classifiable: p.n_classifiable,
            n_total: p.n_total,
            mean_length: p.mean_length,
        }
    }
}

#[derive(Serialize)]
struct Sample {
    meaning: String,
    utterance: String,
    order: &'static str,
    marked: bool,
}

#[derive(Serialize)]
struct LanguageSample {
    grammar: String,
    samples: Vec<Sample>,
    profile: Profile,
}

/// Draws `n` meanings and realizes each under `grammar` (e.g. `"50s+67m"`).
#[wasm_bindgen(js_name = sampleLanguage)]
pub fn sample_language(grammar: &str, seed: u32, n: usize) -> Result<String, JsError> {
    let g: GrammarSpec = grammar.parse().map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let all = popcomm::lang::enumerate_meanings();
    let meanings: Vec<Meaning> = all.choose_multiple(&mut rng, n.min(all.len())).copied().collect();
    let log: Vec<_> = meanings
        .iter()
        .map(|m| (*m, generate_utterance(m, &g, &mut rng)))
        .collect();
    let samples = log
        .iter()
        .map(|(m, u)| {
            let cat = classify_utterance(u, m).expect("grammar output is classifiable");
            Sample {
                meaning: m.to_string(),
                utterance: u.to_string(),
                order: match cat.order {
                    Order::Sov => "SOV",
                    Order::Osv => "OSV",
                },
                marked: cat.marked,
            }
        })
        .collect();
    to_json(&LanguageSample {
        grammar: g.name(),
        samples,
        profile: PreferenceProfile::from_log(&log).into(),
    })
}

#[derive(Serialize)]
struct RankStats {
    rho: Option<f64>,
    entropies: Vec<f64>,
}

/// Spearman ρ between `marker` and the order entropy of each `p_sov`.
#[wasm_bindgen(js_name = rankStats)]
pub fn rank_stats(p_sov: Vec<f64>, marker: Vec<f64>) -> Result<String, JsError> {
    if p_sov.len() != marker.len() {
        return Err(JsError::new("p_sov and marker differ in length"));
    }
    let entropies: Vec<f64> = p_sov.iter().map(|&p| order_entropy(p)).collect();
    to_json(&RankStats {
        rho: spearman_rho(&entropies, &marker),
        entropies,
    })
}

struct Pair {
    agents: [Agent; 2],
    datasets: [Dataset; 2],
    rl: RlConfig,
    rng: ChaCha8Rng,
    self_turns: [usize; 2],
}

impl TurnRunner for Pair {
    fn inter_turn(&mut self, ev: &TraceEvent) -> popcomm::Result<()> {
        let [a, b] = &mut self.agents;
        let (spk, lst) = if ev.speaker == 0 { (a, b) } else { (b, a) };
        inter_turn(spk, lst, &self.datasets[ev.speaker], &self.rl, &mut self.rng).map(|_| ())
    }

    fn self_turn(&mut self, ev: &TraceEvent) -> popcomm::Result<()> {
        self.self_turns[ev.speaker] += 1;
        self_turn(
            &mut self.agents[ev.speaker],
            &self.datasets[ev.speaker],
            &self.rl,
            &mut self.rng,
        )
        .map(|_| ())
    }

    fn activation(&mut self, agent: usize) -> &mut u32 {
        &mut self.agents[agent].activation
    }
}

#[derive(Serialize)]
struct Snapshot {
    round: usize,
    acc_inter: [f64; 2],
    acc_self: [f64; 2],
    self_turns: [usize; 2],
    profiles: [Profile; 2],
    sl_loss: Option<[Vec<f64>; 2]>,
}

/// Two agents trained on (possibly different) grammars, then communicating
/// round by round.
#[wasm_bindgen]
pub struct PairSim {
    pair: Pair,
    graph: ConnectivityGraph,
    sigma: Sigma,
    schedule_rng: ChaCha8Rng,
    round: usize,
    trained: bool,
}

#[wasm_bindgen]
impl PairSim {
    /// `sigma` is a positive integer or `"inf"`.
    #[wasm_bindgen(constructor)]
    pub fn new(grammar_a: &str, grammar_b: &str, seed: u32, sigma: &str) -> Result<PairSim, JsError> {
        let seed = seed as u64;
        let ga: GrammarSpec = grammar_a.parse().map_err(js_err)?;
        let gb: GrammarSpec = grammar_b.parse().map_err(js_err)?;
        let sigma: Sigma = sigma.parse().map_err(js_err)?;
        let da = build_dataset(&ga, seed, SplitProfile::Interactive).map_err(js_err)?;
        let db = build_dataset(&gb, seed, SplitProfile::Interactive).map_err(js_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = [Agent::new(0, &mut rng), Agent::new(1, &mut rng)];
        Ok(PairSim {
            pair: Pair {
                agents,
                datasets: [da, db],
                rl: RlConfig::for_profile(SplitProfile::Interactive),
                rng,
                self_turns: [0, 0],
            },
            graph: ConnectivityGraph::complete(2).map_err(js_err)?,
            sigma,
            schedule_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            round: 0,
            trained: false,
        })
    }

    /// Supervised learning for both agents; returns a snapshot with the
    /// per-epoch losses.
    #[wasm_bindgen(js_name = trainSl)]
    pub fn train_sl(&mut self) -> Result<String, JsError> {
        let cfg = SlConfig::default();
        let mut losses: [Vec<f64>; 2] = Default::default();
        for (k, loss) in losses.iter_mut().enumerate() {
            let rec = sl_train(
                &mut self.pair.agents[k],
                &self.pair.datasets[k],
                &cfg,
                &mut self.pair.rng,
            )
            .map_err(js_err)?;
            *loss = rec.iter().map(|e| e.mean_loss).collect();
        }
        self.trained = true;
        self.snapshot(Some(losses))
    }

    /// One communication round (both directions, plus any self-play due).
    pub fn step(&mut self) -> Result<String, JsError> {
        if !self.trained {
            return Err(JsError::new("call trainSl first"));
        }
        self.round += 1;
        let mut trace = Vec::new();
        run_round(
            &mut self.pair,
            &self.graph,
            self.sigma,
            self.round,
            &mut self.schedule_rng,
            &mut trace,
        )
        .map_err(js_err)?;
        self.snapshot(None)
    }

    /// Greedy utterance of `agent` for a meaning written like `"a3 e1 e4"`.
    pub fn speak(&self, agent: usize, meaning: &str) -> Result<String, JsError> {
        let m: Meaning = meaning.parse().map_err(js_err)?;
        let a = self
            .pair
            .agents
            .get(agent)
            .ok_or_else(|| JsError::new("agent is 0 or 1"))?;
        Ok(a.speak_greedy(&m).to_string())
    }

    fn snapshot(&self, sl_loss: Option<[Vec<f64>; 2]>) -> Result<String, JsError> {
        let [a, b] = &self.pair.agents;
        let test = &self.pair.datasets[0].test;
        to_json(&Snapshot {
            round: self.round,
            acc_inter: [acc_inter(a, b, test), acc_inter(b, a, test)],
            acc_self: [acc_self(a, test), acc_self(b, test)],
            self_turns: self.pair.self_turns,
            profiles: [production_profile(a, test).into(), production_profile(b, test).into()],
            sl_loss,
        })
    }
}
