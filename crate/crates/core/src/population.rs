//! Group communication: connectivity graphs, rounds and turn scheduling with
//! activation-triggered self-play.
//!
//! Each round shuffles the edge list and runs one interactive turn per edge.
//! After every interactive turn the speaker, then the listener, is checked:
//! an agent whose activation counter reached σ plays one self-play turn and
//! its counter is reset.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::lang::{Dataset, Meaning};
use crate::metrics::{acc_inter, acc_self};
use crate::training::{inter_turn, self_turn, RlConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectivityGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl ConnectivityGraph {
    /// Directed graph over agents `0..n`; `(i, j)` lets `i` speak to `j`.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(i, j) in &edges {
            if i == j {
                return Err(Error::Graph(format!("self-loop on {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Graph(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(ConnectivityGraph { n, edges })
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::GroupTooSmall(n));
        }
        let edges = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::new(n, edges)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

pub fn complete_graph(n: usize) -> Result<ConnectivityGraph> {
    ConnectivityGraph::complete(n)
}

/// ⌈100 / (group_size − 1)⌉ rounds give every agent about 200 interactive
/// participations in a complete graph.
pub fn comm_rounds_for(group_size: usize) -> Result<usize> {
    if group_size < 2 {
        return Err(Error::GroupTooSmall(group_size));
    }
    Ok(100usize.div_ceil(group_size - 1))
}

/// Self-play threshold; `Infinite` disables self-play.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sigma {
    Finite(u32),
    Infinite,
}

impl Sigma {
    pub fn reached(self, activation: u32) -> bool {
        match self {
            Sigma::Finite(s) => activation >= s,
            Sigma::Infinite => false,
        }
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Finite(s) => write!(f, "{s}"),
            Sigma::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinite" | "∞" => Ok(Sigma::Infinite),
            _ => match s.parse::<u32>() {
                Ok(v) if v > 0 => Ok(Sigma::Finite(v)),
                _ => Err(Error::Parse(format!(
                    "sigma must be a positive integer or `inf`, got {s:?}"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub n_rounds: usize,
    pub sigma: Sigma,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TurnKind {
    Inter,
    SelfPlay,
}

impl TurnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TurnKind::Inter => "inter",
            TurnKind::SelfPlay => "self",
        }
    }
}

/// One scheduled turn; for self-play `speaker == listener`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub round: usize,
    pub turn: usize,
    pub speaker: usize,
    pub listener: usize,
    pub kind: TurnKind,
}

impl TraceEvent {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.round,
            self.turn,
            self.speaker,
            self.listener,
            self.kind.as_str()
        )
    }
}

pub const TRACE_HEADER: &str = "round,turn,speaker_id,listener_id,kind";

/// What the scheduler drives. `inter_turn` must increment both participants'
/// activation counters.
pub trait TurnRunner {
    fn inter_turn(&mut self, ev: &TraceEvent) -> Result<()>;
    fn self_turn(&mut self, ev: &TraceEvent) -> Result<()>;
    fn activation(&mut self, agent: usize) -> &mut u32;
    fn end_round(&mut self, _round: usize) -> Result<()> {
        Ok(())
    }
}

/// One pass over every edge of `graph` in shuffled order.
pub fn run_round<T: TurnRunner + ?Sized, R: Rng + ?Sized>(
    runner: &mut T,
    graph: &ConnectivityGraph,
    sigma: Sigma,
    round: usize,
    rng: &mut R,
    trace: &mut Vec<TraceEvent>,
) -> Result<()> {
    let mut turns = graph.edges().to_vec();
    turns.shuffle(rng);
    for (turn, &(spk, lst)) in turns.iter().enumerate() {
        let ev = TraceEvent {
            round,
            turn,
            speaker: spk,
            listener: lst,
            kind: TurnKind::Inter,
        };
        runner.inter_turn(&ev)?;
        trace.push(ev);
        for a in [spk, lst] {
            if sigma.reached(*runner.activation(a)) {
                let ev = TraceEvent {
                    round,
                    turn,
                    speaker: a,
                    listener: a,
                    kind: TurnKind::SelfPlay,
                };
                runner.self_turn(&ev)?;
                *runner.activation(a) = 0;
                trace.push(ev);
            }
        }
    }
    runner.end_round(round)
}

/// Runs `n_rounds` rounds (numbered from 1) and returns the schedule trace.
pub fn run_schedule<T: TurnRunner + ?Sized>(
    runner: &mut T,
    graph: &ConnectivityGraph,
    cfg: &ScheduleConfig,
) -> Result<Vec<TraceEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    for round in 1..=cfg.n_rounds {
        run_round(runner, graph, cfg.sigma, round, &mut rng, &mut trace)?;
    }
    Ok(trace)
}

// ---- real groups ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalEvery {
    /// A record after every interactive and self-play turn.
    Turn,
    /// One edge-averaged record per round.
    Round,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecordKind {
    /// After SL, before any communication.
    Sl,
    Inter,
    SelfPlay,
    /// Averages over all edges / agents at the end of a round.
    Round,
    /// Averages over all edges / agents at the end of the schedule.
    Final,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Sl => "sl",
            RecordKind::Inter => "inter",
            RecordKind::SelfPlay => "self",
            RecordKind::Round => "round",
            RecordKind::Final => "final",
        }
    }
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sl" => RecordKind::Sl,
            "inter" => RecordKind::Inter,
            "self" => RecordKind::SelfPlay,
            "round" => RecordKind::Round,
            "final" => RecordKind::Final,
            _ => return Err(Error::Parse(format!("unknown record kind {s:?}"))),
        })
    }
}

/// Test-set evaluation snapshot. For `Round`/`Final`/`Sl` records the
/// accuracies are means over all edges (acc_inter) and agents (acc_self),
/// and speaker/listener are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub round: usize,
    pub turn: usize,
    pub kind: RecordKind,
    pub speaker: Option<usize>,
    pub listener: Option<usize>,
    pub acc_inter: Option<f64>,
    pub acc_self_spk: Option<f64>,
    pub acc_self_lst: Option<f64>,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &TurnRecord) -> Result<()>;
}

impl MetricsSink for Vec<TurnRecord> {
    fn record(&mut self, rec: &TurnRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// A set of SL-trained agents with their datasets, ready to communicate.
/// All agents must share the same test meanings.
pub struct Group {
    pub agents: Vec<Agent>,
    pub datasets: Vec<Dataset>,
    pub rl: RlConfig,
    pub eval: EvalEvery,
    rng: ChaCha8Rng,
}

impl Group {
    pub fn new(agents: Vec<Agent>, datasets: Vec<Dataset>, rl: RlConfig, eval: EvalEvery, seed: u64) -> Result<Self> {
        if agents.len() != datasets.len() {
            return Err(Error::Graph("one dataset per agent required".into()));
        }
        if datasets.windows(2).any(|w| w[0].test != w[1].test) {
            return Err(Error::Graph("agents in a group must share the test split".into()));
        }
        Ok(Group {
            agents,
            datasets,
            rl,
            eval,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn test(&self) -> &[Meaning] {
        &self.datasets[0].test
    }

    fn pair_mut(&mut self, i: usize, j: usize) -> (&mut Agent, &mut Agent) {
        assert_ne!(i, j);
        if i < j {
            let (a, b) = self.agents.split_at_mut(j);
            (&mut a[i], &mut b[0])
        } else {
            let (a, b) = self.agents.split_at_mut(i);
            (&mut b[0], &mut a[j])
        }
    }

    pub fn mean_acc_inter(&self, graph: &ConnectivityGraph) -> f64 {
        let t = self.test();
        let s: f64 = graph
            .edges()
            .iter()
            .map(|&(i, j)| acc_inter(&self.agents[i], &self.agents[j], t))
            .sum();
        s / graph.edges().len().max(1) as f64
    }

    pub fn mean_acc_self(&self) -> f64 {
        let t = self.test();
        self.agents.iter().map(|a| acc_self(a, t)).sum::<f64>() / self.agents.len() as f64
    }

    fn summary_record(&self, graph: &ConnectivityGraph, round: usize, kind: RecordKind) -> TurnRecord {
        let s = self.mean_acc_self();
        TurnRecord {
            round,
            turn: 0,
            kind,
            speaker: None,
            listener: None,
            acc_inter: Some(self.mean_acc_inter(graph)),
            acc_self_spk: Some(s),
            acc_self_lst: Some(s),
        }
    }
}

struct Driver<'a, S: MetricsSink + ?Sized> {
    group: &'a mut Group,
    graph: &'a ConnectivityGraph,
    sink: &'a mut S,
}

impl<S: MetricsSink + ?Sized> TurnRunner for Driver<'_, S> {
    fn inter_turn(&mut self, ev: &TraceEvent) -> Result<()> {
        let g = &mut *self.group;
        let rl = g.rl.clone();
        let mut rng = g.rng.clone();
        let ds = g.datasets[ev.speaker].clone();
        let (spk, lst) = g.pair_mut(ev.speaker, ev.listener);
        inter_turn(spk, lst, &ds, &rl, &mut rng)?;
        g.rng = rng;
        if g.eval == EvalEvery::Turn {
            let t = g.test();
            let (spk, lst) = (&g.agents[ev.speaker], &g.agents[ev.listener]);
            self.sink.record(&TurnRecord {
                round: ev.round,
                turn: ev.turn,
                kind: RecordKind::Inter,
                speaker: Some(ev.speaker),
                listener: Some(ev.listener),
                acc_inter: Some(acc_inter(spk, lst, t)),
                acc_self_spk: Some(acc_self(spk, t)),
                acc_self_lst: Some(acc_self(lst, t)),
            })?;
        }
        Ok(())
    }

    fn self_turn(&mut self, ev: &TraceEvent) -> Result<()> {
        let g = &mut *self.group;
        let rl = g.rl.clone();
        self_turn(&mut g.agents[ev.speaker], &g.datasets[ev.speaker], &rl, &mut g.rng)?;
        if g.eval == EvalEvery::Turn {
            let s = acc_self(&g.agents[ev.speaker], g.test());
            self.sink.record(&TurnRecord {
                round: ev.round,
                turn: ev.turn,
                kind: RecordKind::SelfPlay,
                speaker: Some(ev.speaker),
                listener: Some(ev.speaker),
                acc_inter: None,
                acc_self_spk: Some(s),
                acc_self_lst: Some(s),
            })?;
        }
        Ok(())
    }

    fn activation(&mut self, agent: usize) -> &mut u32 {
        &mut self.group.agents[agent].activation
    }

    fn end_round(&mut self, round: usize) -> Result<()> {
        if self.group.eval == EvalEvery::Round {
            let rec = self.group.summary_record(self.graph, round, RecordKind::Round);
            self.sink.record(&rec)?;
        }
        Ok(())
    }
}

/// Runs the full schedule on an SL-trained group, streaming an `Sl` record
/// first, per-turn or per-round records, and a `Final` record last.
pub fn run_group<S: MetricsSink + ?Sized>(
    group: &mut Group,
    graph: &ConnectivityGraph,
    cfg: &ScheduleConfig,
    sink: &mut S,
) -> Result<Vec<TraceEvent>> {
    if graph.n_agents() != group.agents.len() {
        return Err(Error::Graph(format!(
            "graph has {} nodes but the group has {} agents",
            graph.n_agents(),
            group.agents.len()
        )));
    }
    let rec = group.summary_record(graph, 0, RecordKind::Sl);
    sink.record(&rec)?;
    let trace = {
        let mut driver = Driver {
            group: &mut *group,
            graph,
            sink: &mut *sink,
        };
        run_schedule(&mut driver, graph, cfg)?
    };
    let rec = group.summary_record(graph, cfg.n_rounds, RecordKind::Final);
    sink.record(&rec)?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counter-only runner: no learning, just scheduler bookkeeping.
    struct Counting {
        activation: Vec<u32>,
        inter: Vec<usize>,
        selfs: Vec<usize>,
        max_seen: u32,
    }

    impl Counting {
        fn new(n: usize) -> Self {
            Counting {
                activation: vec![0; n],
                inter: vec![0; n],
                selfs: vec![0; n],
                max_seen: 0,
            }
        }
    }

    impl TurnRunner for Counting {
        fn inter_turn(&mut self, ev: &TraceEvent) -> Result<()> {
            for a in [ev.speaker, ev.listener] {
                self.activation[a] += 1;
                self.inter[a] += 1;
                self.max_seen = self.max_seen.max(self.activation[a]);
            }
            Ok(())
        }

        fn self_turn(&mut self, ev: &TraceEvent) -> Result<()> {
            self.selfs[ev.speaker] += 1;
            Ok(())
        }

        fn activation(&mut self, agent: usize) -> &mut u32 {
            &mut self.activation[agent]
        }
    }

    #[test]
    fn complete_graph_edge_counts() {
        assert_eq!(complete_graph(2).unwrap().edges(), &[(0, 1), (1, 0)]);
        assert_eq!(complete_graph(4).unwrap().edges().len(), 12);
        assert_eq!(complete_graph(8).unwrap().edges().len(), 56);
        assert_eq!(complete_graph(20).unwrap().edges().len(), 380);
        assert!(matches!(complete_graph(1), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn graph_validation() {
        assert!(ConnectivityGraph::new(3, vec![(0, 0)]).is_err());
        assert!(ConnectivityGraph::new(3, vec![(0, 1), (0, 1)]).is_err());
        assert!(ConnectivityGraph::new(3, vec![(0, 3)]).is_err());
        assert!(ConnectivityGraph::new(3, vec![(0, 1), (2, 1)]).is_ok());
    }

    #[test]
    fn rounds_per_group_size() {
        let got: Vec<usize> = [2, 4, 8, 20].iter().map(|&n| comm_rounds_for(n).unwrap()).collect();
        assert_eq!(got, vec![100, 34, 15, 6]);
        assert_eq!(comm_rounds_for(101).unwrap(), 1);
        assert!(comm_rounds_for(1).is_err());
        // participations per agent for size 8 over 15 rounds
        assert_eq!(2 * (8 - 1) * 15, 210);
    }

    #[test]
    fn sigma_parsing() {
        assert_eq!("10".parse::<Sigma>().unwrap(), Sigma::Finite(10));
        assert_eq!("inf".parse::<Sigma>().unwrap(), Sigma::Infinite);
        assert!("0".parse::<Sigma>().is_err());
        assert_eq!(Sigma::Infinite.to_string(), "inf");
    }

    #[test]
    fn each_edge_once_per_round() {
        let g = complete_graph(4).unwrap();
        let mut r = Counting::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = Vec::new();
        run_round(&mut r, &g, Sigma::Finite(10), 1, &mut rng, &mut trace).unwrap();
        let mut inter: Vec<(usize, usize)> = trace
            .iter()
            .filter(|e| e.kind == TurnKind::Inter)
            .map(|e| (e.speaker, e.listener))
            .collect();
        assert_eq!(inter.len(), 12);
        inter.sort();
        assert_eq!(inter, g.edges());
    }

    #[test]
    fn pair_self_play_counts() {
        let g = complete_graph(2).unwrap();
        let mut r = Counting::new(2);
        let cfg = ScheduleConfig {
            n_rounds: 100,
            sigma: Sigma::Finite(10),
            seed: 1,
        };
        let trace = run_schedule(&mut r, &g, &cfg).unwrap();
        assert_eq!(r.inter, vec![200, 200]);
        assert_eq!(r.selfs, vec![20, 20]);
        assert!(r.max_seen <= 10);
        assert_eq!(trace.iter().filter(|e| e.kind == TurnKind::SelfPlay).count(), 40);
    }

    #[test]
    fn infinite_sigma_never_self_plays() {
        let g = complete_graph(4).unwrap();
        let mut r = Counting::new(4);
        let cfg = ScheduleConfig {
            n_rounds: 34,
            sigma: Sigma::Infinite,
            seed: 2,
        };
        let trace = run_schedule(&mut r, &g, &cfg).unwrap();
        assert!(trace.iter().all(|e| e.kind == TurnKind::Inter));
        assert_eq!(r.selfs, vec![0; 4]);
    }

    #[test]
    fn trace_lines() {
        let ev = TraceEvent {
            round: 3,
            turn: 1,
            speaker: 0,
            listener: 2,
            kind: TurnKind::Inter,
        };
        assert_eq!(ev.csv_line(), "3,1,0,2,inter");
    }
}
