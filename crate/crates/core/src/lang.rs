//! Meaning space, surface vocabulary and the grammar family of verb-final
//! miniature languages that differ in order flexibility and object marking.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const N_ENTITIES: usize = 10;
pub const N_ACTIONS: usize = 8;
pub const N_MEANINGS: usize = N_ENTITIES * (N_ENTITIES - 1) * N_ACTIONS;

/// Surface words: entities, then actions, then the marker.
pub const N_SURFACE: usize = N_ENTITIES + N_ACTIONS + 1;
pub const MARKER: Token = Token((N_ENTITIES + N_ACTIONS) as u8);
/// End-of-utterance, emitted by the decoder and never part of an utterance.
pub const EOS: Token = Token(N_SURFACE as u8);
/// Decoder start symbol.
pub const BOS: Token = Token(N_SURFACE as u8 + 1);
/// Word rows in the shared word-embedding table (surface + EOS + BOS).
/// Sequences are processed one at a time, so no padding row is needed.
pub const N_WORD_ROWS: usize = N_SURFACE + 2;
/// Words the decoder can emit (surface + EOS).
pub const N_DECODER_OUT: usize = N_SURFACE + 1;

pub const MAX_UTTERANCE_LEN: usize = 10;

/// Meanings drawn per RL turn in the interactive profile (10 batches of 32).
pub const INTERACTIVE_TURN_MEANINGS: usize = 320;
pub const SL_TRAIN_SIZE: usize = 480;
pub const TEST_SIZE: usize = 144;
pub const TRAIN_POOL_SIZE: usize = N_MEANINGS - TEST_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub u8);

impl Token {
    pub fn entity(e: u8) -> Token {
        debug_assert!((e as usize) < N_ENTITIES);
        Token(e)
    }

    pub fn action(a: u8) -> Token {
        debug_assert!((a as usize) < N_ACTIONS);
        Token(N_ENTITIES as u8 + a)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_surface(self) -> bool {
        self.index() < N_SURFACE
    }

    pub fn as_str(self) -> String {
        let i = self.index();
        if i < N_ENTITIES {
            format!("e{i}")
        } else if i < N_ENTITIES + N_ACTIONS {
            format!("a{}", i - N_ENTITIES)
        } else if self == MARKER {
            "mk".to_string()
        } else if self == EOS {
            "<eos>".to_string()
        } else if self == BOS {
            "<bos>".to_string()
        } else {
            format!("<{i}>")
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown surface token {s:?}"));
        if s == "mk" {
            return Ok(MARKER);
        }
        let (kind, rest) = s.split_at(s.len().min(1));
        let n: usize = rest.parse().map_err(|_| bad())?;
        match kind {
            "e" if n < N_ENTITIES => Ok(Token::entity(n as u8)),
            "a" if n < N_ACTIONS => Ok(Token::action(n as u8)),
            _ => Err(bad()),
        }
    }
}

/// A scene: an action with two distinct participants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Meaning {
    pub action: u8,
    pub agent: u8,
    pub patient: u8,
}

impl Meaning {
    pub fn new(action: u8, agent: u8, patient: u8) -> Result<Self> {
        if (action as usize) >= N_ACTIONS || (agent as usize) >= N_ENTITIES || (patient as usize) >= N_ENTITIES {
            return Err(Error::InvalidMeaning(format!(
                "ids out of range: ({action}, {agent}, {patient})"
            )));
        }
        if agent == patient {
            return Err(Error::InvalidMeaning(format!(
                "entity {agent} cannot be both agent and patient"
            )));
        }
        Ok(Meaning { action, agent, patient })
    }

    /// Rank in the canonical (action, agent, patient) order.
    pub fn index(&self) -> usize {
        let p = if self.patient > self.agent {
            self.patient - 1
        } else {
            self.patient
        } as usize;
        (self.action as usize * N_ENTITIES + self.agent as usize) * (N_ENTITIES - 1) + p
    }
}

impl fmt::Display for Meaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            Token::action(self.action),
            Token::entity(self.agent),
            Token::entity(self.patient)
        )
    }
}

impl FromStr for Meaning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<Token> = s.split_whitespace().map(str::parse).collect::<Result<_>>()?;
        match parts.as_slice() {
            [a, x, y] if a.index() >= N_ENTITIES && x.index() < N_ENTITIES && y.index() < N_ENTITIES => {
                Meaning::new((a.index() - N_ENTITIES) as u8, x.0, y.0)
            }
            _ => Err(Error::Parse(format!("expected `action agent patient`, got {s:?}"))),
        }
    }
}

/// All 720 meanings, ordered lexicographically by (action, agent, patient).
pub fn enumerate_meanings() -> Vec<Meaning> {
    let mut out = Vec::with_capacity(N_MEANINGS);
    for action in 0..N_ACTIONS as u8 {
        for agent in 0..N_ENTITIES as u8 {
            for patient in 0..N_ENTITIES as u8 {
                if agent != patient {
                    out.push(Meaning { action, agent, patient });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Utterance(pub Vec<Token>);

impl Utterance {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for Utterance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let toks: Vec<Token> = s.split_whitespace().map(str::parse).collect::<Result<_>>()?;
        if toks.len() > MAX_UTTERANCE_LEN {
            return Err(Error::Parse(format!("utterance longer than {MAX_UTTERANCE_LEN}")));
        }
        Ok(Utterance(toks))
    }
}

/// Initial language: proportion of SOV (vs OSV) and of marked objects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrammarSpec {
    pub p_sov: f64,
    pub p_marker: f64,
}

impl GrammarSpec {
    pub fn new(p_sov: f64, p_marker: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_sov) || !(0.0..=1.0).contains(&p_marker) {
            return Err(Error::Parse(format!(
                "grammar proportions must be in [0, 1], got ({p_sov}, {p_marker})"
            )));
        }
        Ok(GrammarSpec { p_sov, p_marker })
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for GrammarSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}s+{}m",
            (self.p_sov * 100.0).round() as u32,
            (self.p_marker * 100.0).round() as u32
        )
    }
}

impl FromStr for GrammarSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("grammar name must look like `50s+50m`, got {s:?}"));
        let (sov, mk) = s.trim().split_once('+').ok_or_else(bad)?;
        let sov: u32 = sov.strip_suffix('s').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mk: u32 = mk.strip_suffix('m').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if sov > 100 || mk > 100 {
            return Err(bad());
        }
        GrammarSpec::new(sov as f64 / 100.0, mk as f64 / 100.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Order {
    Sov,
    Osv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Category {
    pub order: Order,
    pub marked: bool,
}

/// The one utterance `m` has for a given order and marking choice.
pub fn realize(m: &Meaning, cat: Category) -> Utterance {
    let subj = Token::entity(m.agent);
    let obj = Token::entity(m.patient);
    let mut toks = Vec::with_capacity(4);
    let push_obj = |toks: &mut Vec<Token>| {
        toks.push(obj);
        if cat.marked {
            toks.push(MARKER);
        }
    };
    match cat.order {
        Order::Sov => {
            toks.push(subj);
            push_obj(&mut toks);
        }
        Order::Osv => {
            push_obj(&mut toks);
            toks.push(subj);
        }
    }
    toks.push(Token::action(m.action));
    Utterance(toks)
}

/// Independent order and marker draws.
pub fn sample_category<R: Rng + ?Sized>(g: &GrammarSpec, rng: &mut R) -> Category {
    let sov = rng.gen::<f64>() < g.p_sov;
    let marked = rng.gen::<f64>() < g.p_marker;
    Category {
        order: if sov { Order::Sov } else { Order::Osv },
        marked,
    }
}

pub fn generate_utterance<R: Rng + ?Sized>(m: &Meaning, g: &GrammarSpec, rng: &mut R) -> Utterance {
    realize(m, sample_category(g, rng))
}

/// Which grammar-licensed realization of `m` this is, if any.
pub fn classify_utterance(u: &Utterance, m: &Meaning) -> Option<Category> {
    let subj = Token::entity(m.agent);
    let obj = Token::entity(m.patient);
    let verb = Token::action(m.action);
    match u.tokens() {
        [a, b, v] if *v == verb && *a == subj && *b == obj => Some(Category {
            order: Order::Sov,
            marked: false,
        }),
        [a, b, v] if *v == verb && *a == obj && *b == subj => Some(Category {
            order: Order::Osv,
            marked: false,
        }),
        [a, b, k, v] if *v == verb && *k == MARKER && *a == subj && *b == obj => Some(Category {
            order: Order::Sov,
            marked: true,
        }),
        [a, k, b, v] if *v == verb && *k == MARKER && *a == obj && *b == subj => Some(Category {
            order: Order::Osv,
            marked: true,
        }),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitProfile {
    /// Self-play replication: 480 SL pairs, 144 test, every turn covers all 480 (15 batches).
    Replication,
    /// Interactive: 576-meaning pool, 144 test, 480 SL pairs, 320 meanings per turn.
    Interactive,
}

impl SplitProfile {
    pub fn turn_meanings(self) -> usize {
        match self {
            SplitProfile::Replication => SL_TRAIN_SIZE,
            SplitProfile::Interactive => INTERACTIVE_TURN_MEANINGS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitProfile::Replication => "replication",
            SplitProfile::Interactive => "interactive",
        }
    }
}

impl FromStr for SplitProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replication" => Ok(SplitProfile::Replication),
            "interactive" => Ok(SplitProfile::Interactive),
            _ => Err(Error::Parse(format!("unknown split profile {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sl_train: Vec<(Meaning, Utterance)>,
    pub rl_pool: Vec<Meaning>,
    pub test: Vec<Meaning>,
    pub grammar: GrammarSpec,
    pub profile: SplitProfile,
    pub seed: u64,
}

const MAX_COVERAGE_ATTEMPTS: usize = 1000;

fn covers_vocabulary(meanings: &[Meaning]) -> bool {
    let mut ents = [false; N_ENTITIES];
    let mut acts = [false; N_ACTIONS];
    for m in meanings {
        ents[m.agent as usize] = true;
        ents[m.patient as usize] = true;
        acts[m.action as usize] = true;
    }
    ents.iter().all(|&b| b) && acts.iter().all(|&b| b)
}

/// Builds the meaning split and gold SL utterances.
///
/// The meaning split depends on `seed` only, so agents trained on different
/// grammars with the same seed share their test set. Utterances are drawn
/// from a second stream that also mixes in the grammar.
pub fn build_dataset(g: &GrammarSpec, seed: u64, profile: SplitProfile) -> Result<Dataset> {
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = enumerate_meanings();
    all.shuffle(&mut split_rng);
    let test: Vec<Meaning> = all[..TEST_SIZE].to_vec();
    let pool: Vec<Meaning> = all[TEST_SIZE..].to_vec();

    let mut sl_meanings = None;
    for _ in 0..MAX_COVERAGE_ATTEMPTS {
        let cand: Vec<Meaning> = pool.choose_multiple(&mut split_rng, SL_TRAIN_SIZE).copied().collect();
        if covers_vocabulary(&cand) {
            sl_meanings = Some(cand);
            break;
        }
    }
    let sl_meanings = sl_meanings.ok_or(Error::CoverageUnsatisfiable)?;

    let mut utt_rng = ChaCha8Rng::seed_from_u64(seed ^ grammar_salt(g));
    let sl_train = sl_meanings
        .iter()
        .map(|m| (*m, generate_utterance(m, g, &mut utt_rng)))
        .collect();

    let rl_pool = match profile {
        SplitProfile::Interactive => pool,
        SplitProfile::Replication => sl_meanings,
    };

    Ok(Dataset {
        sl_train,
        rl_pool,
        test,
        grammar: *g,
        profile,
        seed,
    })
}

fn grammar_salt(g: &GrammarSpec) -> u64 {
    let sov = (g.p_sov * 100.0).round() as u64;
    let mk = (g.p_marker * 100.0).round() as u64;
    (sov << 32 | mk).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Dataset {
    /// Meanings for one RL turn, without replacement from the pool.
    pub fn sample_turn_meanings<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Meaning> {
        self.sample_meanings(self.profile.turn_meanings(), rng)
    }

    pub fn sample_meanings<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Meaning> {
        assert!(self.rl_pool.len() >= n, "RL pool smaller than one turn");
        self.rl_pool.choose_multiple(rng, n).copied().collect()
    }

    /// Gold utterances for the test meanings, drawn from the dataset's grammar.
    pub fn test_pairs(&self) -> Vec<(Meaning, Utterance)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ grammar_salt(&self.grammar) ^ 0x7E57);
        self.test
            .iter()
            .map(|m| (*m, generate_utterance(m, &self.grammar, &mut rng)))
            .collect()
    }

    /// Line-oriented text form: a header, then one `meaning<TAB>utterance`
    /// line per entry under `[sl_train]`, `[rl_pool]` and `[test]`
    /// (pool and test lines carry an empty utterance).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# grammar {}\n", self.grammar));
        s.push_str(&format!("# seed {}\n", self.seed));
        s.push_str(&format!("# profile {}\n", self.profile.as_str()));
        s.push_str("[sl_train]\n");
        for (m, u) in &self.sl_train {
            s.push_str(&format!("{m}\t{u}\n"));
        }
        s.push_str("[rl_pool]\n");
        for m in &self.rl_pool {
            s.push_str(&format!("{m}\t\n"));
        }
        s.push_str("[test]\n");
        for m in &self.test {
            s.push_str(&format!("{m}\t\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut grammar = None;
        let mut seed = None;
        let mut profile = None;
        let mut section = "";
        let mut sl_train = Vec::new();
        let mut rl_pool = Vec::new();
        let mut test = Vec::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                match h.split_once(' ') {
                    Some(("grammar", v)) => grammar = Some(v.parse::<GrammarSpec>()?),
                    Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
                    Some(("profile", v)) => profile = Some(v.parse::<SplitProfile>()?),
                    _ => {}
                }
                continue;
            }
            if line.starts_with('[') {
                section = line;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (m, u) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("missing tab in {line:?}")))?;
            let m: Meaning = m.parse()?;
            match section {
                "[sl_train]" => sl_train.push((m, u.parse()?)),
                "[rl_pool]" => rl_pool.push(m),
                "[test]" => test.push(m),
                _ => return Err(Error::Parse(format!("entry outside a section: {line:?}"))),
            }
        }
        Ok(Dataset {
            sl_train,
            rl_pool,
            test,
            grammar: grammar.ok_or_else(|| Error::Parse("missing grammar header".into()))?,
            profile: profile.ok_or_else(|| Error::Parse("missing profile header".into()))?,
            seed: seed.ok_or_else(|| Error::Parse("missing seed header".into()))?,
        })
    }

    pub fn sl_meanings(&self) -> HashSet<Meaning> {
        self.sl_train.iter().map(|(m, _)| *m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chase_tom_jerry() -> Meaning {
        // chase = a0, Tom = e0, Jerry = e1
        Meaning::new(0, 0, 1).unwrap()
    }

    #[test]
    fn meaning_space() {
        let all = enumerate_meanings();
        assert_eq!(all.len(), 720);
        assert_eq!(
            all[0],
            Meaning {
                action: 0,
                agent: 0,
                patient: 1
            }
        );
        assert_eq!(all.iter().filter(|m| m.agent == 3).count(), 72);
        for (i, m) in all.iter().enumerate() {
            assert_eq!(m.index(), i);
        }
        let uniq: HashSet<_> = all.iter().collect();
        assert_eq!(uniq.len(), 720);
    }

    #[test]
    fn rejects_invalid_meanings() {
        assert!(Meaning::new(0, 4, 4).is_err());
        assert!(Meaning::new(8, 0, 1).is_err());
        assert!(Meaning::new(0, 10, 1).is_err());
    }

    #[test]
    fn vocabulary_is_19_surface_tokens() {
        assert_eq!(N_SURFACE, 19);
        let names: HashSet<String> = (0..N_SURFACE as u8).map(|i| Token(i).as_str()).collect();
        assert_eq!(names.len(), 19);
        assert!(!EOS.is_surface() && !BOS.is_surface());
        for i in 0..N_SURFACE as u8 {
            assert_eq!(Token(i).as_str().parse::<Token>().unwrap(), Token(i));
        }
    }

    #[test]
    fn table_examples() {
        let m = chase_tom_jerry();
        let g = "100s+0m".parse::<GrammarSpec>().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = generate_utterance(&m, &g, &mut rng);
        assert_eq!(u.to_string(), "e0 e1 a0");

        let u = realize(
            &m,
            Category {
                order: Order::Osv,
                marked: true,
            },
        );
        assert_eq!(u.to_string(), "e1 mk e0 a0");

        let g = GrammarSpec::new(1.0, 1.0).unwrap();
        for _ in 0..20 {
            assert_eq!(generate_utterance(&m, &g, &mut rng).to_string(), "e0 e1 mk a0");
        }
    }

    #[test]
    fn classification() {
        let m = chase_tom_jerry();
        let p = |s: &str| s.parse::<Utterance>().unwrap();
        assert_eq!(
            classify_utterance(&p("e0 e1 a0"), &m),
            Some(Category {
                order: Order::Sov,
                marked: false
            })
        );
        assert_eq!(
            classify_utterance(&p("e1 mk e0 a0"), &m),
            Some(Category {
                order: Order::Osv,
                marked: true
            })
        );
        assert_eq!(classify_utterance(&p("e0 e0 a0"), &m), None);
        // subject is never marked
        assert_eq!(classify_utterance(&p("e0 mk e1 a0"), &m), None);
        assert_eq!(classify_utterance(&p("e0 e1 a1"), &m), None);
        assert_eq!(classify_utterance(&p("e0 e1 a0 a0"), &m), None);
        assert_eq!(classify_utterance(&p("e0 e1 mk mk a0"), &m), None);
        assert_eq!(classify_utterance(&Utterance(vec![e(0), e(1), EOS]), &m), None);
    }

    fn e(i: u8) -> Token {
        Token::entity(i)
    }

    #[test]
    fn grammar_names() {
        for name in ["50s+50m", "100s+67m", "0s+0m", "80s+20m"] {
            let g: GrammarSpec = name.parse().unwrap();
            assert_eq!(g.to_string(), name);
        }
        assert!("50s50m".parse::<GrammarSpec>().is_err());
        assert!("150s+0m".parse::<GrammarSpec>().is_err());
        assert!("xs+0m".parse::<GrammarSpec>().is_err());
    }

    #[test]
    fn empirical_proportions() {
        let g = GrammarSpec::new(0.8, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let all = enumerate_meanings();
        let (mut sov, mut mk) = (0, 0);
        for i in 0..10_000 {
            let m = all[i % all.len()];
            let c = classify_utterance(&generate_utterance(&m, &g, &mut rng), &m).unwrap();
            sov += (c.order == Order::Sov) as usize;
            mk += c.marked as usize;
        }
        assert!((sov as f64 / 10_000.0 - 0.8).abs() <= 0.02);
        assert!((mk as f64 / 10_000.0 - 0.3).abs() <= 0.02);
    }

    #[test]
    fn interactive_split() {
        let g: GrammarSpec = "50s+50m".parse().unwrap();
        let d = build_dataset(&g, 1, SplitProfile::Interactive).unwrap();
        assert_eq!(d.sl_train.len(), 480);
        assert_eq!(d.test.len(), 144);
        assert_eq!(d.rl_pool.len(), 576);
        let test: HashSet<_> = d.test.iter().collect();
        assert!(d.sl_train.iter().all(|(m, _)| !test.contains(m)));
        assert!(d.rl_pool.iter().all(|m| !test.contains(m)));
        assert_eq!(d.sl_meanings().len(), 480, "no duplicate SL meanings");
        let ents: HashSet<u8> = d.sl_train.iter().flat_map(|(m, _)| [m.agent, m.patient]).collect();
        assert_eq!(ents, (0..10).collect());
        for (m, u) in &d.sl_train {
            assert!(classify_utterance(u, m).is_some());
        }
        assert_eq!(d, build_dataset(&g, 1, SplitProfile::Interactive).unwrap());
        assert_eq!(
            d.to_text(),
            build_dataset(&g, 1, SplitProfile::Interactive).unwrap().to_text()
        );
    }

    #[test]
    fn replication_split() {
        let g: GrammarSpec = "100s+67m".parse().unwrap();
        let d = build_dataset(&g, 4, SplitProfile::Replication).unwrap();
        assert_eq!(d.sl_train.len(), 480);
        assert_eq!(d.test.len(), 144);
        assert_eq!(d.sl_meanings(), d.rl_pool.iter().copied().collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.sample_turn_meanings(&mut rng).len(), 480);
    }

    #[test]
    fn split_is_shared_across_grammars() {
        let a = build_dataset(&"80s+20m".parse().unwrap(), 9, SplitProfile::Interactive).unwrap();
        let b = build_dataset(&"20s+20m".parse().unwrap(), 9, SplitProfile::Interactive).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.rl_pool, b.rl_pool);
    }

    #[test]
    fn turn_sampling() {
        let d = build_dataset(&"50s+50m".parse().unwrap(), 2, SplitProfile::Interactive).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let s1 = d.sample_turn_meanings(&mut r1);
        assert_eq!(s1.len(), 320);
        assert_eq!(s1, d.sample_turn_meanings(&mut r2));
        let pool: HashSet<_> = d.rl_pool.iter().collect();
        let test: HashSet<_> = d.test.iter().collect();
        let uniq: HashSet<_> = s1.iter().collect();
        assert_eq!(uniq.len(), 320);
        assert!(s1.iter().all(|m| pool.contains(m) && !test.contains(m)));
    }

    #[test]
    fn dataset_text_round_trip() {
        let d = build_dataset(&"50s+50m".parse().unwrap(), 7, SplitProfile::Interactive).unwrap();
        let text = d.to_text();
        let first = text.lines().nth(4).unwrap();
        let (m, u) = first.split_once('\t').unwrap();
        assert_eq!(m.split(' ').count(), 3);
        assert!(u.split(' ').count() >= 3);
        assert_eq!(Dataset::from_text(&text).unwrap(), d);
        assert!(Dataset::from_text("[test]\nnot a meaning\t\n").is_err());
    }
}
