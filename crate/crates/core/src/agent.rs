//! Full-fledged agent: a speaking network (meaning → utterance) and a
//! listening network (utterance → meaning) sharing their meaning and word
//! embedding tables.
//!
//! Speaker: the three meaning items are embedded (8-dim) and summed, a
//! linear map gives the initial 16-dim GRU state, and words are decoded
//! autoregressively starting from `<bos>`, scored by dot product with the
//! word embedding table plus an output bias.
//!
//! Listener: words are embedded with the same word table and read by its own
//! GRU from a zero state; the final state is projected to one 8-dim query per
//! role (action, agent, patient), each scored against the shared meaning
//! table restricted to the rows of that role.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{
    add_acc, affine, affine_t_acc, argmax, dot, gru_backward, gru_step, log_softmax, outer_acc, Adam, Grads, GruCache,
    GruParams, ParamId, ParamStore, Values,
};
use crate::error::{Error, Result};
use crate::lang::{
    Meaning, Token, Utterance, BOS, EOS, MAX_UTTERANCE_LEN, N_ACTIONS, N_DECODER_OUT, N_ENTITIES, N_WORD_ROWS,
};

pub const MEANING_DIM: usize = 8;
pub const HIDDEN: usize = 16;
pub const WORD_DIM: usize = 16;
/// Entities occupy rows 0..10 of the meaning table, actions rows 10..18.
pub const N_MEANING_ROWS: usize = N_ENTITIES + N_ACTIONS;
const N_ROLES: usize = 3;

fn action_row(a: u8) -> usize {
    N_ENTITIES + a as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerNet {
    pub meaning_emb: ParamId,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub gru: GruParams,
    pub word_emb: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListenerNet {
    pub word_emb: ParamId,
    pub gru: GruParams,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub meaning_emb: ParamId,
}

impl SpeakerNet {
    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.meaning_emb, self.init_w, self.init_b, self.word_emb, self.out_b];
        v.extend(self.gru.ids());
        v
    }
}

impl ListenerNet {
    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.word_emb, self.proj_w, self.proj_b, self.meaning_emb];
        v.extend(self.gru.ids());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub id: usize,
    pub store: ParamStore,
    pub speaker: SpeakerNet,
    pub listener: ListenerNet,
    /// Interactive turns since the last self-play turn.
    pub activation: u32,
    /// Communication-phase optimizers, created on the first RL update.
    pub rl_optim: Option<RoleOptimizers>,
}

/// One Adam state for the speaking network and one for the listening network.
/// The tied tables appear in both.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleOptimizers {
    pub speaker: Adam,
    pub listener: Adam,
}

impl RoleOptimizers {
    pub fn new(a: &Agent, lr: f64) -> Self {
        RoleOptimizers {
            speaker: Adam::new(&a.store, &a.speaker.params(), lr),
            listener: Adam::new(&a.store, &a.listener.params(), lr),
        }
    }
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(id: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let meaning_emb = store.add_uniform(
            "meaning_emb",
            &[N_MEANING_ROWS, MEANING_DIM],
            1.0 / (MEANING_DIM as f64).sqrt(),
            rng,
        );
        let word_emb = store.add_uniform(
            "word_emb",
            &[N_WORD_ROWS, WORD_DIM],
            1.0 / (WORD_DIM as f64).sqrt(),
            rng,
        );
        let b16 = 1.0 / (HIDDEN as f64).sqrt();
        let b24 = 1.0 / ((N_ROLES * MEANING_DIM) as f64).sqrt();
        let init_w = store.add_uniform("speaker.init_w", &[HIDDEN, N_ROLES * MEANING_DIM], b24, rng);
        let init_b = store.add_uniform("speaker.init_b", &[HIDDEN], b24, rng);
        let sgru = GruParams::init(&mut store, "speaker.gru", WORD_DIM, HIDDEN, rng);
        let out_b = store.add_uniform("speaker.out_b", &[N_DECODER_OUT], b16, rng);
        let lgru = GruParams::init(&mut store, "listener.gru", WORD_DIM, HIDDEN, rng);
        let proj_w = store.add_uniform("listener.proj_w", &[N_ROLES * MEANING_DIM, HIDDEN], b16, rng);
        let proj_b = store.add_uniform("listener.proj_b", &[N_ROLES * MEANING_DIM], b16, rng);
        Agent {
            id,
            speaker: SpeakerNet {
                meaning_emb,
                init_w,
                init_b,
                gru: sgru,
                word_emb,
                out_b,
            },
            listener: ListenerNet {
                word_emb,
                gru: lgru,
                proj_w,
                proj_b,
                meaning_emb,
            },
            store,
            activation: 0,
            rl_optim: None,
        }
    }

    /// Replaces the listener's aliases with private copies. Only useful as a
    /// negative control for [`assert_tied`].
    pub fn untie(&mut self) {
        self.listener.meaning_emb = self.store.duplicate(self.speaker.meaning_emb, "listener.meaning_emb");
        self.listener.word_emb = self.store.duplicate(self.speaker.word_emb, "listener.word_emb");
    }

    pub fn speak<R: Rng + ?Sized>(&self, m: &Meaning, mode: DecodeMode, rng: &mut R) -> (Utterance, Vec<f64>) {
        let decode = match mode {
            DecodeMode::Greedy => Decode::Greedy,
            DecodeMode::Sample => Decode::Sample(rng),
        };
        let trace = speaker_decode(&self.speaker, self.store.values(), m, decode);
        let lps = trace.steps.iter().map(|s| s.log_probs[s.target.index()]).collect();
        (trace.utterance(), lps)
    }

    pub fn speak_greedy(&self, m: &Meaning) -> Utterance {
        speaker_decode::<ChaCha8Rng>(&self.speaker, self.store.values(), m, Decode::Greedy).utterance()
    }

    /// Per-role argmax prediction with the three log-probability vectors
    /// (action over 8, agent over 10, patient over 10).
    pub fn listen(&self, u: &Utterance) -> Result<(Meaning, [Vec<f64>; 3])> {
        let t = listener_forward(&self.listener, self.store.values(), u)?;
        Ok((t.prediction(), t.log_probs))
    }

    pub fn to_checkpoint(&self) -> String {
        format!(
            "agent v1\nid {}\nactivation {}\n{}",
            self.id,
            self.activation,
            self.store.to_manifest()
        )
    }

    pub fn from_checkpoint(text: &str) -> Result<Agent> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut it = text.splitn(4, '\n');
        if it.next() != Some("agent v1") {
            return Err(bad("missing `agent v1` header"));
        }
        let field = |line: Option<&str>, key: &str| -> Result<u64> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("missing {key}")))
        };
        let id = field(it.next(), "id ")? as usize;
        let activation = field(it.next(), "activation ")? as u32;
        let store = ParamStore::from_manifest(it.next().unwrap_or(""))?;
        let get = |name: &str| store.find(name).ok_or_else(|| bad(&format!("missing tensor {name}")));
        let gru = |prefix: &str| -> Result<GruParams> {
            Ok(GruParams {
                w_ih: get(&format!("{prefix}.w_ih"))?,
                w_hh: get(&format!("{prefix}.w_hh"))?,
                b_ih: get(&format!("{prefix}.b_ih"))?,
                b_hh: get(&format!("{prefix}.b_hh"))?,
                input: WORD_DIM,
                hidden: HIDDEN,
            })
        };
        let meaning_emb = get("meaning_emb")?;
        let word_emb = get("word_emb")?;
        let speaker = SpeakerNet {
            meaning_emb,
            init_w: get("speaker.init_w")?,
            init_b: get("speaker.init_b")?,
            gru: gru("speaker.gru")?,
            word_emb,
            out_b: get("speaker.out_b")?,
        };
        let listener = ListenerNet {
            word_emb: store.find("listener.word_emb").unwrap_or(word_emb),
            gru: gru("listener.gru")?,
            proj_w: get("listener.proj_w")?,
            proj_b: get("listener.proj_b")?,
            meaning_emb: store.find("listener.meaning_emb").unwrap_or(meaning_emb),
        };
        Ok(Agent {
            id,
            store,
            speaker,
            listener,
            activation,
            rl_optim: None,
        })
    }
}

/// True iff the speaker's meaning table is the listener's output table and
/// the listener's word table is the speaker's output table, as one storage.
pub fn assert_tied(a: &Agent) -> bool {
    a.speaker.meaning_emb == a.listener.meaning_emb && a.speaker.word_emb == a.listener.word_emb
}

// ---- speaker ----

pub enum Decode<'r, R: Rng + ?Sized> {
    Teacher(&'r Utterance),
    Greedy,
    Sample(&'r mut R),
}

#[derive(Clone, Debug)]
pub struct SpeakerStep {
    pub input: Token,
    pub cache: GruCache,
    pub h: Vec<f64>,
    /// Over the decoder output rows (surface words + EOS).
    pub log_probs: Vec<f64>,
    pub target: Token,
}

#[derive(Clone, Debug)]
pub struct SpeakerTrace {
    pub meaning: Meaning,
    pub encoded: Vec<f64>,
    pub steps: Vec<SpeakerStep>,
}

impl SpeakerTrace {
    pub fn utterance(&self) -> Utterance {
        Utterance(self.steps.iter().map(|s| s.target).filter(|t| t.is_surface()).collect())
    }

    /// Σ log p(w_i | w_<i, m) over every decoded step, EOS included.
    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_probs[s.target.index()]).sum()
    }
}

/// Role slots (action, agent, patient) of the tied meaning table, side by side.
fn encode_meaning(net: &SpeakerNet, v: Values<'_>, m: &Meaning) -> Vec<f64> {
    let emb = v.get(net.meaning_emb);
    let mut e = Vec::with_capacity(N_ROLES * MEANING_DIM);
    for row in slot_rows(m) {
        e.extend_from_slice(&emb[row * MEANING_DIM..(row + 1) * MEANING_DIM]);
    }
    e
}

fn slot_rows(m: &Meaning) -> [usize; N_ROLES] {
    [action_row(m.action), m.agent as usize, m.patient as usize]
}

fn word_row(emb: &[f64], t: Token) -> &[f64] {
    &emb[t.index() * WORD_DIM..(t.index() + 1) * WORD_DIM]
}

/// Runs the decoder. The first step cannot emit EOS, so utterances hold
/// 1..=10 surface words; decoding also stops after 10 words without EOS.
pub fn speaker_decode<R: Rng + ?Sized>(
    net: &SpeakerNet,
    v: Values<'_>,
    m: &Meaning,
    mut mode: Decode<'_, R>,
) -> SpeakerTrace {
    let encoded = encode_meaning(net, v, m);
    let mut h = vec![0.0; HIDDEN];
    affine(v.get(net.init_w), Some(v.get(net.init_b)), &encoded, &mut h);
    let words = v.get(net.word_emb);
    let out_b = v.get(net.out_b);
    let mut steps = Vec::with_capacity(MAX_UTTERANCE_LEN + 1);
    let mut input = BOS;
    let mut emitted = 0;
    loop {
        let (h_new, cache) = gru_step(&net.gru, v, word_row(words, input), &h).expect("fixed dimensions");
        let mut logits: Vec<f64> = (0..N_DECODER_OUT)
            .map(|k| dot(&words[k * WORD_DIM..(k + 1) * WORD_DIM], &h_new) + out_b[k])
            .collect();
        if steps.is_empty() {
            logits[EOS.index()] = f64::NEG_INFINITY;
        }
        let log_probs = log_softmax(&logits);
        let target = match &mut mode {
            Decode::Teacher(u) => u.tokens().get(emitted).copied().unwrap_or(EOS),
            Decode::Greedy => Token(argmax(&log_probs) as u8),
            Decode::Sample(rng) => {
                let mut x: f64 = rng.gen();
                let mut pick = N_DECODER_OUT - 1;
                for (k, lp) in log_probs.iter().enumerate() {
                    x -= lp.exp();
                    if x < 0.0 {
                        pick = k;
                        break;
                    }
                }
                // guard against rounding landing on a masked entry
                if log_probs[pick] == f64::NEG_INFINITY {
                    pick = argmax(&log_probs);
                }
                Token(pick as u8)
            }
        };
        steps.push(SpeakerStep {
            input,
            cache,
            h: h_new.clone(),
            log_probs,
            target,
        });
        h = h_new;
        if target == EOS {
            break;
        }
        emitted += 1;
        if emitted == MAX_UTTERANCE_LEN {
            break;
        }
        input = target;
    }
    SpeakerTrace {
        meaning: *m,
        encoded,
        steps,
    }
}

/// Accumulates gradients of `scale · Σ_t −log p(target_t) − entropy_coef · Σ_t H_t`.
pub fn speaker_backward(
    net: &SpeakerNet,
    v: Values<'_>,
    g: &mut Grads<'_>,
    trace: &SpeakerTrace,
    scale: f64,
    entropy_coef: f64,
) {
    let words = v.get(net.word_emb);
    let mut dh = vec![0.0; HIDDEN];
    for step in trace.steps.iter().rev() {
        let probs: Vec<f64> = step.log_probs.iter().map(|l| l.exp()).collect();
        let mut dlogits = nll_logit_grad(&step.log_probs, step.target.index(), scale);
        if entropy_coef != 0.0 {
            let ent: f64 = probs
                .iter()
                .zip(&step.log_probs)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, l)| -p * l)
                .sum();
            for k in 0..N_DECODER_OUT {
                if probs[k] > 0.0 {
                    dlogits[k] += entropy_coef * probs[k] * (step.log_probs[k] + ent);
                }
            }
        }
        add_acc(g.get(net.out_b), &dlogits);
        {
            let gw = g.get(net.word_emb);
            outer_acc(&mut gw[..N_DECODER_OUT * WORD_DIM], &dlogits, &step.h);
        }
        affine_t_acc(&words[..N_DECODER_OUT * WORD_DIM], &dlogits, &mut dh);
        let (dx, dh_prev) = gru_backward(&net.gru, v, g, &step.cache, &dh);
        let i = step.input.index();
        add_acc(&mut g.get(net.word_emb)[i * WORD_DIM..(i + 1) * WORD_DIM], &dx);
        dh = dh_prev;
    }
    outer_acc(g.get(net.init_w), &dh, &trace.encoded);
    add_acc(g.get(net.init_b), &dh);
    let mut de = vec![0.0; N_ROLES * MEANING_DIM];
    affine_t_acc(v.get(net.init_w), &dh, &mut de);
    let gm = g.get(net.meaning_emb);
    for (slot, row) in slot_rows(&trace.meaning).into_iter().enumerate() {
        add_acc(
            &mut gm[row * MEANING_DIM..(row + 1) * MEANING_DIM],
            &de[slot * MEANING_DIM..(slot + 1) * MEANING_DIM],
        );
    }
}

/// Gradient of `scale · −log softmax(z)[target]` w.r.t. the logits `z`,
/// given `log softmax(z)`. Masked entries (−∞) get zero gradient.
pub fn nll_logit_grad(log_probs: &[f64], target: usize, scale: f64) -> Vec<f64> {
    let mut d: Vec<f64> = log_probs.iter().map(|l| scale * l.exp()).collect();
    d[target] -= scale;
    d
}

// ---- listener ----

#[derive(Clone, Debug)]
pub struct ListenerTrace {
    pub tokens: Vec<Token>,
    pub caches: Vec<GruCache>,
    pub h: Vec<f64>,
    pub query: Vec<f64>,
    /// action (8), agent (10), patient (10)
    pub log_probs: [Vec<f64>; 3],
}

impl ListenerTrace {
    pub fn prediction(&self) -> Meaning {
        Meaning {
            action: argmax(&self.log_probs[0]) as u8,
            agent: argmax(&self.log_probs[1]) as u8,
            patient: argmax(&self.log_probs[2]) as u8,
        }
    }

    /// Σ over roles of log p(role value of m | u).
    pub fn log_likelihood(&self, m: &Meaning) -> f64 {
        self.log_probs[0][m.action as usize]
            + self.log_probs[1][m.agent as usize]
            + self.log_probs[2][m.patient as usize]
    }
}

/// Candidate meaning-table rows for each role head.
fn role_rows(role: usize) -> std::ops::Range<usize> {
    if role == 0 {
        N_ENTITIES..N_MEANING_ROWS
    } else {
        0..N_ENTITIES
    }
}

fn role_targets(m: &Meaning) -> [usize; 3] {
    [m.action as usize, m.agent as usize, m.patient as usize]
}

pub fn listener_forward(net: &ListenerNet, v: Values<'_>, u: &Utterance) -> Result<ListenerTrace> {
    if u.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let words = v.get(net.word_emb);
    let mut h = vec![0.0; HIDDEN];
    let mut caches = Vec::with_capacity(u.len());
    for &t in u.tokens() {
        if t.index() >= N_WORD_ROWS {
            return Err(Error::Dimension(format!("token {} outside the word table", t.0)));
        }
        let (h_new, cache) = gru_step(&net.gru, v, word_row(words, t), &h)?;
        caches.push(cache);
        h = h_new;
    }
    let mut query = vec![0.0; N_ROLES * MEANING_DIM];
    affine(v.get(net.proj_w), Some(v.get(net.proj_b)), &h, &mut query);
    let emb = v.get(net.meaning_emb);
    let log_probs = [0, 1, 2].map(|role| {
        let q = &query[role * MEANING_DIM..(role + 1) * MEANING_DIM];
        let scores: Vec<f64> = role_rows(role)
            .map(|r| dot(q, &emb[r * MEANING_DIM..(r + 1) * MEANING_DIM]))
            .collect();
        log_softmax(&scores)
    });
    Ok(ListenerTrace {
        tokens: u.tokens().to_vec(),
        caches,
        h,
        query,
        log_probs,
    })
}

/// Accumulates gradients of `scale · −Σ_roles log p(role value of m | u)`.
pub fn listener_backward(
    net: &ListenerNet,
    v: Values<'_>,
    g: &mut Grads<'_>,
    trace: &ListenerTrace,
    m: &Meaning,
    scale: f64,
) {
    let emb = v.get(net.meaning_emb);
    let targets = role_targets(m);
    let mut dq = vec![0.0; N_ROLES * MEANING_DIM];
    for role in 0..N_ROLES {
        let q = &trace.query[role * MEANING_DIM..(role + 1) * MEANING_DIM];
        let dqr = &mut dq[role * MEANING_DIM..(role + 1) * MEANING_DIM];
        let gm = g.get(net.meaning_emb);
        for (k, r) in role_rows(role).enumerate() {
            let mut ds = scale * trace.log_probs[role][k].exp();
            if k == targets[role] {
                ds -= scale;
            }
            let row = r * MEANING_DIM..(r + 1) * MEANING_DIM;
            for (d, e) in dqr.iter_mut().zip(&emb[row.clone()]) {
                *d += ds * e;
            }
            for (gr, qv) in gm[row].iter_mut().zip(q) {
                *gr += ds * qv;
            }
        }
    }
    outer_acc(g.get(net.proj_w), &dq, &trace.h);
    add_acc(g.get(net.proj_b), &dq);
    let mut dh = vec![0.0; HIDDEN];
    affine_t_acc(v.get(net.proj_w), &dq, &mut dh);
    for (cache, &t) in trace.caches.iter().zip(&trace.tokens).rev() {
        let (dx, dh_prev) = gru_backward(&net.gru, v, g, cache, &dh);
        let i = t.index();
        add_acc(&mut g.get(net.word_emb)[i * WORD_DIM..(i + 1) * WORD_DIM], &dx);
        dh = dh_prev;
    }
}
