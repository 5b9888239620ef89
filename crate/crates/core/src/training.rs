//! Supervised language learning and RL communication turns.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    listener_backward, listener_forward, speaker_backward, speaker_decode, Agent, Decode, RoleOptimizers, SpeakerTrace,
};
use crate::diffcore::Adam;
use crate::error::{Error, Result};
use crate::lang::{Dataset, Meaning, SplitProfile, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Speaker,
    Listener,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Speaker => "speaker",
            Role::Listener => "listener",
        }
    }
}

/// Which network trains in the first SL epoch; roles alternate afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternation {
    SpeakerFirst,
    ListenerFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alternation: Alternation,
    pub clip_norm: Option<f64>,
}

impl Default for SlConfig {
    fn default() -> Self {
        SlConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.01,
            alternation: Alternation::SpeakerFirst,
            clip_norm: None,
        }
    }
}

impl SlConfig {
    pub fn role_for_epoch(&self, epoch: usize) -> Role {
        let first = match self.alternation {
            Alternation::SpeakerFirst => Role::Speaker,
            Alternation::ListenerFirst => Role::Listener,
        };
        if epoch.is_multiple_of(2) {
            first
        } else if first == Role::Speaker {
            Role::Listener
        } else {
            Role::Speaker
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlConfig {
    pub learning_rate: f64,
    pub batches_per_turn: usize,
    pub batch_size: usize,
    /// Subtract the batch-mean reward from each reward (off by default).
    pub baseline: bool,
    /// Weight of an entropy bonus on the speaker policy (0 disables it).
    pub entropy_coef: f64,
    pub clip_norm: Option<f64>,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            learning_rate: 0.005,
            batches_per_turn: 10,
            batch_size: 32,
            baseline: false,
            entropy_coef: 0.0,
            clip_norm: None,
        }
    }
}

impl RlConfig {
    /// Interactive turns are 10 batches of 32; replication self-play turns
    /// cover the whole 480-pair training set in 15 batches.
    pub fn for_profile(profile: SplitProfile) -> Self {
        let mut cfg = RlConfig::default();
        cfg.batches_per_turn = profile.turn_meanings() / cfg.batch_size;
        cfg
    }

    pub fn meanings_per_turn(&self) -> usize {
        self.batches_per_turn * self.batch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub role: Role,
    pub mean_loss: f64,
}

/// Teacher-forced speaker loss on one batch; returns the mean loss.
pub fn speaker_sl_batch(a: &mut Agent, batch: &[(Meaning, Utterance)], opt: &mut Adam) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let (v, mut g) = a.store.split();
    for (m, u) in batch {
        let trace = speaker_decode::<ChaCha8Rng>(&a.speaker, v, m, Decode::Teacher(u));
        total -= trace.log_prob();
        speaker_backward(&a.speaker, v, &mut g, &trace, scale, 0.0);
    }
    opt.step(&mut a.store);
    total * scale
}

/// Three-role cross-entropy on one batch; returns the mean loss.
pub fn listener_sl_batch(a: &mut Agent, batch: &[(Meaning, Utterance)], opt: &mut Adam) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let (v, mut g) = a.store.split();
    for (m, u) in batch {
        let trace = listener_forward(&a.listener, v, u)?;
        total -= trace.log_likelihood(m);
        listener_backward(&a.listener, v, &mut g, &trace, m, scale);
    }
    opt.step(&mut a.store);
    Ok(total * scale)
}

/// Supervised learning with one role per epoch, alternating.
pub fn sl_train<R: Rng + ?Sized>(a: &mut Agent, d: &Dataset, cfg: &SlConfig, rng: &mut R) -> Result<Vec<EpochLoss>> {
    sl_train_with(a, d, cfg, rng, |_, _| {})
}

/// [`sl_train`] with a callback after every epoch.
pub fn sl_train_with<R: Rng + ?Sized>(
    a: &mut Agent,
    d: &Dataset,
    cfg: &SlConfig,
    rng: &mut R,
    mut after_epoch: impl FnMut(&Agent, &EpochLoss),
) -> Result<Vec<EpochLoss>> {
    if d.sl_train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    a.store.zero_grads();
    let mut spk_opt = Adam::new(&a.store, &a.speaker.params(), cfg.learning_rate);
    let mut lst_opt = Adam::new(&a.store, &a.listener.params(), cfg.learning_rate);
    spk_opt.clip_norm = cfg.clip_norm;
    lst_opt.clip_norm = cfg.clip_norm;
    let mut data = d.sl_train.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        data.shuffle(rng);
        let role = cfg.role_for_epoch(epoch);
        let mut sum = 0.0;
        let mut n = 0;
        for batch in data.chunks(cfg.batch_size) {
            let l = match role {
                Role::Speaker => speaker_sl_batch(a, batch, &mut spk_opt),
                Role::Listener => listener_sl_batch(a, batch, &mut lst_opt)?,
            };
            sum += l * batch.len() as f64;
            n += batch.len();
        }
        let rec = EpochLoss {
            epoch,
            role,
            mean_loss: sum / n as f64,
        };
        after_epoch(a, &rec);
        losses.push(rec);
    }
    Ok(losses)
}

/// r(m, û) = Σ_roles log p_listener(role value of m | û).
pub fn compute_reward(m: &Meaning, u_hat: &Utterance, listener: &Agent) -> Result<f64> {
    Ok(listener_forward(&listener.listener, listener.store.values(), u_hat)?.log_likelihood(m))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TurnStats {
    pub mean_reward: f64,
    /// Sampled speaker utterances in the order they were trained on.
    pub samples: Vec<(Meaning, Utterance)>,
}

fn ensure_rl_optim(a: &mut Agent, cfg: &RlConfig) {
    if a.rl_optim.is_none() {
        let mut o = RoleOptimizers::new(a, cfg.learning_rate);
        o.speaker.clip_norm = cfg.clip_norm;
        o.listener.clip_norm = cfg.clip_norm;
        a.rl_optim = Some(o);
    }
}

/// REINFORCE step on the speaker: loss = −r · Σ log p(ŵ_i | ŵ_<i, m), with r a
/// constant weight (minus the batch mean when `cfg.baseline` is set).
pub fn speaker_reinforce_step(a: &mut Agent, traces: &[SpeakerTrace], rewards: &[f64], cfg: &RlConfig) {
    ensure_rl_optim(a, cfg);
    let n = traces.len() as f64;
    let base = if cfg.baseline {
        rewards.iter().sum::<f64>() / n
    } else {
        0.0
    };
    {
        let (v, mut g) = a.store.split();
        for (trace, r) in traces.iter().zip(rewards) {
            speaker_backward(&a.speaker, v, &mut g, trace, (r - base) / n, cfg.entropy_coef / n);
        }
    }
    let opt = a.rl_optim.as_mut().expect("created above");
    opt.speaker.step(&mut a.store);
}

/// Listener ascent on r, i.e. three-role cross-entropy on the sampled pairs.
pub fn listener_reward_step(a: &mut Agent, pairs: &[(Meaning, Utterance)], cfg: &RlConfig) -> Result<()> {
    ensure_rl_optim(a, cfg);
    let scale = 1.0 / pairs.len() as f64;
    {
        let (v, mut g) = a.store.split();
        for (m, u) in pairs {
            let trace = listener_forward(&a.listener, v, u)?;
            listener_backward(&a.listener, v, &mut g, &trace, m, scale);
        }
    }
    let opt = a.rl_optim.as_mut().expect("created above");
    opt.listener.step(&mut a.store);
    Ok(())
}

/// One batch of the meaning reconstruction game. `listener = None` means self-play.
fn comm_batch<R: Rng + ?Sized>(
    speaker: &mut Agent,
    listener: Option<&mut Agent>,
    batch: &[Meaning],
    cfg: &RlConfig,
    rng: &mut R,
    stats: &mut TurnStats,
) -> Result<f64> {
    let traces: Vec<SpeakerTrace> = batch
        .iter()
        .map(|m| speaker_decode(&speaker.speaker, speaker.store.values(), m, Decode::Sample(rng)))
        .collect();
    let pairs: Vec<(Meaning, Utterance)> = traces.iter().map(|t| (t.meaning, t.utterance())).collect();
    let rewards = {
        let lst: &Agent = listener.as_deref().unwrap_or(speaker);
        pairs
            .iter()
            .map(|(m, u)| compute_reward(m, u, lst))
            .collect::<Result<Vec<f64>>>()?
    };
    speaker_reinforce_step(speaker, &traces, &rewards, cfg);
    match listener {
        Some(l) => listener_reward_step(l, &pairs, cfg)?,
        None => listener_reward_step(speaker, &pairs, cfg)?,
    }
    stats.samples.extend(pairs);
    Ok(rewards.iter().sum())
}

/// Runs the communication game over `meanings` in batches: the speaker
/// samples, the listener's log-likelihood is the reward, the speaker takes a
/// REINFORCE step and then the listener a reward-ascent step.
pub fn comm_update<R: Rng + ?Sized>(
    speaker: &mut Agent,
    mut listener: Option<&mut Agent>,
    meanings: &[Meaning],
    cfg: &RlConfig,
    rng: &mut R,
) -> Result<TurnStats> {
    let mut stats = TurnStats::default();
    let mut total = 0.0;
    for batch in meanings.chunks(cfg.batch_size) {
        total += comm_batch(speaker, listener.as_deref_mut(), batch, cfg, rng, &mut stats)?;
    }
    stats.mean_reward = total / meanings.len().max(1) as f64;
    Ok(stats)
}

/// Self-play: the agent's speaker talks to its own listener for one turn.
pub fn self_turn<R: Rng + ?Sized>(a: &mut Agent, d: &Dataset, cfg: &RlConfig, rng: &mut R) -> Result<TurnStats> {
    let meanings = d.sample_meanings(cfg.meanings_per_turn(), rng);
    comm_update(a, None, &meanings, cfg, rng)
}

/// One interactive turn; meanings come from the speaker's dataset.
/// Both participants' activation counters are incremented.
pub fn inter_turn<R: Rng + ?Sized>(
    speaker: &mut Agent,
    listener: &mut Agent,
    d: &Dataset,
    cfg: &RlConfig,
    rng: &mut R,
) -> Result<TurnStats> {
    if speaker.id == listener.id {
        return Err(Error::SameAgent);
    }
    let meanings = d.sample_meanings(cfg.meanings_per_turn(), rng);
    let stats = comm_update(speaker, Some(listener), &meanings, cfg, rng)?;
    speaker.activation += 1;
    listener.activation += 1;
    Ok(stats)
}
