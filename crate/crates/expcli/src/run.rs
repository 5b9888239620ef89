use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use popcomm::agent::Agent;
use popcomm::lang::{build_dataset, Dataset, GrammarSpec, SplitProfile};
use popcomm::metrics::{acc_self, group_profile, production_profile, PreferenceProfile};
use popcomm::population::{complete_graph, run_group, EvalEvery, Group, RecordKind, ScheduleConfig, TurnRecord};
use popcomm::training::{self_turn, sl_train, RlConfig, SlConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{conditions, eval_name, Condition, ConditionKind, ExperimentConfig};
use crate::error::{Error, IoContext, Result};
use crate::seed::{derive_seed, job_seed};

pub const SCHEMA_VERSION: u32 = 1;
pub const TURNS_FILE: &str = "turns.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const TURNS_HEADER: &str = "condition,group,round,turn,kind,speaker,listener,acc_inter,acc_self_spk,acc_self_lst";
pub const PROFILES_HEADER: &str = "condition,group,scope,agent,stage,grammar,acc_self,p_sov,p_marker,\
p_marker_given_sov,p_marker_given_osv,order_entropy,n_classifiable,n_total,mean_length";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRow {
    pub condition: String,
    pub group: usize,
    pub round: usize,
    pub turn: usize,
    pub kind: String,
    pub speaker: Option<usize>,
    pub listener: Option<usize>,
    pub acc_inter: Option<f64>,
    pub acc_self_spk: Option<f64>,
    pub acc_self_lst: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub condition: String,
    pub group: usize,
    /// `agent` or `group` (pooled over all members).
    pub scope: String,
    pub agent: Option<usize>,
    /// `sl` (before communication) or `final`.
    pub stage: String,
    pub grammar: String,
    pub acc_self: Option<f64>,
    pub p_sov: Option<f64>,
    pub p_marker: Option<f64>,
    pub p_marker_given_sov: Option<f64>,
    pub p_marker_given_osv: Option<f64>,
    pub order_entropy: Option<f64>,
    pub n_classifiable: usize,
    pub n_total: usize,
    pub mean_length: Option<f64>,
}

impl ProfileRow {
    fn new(
        cond: &str,
        group: usize,
        agent: Option<usize>,
        stage: &str,
        grammar: String,
        acc: f64,
        p: &PreferenceProfile,
    ) -> Self {
        ProfileRow {
            condition: cond.to_string(),
            group,
            scope: if agent.is_some() { "agent" } else { "group" }.to_string(),
            agent,
            stage: stage.to_string(),
            grammar,
            acc_self: Some(acc),
            p_sov: p.p_sov,
            p_marker: p.p_marker,
            p_marker_given_sov: p.p_marker_given_sov,
            p_marker_given_osv: p.p_marker_given_osv,
            order_entropy: p.order_entropy,
            n_classifiable: p.n_classifiable,
            n_total: p.n_total,
            mean_length: p.mean_length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCondition {
    pub name: String,
    pub kind: String,
    pub grammars: Vec<String>,
    pub group_size: usize,
    /// Rounds for groups, self-play turns for self-play conditions.
    pub rounds: usize,
    pub sigma: Option<String>,
    pub n_groups: usize,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub package_version: String,
    pub preset: String,
    pub scale: crate::config::Scale,
    pub master_seed: u64,
    pub precision: String,
    pub eval: String,
    pub threads: usize,
    pub turns_header: String,
    pub profiles_header: String,
    pub conditions: Vec<ManifestCondition>,
    pub complete: bool,
}

/// Output of one group, run end to end by a single worker.
#[derive(Clone, Debug, Default)]
pub struct JobOutput {
    pub turns: Vec<TurnRow>,
    pub profiles: Vec<ProfileRow>,
    pub agents: Vec<Agent>,
}

fn record_row(cond: &str, group: usize, r: &TurnRecord) -> TurnRow {
    TurnRow {
        condition: cond.to_string(),
        group,
        round: r.round,
        turn: r.turn,
        kind: r.kind.as_str().to_string(),
        speaker: r.speaker,
        listener: r.listener,
        acc_inter: r.acc_inter,
        acc_self_spk: r.acc_self_spk,
        acc_self_lst: r.acc_self_lst,
    }
}

fn self_row(cond: &str, group: usize, turn: usize, kind: RecordKind, acc: f64) -> TurnRow {
    TurnRow {
        condition: cond.to_string(),
        group,
        round: 0,
        turn,
        kind: kind.as_str().to_string(),
        speaker: Some(0),
        listener: Some(0),
        acc_inter: None,
        acc_self_spk: Some(acc),
        acc_self_lst: Some(acc),
    }
}

fn joined(grammars: &[GrammarSpec]) -> String {
    grammars.iter().map(|g| g.name()).collect::<Vec<_>>().join("|")
}

fn profile_rows(
    cond: &str,
    group: usize,
    stage: &str,
    agents: &[Agent],
    grammars: &[GrammarSpec],
    test: &[popcomm::lang::Meaning],
) -> Vec<ProfileRow> {
    let mut rows = Vec::with_capacity(agents.len() + 1);
    let mut accs = Vec::with_capacity(agents.len());
    for (k, (a, g)) in agents.iter().zip(grammars).enumerate() {
        let acc = acc_self(a, test);
        accs.push(acc);
        rows.push(ProfileRow::new(
            cond,
            group,
            Some(k),
            stage,
            g.name(),
            acc,
            &production_profile(a, test),
        ));
    }
    let refs: Vec<&Agent> = agents.iter().collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    rows.push(ProfileRow::new(
        cond,
        group,
        None,
        stage,
        joined(grammars),
        mean,
        &group_profile(&refs, test),
    ));
    rows
}

fn trained_agent(id: usize, d: &Dataset, seed: u64) -> Result<Agent> {
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, "agent", id as u64));
    let mut a = Agent::new(id, &mut init);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sl", id as u64));
    sl_train(&mut a, d, &SlConfig::default(), &mut rng)?;
    Ok(a)
}

/// Builds, trains and runs group `group` of `cond`.
pub fn run_job(cond: &Condition, group: usize, master_seed: u64, eval: EvalEvery) -> Result<JobOutput> {
    let seed = job_seed(master_seed, &cond.name, group);
    let name = cond.name.as_str();
    let mut out = JobOutput::default();
    match &cond.kind {
        ConditionKind::SelfPlay { grammar, turns } => {
            let d = build_dataset(grammar, seed, SplitProfile::Replication)?;
            let mut a = trained_agent(0, &d, seed)?;
            let grammars = [*grammar];
            out.turns
                .push(self_row(name, group, 0, RecordKind::Sl, acc_self(&a, &d.test)));
            out.profiles.extend(profile_rows(
                name,
                group,
                "sl",
                std::slice::from_ref(&a),
                &grammars,
                &d.test,
            ));
            let cfg = RlConfig::for_profile(SplitProfile::Replication);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rl", 0));
            for t in 1..=*turns {
                self_turn(&mut a, &d, &cfg, &mut rng)?;
                if eval == EvalEvery::Turn {
                    out.turns
                        .push(self_row(name, group, t, RecordKind::SelfPlay, acc_self(&a, &d.test)));
                }
            }
            out.turns
                .push(self_row(name, group, *turns, RecordKind::Final, acc_self(&a, &d.test)));
            out.profiles.extend(profile_rows(
                name,
                group,
                "final",
                std::slice::from_ref(&a),
                &grammars,
                &d.test,
            ));
            out.agents.push(a);
        }
        ConditionKind::Group {
            grammars,
            rounds,
            sigma,
        } => {
            let datasets = grammars
                .iter()
                .map(|g| build_dataset(g, seed, SplitProfile::Interactive))
                .collect::<popcomm::Result<Vec<_>>>()?;
            let agents = datasets
                .iter()
                .enumerate()
                .map(|(k, d)| trained_agent(k, d, seed))
                .collect::<Result<Vec<_>>>()?;
            let test = datasets[0].test.clone();
            out.profiles
                .extend(profile_rows(name, group, "sl", &agents, grammars, &test));
            let graph = complete_graph(grammars.len())?;
            let mut grp = Group::new(agents, datasets, RlConfig::default(), eval, derive_seed(seed, "rl", 0))?;
            let schedule = ScheduleConfig {
                n_rounds: *rounds,
                sigma: *sigma,
                seed: derive_seed(seed, "schedule", 0),
            };
            let mut records: Vec<TurnRecord> = Vec::new();
            run_group(&mut grp, &graph, &schedule, &mut records)?;
            out.turns.extend(records.iter().map(|r| record_row(name, group, r)));
            out.profiles
                .extend(profile_rows(name, group, "final", &grp.agents, grammars, &test));
            out.agents = grp.agents;
        }
    }
    Ok(out)
}

fn manifest_for(cfg: &ExperimentConfig, conds: &[Condition], complete: bool) -> Manifest {
    Manifest {
        schema_version: SCHEMA_VERSION,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        preset: cfg.preset.as_str().to_string(),
        scale: cfg.scale,
        master_seed: cfg.master_seed,
        precision: "f64".to_string(),
        eval: eval_name(cfg.eval).to_string(),
        threads: cfg.threads,
        turns_header: TURNS_HEADER.to_string(),
        profiles_header: PROFILES_HEADER.to_string(),
        conditions: conds
            .iter()
            .map(|c| {
                let (kind, rounds, sigma) = match &c.kind {
                    ConditionKind::SelfPlay { turns, .. } => ("selfplay", *turns, None),
                    ConditionKind::Group { rounds, sigma, .. } => ("group", *rounds, Some(sigma.to_string())),
                };
                ManifestCondition {
                    name: c.name.clone(),
                    kind: kind.to_string(),
                    grammars: c.grammars().iter().map(|g| g.name()).collect(),
                    group_size: c.group_size(),
                    rounds,
                    sigma,
                    n_groups: c.n_groups,
                    seeds: (0..c.n_groups).map(|g| job_seed(cfg.master_seed, &c.name, g)).collect(),
                }
            })
            .collect(),
        complete,
    }
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(&path, text).at(&path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

fn part_path(dir: &Path, job: usize, what: &str) -> PathBuf {
    dir.join("parts").join(format!("job-{job:05}.{what}.csv"))
}

fn write_checkpoints(dir: &Path, cond: &str, group: usize, agents: &[Agent]) -> Result<()> {
    let d = dir.join("checkpoints").join(cond).join(format!("g{group:03}"));
    fs::create_dir_all(&d).at(&d)?;
    for a in agents {
        let p = d.join(format!("agent{}.ckpt", a.id));
        fs::write(&p, a.to_checkpoint()).at(&p)?;
    }
    Ok(())
}

fn merge_parts(dir: &Path, n_jobs: usize, what: &str, header: &str, target: &str) -> Result<()> {
    let path = dir.join(target);
    let mut out = fs::File::create(&path).at(&path)?;
    writeln!(out, "{header}").at(&path)?;
    for job in 0..n_jobs {
        let part = part_path(dir, job, what);
        let bytes = fs::read(&part).at(&part)?;
        out.write_all(&bytes).at(&path)?;
    }
    Ok(())
}

/// Runs every (condition, group) job of the preset on a bounded pool of
/// worker threads and writes `turns.csv`, `profiles.csv`, `manifest.json`
/// and agent checkpoints into `cfg.out`. Output bytes do not depend on the
/// thread count.
pub fn run_preset(cfg: &ExperimentConfig) -> Result<PathBuf> {
    run_preset_with(cfg, |_, _, _| {})
}

/// [`run_preset`] with a progress callback `(condition, group, finished_jobs)`.
pub fn run_preset_with(cfg: &ExperimentConfig, progress: impl Fn(&str, usize, usize) + Sync) -> Result<PathBuf> {
    let conds = conditions(cfg)?;
    let dir = cfg.out.clone();
    let parts = dir.join("parts");
    fs::create_dir_all(&parts).at(&parts)?;
    write_manifest(&dir, &manifest_for(cfg, &conds, false))?;

    let jobs: Vec<(usize, usize)> = conds
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.n_groups).map(move |g| (ci, g)))
        .collect();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = cfg.threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failure.lock().map(|f| f.is_some()).unwrap_or(true) {
                    return;
                }
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, g)) = jobs.get(j) else { return };
                let cond = &conds[ci];
                let res = run_job(cond, g, cfg.master_seed, cfg.eval).and_then(|o| {
                    write_rows(&part_path(&dir, j, "turns"), &o.turns)?;
                    write_rows(&part_path(&dir, j, "profiles"), &o.profiles)?;
                    if cfg.checkpoints {
                        write_checkpoints(&dir, &cond.name, g, &o.agents)?;
                    }
                    Ok(())
                });
                match res {
                    Ok(()) => progress(&cond.name, g, done.fetch_add(1, Ordering::SeqCst) + 1),
                    Err(e) => {
                        if let Ok(mut f) = failure.lock() {
                            f.get_or_insert(e);
                        }
                        return;
                    }
                }
            });
        }
    });
    match failure.into_inner() {
        Ok(Some(e)) => return Err(e),
        Ok(None) => {}
        Err(_) => return Err(Error::Worker(cfg.preset.as_str().to_string())),
    }

    merge_parts(&dir, jobs.len(), "turns", TURNS_HEADER, TURNS_FILE)?;
    merge_parts(&dir, jobs.len(), "profiles", PROFILES_HEADER, PROFILES_FILE)?;
    fs::remove_dir_all(&parts).at(&parts)?;
    write_manifest(&dir, &manifest_for(cfg, &conds, true))?;
    Ok(dir)
}

pub fn read_turns(dir: &Path) -> Result<Vec<TurnRow>> {
    read_csv(&dir.join(TURNS_FILE))
}

pub fn read_profiles(dir: &Path) -> Result<Vec<ProfileRow>> {
    read_csv(&dir.join(PROFILES_FILE))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
