use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popcomm::lang::{build_dataset, GrammarSpec, SplitProfile};
use popcomm::population::Sigma;
use popcomm_expcli::config::{conditions, parse_eval, ConditionKind};
use popcomm_expcli::{run_preset_with, summarize, Error, ExperimentConfig, Result, Scale, PRESETS};

#[derive(Parser)]
#[command(
    name = "popcomm",
    version,
    about = "Language learning and communication in agent populations"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a preset and write CSVs, manifest and checkpoints.
    Run {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Groups per condition (agents for self-play presets).
        #[arg(long)]
        seeds: Option<usize>,
        /// Self-play threshold: a positive integer or `inf`.
        #[arg(long)]
        sigma: Option<String>,
        /// Override rounds (self-play turns for self-play presets).
        #[arg(long)]
        rounds: Option<usize>,
        /// Comma-separated group sizes for the group-size preset.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// `turn` or `round` granularity for turns.csv.
        #[arg(long, default_value = "turn")]
        eval: String,
        #[arg(long)]
        out: PathBuf,
        /// Floating-point precision; only `f64` is supported.
        #[arg(long, default_value = "f64")]
        precision: String,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long)]
        no_checkpoints: bool,
        /// Also write summary.json when done.
        #[arg(long)]
        summarize: bool,
    },
    /// Aggregate a finished run directory into summary.json.
    Summarize { dir: PathBuf },
    /// Print a dataset split with its gold utterances.
    Dataset {
        #[arg(long)]
        grammar: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "interactive")]
        profile: String,
    },
    /// List presets and their conditions.
    Presets {
        #[arg(long, default_value = "desk")]
        scale: String,
    },
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            preset,
            scale,
            seeds,
            sigma,
            rounds,
            sizes,
            eval,
            out,
            precision,
            threads,
            master_seed,
            no_checkpoints,
            summarize: also_summarize,
        } => {
            if precision != "f64" {
                return Err(Error::Config(format!(
                    "precision {precision:?} is not supported; use f64"
                )));
            }
            let mut cfg = ExperimentConfig::new(preset.parse()?, scale.parse()?, out);
            cfg.seeds = seeds;
            cfg.sigma = sigma.map(|s| s.parse::<Sigma>()).transpose()?;
            cfg.rounds = rounds;
            cfg.sizes = sizes;
            cfg.eval = parse_eval(&eval)?;
            cfg.threads = threads.max(1);
            cfg.master_seed = master_seed;
            cfg.checkpoints = !no_checkpoints;
            let total: usize = conditions(&cfg)?.iter().map(|c| c.n_groups).sum();
            let dir = run_preset_with(&cfg, |cond, group, done| {
                eprintln!("[{done}/{total}] {cond} group {group}");
            })?;
            println!("{}", dir.display());
            if also_summarize {
                print_summary(&summarize(&dir)?);
            }
        }
        Cmd::Summarize { dir } => print_summary(&summarize(&dir)?),
        Cmd::Dataset { grammar, seed, profile } => {
            let g: GrammarSpec = grammar.parse()?;
            let p: SplitProfile = profile.parse()?;
            print!("{}", build_dataset(&g, seed, p)?.to_text());
        }
        Cmd::Presets { scale } => {
            let scale: Scale = scale.parse()?;
            for p in PRESETS {
                println!("{p}");
                for c in conditions(&ExperimentConfig::new(p, scale, "."))? {
                    let detail = match &c.kind {
                        ConditionKind::SelfPlay { turns, .. } => format!("{turns} self-play turns"),
                        ConditionKind::Group { rounds, sigma, .. } => format!("{rounds} rounds, sigma {sigma}"),
                    };
                    let grammars: Vec<String> = c.grammars().iter().map(|g| g.name()).collect();
                    println!("  {:<24} {} x [{}], {detail}", c.name, c.n_groups, grammars.join(", "));
                }
            }
        }
    }
    Ok(())
}

fn print_summary(s: &popcomm_expcli::Summary) {
    for c in &s.conditions {
        let f = |x: Option<popcomm_expcli::summary::Stat>| {
            x.map(|v| format!("{:.3}±{:.3}", v.mean, v.std))
                .unwrap_or_else(|| "-".into())
        };
        let r = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<24} acc_inter {} -> {}  acc_self {} -> {}  marker {}  rho {}",
            c.name,
            f(c.sl.acc_inter),
            f(c.last.acc_inter),
            f(c.sl.acc_self),
            f(c.last.acc_self),
            f(c.last.p_marker),
            r(c.last.rho_group)
        );
    }
    for k in &s.acceptance {
        let v = k.value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{} {} = {v} ({})",
            if k.pass { "PASS" } else { "FAIL" },
            k.criterion,
            k.threshold
        );
    }
}
