use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gwdial::game::Split;
use gwdial_cli::analyze::{run_analysis, AnalyzeOptions};
use gwdial_cli::bound::{cells_for, cmd_bound, print_table, write_csv};
use gwdial_cli::config::{parse_config, ConfigFlags};
use gwdial_cli::eval::{cmd_eval, cmd_gendata};
use gwdial_cli::play::{cmd_play, PlayOptions};
use gwdial_cli::train::{cmd_resume, cmd_train};
use gwdial_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "gwdial", version, about = "Train and study agents that learn to play Guess Who? together")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::All => Split::All,
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train one run, or a grid of runs, from defaults, a JSON file and flags.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
    },
    /// Exact upper bound on success for a perfect asker.
    Bound {
        #[arg(long, default_value_t = 24)]
        pool: u64,
        /// Answer vocabulary sizes; each allows 2^words cells.
        #[arg(long, value_delimiter = ',', conflicts_with = "cells")]
        words: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        cells: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u64, 4])]
        held: Vec<u64>,
        /// Cross-check with this many Monte Carlo trials.
        #[arg(long)]
        verify: Option<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Protocols, answer partition, distances, embedding or homograph rate.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        which: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        contexts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5.0)]
        perplexity: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a trained asker's questions yourself.
    Play {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slot you hold, 1-based; prompted for when absent.
        #[arg(long)]
        slot: Option<usize>,
        /// Where to write the held images (default: beside the checkpoint).
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        no_color: bool,
    },
    /// Write a synthetic image pool as PPM files.
    Gendata {
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GWDIAL_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("GWDIAL_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut log = io::stderr();
    match cli.command {
        Command::Train { config, resume, flags } => {
            if let Some(ck) = resume {
                let o = cmd_resume(&ck, &mut log)?;
                let _ = writeln!(out, "resumed run finished in {}", o.dir.display());
                return Ok(());
            }
            let cfg = parse_config(config.as_deref(), &flags, env_seed()?)?;
            for o in cmd_train(&cfg, &mut log)? {
                let reward = o
                    .last
                    .as_ref()
                    .and_then(|r| r.eval_reward_mean)
                    .map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
                let _ = writeln!(out, "{}\tseed {}\teval {reward}", o.dir.display(), o.seed);
            }
        }
        Command::Eval { checkpoint, episodes, seed, split } => {
            let s = cmd_eval(&checkpoint, episodes, seed, split.into())?;
            let _ = writeln!(out, "reward {:.4} +/- {:.4} over {} episodes", s.mean, s.stderr, s.rewards.len());
        }
        Command::Bound { pool, words, cells, held, verify, csv, seed } => {
            let cells = if !words.is_empty() {
                cells_for(&words)
            } else if !cells.is_empty() {
                cells
            } else {
                cells_for(&[1, 2])
            };
            let rows = cmd_bound(pool, &cells, &held, verify, seed)?;
            print_table(&rows, &mut out);
            if let Some(p) = csv {
                write_csv(&rows, &p)?;
            }
        }
        Command::Analyze { checkpoint, which, count, contexts, seed, perplexity, out: dir } => {
            let opts = AnalyzeOptions { count, contexts, seed, perplexity };
            for p in run_analysis(&checkpoint, &which, &opts, dir.as_deref(), &mut log)? {
                let _ = writeln!(out, "{}", p.display());
            }
        }
        Command::Play { checkpoint, seed, slot, export, no_color } => {
            let opts = PlayOptions { seed, slot, export, color: !no_color };
            let stdin = io::stdin();
            let mut input = stdin.lock();
            cmd_play(&checkpoint, opts, &mut input, &mut out)?;
        }
        Command::Gendata { count, seed, out: dir } => {
            cmd_gendata(count, seed, &dir)?;
            let _ = writeln!(out, "wrote {count} images to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
