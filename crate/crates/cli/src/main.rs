//! `normforge`: generate or ingest corpora, pre-train, embed and analyze.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print
//! `{"error": {"code", "module", "message"}}` on stderr and exit with 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use normforge::commands::{self, load_config, run_dir, CommandError, RunConfig};

const THREADS_VAR: &str = "NORMFORGE_THREADS";

#[derive(Parser)]
#[command(
    name = "normforge",
    version,
    about = "Norm-centric pre-training for discussion trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config (defaults to the built-in reference config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to runs/<command>-<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override such as train.lr=0.001; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for synthesis, training and analysis.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Validate external discussions and a community grouping into a corpus.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        grouping: Option<String>,
    },
    /// Pre-train an encoder on a corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<String>,
    },
    /// Embed every discussion of a corpus with a checkpoint.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        corpus: Option<String>,
    },
    /// Project embeddings to 2-D and score group separation.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: Option<String>,
    },
    /// Finite-difference check of the model gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn threads() -> Result<usize, CommandError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CommandError::config(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn set_path(slot: &mut Option<String>, flag: Option<String>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, CommandError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .map_err(|e| CommandError::config(e.to_string()))?;
    let (name, common) = match &cli.command {
        Command::Gen { common } => ("gen", common),
        Command::Ingest { common, .. } => ("ingest", common),
        Command::Pretrain { common, .. } => ("pretrain", common),
        Command::Embed { common, .. } => ("embed", common),
        Command::Analyze { common, .. } => ("analyze", common),
        Command::Gradcheck { common } => ("gradcheck", common),
    };
    let mut config: RunConfig = load_config(common.config.as_deref(), &common.sets, common.seed)?;
    let out = common.out.clone();
    let p = &mut config.paths;
    match cli.command {
        Command::Ingest { data, grouping, .. } => {
            set_path(&mut p.data, data);
            set_path(&mut p.grouping, grouping);
        }
        Command::Pretrain { corpus, .. } => set_path(&mut p.corpus, corpus),
        Command::Embed { checkpoint, corpus, .. } => {
            set_path(&mut p.checkpoint, checkpoint);
            set_path(&mut p.corpus, corpus);
        }
        Command::Analyze { embeddings, .. } => set_path(&mut p.embeddings, embeddings),
        Command::Gen { .. } | Command::Gradcheck { .. } => {}
    }
    let out = out.unwrap_or_else(|| run_dir(name, &config));
    let mut summary = match name {
        "gen" => commands::cmd_gen(&config, &out),
        "ingest" => commands::cmd_ingest(&config, &out),
        "pretrain" => commands::cmd_pretrain(&config, &out),
        "embed" => commands::cmd_embed(&config, &out),
        "analyze" => commands::cmd_analyze(&config, &out),
        _ => commands::cmd_gradcheck(&config, &out),
    }?;
    summary["out"] = out.display().to_string().into();
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
