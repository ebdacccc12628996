use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use attkgcn_cli::config::ExperimentConfig;
use attkgcn_cli::{
    cmd_build_graph, cmd_eval, cmd_predict, cmd_sweep, cmd_synth, cmd_train, threads_from_env,
    CmdResult, Failure,
};
use clap::{Parser, Subcommand};

/// Attribute knowledge-graph GCN re-identification experiments.
#[derive(Debug, Parser)]
#[command(name = "attkgcn", version)]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// full, no_reweight or baseline.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// softmax or sigmoid.
    #[arg(long, global = true)]
    head: Option<String>,
    /// cosine or euclidean.
    #[arg(long, global = true)]
    distance: Option<String>,
    /// Re-check retrieval metrics against the brute-force oracle.
    #[arg(long, global = true)]
    oracle: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the attribute co-occurrence graph from annotations.
    BuildGraph {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Number of strongest edges to print.
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Train a model and write a checkpoint plus the per-epoch report.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain over a list of values of one parameter.
    Sweep {
        /// lambda, layers or variant.
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults come from the config.
        #[arg(long)]
        values: Option<String>,
    },
    /// Write a synthetic dataset.
    Synth,
    /// Attribute scores and top-k gallery matches for test images.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image ids to score; defaults to every query.
        #[arg(long = "image-id")]
        image_ids: Vec<u32>,
        #[arg(long)]
        top_k: Option<usize>,
    },
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{e}"))
}

fn config(cli: &Cli) -> CmdResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let here = std::path::Path::new(".");
    let overrides = [
        ("seed", cli.seed.map(|s| s.to_string())),
        ("variant", cli.variant.clone()),
        ("head", cli.head.clone()),
        ("distance", cli.distance.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v, here).map_err(|e| usage(format!("--{key} {v}: {e}")))?;
        }
    }
    if cli.oracle {
        cfg.oracle = true;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CmdResult<String> {
    let cfg = config(cli)?;
    let threads = threads_from_env()?;
    match &cli.command {
        Command::BuildGraph {
            annotations,
            schema,
            top_k,
        } => {
            let annotations = annotations
                .clone()
                .or_else(|| cfg.annotations.clone())
                .ok_or_else(|| usage("no annotations given (--annotations or `annotations` key)"))?;
            let schema = schema
                .clone()
                .or_else(|| cfg.schema.clone())
                .ok_or_else(|| usage("no schema given (--schema or `schema` key)"))?;
            cmd_build_graph(&annotations, &schema, &cfg.out_dir, *top_k)
        }
        Command::Train => cmd_train(&cfg),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint.as_deref(), threads),
        Command::Sweep { param, values } => cmd_sweep(&cfg, param, values.as_deref(), threads),
        Command::Synth => cmd_synth(&cfg),
        Command::Predict {
            checkpoint,
            image_ids,
            top_k,
        } => {
            let mut cfg = cfg;
            if let Some(k) = top_k {
                cfg.top_k = *k;
            }
            cmd_predict(&cfg, checkpoint.as_deref(), image_ids, threads)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
