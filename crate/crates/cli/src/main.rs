//! Command-line front end. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 backend error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use headscope::error::{Error, Result};
use headscope::niah::Task;
use headscope::reranker::CandidateKind;

use headscope_cli::commands::mask_eval::ScopeChoice;
use headscope_cli::commands::{self, CmdContext};
use headscope_cli::config::RunConfig;
use headscope_cli::manifest::Clock;

#[derive(Parser)]
#[command(
    name = "headscope",
    version,
    about = "Detect retrieval heads in attention models on synthetic needle-in-a-haystack data, \
             analyze and causally test them, and reuse them as a re-ranker"
)]
struct Cli {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's backend kind (oracle | toy | binding).
    #[arg(long, global = true)]
    backend: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate detection datasets for the configured (task, length,
    /// ratio) grid.
    Gen {
        /// Restrict to one task.
        #[arg(long)]
        task: Option<Task>,
        /// Restrict to one context length (e.g. 8k).
        #[arg(long)]
        length: Option<String>,
        /// Number of needle depths (prefix of the configured grid).
        #[arg(long)]
        depths: Option<usize>,
        /// Restrict to one haystack image ratio.
        #[arg(long)]
        ratio: Option<f64>,
        /// Questions per condition.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score heads over generated datasets and select the top fraction.
    Detect {
        /// Selection fraction override (default 0.05).
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Sparsity, overlap, and layer-structure analysis of detect outputs.
    Analyze,
    /// Masked retrieval evaluation with random-head controls.
    #[command(name = "mask-eval")]
    MaskEval {
        /// Head-set file (detect output).
        #[arg(long)]
        heads: PathBuf,
        /// both | prefill_and_decode | decode_only
        #[arg(long, default_value = "both")]
        scope: String,
        /// Add random-head control draws of the same size.
        #[arg(long, default_value_t = false)]
        random_control: bool,
    },
    /// Rank candidate documents by selected-head attention.
    Rerank {
        /// Head-set file (detect output).
        #[arg(long)]
        heads: PathBuf,
        /// Query file (JSONL).
        #[arg(long)]
        queries: PathBuf,
        /// page | layout
        #[arg(long, default_value = "page")]
        kind: String,
        /// Comma-separated recall cutoffs.
        #[arg(long, default_value = "1,3,5,10")]
        ks: String,
        /// Subtract null-question scores.
        #[arg(long, default_value_t = true)]
        calibrate: bool,
        /// Rescale group scores by group size before merging.
        #[arg(long, default_value_t = false)]
        normalize_group_size: bool,
    },
    /// Emit plot tables and figures from persisted artifacts.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_with_output(PathBuf::from("runs/default")),
    };
    if let Some(seed) = cli.seed {
        config.seeds.base = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(kind) = &cli.backend {
        config.backend.kind = match kind.as_str() {
            "oracle" => headscope_cli::config::BackendKind::Oracle,
            "toy" => headscope_cli::config::BackendKind::Toy,
            "binding" => headscope_cli::config::BackendKind::Binding,
            other => return Err(Error::config(format!("unknown backend: {other}"))),
        };
    }
    config.validate()?;
    Ok(config)
}

fn parse_ks(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad k value: {s}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;

    // per-command config narrowing
    if let Command::Gen {
        task,
        length,
        depths,
        ratio,
        count,
    } = &cli.command
    {
        if let Some(task) = task {
            config.task.tasks = vec![*task];
        }
        if let Some(length) = length {
            headscope_cli::config::parse_length(length)?;
            config.task.lengths = vec![length.clone()];
        }
        if let Some(n) = depths {
            if *n == 0 || *n > config.task.depths.len() {
                return Err(Error::config(format!(
                    "depths must lie in 1..={}",
                    config.task.depths.len()
                )));
            }
            config.task.depths.truncate(*n);
        }
        if let Some(ratio) = ratio {
            config.task.ratios = vec![*ratio];
        }
        if let Some(count) = count {
            config.task.count = *count;
        }
    }
    if let Command::Detect { fraction: Some(f) } = &cli.command {
        config.selection.fraction = *f;
    }
    config.validate()?;

    let ctx = CmdContext::new(config, Clock::system());
    match cli.command {
        Command::Gen { .. } => {
            commands::cmd_gen(&ctx)?;
        }
        Command::Detect { .. } => {
            commands::cmd_detect(&ctx)?;
        }
        Command::Analyze => {
            commands::cmd_analyze(&ctx)?;
        }
        Command::MaskEval {
            heads,
            scope,
            random_control,
        } => {
            let scope: ScopeChoice = scope.parse()?;
            let seed = ctx.config.seeds.base;
            commands::cmd_mask_eval(&ctx, &heads, scope, random_control, seed)?;
        }
        Command::Rerank {
            heads,
            queries,
            kind,
            ks,
            calibrate,
            normalize_group_size,
        } => {
            let kind = match kind.as_str() {
                "page" => CandidateKind::Page,
                "layout" => CandidateKind::LayoutRegion,
                other => return Err(Error::config(format!("unknown candidate kind: {other}"))),
            };
            let ks = parse_ks(&ks)?;
            let options = headscope::reranker::RerankOptions {
                calibrate,
                group_size_normalization: normalize_group_size,
            };
            commands::cmd_rerank(&ctx, &heads, &queries, kind, &ks, options)?;
        }
        Command::Report => {
            commands::cmd_report(&ctx)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(headscope_cli::exit_code(&err) as u8)
        }
    }
}
