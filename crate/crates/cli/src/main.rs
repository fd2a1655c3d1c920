use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use pcir_core::config::ExperimentConfig;
use pcir_core::model::AnnotationSource;
use pcir_core::pipeline::{Pipeline, Scope};
use pcir_core::reformulation::Strategy;
use pcir_core::retrieval::RetrieverKind;

/// Personalized conversational retrieval experiments.
#[derive(Debug, Parser)]
#[command(name = "pcir", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "pcir.toml")]
    config: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the BM25 index over the collection.
    Index,
    /// Embed the collection for dense retrieval.
    Embed,
    /// Produce a PTKB annotation set.
    Annotate {
        #[arg(long)]
        source: AnnotationSource,
    },
    /// Reformulate every test turn under one strategy.
    Reformulate {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        shots: usize,
    },
    /// Retrieve with the reformulated queries and write a run file.
    Retrieve {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        shots: usize,
        #[arg(long)]
        retriever: RetrieverKind,
    },
    /// Score the grid's run files and write reports.
    Evaluate {
        /// Restrict to turns where some PTKB sentence improves retrieval.
        #[arg(long)]
        subset: bool,
    },
    /// Run every stage for the configured grid.
    Pipeline,
    /// Print dataset statistics.
    Stats,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let p = Pipeline::new(config)?;
    let paths = match cli.command {
        Command::Index => vec![p.cmd_index()?],
        Command::Embed => vec![p.cmd_embed()?],
        Command::Annotate { source } => p.cmd_annotate(source)?,
        Command::Reformulate { strategy, shots } => vec![p.cmd_reformulate(strategy, shots)?],
        Command::Retrieve {
            strategy,
            shots,
            retriever,
        } => vec![p.cmd_retrieve(strategy, shots, retriever)?],
        Command::Evaluate { subset } => {
            let scope = if subset { Scope::NeedsPtkb } else { Scope::All };
            p.cmd_evaluate(scope)?
        }
        Command::Pipeline => p.cmd_pipeline()?,
        Command::Stats => {
            let (stats, path) = p.cmd_stats()?;
            print!("{}", stats.to_tsv());
            vec![path]
        }
    };
    for path in paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_retrieve() {
        let cli = Cli::try_parse_from([
            "pcir", "--config", "x.toml", "retrieve", "--strategy", "sar", "--shots", "3", "--retriever", "bm25",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Retrieve {
                strategy: Strategy::Sar,
                shots: 3,
                retriever: RetrieverKind::Sparse
            }
        ));
        assert!(Cli::try_parse_from(["pcir", "reformulate", "--strategy", "bogus"]).is_err());
    }
}
