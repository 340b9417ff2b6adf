use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use streetpulse_cli::{correlate, write_fixture, Pipeline, PipelineConfig, ServeMode, Stage};

/// Street-level perception pipeline.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one stage, or `all` of them in order.
    Run {
        /// sample, cluster, serve, qa, rank, mlm, interpret, map or all.
        stage: String,
        #[arg(long)]
        config: PathBuf,
        /// Stage outputs go to `<out>/<stage>/`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic 200-image city with a matching config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
    },
    /// Correlate score tables given as `name=path`.
    Corr {
        #[arg(long = "table", required = true)]
        tables: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            stage,
            config,
            out,
            seed,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let pipeline = Pipeline::new(cfg, out);
            if stage == "all" {
                pipeline.run_all()
            } else {
                let stage: Stage = stage.parse()?;
                pipeline
                    .run(stage, ServeMode::Listen)
                    .with_context(|| format!("stage `{stage}` failed"))
            }
        }
        Command::Fixture { out, seed } => write_fixture(&out, seed),
        Command::Corr { tables, out } => {
            let mut parsed = Vec::new();
            for t in &tables {
                let Some((name, path)) = t.split_once('=') else {
                    bail!("--table expects name=path, got `{t}`");
                };
                parsed.push((name.to_string(), PathBuf::from(path)));
            }
            correlate(&parsed, &out)
        }
    }
}
