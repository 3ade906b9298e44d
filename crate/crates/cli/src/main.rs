use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;
use shad_cli::config::{LabelKind, RunConfig, SchemeKind};
use shad_cli::stages::{self, MissingArtifact, ReportKind, StageConflict};

#[derive(Parser)]
#[command(
    name = "shad",
    version,
    about = "Token-role discrimination and role-weighted fine-tuning on a synthetic agent corpus"
)]
struct Cli {
    /// Run config (TOML). Defaults apply to any missing section.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the workdir from the config and SHAD_WORKDIR.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the target and pretraining corpora and the vocabulary.
    GenData,
    /// Pretrain the base model θ_o.
    TrainBase,
    /// Tune θ_s on shuffled data and annotate every target token.
    Shad,
    /// Fine-tune θ_o on the target corpus under a weighting scheme.
    Train {
        #[arg(long, value_enum)]
        scheme: Option<SchemeKind>,
        #[arg(long, value_enum)]
        labels: Option<LabelKind>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Write a report from finished stages.
    Report {
        #[arg(long, value_enum)]
        kind: ReportKind,
        #[arg(long, value_enum)]
        labels: Option<LabelKind>,
    },
}

fn run(cli: Cli) -> Result<stages::Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.resolve_workdir(cli.workdir);
    match cli.command {
        Command::GenData => stages::gen_data(&cfg),
        Command::TrainBase => stages::train_base(&cfg),
        Command::Shad => stages::shad(&cfg),
        Command::Train {
            scheme,
            labels,
            tau,
            alpha,
        } => {
            let s = &mut cfg.scheme;
            s.kind = scheme.unwrap_or(s.kind);
            s.labels = labels.unwrap_or(s.labels);
            s.tau = tau.unwrap_or(s.tau);
            s.alpha = alpha.unwrap_or(s.alpha);
            cfg.validate()?;
            stages::train(&cfg)
        }
        Command::Report { kind, labels } => {
            cfg.scheme.labels = labels.unwrap_or(cfg.scheme.labels);
            stages::report(&cfg, kind)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome).expect("serializable")
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            let mut body = json!({ "kind": "error", "message": format!("{err:#}") });
            if let Some(m) = err.downcast_ref::<MissingArtifact>() {
                body["kind"] = json!("missing_artifact");
                body["run_first"] = json!(m.command);
            } else if err.downcast_ref::<StageConflict>().is_some() {
                body["kind"] = json!("conflict");
            }
            eprintln!("{}", json!({ "error": body }));
            ExitCode::FAILURE
        }
    }
}
