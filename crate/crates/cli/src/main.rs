use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use persona_core::ScenarioId;

mod config;
mod error;
mod manifest;
mod stages;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "persona",
    version,
    about = "Personalized subjective-task evaluation pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the split, prompt and training seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Raw CSV or normalized JSONL input; repeatable.
    #[arg(long = "input", global = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Log level filter, e.g. `debug` or `persona_core=trace`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw inputs into normalized JSONL.
    Ingest,
    /// Drop outlier annotators.
    Clean,
    /// Text-disjoint split plus annotator coverage.
    Split,
    /// Render prompts or training records.
    GenPrompts(ScenarioArgs),
    /// Send test prompts to the endpoint.
    Query(ScenarioArgs),
    /// Turn raw answers into label sets.
    Parse {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Answers to parse instead of the scenario's responses.jsonl.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Gold annotations as normalized JSONL (default: the test split).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Write scores here instead of the scenario directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables from every scores.json under the output directory.
    Report {
        /// Additional scores.json files.
        #[arg(long = "scores")]
        scores: Vec<PathBuf>,
    },
    /// Train and score the plain and user-conditioned linear models.
    Baseline,
    /// Run the whole chain.
    RunAll,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario name (q0s, q1s, q2s, lm, lmp, cls, clsp); repeatable.
    /// Defaults to the configured list.
    #[arg(long = "scenario")]
    scenarios: Vec<ScenarioId>,
}

fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds.split = seed;
        config.seeds.prompt = seed;
        config.seeds.train = seed;
    }
    if let Some(d) = &common.dataset {
        config.dataset = d.clone();
    }
    if let Some(o) = &common.output_dir {
        config.output_dir = o.clone();
    }
    if !common.inputs.is_empty() {
        config.inputs = common.inputs.clone();
    }
    if let Some(m) = &common.model {
        config.model_label = Some(m.clone());
    }
    config.validate()?;
    Ok(config)
}

fn scenarios(args: &ScenarioArgs, config: &RunConfig) -> Vec<ScenarioId> {
    if args.scenarios.is_empty() {
        config.scenarios.clone()
    } else {
        args.scenarios.clone()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli.common)?;
    match cli.command {
        Command::Ingest => stages::ingest_stage(&config),
        Command::Clean => stages::clean_stage(&config),
        Command::Split => stages::split_stage(&config),
        Command::GenPrompts(args) => {
            for s in scenarios(&args, &config) {
                stages::gen_prompts_stage(&config, s)?;
            }
            Ok(())
        }
        Command::Query(args) => {
            let mut failure = None;
            for s in scenarios(&args, &config)
                .into_iter()
                .filter(|s| s.is_query())
            {
                if let Err(e) = stages::query_stage(&config, s) {
                    eprintln!("error: {e}");
                    failure = Some(e);
                }
            }
            failure.map_or(Ok(()), Err)
        }
        Command::Parse {
            scenario,
            predictions,
        } => {
            let list = scenarios(&scenario, &config);
            if predictions.is_some() && list.len() != 1 {
                return Err(CliError::Config(
                    "--predictions needs exactly one --scenario".into(),
                ));
            }
            for s in list {
                stages::parse_stage(&config, s, predictions.as_deref())?;
            }
            Ok(())
        }
        Command::Eval {
            scenario,
            predictions,
            gold,
            out,
        } => {
            let list = scenarios(&scenario, &config);
            if (predictions.is_some() || out.is_some()) && list.len() != 1 {
                return Err(CliError::Config(
                    "--predictions/--out need exactly one --scenario".into(),
                ));
            }
            for s in list {
                stages::eval_stage(
                    &config,
                    s,
                    predictions.as_deref(),
                    gold.as_deref(),
                    out.as_deref(),
                )?;
            }
            Ok(())
        }
        Command::Report { scores } => stages::report_stage(&config, &scores),
        Command::Baseline => stages::baseline_stage(&config),
        Command::RunAll => stages::run_all(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.common.log)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
