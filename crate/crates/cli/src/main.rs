//! `hdsa-lab`: data synthesis, MAP solves, sensitivity pipelines, the
//! one-dimensional example and sample-group spread studies.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hdsa_core::config::{load_config, RunConfig};
use hdsa_core::HdsaError;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Draw prior samples and synthesize noisy data.
    Synthesize,
    /// Synthesize data and solve for each MAP point.
    Map,
    /// Run the full sensitivity pipeline.
    Hdsa,
    /// One-dimensional example with closed-form forward map.
    Oracle,
    /// Spread of the indices across random sample groups.
    Spread,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synthesize => "synthesize",
            Command::Map => "map",
            Command::Hdsa => "hdsa",
            Command::Oracle => "oracle",
            Command::Spread => "spread",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hdsa-lab", version, about = "Hyper-differential sensitivity analysis experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the configured one.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for sample-parallel phases.
    #[arg(long)]
    workers: Option<usize>,
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

fn run(cli: &Cli) -> Result<(), BoxError> {
    let mut cfg: RunConfig = load_config(&cli.config)?;
    cfg.seed = cli.seed;
    commands::prepare_output(&cli.out, &cfg)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(HdsaError::InvalidConfig {
                key: "workers".into(),
                reason: "must be positive".into(),
            }
            .into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let out = cli.out.as_path();
    pool.install(|| match cli.command {
        Command::Synthesize => commands::synthesize(&cfg, cli.seed, out),
        Command::Map => commands::map(&cfg, cli.seed, out),
        Command::Hdsa => commands::hdsa(&cfg, cli.seed, out),
        Command::Oracle => commands::oracle(&cfg, cli.seed, out),
        Command::Spread => commands::spread(&cfg, cli.seed, out),
    })
}

fn error_kind(e: &BoxError) -> &'static str {
    match e.downcast_ref::<HdsaError>() {
        Some(HdsaError::ConfigParse { .. } | HdsaError::InvalidConfig { .. }) => "config",
        Some(HdsaError::Io(_)) => "io",
        Some(_) => "numerical",
        None if e.is::<std::io::Error>() || e.is::<csv::Error>() => "io",
        None => "internal",
    }
}

fn write_error_record(out: &Path, command: &str, e: &BoxError) {
    let record = json!({
        "command": command,
        "kind": error_kind(e),
        "error": e.to_string(),
    });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = output::write_json(&out.join("error.json"), &record);
    }
    eprintln!("{}", serde_json::to_string(&record).expect("record serializes"));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HDSA_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            write_error_record(&cli.out, cli.command.name(), &e);
            ExitCode::FAILURE
        }
    }
}
