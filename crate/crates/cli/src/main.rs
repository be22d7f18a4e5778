use std::path::PathBuf;
use std::process::ExitCode;

use brwlab::config::{parse_site, VariantKind};
use brwlab::Error;
use brwlab_cli::{cmd_classify, cmd_moments, cmd_simulate, cmd_validate, error_json, load_config, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brwlab", version, about = "Branching random walk laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Model config (JSON, schema brwlab/1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; results go to <out>/<config hash>/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "BRWLAB_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Highest moment order.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// local or total.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Target site, e.g. "1;-2".
    #[arg(long, global = true, allow_hyphen_values = true)]
    site: Option<String>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Regime classification.
    Classify,
    /// Moment trajectories as CSV.
    Moments,
    /// Monte Carlo moment estimates.
    Simulate,
    /// Fitted exponents against the regime tables.
    Validate,
}

fn run(cli: &Cli) -> Result<(serde_json::Value, bool), Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        max_order: cli.n,
        variant: cli.variant.as_deref().map(str::parse::<VariantKind>).transpose()?,
        site: cli.site.as_deref().map(parse_site).transpose()?,
        replicas: cli.replicas,
    };
    let config = load_config(path, &overrides)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = match cli.command {
        Command::Classify => cmd_classify(&config, &out)?,
        Command::Moments => cmd_moments(&config, &out)?,
        Command::Simulate => cmd_simulate(&config, &out)?,
        Command::Validate => cmd_validate(&config, &out)?,
    };
    Ok((outcome.stdout, outcome.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("{}", error_json(&Error::InvalidConfig(e.to_string())));
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok((stdout, pass)) => {
            println!("{}", serde_json::to_string_pretty(&stdout).expect("json value serializes"));
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
