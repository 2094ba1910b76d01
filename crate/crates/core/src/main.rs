use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use narraframe::pipeline::{load_config, run_pipeline, Overrides, PipelineError, Stage};

#[derive(Parser)]
#[command(
    name = "narraframe",
    version,
    about = "Partisan narrative analysis of political tweets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage.
    Run(StageArgs),
    /// Read the tweet archive and write corpus counts.
    Ingest(StageArgs),
    /// Over-represented terms per party.
    Logodds(StageArgs),
    /// Train or load word vectors.
    Embed(StageArgs),
    /// Frame bias and intensity differences.
    Frames(StageArgs),
    /// 2-D maps of over-represented terms.
    Project(StageArgs),
    /// Verb clusters and Agent/Patient tables.
    Roles(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the stochastic steps of the selected stages.
    #[arg(long)]
    seed: Option<u64>,
    /// Length of the selected stages' main ranked list.
    #[arg(long)]
    top_k: Option<usize>,
    /// Check the configuration and exit.
    #[arg(long)]
    validate_config: bool,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

fn execute(targets: &[Stage], args: &StageArgs) -> Result<(), PipelineError> {
    let mut loaded = load_config(&args.config)?;
    let out = match &args.out {
        Some(p) if p.is_relative() => Some(std::env::current_dir().map(|d| d.join(p)).unwrap_or(p.clone())),
        other => other.clone(),
    };
    let overrides = Overrides {
        out,
        seed: args.seed,
        top_k: args.top_k,
    };
    loaded.config.apply_overrides(&overrides, &Stage::plan(targets));
    if args.validate_config {
        loaded.config.validate(&loaded.base_dir)?;
        println!("{}: ok", args.config.display());
        return Ok(());
    }
    let bundle = run_pipeline(&loaded.config, &loaded.base_dir, targets)?;
    println!(
        "wrote {} files to {}",
        bundle.manifest.files.len() + 1,
        bundle.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (targets, args): (Vec<Stage>, &StageArgs) = match &cli.command {
        Command::Run(a) => (Stage::ALL.to_vec(), a),
        Command::Ingest(a) => (vec![Stage::Ingest], a),
        Command::Logodds(a) => (vec![Stage::Logodds], a),
        Command::Embed(a) => (vec![Stage::Embed], a),
        Command::Frames(a) => (vec![Stage::Frames], a),
        Command::Project(a) => (vec![Stage::Project], a),
        Command::Roles(a) => (vec![Stage::Verbs, Stage::Roles], a),
    };
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .init();

    match execute(&targets, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
