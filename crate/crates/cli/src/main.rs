use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use geocirc::pipeline::{Config, Pipeline, PipelineError, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Synth,
    Ingest,
    Classify,
    Geolocate,
    Attributes,
    Scale,
    Regress,
    Diffusion,
    Connectivity,
    Contagion,
    Report,
    /// Every analysis stage from ingest through report.
    All,
}

/// Geographic circulation of news links in comment archives.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; all keys are optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `threads` from the configuration.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `synth.seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn stage_of(c: Command) -> Option<Stage> {
    Some(match c {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Classify => Stage::Classify,
        Command::Geolocate => Stage::Geolocate,
        Command::Attributes => Stage::Attributes,
        Command::Scale => Stage::Scale,
        Command::Regress => Stage::Regress,
        Command::Diffusion => Stage::Diffusion,
        Command::Connectivity => Stage::Connectivity,
        Command::Contagion => Stage::Contagion,
        Command::Report => Stage::Report,
        Command::All => return None,
    })
}

fn run(args: Args) -> Result<(), PipelineError> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(t) = args.threads {
        config.threads = t;
    }
    if let Some(seed) = args.seed {
        config.synth.seed = seed;
    }
    config.validate()?;
    let pipeline = Pipeline::new(config, &args.out_dir);
    let manifests = match stage_of(args.command) {
        Some(stage) => vec![pipeline.run(stage)?],
        None => pipeline.run_all()?,
    };
    for m in manifests {
        eprintln!(
            "{}: {} output(s) in {:.2}s",
            m.stage,
            m.outputs.len(),
            m.wall_time_s
        );
        for note in &m.notes {
            eprintln!("  note: {note}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
