use std::path::PathBuf;
use std::process::ExitCode;

use biasforge_core::pipeline::{run, Command, Invocation, PipelineConfig, PipelineError};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Dataset bias analysis and rebalancing with synthetic faces.
#[derive(Debug, Parser)]
#[command(name = "biasforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Attribute frequencies, tone histogram and flagged attributes.
    Analyze(Common),
    /// Train the skin-tone model.
    TrainSkin(Common),
    /// Train the eyeglasses-removal model.
    TrainErgan(Common),
    /// Train the frame-enhancement model.
    TrainEnhance(Common),
    /// Run a skin or eyeglasses checkpoint over a directory of images.
    Generate(Common),
    /// Enhance a directory of frames with an enhancement checkpoint.
    Enhance(Common),
    /// PSNR/SSIM report from a pairs file.
    Evaluate(Common),
    /// Balanced manifest from the bias report and tagged synthetic images.
    Assemble(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from or run (`.manifest` or `.ckpt`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a checkpoint written under a different config.
    #[arg(long)]
    override_hash: bool,
    /// Input image directory for generate/enhance/train-enhance.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Pairs file for evaluate.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Bias report for assemble.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Synthetic root laid out as `<dir>/<attribute>/...`; repeatable.
    #[arg(long)]
    synthetic: Vec<PathBuf>,
}

fn invocation(cmd: Command, a: Common) -> Result<Invocation, PipelineError> {
    let mut config = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None if cmd == Command::Evaluate => PipelineConfig::default(),
        None => return Err(PipelineError::Usage(format!("{} needs --config", cmd.name()))),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let mut inv = Invocation::new(config);
    if let Some(out) = a.out {
        inv.out = out;
    }
    inv.checkpoint = a.checkpoint;
    inv.override_hash = a.override_hash;
    inv.input = a.input;
    inv.pairs = a.pairs;
    inv.report = a.report;
    inv.synthetic = a.synthetic;
    Ok(inv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (cmd, args) = match cli.command {
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::TrainSkin(a) => (Command::TrainSkin, a),
        Cmd::TrainErgan(a) => (Command::TrainErgan, a),
        Cmd::TrainEnhance(a) => (Command::TrainEnhance, a),
        Cmd::Generate(a) => (Command::Generate, a),
        Cmd::Enhance(a) => (Command::Enhance, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Assemble(a) => (Command::Assemble, a),
    };
    match invocation(cmd, args).and_then(|inv| run(cmd, &inv)) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("{w}");
            }
            for l in &outcome.lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
