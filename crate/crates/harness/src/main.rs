use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use expolab_harness::{run, Command, Manifest, Result, RunConfig};

#[derive(Parser)]
#[command(name = "expolab", version, about = "Exposure-control experiments", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Recover the camera response from the first bracketed frames.
    CalibrateCrf(RunArgs),
    /// Render a synthetic bracketed sequence.
    GenScene(RunArgs),
    /// Train the exposure agent.
    Train(RunArgs),
    /// Run controllers in closed loop over a sequence.
    Eval(RunArgs),
    /// Measure recovery after light switches.
    ReactTest(RunArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Overrides the recorded output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run_with(command: Command, args: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = args.output {
        config.output_dir = Some(out);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    run(command, &config)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::CalibrateCrf(a) => run_with(Command::CalibrateCrf, a),
        Cmd::GenScene(a) => run_with(Command::GenScene, a),
        Cmd::Train(a) => run_with(Command::Train, a),
        Cmd::Eval(a) => run_with(Command::Eval, a),
        Cmd::ReactTest(a) => run_with(Command::ReactTest, a),
        Cmd::Replay(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let mut config = manifest.config;
            if let Some(out) = a.output {
                config.output_dir = Some(out);
            }
            run(manifest.command, &config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors, including a missing subcommand, exit with status 2.
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
