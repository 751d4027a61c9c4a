mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use vitis::config::{PipelineConfig, CONFIG_KEYS};
use vitis::error::Error;

#[derive(Parser, Debug)]
#[command(name = "vitis", version, about = "Vineyard row reconstruction, canopy volumes and bunch detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stereo frames to filtered per-frame point clouds.
    Reconstruct(commands::ReconstructArgs),
    /// Stitch per-frame clouds into one row map along a trajectory.
    Map(commands::MapArgs),
    /// Label canopy points and cluster them into plants.
    Segment(commands::SegmentArgs),
    /// Per-plant volume estimates and their summary.
    Volumes(commands::VolumesArgs),
    /// Detect grape bunches in color images.
    Detect(commands::DetectArgs),
    /// Generate synthetic rows and annotated images.
    #[command(subcommand)]
    Synth(commands::SynthCommand),
    /// Detection and metric reports.
    #[command(subcommand)]
    Eval(commands::EvalCommand),
    /// Serve a patch classifier over stdin/stdout or TCP.
    ClassifyServer(commands::ServerArgs),
    /// Print the effective configuration.
    ShowConfig,
}

fn keys_help() -> String {
    let defaults = PipelineConfig::default();
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (--set KEY=VALUE or --config FILE), with defaults:\n");
    for (k, desc) in CONFIG_KEYS {
        let v = defaults.get(k).unwrap_or_default();
        s.push_str(&format!("  {k:<width$}  {desc} [default: {v}]\n"));
    }
    s.push_str("\nExit codes: 0 success, 1 validation, 2 I/O, 3 internal.");
    s
}

fn with_keys(cmd: clap::Command, text: &str) -> clap::Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut cmd = cmd.after_help(text.to_string());
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| with_keys(s, text));
    }
    cmd
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cmd = with_keys(Cli::command(), &keys_help());
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.global.jobs {
        set_jobs(n)?;
    }
    let cfg = PipelineConfig::load_file(cli.global.config.as_deref(), &cli.global.set)?;
    match cli.command {
        Command::Reconstruct(a) => commands::reconstruct(&a, &cfg),
        Command::Map(a) => commands::map(&a, &cfg),
        Command::Segment(a) => commands::segment(&a, &cfg),
        Command::Volumes(a) => commands::volumes(&a, &cfg),
        Command::Detect(a) => commands::detect(&a, &cfg),
        Command::Synth(c) => commands::synth(&c, &cfg),
        Command::Eval(c) => commands::eval(&c, &cfg),
        Command::ClassifyServer(a) => commands::classify_server(&a, &cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

#[cfg(feature = "parallel")]
fn set_jobs(n: usize) -> Result<(), Error> {
    if n == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(n: usize) -> Result<(), Error> {
    if n == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    if n > 1 {
        log::warn!("built without the parallel feature; --jobs {n} runs on one thread");
    }
    Ok(())
}
