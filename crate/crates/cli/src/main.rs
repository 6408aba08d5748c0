//! `amodal-ls`: generate synthetic data, train, evaluate, evolve single
//! images and serve the interactive session API.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config, inputs), 2
//! internal error. Logs are JSON lines on stderr, filtered by `AMODAL_LOG`
//! (default `info`). `AMODAL_THREADS` sizes the worker pool.

mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use amodal_ls::nn::Supervision;
use amodal_ls::pipeline::Method;
use amodal_ls::PointPrompt;
use clap::{Args, Parser, Subcommand};

/// An error caused by the invocation rather than by the program.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);

#[derive(Parser, Debug)]
#[command(
    name = "amodal-ls",
    version,
    about = "Point-prompted amodal segmentation by level set evolution"
)]
struct Cli {
    /// Worker threads for data-parallel work (0 = all cores).
    #[arg(long, global = true, env = "AMODAL_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train the initializer and velocity networks.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a baseline) on a dataset.
    Eval(EvalArgs),
    /// Evolve one image and dump every frame.
    Evolve(EvolveArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Square grid size; overrides the config's width and height.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, log and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    #[arg(long)]
    pub supervision: Option<Supervision>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub prompts: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub velocity_warmup_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Required unless `--baseline geometric`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// `geometric` (disk init, zero velocity) or `phi0` (learned init, no evolution).
    #[arg(long)]
    pub baseline: Option<Method>,
    /// Use at most this many prompts per sample.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub prompts: Option<u64>,
    /// Override the checkpoint's evolution steps.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Prompt as `x,y` in pixel coordinates; repeatable.
    #[arg(long = "prompt", required = true, value_parser = parse_prompt)]
    pub prompts: Vec<PointPrompt>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Session time-to-live in seconds.
    #[arg(long, default_value_t = 1800)]
    pub ttl: u64,
    /// Stored frames per session before old runs are evicted.
    #[arg(long, default_value_t = 256)]
    pub frame_cap: usize,
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Scene grid size for seed-based sessions.
    #[arg(long)]
    pub size: Option<usize>,
}

fn parse_prompt(s: &str) -> Result<PointPrompt, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x: f64 = x.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y: f64 = y.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("prompt {s:?} is not finite"));
    }
    Ok(PointPrompt::new(x, y))
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("AMODAL_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .init();
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use amodal_ls::Error as E;
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Diverged { .. } | E::Tape(_) | E::NumericOverflow(_) | E::Provider { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

/// The error chain on one line. Causes already quoted by their parent's
/// message are skipped.
fn one_line(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    if cli.threads > 0 {
        if let Err(e) = amodal_ls::par::configure_threads(cli.threads) {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Evolve(a) => commands::evolve(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
