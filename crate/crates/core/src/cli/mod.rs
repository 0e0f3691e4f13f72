//! Command-line front end: `synth`, `train`, `eval`, `bench` and
//! `saliency`, configured by a flat `key=value` file plus flag overrides.

mod commands;
mod config;

pub use commands::run;
pub use config::{parse_extent, Command, DataKind, PlanKind, RunConfig, KEYS};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::error::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Synth,
    Train,
    Eval,
    Bench,
    Saliency,
}

/// Dynamic capacity networks: data synthesis, training, evaluation, cost
/// accounting and saliency export.
#[derive(Debug, Parser)]
#[command(name = "dcn", version)]
struct Args {
    #[arg(value_enum)]
    command: CommandArg,
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Patches refined per example.
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated input scales (sequence presets).
    #[arg(long)]
    scales: Option<String>,
    /// swap-in or fine-only.
    #[arg(long)]
    mode: Option<String>,
    /// Model family: cmnist, svhn, toy or seq.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Hint weight in [0, 1].
    #[arg(long)]
    lambda: Option<String>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Dataset container to read.
    #[arg(long)]
    data: Option<String>,
    /// Separate test container.
    #[arg(long)]
    test: Option<String>,
    /// Model checkpoint to load.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Write a checkpoint every N epochs.
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<String>,
    /// dcn, coarse, fine or soft-attention.
    #[arg(long)]
    plan: Option<String>,
    /// Dataset kind for synth: cluttered, centred or wild.
    #[arg(long)]
    kind: Option<String>,
    /// Example count.
    #[arg(long)]
    n: Option<String>,
    /// Input or canvas extents as HxW.
    #[arg(long)]
    input: Option<String>,
    /// Context pixels around each patch.
    #[arg(long)]
    context: Option<String>,
    /// Comma-separated square input sizes for the cost sweep.
    #[arg(long)]
    sizes: Option<String>,
}

/// Resolves the configuration from command-line arguments (including the
/// program name): defaults, then the config file, then flags.
pub fn parse_args<I, S>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let a = Args::try_parse_from(args).map_err(|e| crate::Error::Invalid(e.to_string().trim().replace('\n', " ")))?;
    let command = match a.command {
        CommandArg::Synth => Command::Synth,
        CommandArg::Train => Command::Train,
        CommandArg::Eval => Command::Eval,
        CommandArg::Bench => Command::Bench,
        CommandArg::Saliency => Command::Saliency,
    };
    let mut cfg = RunConfig::new(command);
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("out", &a.out),
        ("seed", &a.seed),
        ("preset", &a.preset),
        ("k", &a.k),
        ("scales", &a.scales),
        ("mode", &a.mode),
        ("epochs", &a.epochs),
        ("lambda", &a.lambda),
        ("batch", &a.batch),
        ("lr", &a.lr),
        ("threads", &a.threads),
        ("data", &a.data),
        ("test", &a.test),
        ("checkpoint", &a.checkpoint),
        ("checkpoint_every", &a.checkpoint_every),
        ("plan", &a.plan),
        ("kind", &a.kind),
        ("n", &a.n),
        ("input", &a.input),
        ("context", &a.context),
        ("sizes", &a.sizes),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` and runs the command; returns the process exit code after
/// printing a one-line diagnostic on failure.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.iter().any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V") {
        if let Err(e) = Args::try_parse_from(&args) {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    }
    match parse_args(args).and_then(|cfg| run(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests;
