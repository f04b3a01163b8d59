use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use clothrecon_cli::commands::{cmd_datagen, cmd_evaluate, cmd_reconstruct, cmd_refine, cmd_train};
use clothrecon_cli::config::{resolve, ConfigError};
use clothrecon_cli::exit::classify;
use clothrecon_cli::THREADS_ENV;

#[derive(Debug, Parser)]
#[command(name = "clothrecon", version, about = "Clothed human reconstruction pipeline")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted `key=value` override, applied after the file; repeatable.
    #[arg(long = "override", short = 'o', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic clothed dataset.
    Datagen,
    /// Train the occupancy network on the train split.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruct one sample (`scan_id` or `scan_id/yaw_XXX`).
    Reconstruct { sample: String },
    /// Refine a perturbed body against one sample's clothed normals.
    Refine { sample: String },
    /// Metrics table for a split.
    Evaluate {
        #[arg(default_value = "test")]
        split: String,
        /// Score the ground-truth scans against themselves.
        #[arg(long)]
        against_gt: bool,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError(format!("{THREADS_ENV}={raw} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let cfg = resolve(cli.config.as_deref(), cli.seed, &cli.overrides)?;
    match cli.command {
        Command::Datagen => {
            let m = cmd_datagen(&cfg)?;
            println!("{} scans, {} samples", m.scans.len(), m.sample_count());
        }
        Command::Train { resume } => {
            let r = cmd_train(&cfg, resume)?;
            println!(
                "trained to step {}: mse {:.6} -> {:.6}{}",
                r.final_step,
                r.initial_mse,
                r.final_mse,
                if r.stopped_early { " (early stop)" } else { "" }
            );
        }
        Command::Reconstruct { sample } => {
            let r = cmd_reconstruct(&cfg, &sample)?;
            println!(
                "{}: {} ({} faces, watertight {}), chamfer {:.6}, p2s {:.6}",
                r.sample,
                r.mesh.display(),
                r.faces,
                r.watertight,
                r.metrics.chamfer,
                r.metrics.p2s
            );
        }
        Command::Refine { sample } => {
            let r = cmd_refine(&cfg, &sample)?;
            println!(
                "{}: body chamfer {:.6} -> {:.6}, loss {:.6} -> {:.6}",
                r.sample, r.chamfer_before, r.chamfer_after, r.loss_before, r.loss_after.total
            );
        }
        Command::Evaluate { split, against_gt } => {
            print!("{}", cmd_evaluate(&cfg, &split, against_gt)?.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).code())
        }
    }
}
