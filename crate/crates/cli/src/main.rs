use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use poleloc::config::PipelineConfig;
use poleloc::pipeline;
use poleloc::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "poleloc", version, about = "Pole extraction, mapping and localization on LiDAR range images")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// With `extract`, also write one label mask per scan.
    #[arg(long, global = true)]
    labels: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Render scans, poses, odometry and ground-truth poles.
    Simulate,
    /// Detect poles in every scan.
    Extract,
    /// Build the pole map from scans and poses.
    Map,
    /// Track the pose with the particle filter.
    Localize,
    /// Score a map or an estimated trajectory.
    Eval,
    /// Write range images and pole masks for training.
    ExportLabels,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| poleloc::Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let cfg = &cfg;
    let jobs = cli.jobs;
    match cli.command {
        Command::Simulate => {
            let s = pipeline::with_jobs(jobs, || pipeline::cmd_simulate(cfg))??;
            println!("scans={}\npoles={}", s.scans, s.poles);
        }
        Command::Extract => {
            let s = pipeline::with_jobs(jobs, || pipeline::cmd_extract(cfg, cli.labels))??;
            println!("scans={}\ndetections={}\nlabel_files={}", s.scans, s.detections, s.label_files);
        }
        Command::Map => {
            let n = pipeline::with_jobs(jobs, || pipeline::cmd_map(cfg))??;
            println!("map_poles={n}");
        }
        Command::Localize => {
            let est = pipeline::with_jobs(jobs, || pipeline::cmd_localize(cfg))??;
            println!("steps={}", est.len());
        }
        Command::Eval => {
            let report = pipeline::with_jobs(jobs, || pipeline::cmd_eval(cfg))??;
            print!("{report}");
        }
        Command::ExportLabels => {
            let n = pipeline::with_jobs(jobs, || pipeline::cmd_export_labels(cfg))??;
            println!("scans={n}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<poleloc::Error>().map(poleloc::Error::kind) {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Data) => 2,
        Some(ErrorKind::Runtime) | None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli).context(format!("{:?} failed", cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
