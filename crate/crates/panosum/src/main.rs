use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panosum_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, RunReport};

/// Summarise a frame sequence into viewpoint-clustered panoramas.
#[derive(Debug, Parser)]
#[command(name = "panosum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run keyframe selection, clustering and stitching on a frame directory.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Directory of frames (PNG/PPM/PGM), processed in file-name order.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Camera intrinsics JSON: {"fx", "fy", "cx", "cy"}.
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// Output directory; replaced atomically.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON configuration; flags below take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Pose-affinity position bandwidth, relative to the scene scale.
    #[arg(long, value_name = "F")]
    sigma_pos: Option<f64>,
    /// Pose-affinity rotation bandwidth in radians.
    #[arg(long, value_name = "F")]
    sigma_rot: Option<f64>,
    #[arg(long, value_name = "N")]
    min_cluster_size: Option<usize>,
    #[arg(long, value_name = "N")]
    blend_levels: Option<usize>,
    /// Stitch on the image plane instead of a cylinder.
    #[arg(long)]
    no_cylindrical: bool,
    /// Worker threads (default: all logical CPUs).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Record per-phase wall-clock times in report.json.
    #[arg(long)]
    timings: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        cfg.frames_dir = self.frames;
        cfg.intrinsics_path = self.intrinsics;
        cfg.output_dir = self.out;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sigma_pos {
            cfg.clustering.sigma_pos = v;
        }
        if let Some(v) = self.sigma_rot {
            cfg.clustering.sigma_rot = v;
        }
        if let Some(v) = self.min_cluster_size {
            cfg.clustering.min_cluster_size = v;
        }
        if let Some(v) = self.blend_levels {
            cfg.stitching.blend_levels = v;
        }
        if self.no_cylindrical {
            cfg.stitching.cylindrical = false;
        }
        cfg.jobs = self.jobs;
        cfg.timings = self.timings;
        Ok(cfg)
    }
}

fn summary(report: &RunReport) -> String {
    let panoramas = report.panorama_files().count();
    let mut line = format!(
        "{} keyframes, {} clusters, {} panoramas, {} unassigned",
        report.keyframes.len(),
        report.clusters.len(),
        panoramas,
        report.unassigned.len()
    );
    if report.diagnostics.initialization_failure {
        line.push_str(" (InitializationFailure: no poses)");
    }
    line
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run(args) = Cli::parse().command;
    let out = args.out.clone();
    match args.into_config().and_then(|cfg| run_pipeline(&cfg)) {
        Ok(report) => {
            println!("{} -> {}", summary(&report), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("panosum: error: {e}");
            ExitCode::from(1)
        }
    }
}
