use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridmap::pipeline::{cmd_bench, cmd_eval, cmd_map, cmd_simulate, MapMode};
use hybridmap::synth::LidarSpec;
use hybridmap::{Config, MapError, Result};

#[derive(Parser)]
#[command(name = "hybridmap", version, about = "Incremental LiDAR mapping with submaps and a neural SDF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a posed scan sequence into a mesh.
    Map(MapArgs),
    /// Compare a predicted mesh with a ground-truth mesh.
    Eval(EvalArgs),
    /// Simulate LiDAR scans of an analytic scene along a trajectory.
    Simulate(SimArgs),
    /// Map with per-frame timing and visited-voxel counts.
    Bench(MapArgs),
}

#[derive(Args)]
struct MapArgs {
    /// Directory of .bin, .ply or .pcd scans, processed in file-name order.
    #[arg(long)]
    scans: PathBuf,
    /// KITTI-style pose file, one 3x4 row-major matrix per line.
    #[arg(long)]
    poses: PathBuf,
    /// `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "submap")]
    mode: MapMode,
    #[arg(long)]
    no_dynamic_removal: bool,
    #[arg(long)]
    no_alignment: bool,
    #[arg(long)]
    no_keyscan: bool,
}

impl MapArgs {
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        cfg.dynamic_removal &= !self.no_dynamic_removal;
        cfg.alignment &= !self.no_alignment;
        cfg.keyscan &= !self.no_keyscan;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    threshold_cm: f64,
    /// Points sampled from each surface.
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for metrics.json and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Lines of `time x y z yaw_deg`.
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth mesh cell size (m).
    #[arg(long, default_value_t = 0.05)]
    gt_resolution: f64,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 720)]
    azimuths: usize,
    #[arg(long, default_value_t = -15.0, allow_negative_numbers = true)]
    fov_down: f64,
    #[arg(long, default_value_t = 15.0, allow_negative_numbers = true)]
    fov_up: f64,
    #[arg(long, default_value_t = 50.0)]
    max_range: f64,
    /// Standard deviation of Gaussian range noise (m).
    #[arg(long, default_value_t = 0.0)]
    range_noise: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MapError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Map(args) => {
            let cfg = args.config()?;
            let m = cmd_map(&args.scans, &args.poses, &cfg, &args.out, args.mode)?;
            println!(
                "{} frames, {} submaps -> {}",
                m.frames.len(),
                m.submaps.len(),
                m.outputs.mesh.display()
            );
        }
        Command::Bench(args) => {
            let cfg = args.config()?;
            let rows = cmd_bench(&args.scans, &args.poses, &cfg, args.mode, &args.out)?;
            let n = rows.len().max(1) as f64;
            let ms = rows.iter().map(|r| r.wall_ms).sum::<f64>() / n;
            let visited = rows.iter().map(|r| r.visited_voxels as f64).sum::<f64>() / n;
            println!("{} frames, mean {ms:.1} ms/frame, mean {visited:.0} visited voxels/frame", rows.len());
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args.pred, &args.gt, args.threshold_cm, args.samples, args.seed)?;
            println!("{report}");
            if let Some(out) = &args.out {
                fs::create_dir_all(out).map_err(|e| MapError::Io {
                    path: out.clone(),
                    source: e,
                })?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| MapError::Config(e.to_string()))?;
                write(&out.join("metrics.json"), &json)?;
                let csv = format!("{}\n{}\n", hybridmap::evaluator::MetricReport::CSV_HEADER, report.csv_row());
                write(&out.join("metrics.csv"), &csv)?;
            }
        }
        Command::Simulate(args) => {
            let lidar = LidarSpec {
                channels: args.channels,
                azimuths: args.azimuths,
                fov_down_deg: args.fov_down,
                fov_up_deg: args.fov_up,
                max_range: args.max_range,
                range_noise: args.range_noise,
            };
            let s = cmd_simulate(&args.scene, &args.trajectory, &lidar, &args.out, args.gt_resolution, args.seed)?;
            println!(
                "{} frames, {} points ({} dynamic) -> {}",
                s.frames,
                s.points,
                s.dynamic_points,
                args.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
