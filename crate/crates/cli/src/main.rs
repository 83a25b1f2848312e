use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

use trackfuse::io::read_tracks3d;
use trackfuse::pipeline::{
    eval_metrics, export_pointcloud, export_trajectories, find_manifests, run_clip, run_corpus, ClipManifest,
    PipelineConfig, PlyOptions,
};
use trackfuse::synth::{render_scene, write_bundle, DepthFormat, SceneSpec};
use trackfuse::trackopt::trail_motion_magnitude;
use trackfuse::tracks::track_visibility_stats;
use trackfuse::{CameraModel, PoseSet};

#[derive(Parser)]
#[command(name = "trackfuse", version, about = "Stereo video to denoised 3D point tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process every clip under a directory (`*/manifest.json`).
    Run {
        /// Corpus directory; defaults to `pipeline.input_dir` of the config.
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Process a single clip.
    RunClip {
        manifest: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Render a synthetic clip with ground truth.
    Synth(SynthArgs),
    /// Scene-flow and depth metrics of predicted tracks against reference tracks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0)]
        t0: u32,
        #[arg(long)]
        t1: u32,
    },
    /// Summary statistics of a 3D track table.
    Stats {
        tracks: PathBuf,
        /// With `--model`, adds camera displacement and motion statistics.
        #[arg(long, requires = "model")]
        poses: Option<PathBuf>,
        #[arg(long, requires = "poses")]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        trail_window: usize,
    },
    /// Write a 3D track table as a PLY point cloud or polylines.
    ExportPly {
        tracks: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Frame to snapshot; ignored with `--trajectories`.
        #[arg(long, default_value_t = 0)]
        frame: u32,
        #[arg(long)]
        trajectories: bool,
        #[arg(long)]
        no_color: bool,
        #[arg(long)]
        no_ids: bool,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Output root; one directory per clip is created below it.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML configuration; command line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_depth_m: Option<f64>,
    #[arg(long)]
    grad_threshold: Option<f64>,
    #[arg(long)]
    baseline_m: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    m0: Option<f64>,
    /// Laplacian windows, e.g. `1,3,5`.
    #[arg(long, value_delimiter = ',')]
    window_set: Option<Vec<usize>>,
    #[arg(long)]
    trail_window: Option<usize>,
    #[arg(long)]
    trim_frac: Option<f64>,
    #[arg(long)]
    dedup_radius_px: Option<f64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, env = "TRACKFUSE_THREADS")]
    threads: Option<usize>,
    /// Clips processed at once by `run`.
    #[arg(long)]
    clip_workers: Option<usize>,
    #[arg(long)]
    raw_tracks: bool,
    #[arg(long)]
    loss_traces: bool,
    /// Also write a point cloud of this frame.
    #[arg(long)]
    ply_frame: Option<u32>,
    #[arg(long)]
    trajectories_ply: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.depth.max_depth_m, self.max_depth_m);
        set!(cfg.depth.grad_threshold, self.grad_threshold);
        set!(cfg.depth.baseline_m, self.baseline_m);
        set!(cfg.optimizer.lr, self.lr);
        set!(cfg.optimizer.steps, self.steps);
        set!(cfg.optimizer.lambda_reg, self.lambda_reg);
        set!(cfg.optimizer.m0, self.m0);
        set!(cfg.optimizer.windows, self.window_set);
        set!(cfg.optimizer.trail_window, self.trail_window);
        set!(cfg.filters.trim_frac, self.trim_frac);
        set!(cfg.tracks.dedup_radius_px, self.dedup_radius_px);
        if self.threads.is_some() {
            cfg.pipeline.threads = self.threads;
        }
        if self.clip_workers.is_some() {
            cfg.pipeline.clip_workers = self.clip_workers;
        }
        let ex = &mut cfg.pipeline.export;
        ex.raw_tracks |= self.raw_tracks;
        ex.loss_traces |= self.loss_traces;
        ex.trajectories_ply |= self.trajectories_ply;
        if let Some(f) = self.ply_frame {
            ex.ply = true;
            ex.ply_frame = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthFormatArg {
    Disparity,
    Flow,
}

#[derive(Args)]
struct SynthArgs {
    /// Clip directory to create.
    #[arg(long, short)]
    out: PathBuf,
    /// Scene description (JSON). Without it a random standard scene is drawn.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    static_points: usize,
    #[arg(long, default_value_t = 80)]
    moving_points: usize,
    /// Also render a 120 degree view of the same camera.
    #[arg(long)]
    wide_view: bool,
    #[arg(long, value_enum, default_value = "disparity")]
    depth_format: DepthFormatArg,
    /// Defaults to the output directory name.
    #[arg(long)]
    clip_id: Option<String>,
}

fn out_root(opts: &RunOpts, cfg: &PipelineConfig) -> Result<PathBuf> {
    match opts.out.clone().or_else(|| cfg.pipeline.output_dir.clone()) {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --out or set pipeline.output_dir"),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SceneSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let mut s = SceneSpec::standard(args.seed, args.static_points, args.moving_points);
            if args.wide_view {
                s.views.push(CameraModel::perspective(512, 512, 120.0)?);
            }
            s
        }
    };
    let bundle = render_scene(&spec)?;
    let id = match &args.clip_id {
        Some(id) => id.clone(),
        None => args.out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "synth".into()),
    };
    let format = match args.depth_format {
        DepthFormatArg::Disparity => DepthFormat::Disparity,
        DepthFormatArg::Flow => DepthFormat::Flow,
    };
    let manifest = write_bundle(&bundle, &args.out, &id, format)?;
    let tracks: usize = bundle.views.iter().map(|v| v.tracks.len()).sum();
    println!("{} ({} frames, {tracks} tracks)", manifest.display(), bundle.n_frames());
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stats(tracks: &Path, poses: Option<&Path>, model: Option<&Path>, trail_window: usize) -> Result<()> {
    let (tracks, _) = read_tracks3d(tracks)?;
    match (poses, model) {
        (Some(poses), Some(model)) => {
            let poses = PoseSet::load_json(poses)?;
            let model = CameraModel::load_json(model)?;
            let lifted: Vec<_> = tracks.iter().map(|t| trackfuse::tracks::track_from_trajectory(t, &poses)).collect();
            let mags: Vec<_> = lifted.iter().map(|t| trail_motion_magnitude(t, &poses, &model, trail_window)).collect();
            print_json(&trackfuse::filters::clip_stats(&lifted, &mags, &poses))
        }
        _ => print_json(&track_visibility_stats(&tracks)),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { input, opts } => {
            let cfg = opts.config.build()?;
            let input = match input.or_else(|| cfg.pipeline.input_dir.clone()) {
                Some(p) => p,
                None => bail!("no input directory: pass one or set pipeline.input_dir"),
            };
            let out = out_root(&opts, &cfg)?;
            let manifests = find_manifests(&input).with_context(|| format!("listing {}", input.display()))?;
            if manifests.is_empty() {
                bail!("no manifest.json found under {}", input.display());
            }
            let summary = run_corpus(&manifests, &cfg, &out)?;
            println!(
                "{} clips: {} processed ({} accepted), {} failed",
                summary.clips,
                summary.succeeded.len(),
                summary.accepted.len(),
                summary.failed.len()
            );
            if !summary.failed.is_empty() {
                eprintln!("failures recorded in {}", out.join("failures.json").display());
                std::process::exit(1);
            }
        }
        Command::RunClip { manifest, opts } => {
            let cfg = opts.config.build()?;
            let out = out_root(&opts, &cfg)?;
            let m = ClipManifest::load(&manifest)?;
            let result = run_clip(&m, &cfg, &out)?;
            let v = &result.report.verdict;
            println!(
                "{}: {} tracks, {}",
                result.dir.display(),
                result.report.stats.track_count,
                if v.accepted { "accepted".to_string() } else { format!("rejected {:?}", v.reasons) }
            );
        }
        Command::Synth(args) => synth(&args)?,
        Command::Eval { pred, truth, t0, t1 } => {
            let (pred, _) = read_tracks3d(&pred)?;
            let (truth, _) = read_tracks3d(&truth)?;
            print_json(&eval_metrics(&pred, &truth, t0, t1)?)?;
        }
        Command::Stats { tracks, poses, model, trail_window } => {
            stats(&tracks, poses.as_deref(), model.as_deref(), trail_window)?
        }
        Command::ExportPly { tracks, out, frame, trajectories, no_color, no_ids } => {
            let (tracks, _) = read_tracks3d(&tracks)?;
            let opts = PlyOptions { color: !no_color, track_ids: !no_ids };
            let n = if trajectories {
                export_trajectories(&tracks, &out, opts)?
            } else {
                export_pointcloud(&tracks, frame, &out, opts)?
            };
            println!("{}: {n} vertices", out.display());
        }
        Command::Config { config } => print!("{}", config.build()?.to_toml()),
    }
    Ok(())
}
