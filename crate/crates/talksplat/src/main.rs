use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use talksplat::checkpoint::Checkpoint;
use talksplat::config::{PerceptualKind, TrainConfig};
use talksplat::dataset::{Dataset, Region, Split, MANIFEST};
use talksplat::error::{Error, Result};
use talksplat::pipeline::{self, InferInput, PoseTrack};
use talksplat::synth::{self, SyntheticSpec, Waveform};
use talksplat::train::{self, Outputs};
use talksplat::gsaf;
use talksplat_core::gradcheck::{self, GradCheckConfig};

/// Audio- and pose-driven deformable Gaussian splatting.
#[derive(Debug, Parser)]
#[command(name = "talksplat", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Worker threads for rendering (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Request bit-reproducible execution. Every reduction already runs in
    /// a fixed order, so this only records the intent in the log.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Rigid 8-blob scene on a full orbit.
    Static,
    /// Blobs driven by a sinusoid, narrow orbit.
    Driven,
    /// The driven scene with a zero signal.
    Zero,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (or a parent holding `head/` and `torso/`).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Iterations of this stage.
    #[arg(long)]
    iterations: Option<usize>,
    /// Which region to train; must match the dataset.
    #[arg(long, value_enum)]
    region: Option<Region>,
    #[arg(long, value_enum)]
    perceptual: Option<PerceptualKind>,
    /// Feature extractor for `--perceptual external`.
    #[arg(long)]
    feature_net: Option<PathBuf>,
    /// Initial Gaussian count.
    #[arg(long)]
    gaussians: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with exact ground truth.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "static")]
        preset: Preset,
        /// JSON scene spec overriding the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long, value_enum)]
        region: Option<Region>,
    },
    /// Optimize a static Gaussian cloud against the training frames.
    InitStatic {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Train the deformation field (and audio smoother) jointly with the cloud.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        /// Static-stage checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from a random cloud instead of a static checkpoint.
        #[arg(long)]
        skip_static_init: bool,
        /// Feed raw coordinates to the MLP instead of the tri-plane hash grid.
        #[arg(long)]
        no_hash_grid: bool,
    },
    /// Render dataset frames with a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long, value_enum)]
        region: Option<Region>,
    },
    /// Drive a trained head (and optional torso) with new audio and poses.
    Infer {
        /// Head checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Torso checkpoint composited under the head.
        #[arg(long)]
        torso: Option<PathBuf>,
        /// GSAF audio feature track.
        #[arg(long)]
        audio: PathBuf,
        /// JSON pose track (`{"poses": [...], "eye": [...]}`).
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame PSNR, perceptual-proxy and landmark distance as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// CSV path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        region: Option<Region>,
        /// Predicted mouth landmarks per frame (JSON `[[[x, y], ...], ...]`).
        /// Without it the lmd column is left as NaN.
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Rasterizer forward throughput on a random scene.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        gaussians: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every analytic gradient.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        gaussians: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        /// Test hook: perturb the analytic gradient of one class.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

/// `root/head` or `root/torso` when present, otherwise `root` itself, whose
/// manifest must then match the requested region.
fn open_dataset(root: &Path, region: Option<Region>) -> Result<Dataset> {
    let root = match region {
        Some(r) => {
            let sub = root.join(match r {
                Region::Head => "head",
                Region::Torso => "torso",
            });
            if sub.join(MANIFEST).exists() { sub } else { root.to_path_buf() }
        }
        None => root.to_path_buf(),
    };
    let ds = Dataset::load(&root)?;
    if let Some(r) = region {
        if ds.manifest.region != r {
            return Err(Error::Config(format!("--region {r:?} but {} holds a {:?} dataset", root.display(), ds.manifest.region)));
        }
    }
    Ok(ds)
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.perceptual {
        cfg.loss.perceptual = p;
    }
    if let Some(p) = &a.feature_net {
        cfg.loss.feature_net = Some(p.clone());
    }
    if let Some(n) = a.gaussians {
        cfg.init.gaussians = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if cli.global.deterministic {
        log::info!("deterministic mode: fixed-order reductions, seeded RNG streams");
    }
    match cli.command {
        Command::GenSynth { out, seed, preset, spec, frames, width, height, region } => {
            let mut s = match (&spec, preset) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
                }
                (None, Preset::Static) => SyntheticSpec::static_scene(),
                (None, Preset::Driven) => SyntheticSpec::driven_scene(),
                (None, Preset::Zero) => SyntheticSpec { signal: Waveform::Zero, ..SyntheticSpec::driven_scene() },
            };
            s.frames = frames.unwrap_or(s.frames);
            s.width = width.unwrap_or(s.width);
            s.height = height.unwrap_or(s.height);
            s.region = region.unwrap_or(s.region);
            log::info!("resolved scene spec: {}", serde_json::to_string(&s).expect("spec serializes"));
            synth::gen_synthetic(&s, seed, &out)?;
            PoseTrack::from_dataset(&Dataset::load(&out)?).write(&out.join("poses.json"))?;
            println!("wrote {} frames to {}", s.frames, out.display());
        }
        Command::InitStatic { args } => {
            let mut cfg = resolve_config(&args)?;
            if let Some(n) = args.iterations {
                cfg.static_iterations = n;
            }
            let ds = open_dataset(&args.dataset, args.region)?;
            let r = train::static_init_stage(&ds, &cfg, &Outputs { dir: Some(args.out.clone()) })?;
            report_stage(&r, &args.out);
        }
        Command::Train { args, init, skip_static_init, no_hash_grid } => {
            let mut cfg = resolve_config(&args)?;
            if let Some(n) = args.iterations {
                cfg.deform_iterations = n;
            }
            cfg.skip_static_init |= skip_static_init;
            if no_hash_grid {
                cfg.model.hash_grid = false;
            }
            let ds = open_dataset(&args.dataset, args.region)?;
            let init = match (&init, cfg.skip_static_init) {
                (Some(p), false) => Some(Checkpoint::load(p)?),
                (None, false) => return Err(Error::Config("train needs --init <static checkpoint> or --skip-static-init".into())),
                (_, true) => None,
            };
            let r = train::deform_train_stage(&ds, init.as_ref(), &cfg, &Outputs { dir: Some(args.out.clone()) })?;
            report_stage(&r, &args.out);
        }
        Command::Render { checkpoint, dataset, out, split, region } => {
            log::info!("render: checkpoint {} dataset {} split {split:?}", checkpoint.display(), dataset.display());
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = open_dataset(&dataset, region.or(Some(ck.meta.region)))?;
            let paths = pipeline::render_dataset(&ck, &ds, split.split(), &out)?;
            println!("rendered {} frames to {}", paths.len(), out.display());
        }
        Command::Infer { checkpoint, torso, audio, poses, out } => {
            log::info!("infer: head {} torso {:?} audio {} poses {:?}", checkpoint.display(), torso, audio.display(), poses);
            let head = Checkpoint::load(&checkpoint)?;
            let torso = torso.as_deref().map(Checkpoint::load).transpose()?;
            let track = gsaf::read(&audio)?;
            let poses = poses.as_deref().map(PoseTrack::load).transpose()?;
            let input = InferInput { head: &head, torso: torso.as_ref(), audio: &track, poses: poses.as_ref() };
            let r = pipeline::infer(&input, &out)?;
            println!("{} frames, {}x{}, {} Gaussians, {:.3} s, {:.2} FPS", r.frames, r.width, r.height, r.gaussians, r.seconds, r.fps);
        }
        Command::Eval { checkpoint, dataset, split, out, region, landmarks } => {
            log::info!("eval: checkpoint {} dataset {} split {split:?} landmarks {landmarks:?}", checkpoint.display(), dataset.display());
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = open_dataset(&dataset, region.or(Some(ck.meta.region)))?;
            let predicted = landmarks.as_deref().map(pipeline::load_landmarks).transpose()?;
            let csv = pipeline::evaluate(&ck, &ds, split.split(), predicted.as_ref())?.to_csv();
            match out {
                Some(p) => train::write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Bench { gaussians, width, height, frames, seed } => {
            let r = pipeline::bench(gaussians, width, height, frames, seed)?;
            println!("{} Gaussians at {}x{}: {} frames in {:.3} s, {:.2} FPS", r.gaussians, r.width, r.height, r.frames, r.seconds, r.fps);
        }
        Command::CheckGrad { seed, gaussians, width, height, corrupt } => {
            let cfg = GradCheckConfig { seed, gaussians, width, height, corrupt, ..GradCheckConfig::default() };
            let reports = gradcheck::run(&cfg)?;
            println!("{:<10} {:>8} {:>8} {:>14} {:>10}", "class", "checked", "skipped", "max_rel_err", "status");
            for r in &reports {
                println!("{:<10} {:>8} {:>8} {:>14.3e} {:>10}", r.class, r.checked, r.skipped, r.max_rel_err, if r.passed() { "pass" } else { "FAIL" });
            }
            let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.class.to_string()).collect();
            if !failed.is_empty() {
                return Err(Error::GradCheck { classes: failed });
            }
        }
    }
    Ok(())
}

fn report_stage(r: &train::StageResult, out: &Path) {
    if let Some(last) = r.log.last() {
        println!("iteration {}: loss {:.6}, psnr {:.2} dB, {} Gaussians", last.iteration, last.terms.total, last.psnr, last.gaussians);
    }
    println!("checkpoint written to {}", out.join("checkpoint.gsck").display());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.global.log).format_timestamp(None).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
