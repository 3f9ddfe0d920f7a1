//! Command-line workflow: `synth`, `train`, `reenact`, `eval`.
//!
//! Every command honors `--seed`, paths default to the `INPTPU_OUT`
//! environment variable where noted, and JSON configs are overridable by
//! flags (the flag wins). Exit codes: 0 success, 1 internal error,
//! 2 usage/data error.

use crate::dit::{DiTConfig, ModelBundle, NoiseSchedule, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::inp_tpu::{ConditionBuilder, Stage};
use crate::pipeline::{load_training_set, run_self_reenactment_study, Arm, JobSpec, Mode, Models};
use crate::synthdata::make_dataset;
use crate::util::derive_seed;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "inptpu",
    version,
    about = "Two-stage inpainting-based token-process video reenactment at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Thread count for clip-parallel synthesis/evaluation (0 = default).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sprite-HOI dataset with train/test splits.
    Synth(SynthArgs),
    /// Train one stage (keyframe or video) on a dataset.
    Train(TrainArgs),
    /// Run self/cross reenactment (optionally chained into a long video).
    Reenact(ReenactArgs),
    /// Score a run directory against ground truth, or run the ablation arms.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of clips (>= 2; the split needs both sides).
    #[arg(long)]
    n: usize,
    /// Dataset root directory.
    #[arg(long, env = "INPTPU_OUT")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of clips in the train split.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Square canvas edge in pixels.
    #[arg(long, default_value_t = 64)]
    canvas: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Keyframe,
    Video,
}

#[derive(Args)]
struct TrainArgs {
    /// Which denoiser to train.
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Dataset root (from `synth`).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long, env = "INPTPU_OUT")]
    out: PathBuf,
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Total step count to reach (also the resume target).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Frames per video-stage training window.
    #[arg(long)]
    clip_length: Option<usize>,
    /// Continue from the checkpoint in --out instead of starting fresh.
    #[arg(long, default_value_t = false)]
    resume: bool,
}

#[derive(Args)]
struct ReenactArgs {
    /// Job JSON file; flags below override its fields.
    #[arg(long)]
    job: Option<PathBuf>,
    #[arg(long)]
    source_dir: Option<PathBuf>,
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_length: Option<usize>,
    /// Number of chained clips (>1 reuses each clip's last frame).
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    ckpt_img: Option<PathBuf>,
    #[arg(long)]
    ckpt_vid: Option<PathBuf>,
    #[arg(long, env = "INPTPU_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    #[value(name = "self")]
    SelfReenact,
    Cross,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::SelfReenact => Mode::SelfReenact,
            ModeArg::Cross => Mode::Cross,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory to score (clip subdirectories or a flat frame dir).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Ground-truth directory (dataset split dir or clip dir).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Mask directory (defaults to the ground-truth directory).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Run the full / no-keyframe / no-ref-fusion comparison instead.
    #[arg(long, default_value_t = false)]
    ablate: bool,
    /// Dataset root (ablation mode).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset split to evaluate in ablation mode.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    ckpt_img: Option<PathBuf>,
    #[arg(long)]
    ckpt_vid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where ablation frames and tables go.
    #[arg(long, env = "INPTPU_OUT")]
    out: Option<PathBuf>,
}

/// Run configuration file: model and training hyperparameters in one JSON
/// document. Unknown keys are rejected.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: DiTConfig,
    pub train: TrainConfig,
    pub clip_length: usize,
    pub sample_steps: usize,
}

impl RunConfig {
    fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let mut cfg: RunConfig = serde_json::from_str(&text)?;
                if cfg.clip_length == 0 {
                    cfg.clip_length = 16;
                }
                if cfg.sample_steps == 0 {
                    cfg.sample_steps = 20;
                }
                Ok(cfg)
            }
            None => Ok(RunConfig {
                clip_length: 16,
                sample_steps: 20,
                ..RunConfig::default()
            }),
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // ignore failure when a pool already exists (tests call run() twice)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Reenact(args) => cmd_reenact(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let workers = rayon::current_num_threads();
    let manifest = make_dataset(
        &args.out,
        args.n,
        args.ratio,
        args.frames,
        (args.canvas, args.canvas),
        args.seed,
        workers,
    )?;
    println!(
        "wrote {} train / {} test clips under {}",
        manifest.train.len(),
        manifest.test.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if !args.data.join("manifest.json").is_file() {
        return Err(Error::Data(format!(
            "no dataset manifest under {}",
            args.data.display()
        )));
    }
    let mut cfg = RunConfig::load_or_default(args.config.as_ref())?;
    if let Some(v) = args.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    if let Some(v) = args.clip_length {
        cfg.clip_length = v;
    }

    let stage = match args.stage {
        StageArg::Keyframe => Stage::Image,
        StageArg::Video => Stage::Video,
    };
    let builder = ConditionBuilder::default();
    let split_samples = load_training_set(
        &args.data,
        "train",
        stage,
        &builder,
        cfg.clip_length,
    )?;
    if split_samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }

    let mut trainer = if args.resume {
        Trainer::resume(&args.out)?
    } else {
        // fit the positional table to the actual token geometry
        let grid = split_samples[0].grid;
        let mut model_cfg = cfg.model.clone();
        model_cfg.max_grid = (
            model_cfg.max_grid.0.max(grid.frames),
            model_cfg.max_grid.1.max(grid.rows),
            model_cfg.max_grid.2.max(grid.cols),
        );
        let model = ModelBundle::init(model_cfg, stage, derive_seed(cfg.train.seed, 0x1417))?;
        Trainer::new(model, cfg.train.clone())
    };
    let target = cfg.train.steps;
    trainer.run(&split_samples, target, Some(&args.out))?;
    let last = trainer.losses.last().copied().unwrap_or(f32::NAN);
    println!(
        "trained to step {} (last loss {:.5}); checkpoint at {}",
        trainer.step,
        last,
        args.out.display()
    );
    Ok(())
}

fn cmd_reenact(args: ReenactArgs) -> Result<()> {
    let mut spec = match &args.job {
        Some(path) => JobSpec::load(path)?,
        None => JobSpec {
            source_dir: PathBuf::new(),
            mask_dir: PathBuf::new(),
            reference_png: PathBuf::new(),
            mode: Mode::SelfReenact,
            seed: 0,
            clip_length: 16,
            n_clips: 1,
            checkpoint_img: PathBuf::new(),
            checkpoint_vid: PathBuf::new(),
            out_dir: PathBuf::new(),
        },
    };
    if let Some(v) = args.source_dir {
        spec.source_dir = v;
    }
    if let Some(v) = args.mask_dir {
        spec.mask_dir = v;
    }
    if let Some(v) = args.reference {
        spec.reference_png = v;
    }
    if let Some(v) = args.mode {
        spec.mode = v.into();
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.clip_length {
        spec.clip_length = v;
    }
    if let Some(v) = args.clips {
        spec.n_clips = v;
    }
    if let Some(v) = args.ckpt_img {
        spec.checkpoint_img = v;
    }
    if let Some(v) = args.ckpt_vid {
        spec.checkpoint_vid = v;
    }
    if let Some(v) = args.out {
        spec.out_dir = v;
    }
    for (name, p) in [
        ("--source-dir", &spec.source_dir),
        ("--mask-dir", &spec.mask_dir),
        ("--reference", &spec.reference_png),
        ("--ckpt-img", &spec.checkpoint_img),
        ("--ckpt-vid", &spec.checkpoint_vid),
        ("--out", &spec.out_dir),
    ] {
        if p.as_os_str().is_empty() {
            return Err(Error::Data(format!("missing {name} (flag or job file)")));
        }
    }
    let video = spec.run()?;
    println!(
        "wrote {} frames to {}",
        video.num_frames(),
        spec.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.ablate {
        let data = args
            .data
            .ok_or_else(|| Error::Data("--ablate needs --data".into()))?;
        let img = args
            .ckpt_img
            .ok_or_else(|| Error::Data("--ablate needs --ckpt-img".into()))?;
        let vid = args
            .ckpt_vid
            .ok_or_else(|| Error::Data("--ablate needs --ckpt-vid".into()))?;
        let mut models = Models::load(&img, &vid)?;
        models.schedule = NoiseSchedule::default();
        let report = run_self_reenactment_study(
            &models,
            &data,
            &args.split,
            args.seed,
            &Arm::ALL,
            args.out.as_deref(),
        )?;
        let table = report.to_table();
        print!("{table}");
        if let Some(out) = &args.out {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
            std::fs::write(out.join("ablation.txt"), &table)?;
        }
        return Ok(());
    }

    let run_dir = args.run.ok_or_else(|| Error::Data("eval needs --run".into()))?;
    if !run_dir.is_dir() {
        return Err(Error::Data(format!("run dir {} does not exist", run_dir.display())));
    }
    let gt = args.gt.ok_or_else(|| Error::Data("eval needs --gt".into()))?;
    let masks = args.masks.unwrap_or_else(|| gt.clone());
    let report = crate::metrics::evaluate(&run_dir, &gt, &masks)?;
    print!("{}", report.to_table());
    report.write(&run_dir)?;
    Ok(())
}
