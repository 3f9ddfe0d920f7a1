//! Scratch calibration run: trains both stages on a small dataset and prints
//! loss curves, PSNR margins, and the ablation ordering.

use inptpu::dit::{DiTConfig, ModelBundle, NoiseSchedule, TrainConfig, Trainer};
use inptpu::inp_tpu::{ConditionBuilder, Stage};
use inptpu::pipeline::{
    cross_consistency_study, load_training_set, run_self_reenactment_study, Arm, Models,
};
use inptpu::synthdata::make_dataset;
use inptpu::tokenizer::PatchSpec;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_clips: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let img_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let vid_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(400);
    let d_model: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(128);
    let depth: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f32 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let root = std::env::temp_dir().join(format!("inptpu_calibrate_{n_clips}"));
    let _ = std::fs::remove_dir_all(&root);
    let t0 = Instant::now();
    let manifest = make_dataset(&root, n_clips, 0.8, 16, (64, 64), 7, 2).unwrap();
    println!(
        "dataset: {} train / {} test in {:.1}s",
        manifest.train.len(),
        manifest.test.len(),
        t0.elapsed().as_secs_f64()
    );

    let builder = ConditionBuilder::default();
    let base = DiTConfig {
        depth,
        d_model,
        heads: 4,
        mlp_ratio: 4,
        patch: PatchSpec::default(),
        max_grid: (16, 8, 16),
        latent_channels: 48,
    };

    // image stage
    let t0 = Instant::now();
    let img_samples = load_training_set(&root, "train", Stage::Image, &builder, 16).unwrap();
    println!("image samples: {} in {:.1}s", img_samples.len(), t0.elapsed().as_secs_f64());
    let cfg = TrainConfig { lr, steps: img_steps, seed: 11, ..TrainConfig::default() };
    let model = ModelBundle::init(base.clone(), Stage::Image, 1).unwrap();
    let mut trainer = Trainer::new(model, cfg);
    let t0 = Instant::now();
    trainer.run(&img_samples, img_steps, None).unwrap();
    let el = t0.elapsed().as_secs_f64();
    print_curve("image", &trainer.losses, el);
    let image = trainer.model;

    // video stage
    let t0 = Instant::now();
    let vid_samples = load_training_set(&root, "train", Stage::Video, &builder, 16).unwrap();
    println!("video samples: {} in {:.1}s", vid_samples.len(), t0.elapsed().as_secs_f64());
    let cfg = TrainConfig { lr, steps: vid_steps, seed: 13, ..TrainConfig::default() };
    let model = ModelBundle::init(base.clone(), Stage::Video, 2).unwrap();
    let mut trainer = Trainer::new(model, cfg);
    let t0 = Instant::now();
    trainer.run(&vid_samples, vid_steps, None).unwrap();
    let el = t0.elapsed().as_secs_f64();
    print_curve("video", &trainer.losses, el);
    let video = trainer.model;

    let mut models = Models::new(image, video).unwrap();
    models.schedule = NoiseSchedule { steps: 20 };

    let t0 = Instant::now();
    let report =
        run_self_reenactment_study(&models, &root, "test", 99, &Arm::ALL, None).unwrap();
    println!("study in {:.1}s", t0.elapsed().as_secs_f64());
    println!("{}", report.to_table());
    let full = report.arm(Arm::Full).unwrap();
    for c in &full.clips {
        println!(
            "  {}: gen {:.2} dB vs baseline {:.2} dB (margin {:+.2})",
            c.clip,
            c.psnr_db,
            c.baseline_psnr_db,
            c.psnr_db - c.baseline_psnr_db
        );
    }
    println!(
        "mean margin: {:+.2} dB",
        full.mean_psnr_db - report.mean_baseline_psnr_db
    );

    let t0 = Instant::now();
    let cc_full = cross_consistency_study(&models, &root, 5, Arm::Full).unwrap();
    let cc_noref = cross_consistency_study(&models, &root, 5, Arm::NoRefFusion).unwrap();
    println!(
        "cross subject consistency: full {:.4} vs no-ref {:.4} ({:.1}s)",
        cc_full,
        cc_noref,
        t0.elapsed().as_secs_f64()
    );
}

fn print_curve(tag: &str, losses: &[f32], elapsed: f64) {
    let k = losses.len();
    let window = 50.min(k / 2).max(1);
    let head: f32 = losses[..window].iter().sum::<f32>() / window as f32;
    let tail: f32 = losses[k - window..].iter().sum::<f32>() / window as f32;
    println!(
        "{tag}: {k} steps in {elapsed:.1}s ({:.2} s/step); first-{window} mean {head:.4}, last-{window} mean {tail:.4}, ratio {:.3}",
        elapsed / k as f64,
        tail / head
    );
}
