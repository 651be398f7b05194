//! Trains a tiny model on four renders for a few hundred steps, then runs inference on
//! one training image and writes the predicted maps and mesh.
//!
//! `cargo run --example train_and_infer [OUT_DIR] [STEPS]`

use std::path::PathBuf;

use orthohuman::datagen::{make_sample, procedural_background, RenderConfig};
use orthohuman::geometry::primitives::mannequin;
use orthohuman::runtime::{infer_image, train, write_inference, Dataset, InferConfig};
use orthohuman::{ModelConfig, TrainConfig};

fn main() -> orthohuman::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("orthohuman-train"));
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let (h, w) = (128, 64);
    let render = RenderConfig { height: h, width: w, light_count: 32, ..Default::default() };
    let samples = (0..4u64)
        .map(|i| make_sample(&mannequin(), -30.0 + 20.0 * i as f64, &procedural_background(i, h, w), i, &render))
        .collect::<Result<Vec<_>, _>>()?;
    let probe = samples[0].input_image.clone();

    let tiny = ModelConfig::tiny();
    let cfg = TrainConfig {
        epochs: steps,
        batch_size: 4,
        lr: 1e-3,
        lr_decay_per_epoch: 1.0,
        resolution: [h, w],
        unet_depth: tiny.depth,
        base_width: tiny.base_width,
        max_steps: Some(steps),
        checkpoint_dir: Some(out.join("checkpoints")),
        ..Default::default()
    };
    std::fs::create_dir_all(out.join("checkpoints")).map_err(orthohuman::io::IoError::from)?;
    let run = train(&Dataset::in_memory(samples, vec![]), &cfg, None)?;
    let (first, last) = (run.history.first(), run.history.last());
    println!(
        "{} steps in {:.0} s, depth L1 {:.4} -> {:.4}",
        run.history.len(),
        run.seconds,
        first.map_or(f64::NAN, |r| r.report.terms.depth_l1),
        last.map_or(f64::NAN, |r| r.report.terms.depth_l1)
    );

    let net = run.checkpoint.build_model(&candle_core::Device::Cpu)?;
    let camera = run.checkpoint.camera.unwrap_or_else(|| render.ortho(orthohuman::Side::Front));
    let result = infer_image(&net, &probe, &camera, &InferConfig::default())?;
    let written = write_inference(&out.join("prediction"), &result)?;
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}
