//! Scores a noisy copy of a rendered sample against its ground truth and prints the
//! weighted loss breakdown.
//!
//! `cargo run --example loss_breakdown`

use candle_core::{DType, Device};
use orthohuman::datagen::{make_sample, procedural_background, RenderConfig};
use orthohuman::geometry::primitives::mannequin;
use orthohuman::losses::{total_loss, ConvStack, LossTargets};
use orthohuman::{LossWeights, PipelineOutput};

fn main() -> orthohuman::Result<()> {
    let device = Device::Cpu;
    let cfg = RenderConfig { height: 128, width: 64, light_count: 32, ..Default::default() };
    let sample = make_sample(&mannequin(), 10.0, &procedural_background(1, 128, 64), 1, &cfg)?;
    let t = LossTargets::from_samples(&[&sample], DType::F32, &device)?;
    let noisy = |x: &candle_core::Tensor, s: f64| -> candle_core::Result<candle_core::Tensor> { x + (x.randn_like(0.0, s)?) };
    let wrap = |e: candle_core::Error| orthohuman::losses::LossError::from(e);
    let pred = PipelineOutput {
        normals: Some(noisy(&t.normals, 0.1).map_err(wrap)?),
        colors: Some(noisy(&t.colors, 0.05).map_err(wrap)?.clamp(0.0, 1.0).map_err(wrap)?),
        depths: noisy(&t.depths, 0.01).map_err(wrap)?.clamp(0.0, 1.0).map_err(wrap)?,
        phi_color: None,
        phi_normal: None,
    };
    let extractor = ConvStack::random_default(DType::F32, &device).map_err(wrap)?;
    let weights = LossWeights::default();
    let (_, report) = total_loss(&pred, &t, &weights, &extractor)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
    println!("recomputed weighted sum: {:.6}", report.weighted_sum(&weights));
    Ok(())
}
