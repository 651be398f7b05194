//! Builds the predictor stack in each ablation mode and runs one forward pass.
//!
//! `cargo run --example network_forward`

use candle_core::{DType, Device, Tensor};
use orthohuman::{AblationMode, ModelConfig, OrthoHumanNet};

fn main() -> orthohuman::Result<()> {
    let device = Device::Cpu;
    let x = Tensor::randn(0f32, 1.0, (1, 3, 128, 64), &device).map_err(orthohuman::networks::NetworkError::from)?;
    for mode in [AblationMode::Full, AblationMode::NoAttention, AblationMode::DirectDepth] {
        let net = OrthoHumanNet::new(ModelConfig { mode, ..ModelConfig::tiny() }, DType::F32, &device)?;
        let out = net.forward(&x)?;
        println!(
            "{mode:<13} networks {} params {:>6} gate params {:>5} depths {:?} normals {:?}",
            net.num_networks(),
            net.num_params(),
            net.num_gate_params(),
            out.depths.dims(),
            out.normals.as_ref().map(|t| t.dims().to_vec()),
        );
    }
    Ok(())
}
