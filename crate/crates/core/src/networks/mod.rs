//! The three predictors and their wiring.
//!
//! Tensors are NCHW. The normal and color networks are attention U-Nets whose final
//! decoder features ("taps") feed a two-encoder depth network whose decoder fuses both
//! encoders' skips with multi-headed attention gates.

mod aunet;
mod layers;
mod maunet;
pub mod ops;
mod params;
mod pipeline;

pub use aunet::{AUNet, AUNetSpec, Encoder};
pub use layers::{Activation, AttentionGate, Conv, DoubleConv, Gate};
pub use maunet::{MAUNet, MultiAttentionGate};
pub use params::{Init, ParamStore, Scope};
pub use pipeline::{AblationMode, ModelConfig, OrthoHumanNet, PipelineOutput, PredictedMaps};

use candle_core::{DType, Device, Tensor};

use crate::geometry::Image;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input {height}x{width} is not divisible by {multiple}")]
    IndivisibleInput { height: usize, width: usize, multiple: usize },
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
}

/// HWC image to a `(1, C, H, W)` tensor.
pub fn image_to_tensor(img: &Image, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    Tensor::from_slice(&img.data, (img.height, img.width, img.channels), device)?
        .permute((2, 0, 1))?
        .unsqueeze(0)?
        .to_dtype(dtype)
}

/// Stacks same-sized images into `(B, C, H, W)`.
pub fn images_to_batch(images: &[&Image], dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    let items = images.iter().map(|i| image_to_tensor(i, dtype, device)).collect::<candle_core::Result<Vec<_>>>()?;
    Tensor::cat(&items, 0)
}

/// `(C, H, W)` tensor to an HWC image.
pub fn tensor_to_image(t: &Tensor) -> candle_core::Result<Image> {
    let (c, h, w) = t.dims3()?;
    let data = t.permute((1, 2, 0))?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Image { height: h, width: w, channels: c, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Side;
    use candle_core::Var;

    fn rand_tensor(shape: &[usize], seed: u64, dtype: DType) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    fn store() -> ParamStore {
        ParamStore::new(1, DType::F32, &Device::Cpu)
    }

    fn max_abs(t: &Tensor) -> f32 {
        t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F32).unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = Image::from_fn(3, 2, 3, |i, j, c| (i * 100 + j * 10 + c) as f32);
        let t = image_to_tensor(&img, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 3, 2]);
        assert_eq!(t.get(0).unwrap().get(2).unwrap().get(1).unwrap().get(0).unwrap().to_scalar::<f32>().unwrap(), 102.0);
        assert_eq!(tensor_to_image(&t.get(0).unwrap()).unwrap(), img);
    }

    #[test]
    fn attention_gate_properties() {
        let mut s = store();
        let gate = AttentionGate::new(&mut Scope::root(&mut s).sub("g"), 4, 8).unwrap();
        let skip = rand_tensor(&[2, 4, 8, 8], 1, DType::F32);
        let g = rand_tensor(&[2, 8, 4, 4], 2, DType::F32);
        let out = gate.forward(&skip, &g).unwrap();
        assert_eq!(out.dims(), skip.dims());
        // |out| <= |skip| elementwise since alpha is in [0, 1].
        let slack = (skip.abs().unwrap() - out.abs().unwrap()).unwrap();
        assert!(slack.flatten_all().unwrap().min(0).unwrap().to_scalar::<f32>().unwrap() >= 0.0);
        let alpha = gate.alpha(&skip, &g).unwrap();
        let a: Vec<f32> = alpha.flatten_all().unwrap().to_vec1().unwrap();
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        // Zero skip gives zero output.
        assert_eq!(max_abs(&gate.forward(&skip.zeros_like().unwrap(), &g).unwrap()), 0.0);
        // Gate spatially larger than the skip is rejected.
        assert!(matches!(gate.forward(&g.narrow(1, 0, 4).unwrap(), &skip), Err(NetworkError::ShapeMismatch(_))));
        gate.force_open().unwrap();
        assert_eq!(max_abs(&(gate.forward(&skip, &g).unwrap() - &skip).unwrap()), 0.0);
    }

    fn spec(depth: usize) -> AUNetSpec {
        AUNetSpec { in_channels: 3, out_channels: 6, depth, base_width: 4, activation: Activation::Tanh, attention: true }
    }

    #[test]
    fn aunet_shape_contract() {
        let mut s = store();
        let net = AUNet::new(&mut Scope::root(&mut s), spec(4)).unwrap();
        let x = rand_tensor(&[1, 3, 128, 64], 3, DType::F32);
        let (out, tap) = net.forward(&x).unwrap();
        assert_eq!(out.dims(), &[1, 6, 128, 64]);
        assert_eq!(tap.dims(), &[1, 4, 128, 64]);
        assert!(max_abs(&out) <= 1.0);
        let bad = rand_tensor(&[1, 3, 130, 64], 3, DType::F32);
        assert!(matches!(net.forward(&bad), Err(NetworkError::IndivisibleInput { .. })));
        let (again, _) = net.forward(&x).unwrap();
        assert_eq!(max_abs(&(again - &out).unwrap()), 0.0);
        // Fully convolutional: doubling the input doubles the output.
        let big = rand_tensor(&[1, 3, 32, 32], 4, DType::F32);
        assert_eq!(net.forward(&big).unwrap().0.dims(), &[1, 6, 32, 32]);
        assert_eq!(net.forward(&big.narrow(2, 0, 16).unwrap()).unwrap().0.dims(), &[1, 6, 16, 32]);
    }

    #[test]
    fn no_attention_is_plain_unet() {
        let mut s = store();
        let plain = AUNet::new(&mut Scope::root(&mut s).sub("p"), AUNetSpec { attention: false, ..spec(2) }).unwrap();
        assert!(plain.gates().is_empty());
        let mut s2 = store();
        let gated = AUNet::new(&mut Scope::root(&mut s2).sub("p"), spec(2)).unwrap();
        assert_eq!(gated.gates().len(), 2);
        // Opening every gate reproduces the plain network exactly (same seed and names).
        for g in gated.gates() {
            g.force_open().unwrap();
        }
        let x = rand_tensor(&[1, 3, 16, 8], 5, DType::F32);
        let d = (plain.forward(&x).unwrap().0 - gated.forward(&x).unwrap().0).unwrap();
        assert_eq!(max_abs(&d), 0.0);
        assert!(s2.num_params() > s.num_params());
    }

    #[test]
    fn mag_properties() {
        let mut s = store();
        let mag = MultiAttentionGate::new(&mut Scope::root(&mut s).sub("m"), true, 4, 8).unwrap();
        let sp = rand_tensor(&[1, 4, 8, 8], 6, DType::F32);
        let sg = rand_tensor(&[1, 4, 8, 8], 7, DType::F32);
        let g = rand_tensor(&[1, 8, 4, 4], 8, DType::F32);
        assert_eq!(mag.forward(&sp, &sg, &g).unwrap().dims(), &[1, 4, 8, 8]);
        // Zero geometric skip leaves the geometric half of the concatenation zero.
        let gated = mag.gated(&sp, &sg.zeros_like().unwrap(), &g).unwrap();
        assert_eq!(max_abs(&gated.narrow(1, 4, 4).unwrap()), 0.0);
        let photo_only = mag.gated(&sp, &sg, &g).unwrap().narrow(1, 0, 4).unwrap();
        assert_eq!(max_abs(&(gated.narrow(1, 0, 4).unwrap() - photo_only).unwrap()), 0.0);
        // Symmetric weights and identical skips give identical attention.
        let (p, q) = mag.gates().unwrap();
        q.copy_from(p).unwrap();
        let (ap, ag) = mag.alphas(&sp, &sp, &g).unwrap().unwrap();
        assert_eq!(max_abs(&(ap - ag).unwrap()), 0.0);
        assert!(mag.forward(&sp, &sg.narrow(2, 0, 4).unwrap(), &g).is_err());
    }

    #[test]
    fn maunet_range_swap_and_gradients() {
        let mut s = store();
        let net = MAUNet::new(&mut Scope::root(&mut s), 4, 4, 2, 4, true).unwrap();
        let a = Var::from_tensor(&rand_tensor(&[1, 4, 16, 8], 9, DType::F32)).unwrap();
        let b = Var::from_tensor(&rand_tensor(&[1, 4, 16, 8], 10, DType::F32)).unwrap();
        let out = net.forward(&a, &b).unwrap();
        assert_eq!(out.dims(), &[1, 2, 16, 8]);
        let v: Vec<f32> = out.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
        let swapped = net.forward(&b, &a).unwrap();
        assert!(max_abs(&(swapped - &out).unwrap()) > 1e-6);
        let target = rand_tensor(&[1, 2, 16, 8], 11, DType::F32);
        let grads = (out - target).unwrap().sqr().unwrap().mean_all().unwrap().backward().unwrap();
        assert!(max_abs(grads.get(&a).unwrap()) > 0.0);
        assert!(max_abs(grads.get(&b).unwrap()) > 0.0);
        assert!(net.forward(&a, &b.narrow(2, 0, 8).unwrap()).is_err());
    }

    #[test]
    fn pipeline_shapes_and_reachability() {
        let cfg = ModelConfig { depth: 2, base_width: 4, ..ModelConfig::default() };
        let net = OrthoHumanNet::new(cfg, DType::F32, &Device::Cpu).unwrap();
        let x = rand_tensor(&[2, 3, 32, 16], 12, DType::F32);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.normals.as_ref().unwrap().dims(), &[2, 6, 32, 16]);
        assert_eq!(out.colors.as_ref().unwrap().dims(), &[2, 6, 32, 16]);
        assert_eq!(out.depths.dims(), &[2, 2, 32, 16]);
        assert_eq!(out.depth(Side::Back).unwrap().dims(), &[2, 1, 32, 16]);
        let again = net.forward(&x).unwrap();
        assert_eq!(max_abs(&(again.depths - &out.depths).unwrap()), 0.0);
        // A depth-only loss reaches the first layer of the normal network.
        let grads = out.depths.mean_all().unwrap().backward().unwrap();
        let first = net.params().var("normal.enc.level0.conv1.weight").unwrap();
        assert!(max_abs(grads.get(first).unwrap()) > 0.0);
    }

    #[test]
    fn ablation_parameter_ordering() {
        let base = ModelConfig { depth: 2, base_width: 4, ..ModelConfig::default() };
        let full = OrthoHumanNet::new(base, DType::F32, &Device::Cpu).unwrap();
        let plain = OrthoHumanNet::new(ModelConfig { mode: AblationMode::NoAttention, ..base }, DType::F32, &Device::Cpu).unwrap();
        let direct = OrthoHumanNet::new(ModelConfig { mode: AblationMode::DirectDepth, ..base }, DType::F32, &Device::Cpu).unwrap();
        assert!(full.num_gate_params() > plain.num_gate_params());
        assert!(full.num_params() > plain.num_params());
        assert_eq!((full.num_networks(), direct.num_networks()), (3, 1));
        // The depth net has two encoders, so it outweighs an attention U-Net of equal width.
        let depth_params = full.params().num_params_with_prefix("depth.");
        let normal_params = full.params().num_params_with_prefix("normal.");
        assert!(depth_params > normal_params);
        let x = rand_tensor(&[1, 3, 16, 8], 13, DType::F32);
        let out = direct.forward(&x).unwrap();
        assert!(out.normals.is_none() && out.depths.dims() == [1, 2, 16, 8]);
        assert_eq!("no_attention".parse::<AblationMode>().unwrap(), AblationMode::NoAttention);
    }
}
