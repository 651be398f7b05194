use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LossError;
use crate::datagen::{VGG_MEAN, VGG_STD};
use crate::networks::ops::{conv2d_bias, max_pool2};

/// Frozen convolutional feature stack for the perceptual loss.
pub trait FeatureExtractor: Send + Sync {
    /// One feature map per tapped layer, finest first. Input is `(B, 3, H, W)` in `[0, 1]`.
    fn features(&self, x: &Tensor) -> candle_core::Result<Vec<Tensor>>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
}

/// Stages of 3x3 conv + ReLU layers with 2x max pooling between stages. The output of each
/// stage's last ReLU is tapped.
#[derive(Debug, Clone)]
pub struct ConvStack {
    name: String,
    stages: Vec<Vec<ConvLayer>>,
    normalize_input: bool,
}

/// torchvision `features.N` indices of the VGG16 convolutions up to relu3_3.
const VGG16_STAGES: [&[usize]; 3] = [&[0, 2], &[5, 7], &[10, 12, 14]];
const VGG16_WIDTHS: [&[(usize, usize)]; 3] = [&[(3, 64), (64, 64)], &[(64, 128), (128, 128)], &[(128, 256), (256, 256), (256, 256)]];

impl ConvStack {
    /// Deterministic random-weight stack, one convolution per stage with the given widths.
    ///
    /// Used when no pretrained weights are available; Gram statistics of random ReLU
    /// features still compare texture statistics.
    pub fn random(seed: u64, widths: &[usize], dtype: DType, device: &Device) -> candle_core::Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &cout in widths {
            let fan_in = cin * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..cout * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
            stages.push(vec![ConvLayer {
                weight: Tensor::from_vec(w, (cout, cin, 3, 3), device)?.to_dtype(dtype)?,
                bias: Tensor::from_vec(b, cout, device)?.to_dtype(dtype)?,
            }]);
            cin = cout;
        }
        Ok(Self { name: format!("random{widths:?}"), stages, normalize_input: true })
    }

    /// Stack from explicit `(weight (Cout, Cin, 3, 3), bias (Cout))` layers per stage.
    pub fn from_layers(name: &str, stages: Vec<Vec<(Tensor, Tensor)>>, normalize_input: bool) -> Self {
        let stages = stages.into_iter().map(|s| s.into_iter().map(|(weight, bias)| ConvLayer { weight, bias }).collect()).collect();
        Self { name: name.into(), stages, normalize_input }
    }

    /// Default fallback: three stages of widths 8, 16 and 32.
    pub fn random_default(dtype: DType, device: &Device) -> candle_core::Result<Self> {
        Self::random(0x5eed, &[8, 16, 32], dtype, device)
    }

    /// VGG16 convolutions from a safetensors file with torchvision key names
    /// (`features.N.weight` / `features.N.bias`), tapped at relu1_2, relu2_2 and relu3_3.
    pub fn load_vgg16(path: &Path, dtype: DType, device: &Device) -> Result<Self, LossError> {
        let unavailable = |m: String| LossError::ExtractorUnavailable(format!("{}: {m}", path.display()));
        let bytes = std::fs::read(path).map_err(|e| unavailable(e.to_string()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, device).map_err(|e| unavailable(e.to_string()))?;
        let mut stages = Vec::new();
        for (ids, widths) in VGG16_STAGES.iter().zip(VGG16_WIDTHS) {
            let mut layers = Vec::new();
            for (&i, &(cin, cout)) in ids.iter().zip(widths) {
                let get = |suffix: &str, dims: &[usize]| -> Result<Tensor, LossError> {
                    let key = format!("features.{i}.{suffix}");
                    let t = tensors.get(&key).ok_or_else(|| unavailable(format!("missing {key}")))?;
                    if t.dims() != dims {
                        return Err(unavailable(format!("{key} has shape {:?}", t.dims())));
                    }
                    Ok(t.to_dtype(dtype)?)
                };
                layers.push(ConvLayer { weight: get("weight", &[cout, cin, 3, 3])?, bias: get("bias", &[cout])? });
            }
            stages.push(layers);
        }
        Ok(Self { name: "vgg16".into(), stages, normalize_input: true })
    }

    /// Pretrained VGG16 when `path` loads, otherwise the random fallback.
    pub fn pretrained_or_random(path: Option<&Path>, dtype: DType, device: &Device) -> Result<Self, LossError> {
        match path {
            Some(p) => match Self::load_vgg16(p, dtype, device) {
                Ok(x) => Ok(x),
                Err(e) => {
                    log::warn!("{e}; using the random-weight extractor");
                    Ok(Self::random_default(dtype, device)?)
                }
            },
            None => Ok(Self::random_default(dtype, device)?),
        }
    }

    pub fn without_input_normalization(mut self) -> Self {
        self.normalize_input = false;
        self
    }

    pub fn num_taps(&self) -> usize {
        self.stages.len()
    }
}

impl FeatureExtractor for ConvStack {
    fn features(&self, x: &Tensor) -> candle_core::Result<Vec<Tensor>> {
        let mut h = if self.normalize_input {
            let dev = x.device();
            let mean = Tensor::new(&VGG_MEAN, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
            let std = Tensor::new(&VGG_STD, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
            x.broadcast_sub(&mean)?.broadcast_div(&std)?
        } else {
            x.clone()
        };
        let mut taps = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                h = max_pool2(&h)?;
            }
            for layer in stage {
                h = conv2d_bias(&h, &layer.weight, &layer.bias, 1, true)?;
            }
            taps.push(h.clone());
        }
        Ok(taps)
    }

    fn name(&self) -> &str {
        &self.name
    }
}
