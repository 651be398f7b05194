use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::aunet::{AUNet, AUNetSpec};
use super::layers::Activation;
use super::maunet::MAUNet;
use super::params::{ParamStore, Scope};
use super::{tensor_to_image, NetworkError};
use crate::geometry::{DepthMap, Image, MapPair, Mask, NormalMap, OrthographicCamera, Side};

type Result<T> = std::result::Result<T, NetworkError>;

/// Which variant of the predictor stack to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Normal net, color net and the two-encoder depth net with attention gates.
    #[default]
    Full,
    /// Same wiring with every attention gate replaced by the identity.
    NoAttention,
    /// One attention U-Net from the input straight to the depth pair.
    DirectDepth,
}

impl std::str::FromStr for AblationMode {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_attention" => Ok(Self::NoAttention),
            "direct_depth" => Ok(Self::DirectDepth),
            other => Err(NetworkError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoAttention => "no_attention",
            Self::DirectDepth => "direct_depth",
        })
    }
}

/// Architecture shared by all networks of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_width: usize,
    pub mode: AblationMode,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Toy scale for 128x64 inputs.
    fn default() -> Self {
        Self { depth: 4, base_width: 32, mode: AblationMode::Full, seed: 0 }
    }
}

impl ModelConfig {
    /// Capacity intended for 512x256 inputs.
    pub fn full_scale() -> Self {
        Self { depth: 6, base_width: 64, ..Self::default() }
    }

    /// Small enough to train on a single CPU core in minutes.
    pub fn tiny() -> Self {
        Self { depth: 3, base_width: 4, ..Self::default() }
    }

    /// Inputs must have height and width divisible by this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Everything the stack predicts for a batch. Pair tensors stack front channels before
/// back channels.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// `(B, 6, H, W)` in `[-1, 1]`.
    pub normals: Option<Tensor>,
    /// `(B, 6, H, W)` in `[0, 1]`.
    pub colors: Option<Tensor>,
    /// `(B, 2, H, W)` in `(0, 1)`.
    pub depths: Tensor,
    /// Color-net features before its head.
    pub phi_color: Option<Tensor>,
    /// Normal-net features before its head.
    pub phi_normal: Option<Tensor>,
}

fn side_slice(t: &Tensor, side: Side, per_side: usize) -> Result<Tensor> {
    let start = match side {
        Side::Front => 0,
        Side::Back => per_side,
    };
    Ok(t.narrow(1, start, per_side)?)
}

impl PipelineOutput {
    pub fn depth(&self, side: Side) -> Result<Tensor> {
        side_slice(&self.depths, side, 1)
    }

    pub fn normal(&self, side: Side) -> Result<Option<Tensor>> {
        self.normals.as_ref().map(|n| side_slice(n, side, 3)).transpose()
    }

    pub fn color(&self, side: Side) -> Result<Option<Tensor>> {
        self.colors.as_ref().map(|c| side_slice(c, side, 3)).transpose()
    }

    /// Converts batch item `item` into maps on the camera grid. The shared foreground is
    /// where both predicted depths exceed `mask_eps`.
    pub fn to_maps(&self, item: usize, camera: &OrthographicCamera, mask_eps: f32) -> Result<PredictedMaps> {
        let depth_img = tensor_to_image(&self.depths.get(item)?)?;
        let (h, w) = (depth_img.height, depth_img.width);
        let mask = Mask::from_fn(h, w, |i, j| {
            let p = depth_img.pixel(i, j);
            p[0] > mask_eps && p[1] > mask_eps
        });
        let frame = if (camera.frame.height, camera.frame.width) == (h, w) { camera.frame } else { camera.frame.resampled(h, w) };
        let depths = MapPair::new(Side::Front, Side::Back).map(|&side| {
            let c = if side == Side::Front { 0 } else { 1 };
            let values: Vec<f32> = depth_img.data.chunks(2).map(|p| p[c]).collect();
            DepthMap::from_normalized(side, frame, camera.near, camera.far, &values, 0.0).with_mask(mask.clone())
        });
        let normals = match &self.normals {
            Some(n) => {
                let img = tensor_to_image(&n.get(item)?)?;
                Some(MapPair::new(Side::Front, Side::Back).map(|&side| {
                    let o = if side == Side::Front { 0 } else { 3 };
                    let mut map = NormalMap::new(side, h, w);
                    for k in 0..h * w {
                        if !mask.data[k] {
                            continue;
                        }
                        let v = &img.data[6 * k + o..6 * k + o + 3];
                        let v = crate::geometry::Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64);
                        let unit = if v.norm() > 1e-12 { v.normalize() } else { crate::geometry::Vec3::new(0.0, 0.0, side.facing_sign()) };
                        map.set(k / w, k % w, unit);
                    }
                    map
                }))
            }
            None => None,
        };
        let colors = match &self.colors {
            Some(c) => {
                let img = tensor_to_image(&c.get(item)?)?;
                Some(MapPair::new(Side::Front, Side::Back).map(|&side| {
                    let o = if side == Side::Front { 0 } else { 3 };
                    Image::from_fn(h, w, 3, |i, j, ch| img.data[6 * (i * w + j) + o + ch]).masked(&mask)
                }))
            }
            None => None,
        };
        Ok(PredictedMaps { mask, depths, normals, colors })
    }
}

/// One predicted sample on the orthographic grid, foreground-masked.
#[derive(Debug, Clone)]
pub struct PredictedMaps {
    pub mask: Mask,
    pub depths: MapPair<DepthMap>,
    pub normals: Option<MapPair<NormalMap>>,
    pub colors: Option<MapPair<Image>>,
}

/// The predictor stack: normal net, color net on the input concatenated with the
/// predicted normals, and the depth net on both feature taps.
#[derive(Debug, Clone)]
pub struct OrthoHumanNet {
    config: ModelConfig,
    store: ParamStore,
    normal: Option<AUNet>,
    color: Option<AUNet>,
    depth: Option<MAUNet>,
    direct: Option<AUNet>,
}

impl OrthoHumanNet {
    pub fn new(config: ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut store = ParamStore::new(config.seed, dtype, device);
        let mut root = Scope::root(&mut store);
        let spec = |in_channels, out_channels, activation| AUNetSpec {
            in_channels,
            out_channels,
            depth: config.depth,
            base_width: config.base_width,
            activation,
            attention: config.mode == AblationMode::Full,
        };
        let (normal, color, depth, direct) = match config.mode {
            AblationMode::Full | AblationMode::NoAttention => {
                let attention = config.mode == AblationMode::Full;
                let normal = AUNet::new(&mut root.sub("normal"), spec(3, 6, Activation::Tanh))?;
                let color = AUNet::new(&mut root.sub("color"), spec(9, 6, Activation::Sigmoid))?;
                let depth = MAUNet::new(
                    &mut root.sub("depth"),
                    config.base_width,
                    config.base_width,
                    config.depth,
                    config.base_width,
                    attention,
                )?;
                (Some(normal), Some(color), Some(depth), None)
            }
            AblationMode::DirectDepth => {
                let direct = AUNet::new(&mut root.sub("direct"), AUNetSpec { attention: true, ..spec(3, 2, Activation::Sigmoid) })?;
                (None, None, None, Some(direct))
            }
        };
        Ok(Self { config, store, normal, color, depth, direct })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Parameters inside attention gates and multi-headed gates.
    pub fn num_gate_params(&self) -> usize {
        self.store.num_params_matching(".gate.")
    }

    /// Number of separately trained networks in the stack.
    pub fn num_networks(&self) -> usize {
        [self.normal.is_some(), self.color.is_some(), self.depth.is_some(), self.direct.is_some()]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn normal_net(&self) -> Option<&AUNet> {
        self.normal.as_ref()
    }

    pub fn color_net(&self) -> Option<&AUNet> {
        self.color.as_ref()
    }

    pub fn depth_net(&self) -> Option<&MAUNet> {
        self.depth.as_ref()
    }

    /// `x`: normalized input `(B, 3, H, W)` with H and W multiples of `2^depth`.
    pub fn forward(&self, x: &Tensor) -> Result<PipelineOutput> {
        if let Some(direct) = &self.direct {
            let (depths, _) = direct.forward(x)?;
            return Ok(PipelineOutput { normals: None, colors: None, depths, phi_color: None, phi_normal: None });
        }
        let (normal, color, depth) = match (&self.normal, &self.color, &self.depth) {
            (Some(n), Some(c), Some(d)) => (n, c, d),
            _ => unreachable!("constructed with all three networks"),
        };
        let (normals, phi_normal) = normal.forward(x)?;
        let (colors, phi_color) = color.forward(&Tensor::cat(&[x, &normals], 1)?)?;
        let depths = depth.forward(&phi_color, &phi_normal)?;
        Ok(PipelineOutput {
            normals: Some(normals),
            colors: Some(colors),
            depths,
            phi_color: Some(phi_color),
            phi_normal: Some(phi_normal),
        })
    }
}
