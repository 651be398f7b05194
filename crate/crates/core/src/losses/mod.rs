//! Training objectives: L1, windowed SSIM, Gram-matrix perceptual loss, depth-gradient terms
//! and their weighted combination.
//!
//! All losses take `(B, C, H, W)` tensors and return a scalar tensor that supports backward.
//! Front/back pairs are scored per side and averaged.

mod extractor;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use extractor::{ConvStack, FeatureExtractor};

use crate::datagen::Sample;
use crate::networks::ops::box_filter_reflect;
use crate::networks::PipelineOutput;
use crate::geometry::Side;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

type Result<T> = std::result::Result<T, LossError>;

pub const SSIM_WINDOW: usize = 5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(LossError::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute difference over every element, background included.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Mean over the `SSIM_WINDOW` square centered on every pixel, borders reflected.
pub fn box_filter(x: &Tensor) -> Result<Tensor> {
    Ok(box_filter_reflect(x, SSIM_WINDOW / 2)?)
}

/// Per-pixel SSIM map with box-window statistics and population variances.
pub fn ssim_map(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let c = pred.dims4()?.1;
    let stacked = Tensor::cat(&[pred, target, &pred.sqr()?, &target.sqr()?, &(pred * target)?], 1)?;
    let stats = box_filter(&stacked)?;
    let part = |k: usize| stats.narrow(1, k * c, c);
    let (mx, my, mxx, myy, mxy) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);
    let mx_my = (&mx * &my)?;
    let (mx2, my2) = (mx.sqr()?, my.sqr()?);
    let vx = (mxx - &mx2)?;
    let vy = (myy - &my2)?;
    let cov = (mxy - &mx_my)?;
    let num = ((mx_my * 2.0)? + SSIM_C1)?.mul(&((cov * 2.0)? + SSIM_C2)?)?;
    let den = ((mx2 + my2)? + SSIM_C1)?.mul(&((vx + vy)? + SSIM_C2)?)?;
    Ok(num.div(&den)?)
}

/// `1 - mean SSIM` over pixels and channels. Inputs are expected in `[0, 1]`.
pub fn ssim_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(ssim_map(pred, target)?.mean_all()?.affine(-1.0, 1.0)?)
}

/// `(B, C, H, W)` features to `(B, C, C)` Gram matrices `F^T F / (H W C)`.
pub fn gram_matrix(features: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let f = features.reshape((b, c, h * w))?;
    Ok((f.matmul(&f.t()?)? / (h * w * c) as f64)?)
}

/// Sum over tapped layers of the entrywise L1 norm of the Gram difference, averaged over the batch.
pub fn perceptual_loss(pred: &Tensor, target: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let b = pred.dims4()?.0;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    let mut total: Option<Tensor> = None;
    for (p, t) in fp.iter().zip(&ft) {
        let d = (gram_matrix(p)? - gram_matrix(t)?)?.abs()?.sum_all()?;
        total = Some(match total {
            Some(acc) => (acc + d)?,
            None => d,
        });
    }
    let total = total.ok_or_else(|| LossError::ExtractorUnavailable(format!("{} exposes no layers", extractor.name())))?;
    Ok((total / b as f64)?)
}

/// Forward differences along width and height; the last column / row is zero.
pub fn spatial_gradient(map: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = map.dims4()?;
    if h < 2 || w < 2 {
        return Err(LossError::ShapeMismatch(format!("gradient needs at least 2x2, got {h}x{w}")));
    }
    let dx = (map.narrow(3, 1, w - 1)? - map.narrow(3, 0, w - 1)?)?.pad_with_zeros(3, 0, 1)?;
    let dy = (map.narrow(2, 1, h - 1)? - map.narrow(2, 0, h - 1)?)?.pad_with_zeros(2, 0, 1)?;
    Ok((dx, dy))
}

/// Signed values in `[-1, 1]` to `[0, 1]` for SSIM, clamping outliers.
fn to_unit_range(x: &Tensor) -> Result<Tensor> {
    Ok(x.clamp(-1.0, 1.0)?.affine(0.5, 0.5)?)
}

/// `λ1..λ8`: normal L1, normal SSIM, color L1, color perceptual, depth L1, depth SSIM,
/// depth-gradient L1, depth-gradient SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub [f64; 8]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([0.9, 0.1, 0.85, 0.15, 0.45, 0.05, 0.45, 0.05])
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::ShapeMismatch(format!("loss weights must be finite and nonnegative: {:?}", self.0)));
        }
        Ok(())
    }
}

/// Unweighted sub-terms, each averaged over front and back.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub normal_l1: f64,
    pub normal_ssim: f64,
    pub color_l1: f64,
    pub color_perceptual: f64,
    pub depth_l1: f64,
    pub depth_ssim: f64,
    pub grad_l1: f64,
    pub grad_ssim: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.normal_l1,
            self.normal_ssim,
            self.color_l1,
            self.color_perceptual,
            self.depth_l1,
            self.depth_ssim,
            self.grad_l1,
            self.grad_ssim,
        ]
    }
}

impl From<[f64; 8]> for LossTerms {
    fn from(t: [f64; 8]) -> Self {
        let [normal_l1, normal_ssim, color_l1, color_perceptual, depth_l1, depth_ssim, grad_l1, grad_ssim] = t;
        Self { normal_l1, normal_ssim, color_l1, color_perceptual, depth_l1, depth_ssim, grad_l1, grad_ssim }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    #[serde(rename = "L_N")]
    pub l_n: f64,
    #[serde(rename = "L_C")]
    pub l_c: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    pub terms: LossTerms,
}

impl LossReport {
    /// Recomputes the weighted total from the sub-terms.
    pub fn weighted_sum(&self, weights: &LossWeights) -> f64 {
        self.terms.as_array().iter().zip(weights.0).map(|(t, w)| t * w).sum()
    }
}

/// Ground-truth batch in network layout with zeroed background.
#[derive(Debug, Clone)]
pub struct LossTargets {
    /// `(B, 6, H, W)` unit normals, front then back.
    pub normals: Tensor,
    /// `(B, 6, H, W)` shade-free colors in `[0, 1]`.
    pub colors: Tensor,
    /// `(B, 2, H, W)` normalized depths.
    pub depths: Tensor,
}

impl LossTargets {
    pub fn from_samples(samples: &[&Sample], dtype: DType, device: &Device) -> Result<Self> {
        let first = samples.first().ok_or_else(|| LossError::ShapeMismatch("empty batch".into()))?;
        let (h, w) = (first.mask.height, first.mask.width);
        let n = samples.len();
        let mut normals = vec![0f32; n * 6 * h * w];
        let mut colors = vec![0f32; n * 6 * h * w];
        let mut depths = vec![0f32; n * 2 * h * w];
        let hw = h * w;
        for (b, s) in samples.iter().enumerate() {
            if (s.mask.height, s.mask.width) != (h, w) {
                return Err(LossError::ShapeMismatch(format!("sample {b} is {}x{}, batch is {h}x{w}", s.mask.height, s.mask.width)));
            }
            for (si, side) in [Side::Front, Side::Back].into_iter().enumerate() {
                let nm = s.targets.normals.get(side);
                let cm = s.targets.colors.get(side);
                let dm = s.targets.depths.get(side);
                for k in 0..hw {
                    for c in 0..3 {
                        normals[(b * 6 + si * 3 + c) * hw + k] = nm.values[k][c];
                        colors[(b * 6 + si * 3 + c) * hw + k] = cm.data[k * 3 + c];
                    }
                    depths[(b * 2 + si) * hw + k] = dm.values[k];
                }
            }
        }
        let t = |v: Vec<f32>, c: usize| Tensor::from_vec(v, (n, c, h, w), device)?.to_dtype(dtype);
        Ok(Self { normals: t(normals, 6)?, colors: t(colors, 6)?, depths: t(depths, 2)? })
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Front/back halves of a pair tensor moved from the channel axis to the batch axis, so a
/// batch-averaged loss on the result is the mean of the per-side losses.
fn sides_to_batch(t: &Tensor) -> Result<Tensor> {
    let c = t.dims4()?.1 / 2;
    Ok(Tensor::cat(&[t.narrow(1, 0, c)?, t.narrow(1, c, c)?], 0)?)
}

/// Horizontal and vertical forward differences stacked on the channel axis.
fn gradient_stack(t: &Tensor) -> Result<Tensor> {
    let (dx, dy) = spatial_gradient(t)?;
    Ok(Tensor::cat(&[dx, dy], 1)?)
}

/// Weighted objective and its breakdown. Networks absent from `pred` contribute zero.
pub fn total_loss(
    pred: &PipelineOutput,
    targets: &LossTargets,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<(Tensor, LossReport)> {
    let lw = &weights.0;
    let zero = Tensor::zeros((), pred.depths.dtype(), pred.depths.device())?;
    let mut terms = LossTerms::default();
    let weighted = |value: Tensor, w: f64, slot: &mut f64| -> Result<Tensor> {
        *slot = scalar(&value)?;
        Ok((value * w)?)
    };

    // Front and back have equal sizes, so channel-averaged L1 and SSIM over a stacked pair
    // equal the mean of the per-side values.
    let l_n = match &pred.normals {
        Some(n) => {
            let a = l1_loss(n, &targets.normals)?;
            let b = ssim_loss(&to_unit_range(n)?, &to_unit_range(&targets.normals)?)?;
            (weighted(a, lw[0], &mut terms.normal_l1)? + weighted(b, lw[1], &mut terms.normal_ssim)?)?
        }
        None => zero.clone(),
    };
    let l_c = match &pred.colors {
        Some(c) => {
            let a = l1_loss(c, &targets.colors)?;
            let b = perceptual_loss(&sides_to_batch(c)?, &sides_to_batch(&targets.colors)?, extractor)?;
            (weighted(a, lw[2], &mut terms.color_l1)? + weighted(b, lw[3], &mut terms.color_perceptual)?)?
        }
        None => zero,
    };
    let d = &pred.depths;
    let e = l1_loss(d, &targets.depths)?;
    let f = ssim_loss(d, &targets.depths)?;
    let (gp, gt) = (gradient_stack(d)?, gradient_stack(&targets.depths)?);
    let g = l1_loss(&gp, &gt)?;
    let h = ssim_loss(&to_unit_range(&gp)?, &to_unit_range(&gt)?)?;
    let l_d = (((weighted(e, lw[4], &mut terms.depth_l1)? + weighted(f, lw[5], &mut terms.depth_ssim)?)?
        + weighted(g, lw[6], &mut terms.grad_l1)?)?
        + weighted(h, lw[7], &mut terms.grad_ssim)?)?;

    let total = ((&l_n + &l_c)? + &l_d)?;
    let report = LossReport { total: scalar(&total)?, l_n: scalar(&l_n)?, l_c: scalar(&l_c)?, l_d: scalar(&l_d)?, terms };
    Ok((total, report))
}
