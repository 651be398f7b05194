use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::ops::max_pool2;
use super::layers::{cat_channels, Activation, Conv, DoubleConv, Gate, UpConv};
use super::params::Scope;
use super::NetworkError;

type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AUNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of 2x downsamplings.
    pub depth: usize,
    pub base_width: usize,
    pub activation: Activation,
    /// `false` replaces every attention gate by the identity.
    pub attention: bool,
}

impl AUNetSpec {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(NetworkError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Input height and width must be multiples of `2^depth`.
pub(crate) fn check_divisible(x: &Tensor, depth: usize) -> Result<()> {
    let (_, _, h, w) = x.dims4()?;
    let m = 1usize << depth;
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(NetworkError::IndivisibleInput { height: h, width: w, multiple: m });
    }
    Ok(())
}

/// Contracting path: one double convolution per level, max pooling in between.
#[derive(Debug, Clone)]
pub struct Encoder {
    levels: Vec<DoubleConv>,
}

impl Encoder {
    pub fn new(scope: &mut Scope, in_channels: usize, base_width: usize, depth: usize) -> candle_core::Result<Self> {
        let mut levels = Vec::with_capacity(depth + 1);
        let mut cin = in_channels;
        for l in 0..=depth {
            let w = base_width << l;
            levels.push(DoubleConv::new(&mut scope.sub(&format!("level{l}")), cin, w)?);
            cin = w;
        }
        Ok(Self { levels })
    }

    /// Features of every level, finest first; the last entry is the bottleneck.
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Vec<Tensor>> {
        let mut feats: Vec<Tensor> = Vec::with_capacity(self.levels.len());
        for (l, block) in self.levels.iter().enumerate() {
            let input = if l == 0 { x.clone() } else { max_pool2(&feats[l - 1])? };
            feats.push(block.forward(&input)?);
        }
        Ok(feats)
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: UpConv,
    gate: Gate,
    block: DoubleConv,
}

/// Attention U-Net. Returns the head output and the feature tap before the head.
#[derive(Debug, Clone)]
pub struct AUNet {
    spec: AUNetSpec,
    encoder: Encoder,
    decoder: Vec<DecoderLevel>,
    head: Conv,
}

impl AUNet {
    pub fn new(scope: &mut Scope, spec: AUNetSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = Encoder::new(&mut scope.sub("enc"), spec.in_channels, spec.base_width, spec.depth)?;
        let mut decoder = Vec::with_capacity(spec.depth);
        for l in (0..spec.depth).rev() {
            let mut s = scope.sub(&format!("dec{l}"));
            let (w, wc) = (spec.width(l), spec.width(l + 1));
            decoder.push(DecoderLevel {
                up: UpConv::new(&mut s.sub("up"), wc, w)?,
                gate: Gate::new(&mut s.sub("gate"), spec.attention, w, wc)?,
                block: DoubleConv::new(&mut s.sub("block"), 2 * w, w)?,
            });
        }
        let head = Conv::new(&mut scope.sub("head"), spec.base_width, spec.out_channels, 1, false)?;
        Ok(Self { spec, encoder, decoder, head })
    }

    pub fn spec(&self) -> &AUNetSpec {
        &self.spec
    }

    /// `x: (B, in, H, W)` to `(output (B, out, H, W), tap (B, base_width, H, W))`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_divisible(x, self.spec.depth)?;
        let c = x.dims()[1];
        if c != self.spec.in_channels {
            return Err(NetworkError::ShapeMismatch(format!("expected {} input channels, got {c}", self.spec.in_channels)));
        }
        let feats = self.encoder.forward(x)?;
        let mut d = feats[self.spec.depth].clone();
        for (k, level) in self.decoder.iter().enumerate() {
            let l = self.spec.depth - 1 - k;
            let up = level.up.forward(&d)?;
            let skip = level.gate.forward(&feats[l], &d)?;
            d = level.block.forward(&cat_channels(&[&skip, &up])?)?;
        }
        let out = self.spec.activation.apply(&self.head.forward(&d)?)?;
        Ok((out, d))
    }

    /// Attention gates from coarsest to finest; empty without attention.
    pub fn gates(&self) -> Vec<&super::layers::AttentionGate> {
        self.decoder
            .iter()
            .filter_map(|l| match &l.gate {
                Gate::Attention(g) => Some(g),
                Gate::Identity => None,
            })
            .collect()
    }
}
