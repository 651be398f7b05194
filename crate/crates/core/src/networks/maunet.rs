use candle_core::Tensor;

use super::aunet::{check_divisible, Encoder};
use super::layers::{cat_channels, Activation, AttentionGate, Conv, DoubleConv, Gate, UpConv};
use super::params::Scope;
use super::NetworkError;

type Result<T> = std::result::Result<T, NetworkError>;

/// Multi-headed attention gate: one additive gate per modality, both driven by the shared
/// decoder signal, then concatenation and a 1x1 projection back to the decoder width.
#[derive(Debug, Clone)]
pub struct MultiAttentionGate {
    photo: Gate,
    geo: Gate,
    proj: Conv,
}

impl MultiAttentionGate {
    pub fn new(scope: &mut Scope, attention: bool, skip_channels: usize, gate_channels: usize) -> candle_core::Result<Self> {
        Ok(Self {
            photo: Gate::new(&mut scope.sub("photo"), attention, skip_channels, gate_channels)?,
            geo: Gate::new(&mut scope.sub("geo"), attention, skip_channels, gate_channels)?,
            proj: Conv::new(&mut scope.sub("proj"), 2 * skip_channels, skip_channels, 1, false)?,
        })
    }

    /// Gated skips concatenated as `[photo, geo]`, before projection.
    pub fn gated(&self, skip_photo: &Tensor, skip_geo: &Tensor, gate: &Tensor) -> Result<Tensor> {
        if skip_photo.dims() != skip_geo.dims() {
            return Err(NetworkError::ShapeMismatch(format!(
                "modality skips differ: {:?} vs {:?}",
                skip_photo.dims(),
                skip_geo.dims()
            )));
        }
        let p = self.photo.forward(skip_photo, gate)?;
        let g = self.geo.forward(skip_geo, gate)?;
        Ok(cat_channels(&[&p, &g])?)
    }

    pub fn forward(&self, skip_photo: &Tensor, skip_geo: &Tensor, gate: &Tensor) -> Result<Tensor> {
        Ok(self.proj.forward(&self.gated(skip_photo, skip_geo, gate)?)?)
    }

    /// Per-modality attention maps, when attention is enabled.
    pub fn alphas(&self, skip_photo: &Tensor, skip_geo: &Tensor, gate: &Tensor) -> Result<Option<(Tensor, Tensor)>> {
        match (&self.photo, &self.geo) {
            (Gate::Attention(p), Gate::Attention(g)) => Ok(Some((p.alpha(skip_photo, gate)?, g.alpha(skip_geo, gate)?))),
            _ => Ok(None),
        }
    }

    pub fn gates(&self) -> Option<(&AttentionGate, &AttentionGate)> {
        match (&self.photo, &self.geo) {
            (Gate::Attention(p), Gate::Attention(g)) => Some((p, g)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: UpConv,
    mag: MultiAttentionGate,
    block: DoubleConv,
}

/// Two modality encoders (not weight-tied) feeding one decoder. The bottlenecks are
/// concatenated and fused by a 3x3 convolution; every decoder level fuses both encoder
/// skips through a [`MultiAttentionGate`]. The head emits `(front, back)` depth in `(0, 1)`.
#[derive(Debug, Clone)]
pub struct MAUNet {
    depth: usize,
    photo_channels: usize,
    geo_channels: usize,
    enc_photo: Encoder,
    enc_geo: Encoder,
    fuse: Conv,
    decoder: Vec<DecoderLevel>,
    head: Conv,
}

impl MAUNet {
    pub fn new(
        scope: &mut Scope,
        photo_channels: usize,
        geo_channels: usize,
        depth: usize,
        base_width: usize,
        attention: bool,
    ) -> Result<Self> {
        if depth == 0 || base_width == 0 {
            return Err(NetworkError::InvalidConfig(format!("depth {depth}, base_width {base_width}")));
        }
        let enc_photo = Encoder::new(&mut scope.sub("enc_photo"), photo_channels, base_width, depth)?;
        let enc_geo = Encoder::new(&mut scope.sub("enc_geo"), geo_channels, base_width, depth)?;
        let wb = base_width << depth;
        let fuse = Conv::new(&mut scope.sub("fuse"), 2 * wb, wb, 3, true)?;
        let mut decoder = Vec::with_capacity(depth);
        for l in (0..depth).rev() {
            let mut s = scope.sub(&format!("dec{l}"));
            let (w, wc) = (base_width << l, base_width << (l + 1));
            decoder.push(DecoderLevel {
                up: UpConv::new(&mut s.sub("up"), wc, w)?,
                mag: MultiAttentionGate::new(&mut s.sub("gate"), attention, w, wc)?,
                block: DoubleConv::new(&mut s.sub("block"), 2 * w, w)?,
            });
        }
        let head = Conv::new(&mut scope.sub("head"), base_width, 2, 1, false)?;
        Ok(Self { depth, photo_channels, geo_channels, enc_photo, enc_geo, fuse, decoder, head })
    }

    /// `(B, 2, H, W)` depth pair from the color and normal feature taps.
    pub fn forward(&self, phi_color: &Tensor, phi_normal: &Tensor) -> Result<Tensor> {
        let (pd, gd) = (phi_color.dims(), phi_normal.dims());
        if pd.len() != 4 || gd.len() != 4 || pd[0] != gd[0] || pd[2..] != gd[2..] {
            return Err(NetworkError::ShapeMismatch(format!("taps {pd:?} and {gd:?}")));
        }
        if pd[1] != self.photo_channels || gd[1] != self.geo_channels {
            return Err(NetworkError::ShapeMismatch(format!(
                "taps need {} and {} channels, got {pd:?} and {gd:?}",
                self.photo_channels, self.geo_channels
            )));
        }
        check_divisible(phi_color, self.depth)?;
        let fp = self.enc_photo.forward(phi_color)?;
        let fg = self.enc_geo.forward(phi_normal)?;
        let mut d = self.fuse.forward_relu(&cat_channels(&[&fp[self.depth], &fg[self.depth]])?)?;
        for (k, level) in self.decoder.iter().enumerate() {
            let l = self.depth - 1 - k;
            let up = level.up.forward(&d)?;
            let skip = level.mag.forward(&fp[l], &fg[l], &d)?;
            d = level.block.forward(&cat_channels(&[&skip, &up])?)?;
        }
        Ok(Activation::Sigmoid.apply(&self.head.forward(&d)?)?)
    }

    /// Decoder gates from coarsest to finest.
    pub fn gates(&self) -> Vec<&MultiAttentionGate> {
        self.decoder.iter().map(|l| &l.mag).collect()
    }
}
