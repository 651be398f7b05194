use candle_core::{Result, Tensor};
use serde::{Deserialize, Serialize};

use super::ops::{conv2d_bias, upsample_nearest};
use super::params::{Init, Scope};
use super::NetworkError;

/// Output squashing of a network head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Sigmoid => candle_nn::ops::sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Square-kernel, stride-1, same-padded convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pad: usize,
}

impl Conv {
    pub fn new(scope: &mut Scope, cin: usize, cout: usize, k: usize, relu_follows: bool) -> Result<Self> {
        let fan_in = cin * k * k;
        let init = if relu_follows { Init::KaimingUniform { fan_in } } else { Init::LecunUniform { fan_in } };
        Ok(Self {
            weight: scope.get("weight", &[cout, cin, k, k], init)?,
            bias: scope.get("bias", &[cout], Init::Constant(0.0))?,
            pad: k / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_bias(x, &self.weight, &self.bias, self.pad, false)
    }

    pub fn forward_relu(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_bias(x, &self.weight, &self.bias, self.pad, true)
    }
}

/// Two 3x3 convolutions, each followed by ReLU.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    a: Conv,
    b: Conv,
}

impl DoubleConv {
    pub fn new(scope: &mut Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { a: Conv::new(&mut scope.sub("conv1"), cin, cout, 3, true)?, b: Conv::new(&mut scope.sub("conv2"), cout, cout, 3, true)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.b.forward_relu(&self.a.forward_relu(x)?)
    }
}

/// 2x nearest upsampling followed by a 3x3 convolution and ReLU.
#[derive(Debug, Clone)]
pub struct UpConv {
    conv: Conv,
}

impl UpConv {
    pub fn new(scope: &mut Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { conv: Conv::new(&mut scope.sub("conv"), cin, cout, 3, true)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward_relu(&upsample_nearest(x, 2)?)
    }
}

/// Integer factor by which `gate` must be upsampled to match `skip` spatially.
fn gate_factor(skip: &Tensor, gate: &Tensor) -> std::result::Result<usize, NetworkError> {
    let (sb, _, sh, sw) = skip.dims4().map_err(NetworkError::from)?;
    let (gb, _, gh, gw) = gate.dims4().map_err(NetworkError::from)?;
    let mismatch = || NetworkError::ShapeMismatch(format!("skip {:?} vs gate {:?}", skip.dims(), gate.dims()));
    if sb != gb || gh == 0 || gw == 0 || sh % gh != 0 || sw % gw != 0 || sh / gh != sw / gw {
        return Err(mismatch());
    }
    Ok(sh / gh)
}

/// Additive attention gate: `alpha = sigmoid(psi(relu(theta(skip) + up(phi(gate)))))`,
/// output `skip * alpha` with one `alpha` per pixel shared by all channels.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    theta: Conv,
    phi: Conv,
    psi: Conv,
    skip_channels: usize,
    gate_channels: usize,
}

impl AttentionGate {
    pub fn new(scope: &mut Scope, skip_channels: usize, gate_channels: usize) -> Result<Self> {
        let inter = (skip_channels / 2).max(1);
        Ok(Self {
            theta: Conv::new(&mut scope.sub("theta"), skip_channels, inter, 1, true)?,
            phi: Conv::new(&mut scope.sub("phi"), gate_channels, inter, 1, true)?,
            psi: Conv::new(&mut scope.sub("psi"), inter, 1, 1, false)?,
            skip_channels,
            gate_channels,
        })
    }

    fn check(&self, skip: &Tensor, gate: &Tensor) -> std::result::Result<usize, NetworkError> {
        let factor = gate_factor(skip, gate)?;
        if skip.dims()[1] != self.skip_channels || gate.dims()[1] != self.gate_channels {
            return Err(NetworkError::ShapeMismatch(format!(
                "gate expects {} skip and {} gate channels, got {:?} and {:?}",
                self.skip_channels,
                self.gate_channels,
                skip.dims(),
                gate.dims()
            )));
        }
        Ok(factor)
    }

    /// Per-pixel attention `(B, 1, H, W)` in `[0, 1]`.
    pub fn alpha(&self, skip: &Tensor, gate: &Tensor) -> std::result::Result<Tensor, NetworkError> {
        let factor = self.check(skip, gate)?;
        let g = upsample_nearest(&self.phi.forward(gate)?, factor)?;
        let f = (self.theta.forward(skip)? + g)?.relu()?;
        Ok(candle_nn::ops::sigmoid(&self.psi.forward(&f)?)?)
    }

    pub fn forward(&self, skip: &Tensor, gate: &Tensor) -> std::result::Result<Tensor, NetworkError> {
        let alpha = self.alpha(skip, gate)?;
        Ok(skip.broadcast_mul(&alpha)?)
    }

    /// Saturates `alpha` at 1 so the gate passes the skip through unchanged.
    pub fn force_open(&self) -> Result<()> {
        set_in_place(&self.psi.weight, &self.psi.weight.zeros_like()?)?;
        set_in_place(&self.psi.bias, &(self.psi.bias.ones_like()? * 40.0)?)
    }

    /// Copies all weights from `other`. Both gates must have the same channel counts.
    pub fn copy_from(&self, other: &AttentionGate) -> Result<()> {
        for (dst, src) in self.tensors().into_iter().zip(other.tensors()) {
            set_in_place(dst, src)?;
        }
        Ok(())
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [&self.theta.weight, &self.theta.bias, &self.phi.weight, &self.phi.bias, &self.psi.weight, &self.psi.bias]
    }
}

/// Writes through a parameter tensor; every clone of a `Var`-backed tensor shares storage.
fn set_in_place(param: &Tensor, value: &Tensor) -> Result<()> {
    if !param.is_variable() {
        candle_core::bail!("tensor is not a parameter");
    }
    candle_core::Var::from_tensor(param)?.set(value)
}

/// Skip gating used by the ablation without attention: passes the skip through.
#[derive(Debug, Clone)]
pub enum Gate {
    Attention(AttentionGate),
    Identity,
}

impl Gate {
    pub fn new(scope: &mut Scope, attention: bool, skip_channels: usize, gate_channels: usize) -> Result<Self> {
        Ok(if attention { Gate::Attention(AttentionGate::new(scope, skip_channels, gate_channels)?) } else { Gate::Identity })
    }

    pub fn forward(&self, skip: &Tensor, gate: &Tensor) -> std::result::Result<Tensor, NetworkError> {
        match self {
            Gate::Attention(g) => g.forward(skip, gate),
            Gate::Identity => {
                gate_factor(skip, gate)?;
                Ok(skip.clone())
            }
        }
    }
}

pub fn cat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    Tensor::cat(parts, 1)
}

