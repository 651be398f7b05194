use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

/// Adaptive-moment optimizer with bias correction and no weight decay.
///
/// The moment estimates are exposed so checkpoints can carry them and a resumed run
/// continues exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
    vars: Vec<(String, Var)>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(vars: &BTreeMap<String, Var>) -> candle_core::Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in vars {
            m.insert(name.clone(), var.as_tensor().zeros_like()?);
            v.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            t: 0,
            vars: vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            m,
            v,
        })
    }

    /// One update at learning rate `lr`. Parameters without a gradient are left unchanged
    /// and their moments are not advanced.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> candle_core::Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let m = ((&self.m[name] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[name] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = ((&m * (lr / c1))? / ((&v * (1.0 / c2))?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - update)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    pub fn moments(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&self.m, &self.v)
    }

    /// Restores moment estimates and the step count, checking names and shapes.
    pub fn restore(&mut self, t: u64, m: BTreeMap<String, Tensor>, v: BTreeMap<String, Tensor>) -> candle_core::Result<()> {
        for (name, _) in &self.vars {
            for (kind, store) in [("first", &m), ("second", &v)] {
                let saved = store.get(name).ok_or_else(|| candle_core::Error::Msg(format!("missing {kind} moment for {name}")))?;
                if saved.dims() != self.m[name].dims() {
                    candle_core::bail!("{kind} moment for {name} has shape {:?}", saved.dims());
                }
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
