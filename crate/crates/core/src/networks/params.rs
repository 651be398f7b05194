use std::collections::BTreeMap;

use candle_core::{DType, Device, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named trainable parameters.
///
/// Initial values depend only on the store seed and the parameter name, so building
/// the same architecture always yields the same weights regardless of creation order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    /// Uniform in `±sqrt(1 / fan_in)`; for layers not followed by a ReLU.
    LecunUniform { fan_in: usize },
    Constant(f64),
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self { vars: BTreeMap::new(), seed, dtype, device: device.clone() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates the parameter on first use. Names must be unique per shape.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                candle_core::bail!("parameter {name} requested with shape {shape:?}, exists as {:?}", v.dims());
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let values: Vec<f64> = match init {
            Init::KaimingUniform { fan_in } | Init::LecunUniform { fan_in } => {
                let gain = if matches!(init, Init::KaimingUniform { .. }) { 6.0 } else { 1.0 };
                let bound = (gain / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Constant(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Total element count of parameters whose name starts with `prefix`.
    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.vars.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.elem_count()).sum()
    }

    /// Total element count of parameters whose name contains `part`.
    pub fn num_params_matching(&self, part: &str) -> usize {
        self.vars.iter().filter(|(k, _)| k.contains(part)).map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites values in place; every model tensor sharing the variable sees the update.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.vars.get(name).ok_or_else(|| candle_core::Error::Msg(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            candle_core::bail!("parameter {name}: shape {:?} vs stored {:?}", value.dims(), var.dims());
        }
        var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)
    }
}

/// Prefix-scoped view used while building layers.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn root(store: &'a mut ParamStore) -> Self {
        Self { store, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Scope { store: self.store, prefix }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        self.store.get(&full, shape, init)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::new(3, DType::F32, &Device::Cpu);
        let mut b = ParamStore::new(3, DType::F32, &Device::Cpu);
        let a1 = a.get("x", &[4], Init::KaimingUniform { fan_in: 4 }).unwrap();
        a.get("y", &[2], Init::Constant(0.0)).unwrap();
        b.get("y", &[2], Init::Constant(0.0)).unwrap();
        let b1 = b.get("x", &[4], Init::KaimingUniform { fan_in: 4 }).unwrap();
        assert_eq!(a1.to_vec1::<f32>().unwrap(), b1.to_vec1::<f32>().unwrap());
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(a1.to_vec1::<f32>().unwrap().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.num_params(), 6);
        assert!(a.get("x", &[5], Init::Constant(0.0)).is_err());
    }

    #[test]
    fn set_updates_shared_tensor() {
        let mut s = ParamStore::new(0, DType::F64, &Device::Cpu);
        let t = s.get("w", &[2], Init::Constant(1.0)).unwrap();
        s.set("w", &Tensor::new(&[5.0f64, 6.0], &Device::Cpu).unwrap()).unwrap();
        assert_eq!(t.to_vec1::<f64>().unwrap(), vec![5.0, 6.0]);
        assert!(s.set("nope", &t).is_err());
    }
}
