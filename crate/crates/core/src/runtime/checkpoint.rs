use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{Adam, RuntimeError, TrainConfig};
use crate::geometry::OrthographicCamera;
use crate::losses::LossReport;
use crate::networks::{ModelConfig, OrthoHumanNet};

/// Value of the `format` header entry.
pub const CHECKPOINT_FORMAT: &str = "orthohuman-ckpt-v1";

const PARAM_PREFIX: &str = "param/";
const M_PREFIX: &str = "adam_m/";
const V_PREFIX: &str = "adam_v/";

/// Training progress at a checkpoint: `epoch` counts completed epochs and `batch` the
/// batches already consumed from the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub batch: usize,
    pub step: usize,
}

/// Everything needed to rebuild the predictor stack and resume training. Stored as one
/// safetensors archive whose header carries the format tag and the JSON metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub progress: Progress,
    /// Front camera of the training data; fixes the depth range and grid for inference.
    pub camera: Option<OrthographicCamera>,
    pub validation: Option<LossReport>,
    pub last_train: Option<LossReport>,
    pub params: BTreeMap<String, Tensor>,
    /// Optimizer step count with first and second moments.
    pub optimizer: Option<(u64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    progress: Progress,
    camera: Option<OrthographicCamera>,
    validation: Option<LossReport>,
    last_train: Option<LossReport>,
    optimizer_t: Option<u64>,
}

fn copy_tensors(t: &BTreeMap<String, Tensor>) -> candle_core::Result<BTreeMap<String, Tensor>> {
    // Detached copies, so later optimizer updates do not leak into the snapshot.
    t.iter().map(|(k, v)| Ok((k.clone(), v.copy()?))).collect()
}

impl Checkpoint {
    /// Snapshot of a model and, optionally, its optimizer state.
    pub fn capture(net: &OrthoHumanNet, train: &TrainConfig, progress: Progress, optimizer: Option<&Adam>) -> Result<Self, RuntimeError> {
        let params = net.params().vars().iter().map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?))).collect::<candle_core::Result<_>>()?;
        let optimizer = match optimizer {
            Some(o) => {
                let (m, v) = o.moments();
                Some((o.t, copy_tensors(m)?, copy_tensors(v)?))
            }
            None => None,
        };
        Ok(Self {
            model: *net.config(),
            train: train.clone(),
            progress,
            camera: None,
            validation: None,
            last_train: None,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        let header = Header {
            model: self.model,
            train: self.train.clone(),
            progress: self.progress,
            camera: self.camera,
            validation: self.validation,
            last_train: self.last_train,
            optimizer_t: self.optimizer.as_ref().map(|o| o.0),
        };
        let meta = HashMap::from([
            ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
            ("config".to_string(), serde_json::to_string(&header).map_err(|e| RuntimeError::Checkpoint(e.to_string()))?),
        ]);
        let mut tensors: Vec<(String, &Tensor)> = self.params.iter().map(|(k, v)| (format!("{PARAM_PREFIX}{k}"), v)).collect();
        if let Some((_, m, v)) = &self.optimizer {
            tensors.extend(m.iter().map(|(k, t)| (format!("{M_PREFIX}{k}"), t)));
            tensors.extend(v.iter().map(|(k, t)| (format!("{V_PREFIX}{k}"), t)));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| RuntimeError::Checkpoint(format!("{}: {e}", dir.display())))?;
        }
        // Write-then-rename so a crash never leaves a truncated checkpoint behind.
        let tmp = path.with_extension("tmp");
        safetensors::serialize_to_file(tensors, Some(meta), &tmp).map_err(|e| RuntimeError::Checkpoint(format!("{}: {e}", path.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| RuntimeError::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self, RuntimeError> {
        let bad = |m: String| RuntimeError::Checkpoint(format!("{}: {m}", path.display()));
        let bytes = std::fs::read(path).map_err(|e| bad(e.to_string()))?;
        let (_, metadata) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = metadata.metadata().clone().unwrap_or_default();
        match meta.get("format").map(String::as_str) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(bad(format!("format {other:?}, expected {CHECKPOINT_FORMAT:?}"))),
        }
        let header: Header = serde_json::from_str(meta.get("config").ok_or_else(|| bad("missing config".into()))?).map_err(|e| bad(e.to_string()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
        let mut params = BTreeMap::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for (name, t) in tensors {
            if let Some(k) = name.strip_prefix(PARAM_PREFIX) {
                params.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(M_PREFIX) {
                m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(V_PREFIX) {
                v.insert(k.to_string(), t);
            }
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            progress: header.progress,
            camera: header.camera,
            validation: header.validation,
            last_train: header.last_train,
            params,
            optimizer: header.optimizer_t.map(|t| (t, m, v)),
        })
    }

    /// Rebuilds the predictor stack with the stored parameters.
    pub fn build_model(&self, device: &Device) -> Result<OrthoHumanNet, RuntimeError> {
        let net = OrthoHumanNet::new(self.model, DType::F32, device)?;
        self.apply_to(&net)?;
        Ok(net)
    }

    /// Copies the stored parameters into `net`, which must have the same architecture.
    pub fn apply_to(&self, net: &OrthoHumanNet) -> Result<(), RuntimeError> {
        let vars = net.params().vars();
        if vars.len() != self.params.len() {
            return Err(RuntimeError::Checkpoint(format!("checkpoint has {} parameters, model has {}", self.params.len(), vars.len())));
        }
        for name in vars.keys() {
            let value = self.params.get(name).ok_or_else(|| RuntimeError::Checkpoint(format!("missing parameter {name}")))?;
            net.params().set(name, value)?;
        }
        Ok(())
    }
}
