use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use candle_core::{DType, Device, Tensor};

use super::RuntimeError;
use crate::datagen::{normalize_input, DatasetManifest, Sample, Split};
use crate::losses::LossTargets;
use crate::networks::images_to_batch;

#[derive(Debug, Clone)]
enum Item {
    Disk(PathBuf),
    Memory(Arc<Sample>),
}

impl Item {
    fn load(&self) -> Result<Arc<Sample>, RuntimeError> {
        match self {
            Item::Disk(dir) => Ok(Arc::new(Sample::load(dir)?)),
            Item::Memory(s) => Ok(s.clone()),
        }
    }
}

/// Training and validation samples, either on disk or already in memory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    train: Vec<Item>,
    val: Vec<Item>,
}

impl Dataset {
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        let items = |split| manifest.split(split).map(|r| Item::Disk(manifest.sample_dir(r))).collect();
        Self { train: items(Split::Train), val: items(Split::Val) }
    }

    /// Concatenates several manifests with equal weight per sample.
    pub fn from_manifests(manifests: &[DatasetManifest]) -> Self {
        let mut out = Self::default();
        for m in manifests {
            let d = Self::from_manifest(m);
            out.train.extend(d.train);
            out.val.extend(d.val);
        }
        out
    }

    pub fn in_memory(train: Vec<Sample>, val: Vec<Sample>) -> Self {
        let wrap = |v: Vec<Sample>| v.into_iter().map(|s| Item::Memory(Arc::new(s))).collect();
        Self { train: wrap(train), val: wrap(val) }
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }

    pub(crate) fn first_train(&self) -> Result<Arc<Sample>, RuntimeError> {
        self.train.first().ok_or(RuntimeError::DatasetEmpty)?.load()
    }
}

/// One mini-batch ready for the forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Position within the epoch.
    pub index: usize,
    /// Normalized input images `(B, 3, H, W)`.
    pub input: Tensor,
    pub targets: LossTargets,
}

pub(crate) fn make_batch(index: usize, samples: &[&Sample], device: &Device) -> Result<Batch, RuntimeError> {
    let normalized: Vec<_> = samples.iter().map(|s| normalize_input(&s.input_image)).collect();
    let input = images_to_batch(&normalized.iter().collect::<Vec<_>>(), DType::F32, device)?;
    let targets = LossTargets::from_samples(samples, DType::F32, device)?;
    Ok(Batch { index, input, targets })
}

/// Bounded-queue batch producer for one pass over a fixed batch plan.
///
/// Worker `w` builds batches `w, w + n, ...` and the consumer reads workers round-robin,
/// so batches arrive in plan order regardless of worker count.
pub struct EpochLoader {
    receivers: Vec<Receiver<Result<Batch, RuntimeError>>>,
    handles: Vec<JoinHandle<()>>,
    next: usize,
    remaining: usize,
}

impl EpochLoader {
    /// `plan[i]` lists the sample indices of batch `i`; the first `skip` batches are skipped.
    pub fn spawn(dataset: &Dataset, validation: bool, plan: Vec<Vec<usize>>, skip: usize, workers: usize, prefetch: usize, device: &Device) -> Self {
        let items = Arc::new(if validation { dataset.val.clone() } else { dataset.train.clone() });
        let plan = Arc::new(plan);
        let workers = workers.max(1);
        let total = plan.len().saturating_sub(skip);
        let mut receivers = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = sync_channel(prefetch.max(1));
            let (items, plan, device) = (items.clone(), plan.clone(), device.clone());
            handles.push(std::thread::spawn(move || {
                for b in (skip + w..plan.len()).step_by(workers) {
                    let batch = plan[b]
                        .iter()
                        .map(|&i| items[i].load())
                        .collect::<Result<Vec<_>, _>>()
                        .and_then(|s| make_batch(b, &s.iter().map(|s| s.as_ref()).collect::<Vec<_>>(), &device));
                    if tx.send(batch).is_err() {
                        return;
                    }
                }
            }));
            receivers.push(rx);
        }
        Self { receivers, handles, next: 0, remaining: total }
    }
}

impl Iterator for EpochLoader {
    type Item = Result<Batch, RuntimeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rx = &self.receivers[self.next % self.receivers.len()];
        self.next += 1;
        Some(rx.recv().unwrap_or_else(|_| Err(RuntimeError::Loader("worker stopped early".into()))))
    }
}

impl Drop for EpochLoader {
    fn drop(&mut self) {
        // Dropping the receivers unblocks workers waiting on a full queue.
        self.receivers.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
