use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Checkpoint, Dataset, EpochLoader, Progress, RuntimeError, TrainConfig};
use crate::losses::{total_loss, ConvStack, FeatureExtractor, LossReport};
use crate::networks::OrthoHumanNet;

/// One optimizer step as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub report: LossReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    MaxSteps,
    EarlyStop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the last step, including optimizer moments.
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
    /// Validation report per completed epoch, when validation is enabled.
    pub validation: Vec<LossReport>,
    pub written: Vec<PathBuf>,
    pub stop: StopReason,
    pub seconds: f64,
}

/// Sample order of `epoch`: a seeded shuffle cut into batches. Depends only on the seed,
/// the epoch and the dataset size, so resumed runs see the same batches.
fn epoch_plan(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn weighted_mean(reports: &[(LossReport, usize)]) -> Option<LossReport> {
    let total: usize = reports.iter().map(|r| r.1).sum();
    if total == 0 {
        return None;
    }
    let mut out = LossReport::default();
    let mut terms = [0.0; 8];
    for (r, n) in reports {
        let w = *n as f64 / total as f64;
        out.total += w * r.total;
        out.l_n += w * r.l_n;
        out.l_c += w * r.l_c;
        out.l_d += w * r.l_d;
        for (t, v) in terms.iter_mut().zip(r.terms.as_array()) {
            *t += w * v;
        }
    }
    out.terms = terms.into();
    Some(out)
}

/// Mean loss over the validation split, weighted by batch size. `None` without validation
/// samples.
pub fn evaluate_loss(net: &OrthoHumanNet, dataset: &Dataset, cfg: &TrainConfig, extractor: &dyn FeatureExtractor) -> Result<Option<LossReport>, RuntimeError> {
    let n = dataset.val_len();
    let plan: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    let sizes: Vec<usize> = plan.iter().map(Vec::len).collect();
    let mut reports = Vec::new();
    for batch in EpochLoader::spawn(dataset, true, plan, 0, cfg.loader_workers, cfg.prefetch, net.device()) {
        let batch = batch?;
        let pred = net.forward(&batch.input)?;
        let (_, report) = total_loss(&pred, &batch.targets, &cfg.weights, extractor)?;
        reports.push((report, sizes[batch.index]));
    }
    Ok(weighted_mean(&reports))
}

/// True when the mean of every `window`-step block is at most the previous block's mean
/// plus `tol`. A trailing partial block is ignored.
pub fn windows_nonincreasing(values: &[f64], window: usize, tol: f64) -> bool {
    let means: Vec<f64> = values.chunks_exact(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Trains the predictor stack end to end on `dataset`.
///
/// Every step logs a JSON line with its loss report. After each epoch an optional
/// validation pass runs and, with `checkpoint_dir` set, `epoch_NNN.ckpt` and
/// `latest.ckpt` are written. `resume` continues a run from its stored progress,
/// parameters and optimizer moments.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, resume: Option<&Checkpoint>) -> Result<TrainOutcome, RuntimeError> {
    cfg.validate()?;
    let first = dataset.first_train()?;
    let [h, w] = cfg.resolution;
    if (first.mask.height, first.mask.width) != (h, w) {
        return Err(RuntimeError::Shape(format!("samples are {}x{}, config expects {h}x{w}", first.mask.height, first.mask.width)));
    }
    let camera = first.meta.camera;
    drop(first);

    let device = Device::Cpu;
    let model = cfg.model_config();
    let net = OrthoHumanNet::new(model, DType::F32, &device)?;
    let mut adam = Adam::new(net.params().vars())?;
    let mut progress = Progress::default();
    if let Some(ckpt) = resume {
        if ckpt.model != model {
            return Err(RuntimeError::Checkpoint(format!("checkpoint model {:?} differs from config {model:?}", ckpt.model)));
        }
        ckpt.apply_to(&net)?;
        if let Some((t, m, v)) = &ckpt.optimizer {
            adam.restore(*t, m.clone(), v.clone())?;
        }
        progress = ckpt.progress;
    }
    let extractor = ConvStack::pretrained_or_random(cfg.extractor_weights.as_deref(), DType::F32, &device)?;
    log::info!(
        "{}",
        serde_json::json!({"event": "start", "params": net.num_params(), "mode": model.mode.to_string(), "train": dataset.train_len(), "val": dataset.val_len(), "extractor": extractor.name()})
    );

    let started = Instant::now();
    let mut history = Vec::new();
    let mut validation = Vec::new();
    let mut written = Vec::new();
    let mut last_train = None;
    let mut stop = StopReason::Completed;
    let snapshot = |net: &OrthoHumanNet, adam: &Adam, progress, last_train, val| -> Result<Checkpoint, RuntimeError> {
        let mut c = Checkpoint::capture(net, cfg, progress, Some(adam))?;
        c.camera = Some(camera);
        c.last_train = last_train;
        c.validation = val;
        Ok(c)
    };

    'epochs: while progress.epoch < cfg.epochs {
        if cfg.max_steps.is_some_and(|m| progress.step >= m) {
            stop = StopReason::MaxSteps;
            break;
        }
        let epoch = progress.epoch;
        let lr = cfg.lr_at(epoch);
        let plan = epoch_plan(dataset.train_len(), cfg.batch_size, cfg.seed, epoch);
        let n_batches = plan.len();
        let loader = EpochLoader::spawn(dataset, false, plan, progress.batch, cfg.loader_workers, cfg.prefetch, &device);
        for batch in loader {
            let batch = batch?;
            let pred = net.forward(&batch.input)?;
            let (loss, report) = total_loss(&pred, &batch.targets, &cfg.weights, &extractor)?;
            let grads = loss.backward()?;
            adam.step(&grads, lr)?;
            let record = StepRecord { step: progress.step, epoch, batch: batch.index, lr, report };
            log::info!("{}", serde_json::to_string(&record).unwrap_or_default());
            history.push(record);
            last_train = Some(report);
            progress.step += 1;
            progress.batch = batch.index + 1;
            if cfg.early_stop_depth_l1.is_some_and(|t| report.terms.depth_l1 < t) {
                stop = StopReason::EarlyStop;
            } else if cfg.max_steps.is_some_and(|m| progress.step >= m) {
                stop = StopReason::MaxSteps;
            }
            if stop != StopReason::Completed {
                break;
            }
        }
        if progress.batch < n_batches {
            break 'epochs;
        }
        progress = Progress { epoch: epoch + 1, batch: 0, step: progress.step };
        let val = if cfg.validate { evaluate_loss(&net, dataset, cfg, &extractor)? } else { None };
        if let Some(v) = val {
            log::info!("{}", serde_json::json!({"event": "validation", "epoch": epoch, "report": v}));
            validation.push(v);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            let ckpt = snapshot(&net, &adam, progress, last_train, val)?;
            for name in [format!("epoch_{:03}.ckpt", epoch), "latest.ckpt".to_string()] {
                let path = dir.join(name);
                ckpt.save(&path)?;
                written.push(path);
            }
        }
        if stop != StopReason::Completed {
            break;
        }
    }

    let checkpoint = snapshot(&net, &adam, progress, last_train, validation.last().copied())?;
    if let (Some(dir), true) = (&cfg.checkpoint_dir, progress.batch > 0) {
        let path = dir.join("latest.ckpt");
        checkpoint.save(&path)?;
        written.push(path);
    }
    let seconds = started.elapsed().as_secs_f64();
    log::info!("{}", serde_json::json!({"event": "done", "steps": progress.step, "stop": stop, "seconds": seconds}));
    Ok(TrainOutcome { checkpoint, history, validation, written, stop, seconds })
}
