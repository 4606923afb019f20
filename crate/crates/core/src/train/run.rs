use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{all_pairs, gen_heldout, gen_synthetic, load_dataset, pair_accuracy, tar_at_far, LabeledSet};
use crate::error::{Error, Result};
use crate::grad::{MapVar, Tape};
use crate::model::FaceModel;
use crate::param::{load_params, param_rng, read_manifest, save_params, BoundParams, Parameterized};
use crate::real::Real;
use crate::tensor::io::RawTensor;
use crate::tensor::ChannelVec;

use super::config::{RunConfig, CONFIG_ECHO};
use super::optim::{LRSchedule, Sgd};

pub const METRICS_LOG: &str = "metrics.log";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Fraction of samples whose cosine argmax matched the label during
    /// the epoch's forward passes.
    pub train_acc: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
}

impl EpochMetrics {
    pub fn line(&self) -> String {
        format!(
            "epoch={} loss={} train_acc={} lr={}",
            self.epoch, self.loss, self.train_acc, self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub model: FaceModel<T>,
    pub epochs: Vec<EpochMetrics>,
}

impl<T: Real> TrainOutcome<T> {
    pub fn log_text(&self) -> String {
        self.epochs.iter().map(|e| e.line() + "\n").collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_acc)
    }
}

/// Synthetic training images, or the dataset under `data_dir` when set.
pub fn load_training_data<T: Real>(cfg: &RunConfig) -> Result<LabeledSet<T>> {
    match &cfg.data_dir {
        Some(dir) => Ok(load_dataset(dir)?.0),
        None => gen_synthetic(&cfg.synthetic_spec()),
    }
}

pub fn init_model<T: Real>(cfg: &RunConfig, classes: usize) -> Result<FaceModel<T>> {
    FaceModel::init(&cfg.model_config(), classes, cfg.seed)
}

/// Gradient buffers in traversal order; unused tensors get zeros.
fn collect_grads<T: Real>(
    model: &FaceModel<T>,
    nodes: &[crate::grad::NodeId],
    grads: &crate::grad::Gradients<T>,
) -> Vec<Vec<T>> {
    let mut sizes = Vec::new();
    model.visit("", &mut |_, _, _, d| sizes.push(d.len()));
    nodes
        .iter()
        .zip(sizes)
        .map(|(&id, len)| grads.flat(id).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec))
        .collect()
}

/// Train from the seeded initialisation. Shuffling, initialisation and
/// data all derive from `cfg.seed`; the learning rate follows the cosine
/// schedule per step. A non-finite batch loss aborts with its position.
pub fn train_on<T: Real>(cfg: &RunConfig, data: &LabeledSet<T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let classes = data.classes();
    let loss_cfg = cfg.loss_config(classes);
    let mut model = init_model::<T>(cfg, classes)?;
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let n = data.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, epochs });
    }
    let schedule = LRSchedule::new(cfg.lr_init, cfg.lr_min, cfg.epochs * batches)?;
    let mut rng = param_rng(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, cfg.lr_init);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch(idx);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let xv: MapVar = tape.leaf_map(x);
            let (loss, pred) = model
                .loss_tape(&mut tape, &vars, xv, &labels, &loss_cfg)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: b },
                    e => e,
                })?;
            let value = tape.value(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grads = tape.backward(loss, T::one())?;
            let g = collect_grads(&model, &vars.nodes(), &grads);
            lr = schedule.lr_at(step)?;
            opt.step(&mut model, &g, lr)?;
            step += 1;
            loss_sum += value * idx.len() as f64;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        epochs.push(EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            lr,
        });
    }
    Ok(TrainOutcome { model, epochs })
}

pub fn train<T: Real>(cfg: &RunConfig) -> Result<TrainOutcome<T>> {
    let data = load_training_data::<T>(cfg)?;
    train_on(cfg, &data)
}

/// Parameters (manifest plus one MSCT file each), the resolved config and
/// the metrics log.
pub fn write_checkpoint<T: Real>(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome<T>) -> Result<()> {
    save_params(&outcome.model, dir)?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_text())?;
    fs::write(dir.join(METRICS_LOG), outcome.log_text())?;
    Ok(())
}

/// Rebuild a model from a checkpoint directory. The class count comes from
/// the stored centre matrix.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(RunConfig, FaceModel<T>)> {
    let cfg = RunConfig::from_text(&fs::read_to_string(dir.join(CONFIG_ECHO))?)?;
    let centers = read_manifest(dir)?
        .into_iter()
        .find(|(name, _)| name == "centers")
        .ok_or_else(|| Error::Format {
            path: dir.to_path_buf(),
            detail: "checkpoint has no centers tensor".into(),
        })?;
    let raw = RawTensor::read(&dir.join(&centers.1))?;
    let classes = *raw.dims.first().ok_or_else(|| Error::Format {
        path: dir.join(&centers.1),
        detail: "empty dims".into(),
    })?;
    let mut model = init_model::<T>(&cfg, classes)?;
    load_params(&mut model, dir)?;
    Ok((cfg, model))
}

/// Normalised embeddings of every image, in chunks of `batch` samples.
pub fn embed_all<T: Real>(model: &FaceModel<T>, data: &LabeledSet<T>, batch: usize) -> Result<ChannelVec<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::new();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = data.batch(chunk);
        rows.extend_from_slice(model.net.embed(&x)?.data());
    }
    ChannelVec::new(data.len(), model.net.config.embed_dim, rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutMetrics {
    pub accuracy: f64,
    pub accuracy_threshold: f64,
    pub tar: f64,
    pub tar_threshold: f64,
    pub genuine: usize,
    pub impostor: usize,
}

/// Verification on fresh synthetic samples of the training identities,
/// scoring every pair.
pub fn heldout_metrics<T: Real>(cfg: &RunConfig, model: &FaceModel<T>) -> Result<HeldOutMetrics> {
    let held = gen_heldout::<T>(&cfg.synthetic_spec(), cfg.heldout_per_identity)?;
    let emb = embed_all(model, &held, cfg.batch_size)?;
    let vs = all_pairs(&emb, &held.labels)?;
    let (accuracy, accuracy_threshold) = pair_accuracy(&vs)?;
    let (tar, tar_threshold) = tar_at_far(&vs, cfg.far_target)?;
    Ok(HeldOutMetrics {
        accuracy,
        accuracy_threshold,
        tar,
        tar_threshold,
        genuine: vs.genuine.len(),
        impostor: vs.impostor.len(),
    })
}
