//! Training loop: class-balanced batches, any of the five losses, Adam
//! updates with step decay, validation metrics, early stopping, and
//! deterministic artifacts.
//!
//! Determinism contract: everything downstream of the seed is fixed — the
//! train/validation split, parameter initialization, batch sampling, and
//! (for rasters) augmentation all draw from one generator in a documented
//! order (split first, then init, then per-batch draws). Runs with the
//! same seed and configuration therefore produce byte-identical metrics
//! logs and checkpoints. Resuming restores parameters and optimizer state
//! from a checkpoint and skips the init draws; the epoch counter and the
//! metrics log continue where they left off.
//!
//! The metrics log is JSON Lines: one header line echoing the effective
//! configuration, then one line per epoch with exactly the keys `epoch`,
//! `loss`, `lr`, `val_recall_at_1`, and `val_knn_top1`.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::baselines::{contrastive_loss, lifted_loss, triplet_loss_hard, MarginConfig};
use crate::brm::{brm_backward, combined_loss, CombinedLossConfig};
use crate::data::{
    augment, central_crop, raster_to_features, sample_batch, AugmentConfig, FeatureDataset,
    RasterDataset,
};
use crate::encoder::{
    adam_step, backward, forward, init_params, load_checkpoint, save_checkpoint, Activation,
    AdamState, EncoderGrads, EncoderParams, InitScheme,
};
use crate::error::{Error, Result};
use crate::eval::{knn_classify, recall_at_k, topk_accuracy};
use crate::linalg::Matrix;
use crate::pairs::{
    distance_matrix, embedding_grad_from_distance_grad, enumerate_pairs, EmbeddingBatch,
};
use crate::rng::Rng;

/// Which loss drives the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Brm,
    BrmCe,
    Contrastive,
    Triplet,
    Lifted,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Brm,
        LossKind::BrmCe,
        LossKind::Contrastive,
        LossKind::Triplet,
        LossKind::Lifted,
    ];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LossKind::Brm => "brm",
            LossKind::BrmCe => "brm+ce",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Lifted => "lifted",
        };
        write!(f, "{name}")
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brm" => Ok(LossKind::Brm),
            "brm+ce" => Ok(LossKind::BrmCe),
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "lifted" => Ok(LossKind::Lifted),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?} (expected brm, brm+ce, contrastive, triplet, or lifted)"
            ))),
        }
    }
}

/// Everything a training run needs besides the data and output paths.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub loss: LossKind,
    /// Histogram resolution for the risk losses.
    pub bins: usize,
    pub margins: MarginConfig,
    /// Cross-entropy weight for the brm+ce loss.
    pub ce_weight: f64,
    /// Layer widths from input to embedding dimension.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_scheme: InitScheme,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub base_lr: f64,
    pub lr_gamma: f64,
    pub lr_decay_every: u32,
    pub max_epochs: u32,
    /// Epochs without validation-recall improvement before stopping;
    /// 0 disables early stopping.
    pub patience: u32,
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn new(seed: u64, loss: LossKind, layer_sizes: Vec<usize>) -> Self {
        TrainConfig {
            seed,
            loss,
            bins: 75,
            margins: MarginConfig::default(),
            ce_weight: 1.0,
            layer_sizes,
            activation: Activation::Relu,
            init_scheme: InitScheme::He,
            classes_per_batch: 8,
            samples_per_class: 8,
            base_lr: 1e-3,
            lr_gamma: 0.5,
            lr_decay_every: 50,
            max_epochs: 300,
            patience: 20,
            val_fraction: 0.2,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.classes_per_batch * self.samples_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "histogram needs at least 2 bins, got {}",
                self.bins
            )));
        }
        self.margins.validate()?;
        if self.ce_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ce_weight must be non-negative, got {}",
                self.ce_weight
            )));
        }
        if self.classes_per_batch == 0 || self.samples_per_class == 0 || self.batch_size() < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch of {} classes x {} samples is too small",
                self.classes_per_batch, self.samples_per_class
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in (0, 0.5], got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Input data for training.
#[derive(Clone, Debug)]
pub enum TrainData {
    Features(FeatureDataset),
    /// Rasters are augmented per batch, then cropped, flattened, and
    /// rescaled; validation passes use the un-augmented bridge.
    Rasters {
        dataset: RasterDataset,
        augment: AugmentConfig,
        crop_fraction: f64,
    },
}

/// Output paths for one training run.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Continue a previous run from this checkpoint.
    pub resume_from: Option<PathBuf>,
}

impl TrainOutputs {
    /// Conventional layout under a run directory.
    pub fn in_dir(dir: &Path) -> Self {
        TrainOutputs {
            metrics_path: dir.join("metrics.jsonl"),
            final_checkpoint: dir.join("final.ckpt"),
            best_checkpoint: dir.join("best.ckpt"),
            resume_from: None,
        }
    }
}

/// The classifier head used by brm+ce rides in a sibling file next to the
/// encoder checkpoint.
pub fn head_checkpoint_path(encoder_checkpoint: &Path) -> PathBuf {
    let mut name = encoder_checkpoint.as_os_str().to_owned();
    name.push(".head");
    PathBuf::from(name)
}

/// One epoch of history.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss: f64,
    pub lr: f64,
    pub val_recall_at_1: f64,
    pub val_knn_top1: f64,
    /// Validation top-1 of the brm+ce classifier head, when one exists.
    pub head_val_top1: Option<f64>,
}

/// Result of a completed (or early-stopped) run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val_recall: f64,
    /// 1-based epoch at which the best validation recall first appeared.
    pub best_epoch: u32,
    pub stopped_early: bool,
    pub params: EncoderParams,
    pub state: AdamState,
    pub head: Option<(EncoderParams, AdamState)>,
}

impl TrainOutcome {
    pub fn first_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }
}

#[derive(Serialize)]
struct MetricsLine {
    epoch: u32,
    loss: f64,
    lr: f64,
    val_recall_at_1: f64,
    val_knn_top1: f64,
}

/// Per-class shuffle split; roughly `val_fraction` of each class is held
/// out (rounded down, never the whole class).
///
/// This is the first thing a training run draws from its generator, so
/// `Rng::new(seed)` reproduces the exact split of a run with that seed —
/// evaluation uses that to score the same held-out rows.
pub fn train_val_split(
    labels: &[usize],
    val_fraction: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        let take = ((members.len() as f64 * val_fraction).floor() as usize).min(members.len() - 1);
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn is_degenerate_batch(err: &Error) -> bool {
    matches!(
        err,
        Error::EmptyPairSet { .. }
            | Error::NoValidTriplet
            | Error::NoNegativePartner { .. }
            | Error::InsufficientClassSamples { .. }
    )
}

/// Raw affine scores of the classifier head.
fn head_logits(head: &EncoderParams, embeddings: &Matrix) -> Result<Matrix> {
    let mut logits = embeddings.matmul(&head.weights()[0])?;
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(&head.biases()[0]) {
            *v += *b;
        }
    }
    Ok(logits)
}

struct BatchLoss {
    value: f64,
    grad_embeddings: Matrix,
    head_grads: Option<EncoderGrads>,
}

fn compute_batch_loss(
    cfg: &TrainConfig,
    batch: &EmbeddingBatch,
    head: Option<&EncoderParams>,
) -> Result<BatchLoss> {
    match cfg.loss {
        LossKind::Brm => {
            let pairs = enumerate_pairs(batch.labels())?;
            let rv = brm_backward(batch, &pairs, cfg.bins)?;
            Ok(BatchLoss {
                value: rv.risk,
                grad_embeddings: rv.grad_embeddings,
                head_grads: None,
            })
        }
        LossKind::BrmCe => {
            let head = head.expect("brm+ce always trains with a head");
            let pairs = enumerate_pairs(batch.labels())?;
            let logits = head_logits(head, batch.embeddings())?;
            let ce_cfg = CombinedLossConfig {
                ce_weight: cfg.ce_weight,
                num_classes: head.output_dim(),
            };
            let combined = combined_loss(batch, &pairs, cfg.bins, &logits, &ce_cfg)?;
            // chain the cross-entropy back through the head into the
            // embeddings so the encoder trains on the full objective
            let mut grad_embeddings = combined.grad_embeddings;
            let through_head = combined.grad_logits.matmul_transpose(&head.weights()[0])?;
            for (g, t) in grad_embeddings
                .data_mut()
                .iter_mut()
                .zip(through_head.data())
            {
                *g += *t;
            }
            let gw = batch.embeddings().transpose_matmul(&combined.grad_logits)?;
            let mut gb = vec![0.0; head.output_dim()];
            for i in 0..combined.grad_logits.rows() {
                for (acc, g) in gb.iter_mut().zip(combined.grad_logits.row(i)) {
                    *acc += *g;
                }
            }
            Ok(BatchLoss {
                value: combined.total,
                grad_embeddings,
                head_grads: Some(EncoderGrads {
                    weights: vec![gw],
                    biases: vec![gb],
                }),
            })
        }
        LossKind::Contrastive | LossKind::Triplet | LossKind::Lifted => {
            let dist = distance_matrix(batch)?;
            let (value, dgrad) = match cfg.loss {
                LossKind::Contrastive => {
                    let pairs = enumerate_pairs(batch.labels())?;
                    contrastive_loss(&dist, &pairs, cfg.margins.contrastive_margin)?
                }
                LossKind::Triplet => {
                    triplet_loss_hard(&dist, batch.labels(), cfg.margins.triplet_margin)?
                }
                LossKind::Lifted => {
                    let pairs = enumerate_pairs(batch.labels())?;
                    lifted_loss(&dist, &pairs, cfg.margins.lifted_margin)?
                }
                _ => unreachable!(),
            };
            Ok(BatchLoss {
                value,
                grad_embeddings: embedding_grad_from_distance_grad(batch, &dist, &dgrad),
                head_grads: None,
            })
        }
    }
}

/// Inputs for the sampled indices: a plain row gather for features, or
/// augment + crop + rescale for rasters.
fn batch_inputs(
    data: &TrainData,
    eval_features: &FeatureDataset,
    indices: &[usize],
    rng: &mut Rng,
) -> Result<(Matrix, Vec<usize>)> {
    match data {
        TrainData::Features(f) => Ok(f.select(indices)),
        TrainData::Rasters {
            dataset,
            augment: acfg,
            crop_fraction,
        } => {
            let mut m = Matrix::zeros(indices.len(), eval_features.dim());
            let mut labels = Vec::with_capacity(indices.len());
            for (k, &i) in indices.iter().enumerate() {
                let augmented =
                    augment(dataset.image(i), dataset.side(), dataset.side(), acfg, rng)?;
                let (cropped, _) = central_crop(&augmented, dataset.side(), *crop_fraction)?;
                for (slot, &p) in m.row_mut(k).iter_mut().zip(&cropped) {
                    *slot = p as f64 / 255.0;
                }
                labels.push(dataset.labels()[i]);
            }
            Ok((m, labels))
        }
    }
}

/// Embeds dataset rows (no augmentation) as an [`EmbeddingBatch`].
fn embed_split(
    params: &EncoderParams,
    features: &FeatureDataset,
    indices: &[usize],
) -> Result<EmbeddingBatch> {
    let (inputs, labels) = features.select(indices);
    let (embeddings, _) = forward(params, &inputs)?;
    EmbeddingBatch::new(embeddings, labels)
}

fn config_header(
    cfg: &TrainConfig,
    n: usize,
    dim: usize,
    classes: usize,
    batches_per_epoch: usize,
) -> serde_json::Value {
    serde_json::json!({
        "config": {
            "seed": cfg.seed,
            "loss": cfg.loss.to_string(),
            "bins": cfg.bins,
            "contrastive_margin": cfg.margins.contrastive_margin,
            "triplet_margin": cfg.margins.triplet_margin,
            "lifted_margin": cfg.margins.lifted_margin,
            "ce_weight": cfg.ce_weight,
            "layer_sizes": cfg.layer_sizes,
            "activation": cfg.activation.to_string(),
            "classes_per_batch": cfg.classes_per_batch,
            "samples_per_class": cfg.samples_per_class,
            "base_lr": cfg.base_lr,
            "lr_gamma": cfg.lr_gamma,
            "lr_decay_every": cfg.lr_decay_every,
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "val_fraction": cfg.val_fraction,
            "batches_per_epoch": batches_per_epoch,
            "dataset": {"n": n, "dim": dim, "classes": classes},
        }
    })
}

/// Runs the full training loop.
pub fn train(data: &TrainData, cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    let eval_features = match data {
        TrainData::Features(f) => f.clone(),
        TrainData::Rasters {
            dataset,
            crop_fraction,
            ..
        } => raster_to_features(dataset, *crop_fraction)?,
    };
    if cfg.layer_sizes.first() != Some(&eval_features.dim()) {
        return Err(Error::DimensionMismatch {
            context: "encoder input width vs dataset",
            expected: eval_features.dim(),
            got: cfg.layer_sizes.first().copied().unwrap_or(0),
        });
    }
    let classes = eval_features.num_classes();

    let mut rng = Rng::new(cfg.seed);
    let (train_idx, val_idx) = train_val_split(eval_features.labels(), cfg.val_fraction, &mut rng);
    if val_idx.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "validation split has {} samples; need at least 2",
            val_idx.len()
        )));
    }
    let train_labels: Vec<usize> = train_idx
        .iter()
        .map(|&i| eval_features.labels()[i])
        .collect();
    let batches_per_epoch = (train_idx.len() / cfg.batch_size()).max(1);

    // ----- parameters and optimizer state (fresh or resumed) -----
    let resume = outputs.resume_from.as_deref();
    let (mut params, mut state, start_epoch) = match resume {
        Some(path) => {
            let (params, state) = load_checkpoint(path)?;
            if params.sizes() != cfg.layer_sizes.as_slice() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint layer sizes {:?} do not match configured {:?}",
                    params.sizes(),
                    cfg.layer_sizes
                )));
            }
            let start = state.epoch() + 1;
            (params, state, start)
        }
        None => {
            let params = init_params(&mut rng, &cfg.layer_sizes, cfg.activation, cfg.init_scheme)?;
            let state = AdamState::new(&params, cfg.base_lr, cfg.lr_gamma, cfg.lr_decay_every)?;
            (params, state, 0)
        }
    };
    let mut head: Option<(EncoderParams, AdamState)> = if cfg.loss == LossKind::BrmCe {
        let resumed_head = resume
            .map(head_checkpoint_path)
            .filter(|p| p.exists())
            .map(|p| load_checkpoint(&p))
            .transpose()?;
        Some(match resumed_head {
            Some(pair) => pair,
            None => {
                let head_sizes = [*cfg.layer_sizes.last().unwrap(), classes];
                let p = init_params(&mut rng, &head_sizes, cfg.activation, cfg.init_scheme)?;
                let s = AdamState::new(&p, cfg.base_lr, cfg.lr_gamma, cfg.lr_decay_every)?;
                (p, s)
            }
        })
    } else {
        None
    };

    // ----- metrics log -----
    let fresh_log = resume.is_none();
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .truncate(false)
            .open(&outputs.metrics_path)?,
    );
    if fresh_log {
        let header = config_header(
            cfg,
            eval_features.len(),
            eval_features.dim(),
            classes,
            batches_per_epoch,
        );
        writeln!(log, "{header}")?;
    }

    // ----- best-so-far tracking -----
    let mut best_recall = f64::NEG_INFINITY;
    let mut best_epoch = start_epoch;
    let mut since_improve = 0u32;
    if resume.is_some() {
        let val_batch = embed_split(&params, &eval_features, &val_idx)?;
        best_recall = recall_at_k(&val_batch, 1)?;
    }

    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in start_epoch..cfg.max_epochs {
        state.set_epoch(epoch);
        if let Some((_, hs)) = head.as_mut() {
            hs.set_epoch(epoch);
        }
        let lr = state.lr();

        let mut loss_sum = 0.0;
        for _ in 0..batches_per_epoch {
            let mut attempts = 0;
            let step = loop {
                attempts += 1;
                let result = (|| {
                    let picks = sample_batch(
                        &train_labels,
                        &mut rng,
                        cfg.batch_size(),
                        cfg.classes_per_batch,
                        cfg.samples_per_class,
                    )?;
                    let rows: Vec<usize> = picks.iter().map(|&p| train_idx[p]).collect();
                    let (inputs, labels) = batch_inputs(data, &eval_features, &rows, &mut rng)?;
                    let (embeddings, cache) = forward(&params, &inputs)?;
                    let batch = EmbeddingBatch::new(embeddings, labels)?;
                    let loss = compute_batch_loss(cfg, &batch, head.as_ref().map(|(p, _)| p))?;
                    Ok((inputs, cache, loss))
                })();
                match result {
                    Ok(step) => break step,
                    Err(e) if is_degenerate_batch(&e) => {
                        if attempts >= 10 {
                            return Err(Error::DegenerateData(format!(
                                "batch stayed degenerate after {attempts} attempts: {e}"
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            };
            let (_, cache, loss) = step;
            loss_sum += loss.value;
            let (grads, _) = backward(&params, &cache, &loss.grad_embeddings)?;
            adam_step(&mut params, &grads, &mut state)?;
            if let Some(head_grads) = loss.head_grads {
                let (hp, hs) = head.as_mut().expect("head grads imply a head");
                adam_step(hp, &head_grads, hs)?;
            }
        }
        let mean_loss = loss_sum / batches_per_epoch as f64;

        // ----- validation metrics -----
        let train_batch = embed_split(&params, &eval_features, &train_idx)?;
        let val_batch = embed_split(&params, &eval_features, &val_idx)?;
        let val_recall = recall_at_k(&val_batch, 1)?;
        let preds = knn_classify(&train_batch, val_batch.embeddings(), 1)?;
        let val_knn_top1 = preds
            .iter()
            .zip(val_batch.labels())
            .filter(|(p, y)| p == y)
            .count() as f64
            / val_batch.len() as f64;
        let head_val_top1 = match head.as_ref() {
            Some((hp, _)) => {
                let logits = head_logits(hp, val_batch.embeddings())?;
                Some(topk_accuracy(&logits, val_batch.labels(), 1)?)
            }
            None => None,
        };

        let line = MetricsLine {
            epoch: epoch + 1,
            loss: mean_loss,
            lr,
            val_recall_at_1: val_recall,
            val_knn_top1,
        };
        writeln!(
            log,
            "{}",
            serde_json::to_string(&line).expect("plain fields")
        )?;
        log.flush()?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss: mean_loss,
            lr,
            val_recall_at_1: val_recall,
            val_knn_top1,
            head_val_top1,
        });

        if val_recall > best_recall {
            best_recall = val_recall;
            best_epoch = epoch + 1;
            since_improve = 0;
            save_checkpoint(&outputs.best_checkpoint, &params, &state)?;
            if let Some((hp, hs)) = head.as_ref() {
                save_checkpoint(&head_checkpoint_path(&outputs.best_checkpoint), hp, hs)?;
            }
        } else {
            since_improve += 1;
            if cfg.patience > 0 && since_improve >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    save_checkpoint(&outputs.final_checkpoint, &params, &state)?;
    if let Some((hp, hs)) = head.as_ref() {
        save_checkpoint(&head_checkpoint_path(&outputs.final_checkpoint), hp, hs)?;
    }
    Ok(TrainOutcome {
        history,
        best_val_recall: best_recall,
        best_epoch,
        stopped_early,
        params,
        state,
        head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    // spread 0.5 keeps the classes overlapping at init, so the risk
    // starts clearly above zero and the loop has something to learn
    fn tiny_dataset(seed: u64) -> FeatureDataset {
        gen_synthetic(&mut Rng::new(seed), 4, 20, 8, 0.5).unwrap()
    }

    fn tiny_config(loss: LossKind) -> TrainConfig {
        let mut cfg = TrainConfig::new(7, loss, vec![8, 8]);
        cfg.classes_per_batch = 2;
        cfg.samples_per_class = 4;
        cfg.base_lr = 5e-3;
        cfg.max_epochs = 15;
        cfg.patience = 0;
        cfg
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let (t1, v1) = train_val_split(&labels, 0.2, &mut Rng::new(9));
        let (t2, v2) = train_val_split(&labels, 0.2, &mut Rng::new(9));
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert_eq!(v1.len(), 6); // 2 of each class of 10
        let mut all: Vec<usize> = t1.iter().chain(&v1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<usize>>());
    }

    #[test]
    fn split_never_takes_a_whole_class() {
        let labels = vec![0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
        let (train, _) = train_val_split(&labels, 0.5, &mut Rng::new(11));
        assert!(train.iter().any(|&i| labels[i] == 0));
    }

    #[test]
    fn brm_run_learns_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs::in_dir(dir.path());
        let data = TrainData::Features(tiny_dataset(600));
        let outcome = train(&data, &tiny_config(LossKind::Brm), &outputs).unwrap();

        assert_eq!(outcome.history.len(), 15);
        assert!(
            outcome.final_loss() < outcome.first_loss(),
            "loss went {} -> {}",
            outcome.first_loss(),
            outcome.final_loss()
        );
        assert!(outputs.final_checkpoint.exists());
        assert!(outputs.best_checkpoint.exists());

        let text = std::fs::read_to_string(&outputs.metrics_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 16);
        let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert!(header.get("config").is_some());
        for (k, line) in lines[1..].iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let obj = v.as_object().unwrap();
            let keys: Vec<&String> = obj.keys().collect();
            assert_eq!(
                keys,
                ["epoch", "loss", "lr", "val_knn_top1", "val_recall_at_1"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .iter()
                    .collect::<Vec<_>>()
            );
            assert_eq!(obj["epoch"].as_u64().unwrap(), k as u64 + 1);
        }
    }

    #[test]
    fn same_seed_runs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let sub = dir.path().join(name);
            std::fs::create_dir(&sub).unwrap();
            let outputs = TrainOutputs::in_dir(&sub);
            let data = TrainData::Features(tiny_dataset(601));
            train(&data, &tiny_config(LossKind::Brm), &outputs).unwrap();
            outputs
        };
        let a = run("a");
        let b = run("b");
        for (pa, pb) in [
            (&a.metrics_path, &b.metrics_path),
            (&a.final_checkpoint, &b.final_checkpoint),
            (&a.best_checkpoint, &b.best_checkpoint),
        ] {
            assert_eq!(
                std::fs::read(pa).unwrap(),
                std::fs::read(pb).unwrap(),
                "{pa:?} differs from {pb:?}"
            );
        }
    }

    #[test]
    fn resume_continues_the_epoch_counter() {
        let dir = tempfile::tempdir().unwrap();
        let data = TrainData::Features(tiny_dataset(602));
        let mut outputs = TrainOutputs::in_dir(dir.path());
        let mut cfg = tiny_config(LossKind::Brm);
        cfg.max_epochs = 5;
        train(&data, &cfg, &outputs).unwrap();

        cfg.max_epochs = 10;
        outputs.resume_from = Some(outputs.final_checkpoint.clone());
        let outcome = train(&data, &cfg, &outputs).unwrap();
        let epochs: Vec<u32> = outcome.history.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![6, 7, 8, 9, 10]);

        let text = std::fs::read_to_string(&outputs.metrics_path).unwrap();
        let data_lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(data_lines.len(), 10);
        for (k, line) in data_lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["epoch"].as_u64().unwrap(), k as u64 + 1);
        }
    }

    #[test]
    fn singleton_classes_are_degenerate_after_retries() {
        let vectors = Matrix::from_rows(
            &(0..6)
                .map(|i| vec![i as f64 + 1.0, 1.0, 0.5, -0.25])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let ds = FeatureDataset::new(vectors, (0..6).collect(), 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs::in_dir(dir.path());
        let mut cfg = tiny_config(LossKind::Triplet);
        cfg.layer_sizes = vec![4, 4];
        cfg.val_fraction = 0.34;
        let err = train(&TrainData::Features(ds), &cfg, &outputs).unwrap_err();
        assert!(
            matches!(err, Error::DegenerateData(_) | Error::InvalidConfig(_)),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn brm_ce_trains_a_head() {
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs::in_dir(dir.path());
        let data = TrainData::Features(tiny_dataset(603));
        let outcome = train(&data, &tiny_config(LossKind::BrmCe), &outputs).unwrap();
        assert!(outcome.head.is_some());
        assert!(outcome.history.last().unwrap().head_val_top1.is_some());
        assert!(head_checkpoint_path(&outputs.final_checkpoint).exists());
        assert!(head_checkpoint_path(&outputs.best_checkpoint).exists());
    }

    #[test]
    fn raster_training_runs() {
        let mut rng = Rng::new(604);
        let rasters = crate::data::gen_synthetic_rasters(&mut rng, 3, 12, 12).unwrap();
        let data = TrainData::Rasters {
            dataset: rasters,
            augment: AugmentConfig {
                jitter_amplitude: 4,
                ..AugmentConfig::default()
            },
            crop_fraction: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs::in_dir(dir.path());
        let mut cfg = tiny_config(LossKind::Brm);
        cfg.layer_sizes = vec![144, 16, 8];
        cfg.classes_per_batch = 2;
        cfg.samples_per_class = 3;
        cfg.max_epochs = 3;
        let outcome = train(&data, &cfg, &outputs).unwrap();
        assert_eq!(outcome.history.len(), 3);
    }
}
