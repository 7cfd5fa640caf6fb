//! Losses with online negative mining, Adam, the epoch loop and evaluation.

mod adam;
mod loss;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use loss::{
    hard_negative_set, mine_negatives, sample_loss, semi_hard_set, softmax_loss, triplet_loss, LossConfig, LossKind,
    Mining,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, forward_on_tape, ModelError, ModelInput, ModelParameters};
use crate::scene_graph::{iou, Proposal};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: ModelError,
    },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("gradient shape mismatch for {name}")]
    GradientShape { name: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One training or evaluation item.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: ModelInput,
    pub gt: usize,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate once `decay_after` epochs have completed.
    pub lr_decayed: f64,
    pub decay_after: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 5e-4,
            lr_decayed: 1e-4,
            decay_after: 5,
            seed: 7,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Schedule used for the small synthetic datasets: smaller batches and
    /// no decay, since an epoch holds only a few dozen batches of 64.
    pub fn desk_scale() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_decayed: 5e-4,
            decay_after: 30,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_decayed > 0.0) {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        self.loss.validate().map_err(TrainError::Config)
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch > self.decay_after {
            self.lr_decayed
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_p_at_1: Option<f64>,
    pub lr: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation precision (last epoch without validation data).
    pub best: ModelParameters,
    pub best_epoch: usize,
    pub last: ModelParameters,
    pub metrics: Vec<EpochMetrics>,
}

/// Fraction of pairs whose IoU is strictly above `threshold`.
pub fn precision_at_1(predictions: &[Proposal], ground_truths: &[Proposal], threshold: f64) -> f64 {
    assert_eq!(predictions.len(), ground_truths.len(), "prediction/ground-truth length mismatch");
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(ground_truths)
        .filter(|(p, g)| iou(p, g) > threshold)
        .count();
    hits as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: f64,
    pub count: usize,
    pub by_order: BTreeMap<u8, f64>,
    pub count_by_order: BTreeMap<u8, usize>,
}

/// Precision@1 at IoU > 0.5, overall and per relation order.
pub fn evaluate(model: &ModelParameters, examples: &[Example]) -> Result<EvalReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(examples.len());
    let mut gts = Vec::with_capacity(examples.len());
    let mut by_order: BTreeMap<u8, (Vec<Proposal>, Vec<Proposal>)> = BTreeMap::new();
    for (index, ex) in examples.iter().enumerate() {
        let p = forward(model, &ex.input).map_err(|source| TrainError::Sample { index, source })?;
        let props = &ex.input.graph.proposals;
        let (pred, gt) = (props[p.argmax()].clone(), props[ex.gt].clone());
        let slot = by_order.entry(ex.order).or_default();
        slot.0.push(pred.clone());
        slot.1.push(gt.clone());
        preds.push(pred);
        gts.push(gt);
    }
    Ok(EvalReport {
        overall: precision_at_1(&preds, &gts, 0.5),
        count: examples.len(),
        count_by_order: by_order.iter().map(|(&o, v)| (o, v.0.len())).collect(),
        by_order: by_order.into_iter().map(|(o, (p, g))| (o, precision_at_1(&p, &g, 0.5))).collect(),
    })
}

/// Loss of one example and the gradient of every parameter, in store
/// order. `None` when the sample contributes nothing.
pub fn example_gradients(
    model: &ModelParameters,
    example: &Example,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, Vec<Tensor>)>, ModelError> {
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape);
    let pass = forward_on_tape(&mut tape, model, &params, &example.input)?;
    let Some(loss) = sample_loss(&mut tape, pass.scores, example.gt, loss_cfg, rng)? else {
        return Ok(None);
    };
    let value = tape.value(loss).item().expect("scalar loss");
    let grads = tape.backward(loss)?;
    let out = params
        .vars()
        .iter()
        .map(|&v| grads.get(v).cloned().expect("every parameter is a leaf"))
        .collect();
    Ok(Some((value, out)))
}

/// Mini-batch training with Adam; the batch gradient is the mean over its samples.
pub fn train(
    initial: &ModelParameters,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = initial.clone();
    let mut state = OptimState::new(&model.store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParameters)> = None;

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        state.lr = cfg.lr_for_epoch(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut accum: Vec<Tensor> = model.store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            for &index in batch {
                let got = example_gradients(&model, &train_set[index], &cfg.loss, &mut rng)
                    .map_err(|source| TrainError::Sample { index, source })?;
                if let Some((value, grads)) = got {
                    loss_sum += value;
                    for (a, g) in accum.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for a in accum.iter_mut() {
                a.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            adam_step(&mut model.store, &accum, &mut state)?;
        }
        let val_p_at_1 = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set)?.overall)
        };
        let record = EpochMetrics {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            val_p_at_1,
            lr: state.lr,
        };
        on_epoch(&record);
        metrics.push(record);
        let score = val_p_at_1.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((b, _, _)) => val_p_at_1.is_none() || score > *b,
        };
        if improves {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        metrics,
    })
}
