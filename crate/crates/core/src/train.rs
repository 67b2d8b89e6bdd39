//! Mini-batch SGD with momentum and evaluation reports.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, POSITIVE};
use crate::metrics::{roc_auc, threshold_metrics, ThresholdMetrics};
use crate::nn::softmax;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not usable", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// None when the validation set holds a single class.
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based), if any epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
}

fn check_data(graph: &ModelGraph, set: &Dataset, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    graph.check_batch(&set.images)
}

/// Trains in place. Keeps the weights of the epoch with the best validation
/// AUC; with an undefined validation AUC the last epoch wins.
pub fn train(graph: &mut ModelGraph, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_data(graph, train_set, "train")?;
    check_data(graph, val_set, "validation")?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = vec![0.0; graph.param_count()];
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.images.select_items(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let diverged = |loss: f64, max_abs_grad: f64| Error::Diverged {
                epoch,
                batch: b,
                loss,
                max_abs_grad,
            };
            let (loss, grad) = match graph.loss_and_grad(&batch, &labels) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(diverged(f64::NAN, f64::NAN)),
                Err(e) => return Err(e),
            };
            let max_abs_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if !loss.is_finite() || !max_abs_grad.is_finite() {
                return Err(diverged(loss, max_abs_grad));
            }
            loss_sum += loss * chunk.len() as f64;
            let w = graph.weights_mut().arena_mut();
            for ((w, v), g) in w.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.learning_rate * *v;
            }
        }
        let val_auc = match roc_auc(&predict_scores(graph, &val_set.images, cfg.batch_size)?, &val_set.labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_auc,
        });
        if let Some(a) = val_auc {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, graph.weights().arena().to_vec()));
                history.best_epoch = Some(epoch);
                history.best_val_auc = Some(a);
            }
        }
    }
    match best {
        Some((_, w)) => graph.weights_mut().arena_mut().copy_from_slice(&w),
        None => history.best_epoch = Some(cfg.epochs),
    }
    Ok(history)
}

/// Positive-class probability per image, in input order.
pub fn predict_scores(graph: &ModelGraph, images: &Tensor, batch_size: usize) -> Result<Vec<f64>> {
    graph.check_batch(images)?;
    let n = images.batch();
    let mut scores = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = graph.forward(&images.select_items(chunk))?;
        for row in logits.data().chunks(logits.channels()) {
            scores.push(softmax(row)[POSITIVE]);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    #[serde(flatten)]
    pub at_threshold: ThresholdMetrics,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn evaluate(graph: &ModelGraph, set: &Dataset, threshold: f64) -> Result<EvalReport> {
    let scores = predict_scores(graph, &set.images, 32)?;
    Ok(EvalReport {
        auc: roc_auc(&scores, &set.labels)?,
        at_threshold: threshold_metrics(&scores, &set.labels, threshold)?,
        scores,
        labels: set.labels.clone(),
        loss_history: Vec::new(),
    })
}

/// `frame,video_id,label,score` rows for external plotting.
pub fn write_scores_csv(path: &Path, set: &Dataset, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["frame", "video_id", "label", "score"]).map_err(err)?;
    for i in 0..set.len() {
        w.write_record([
            set.frames[i].as_str(),
            set.video_ids[i].as_str(),
            &set.labels[i].to_string(),
            &format!("{:.17}", scores[i]),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
