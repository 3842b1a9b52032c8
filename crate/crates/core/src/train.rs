//! Cross-entropy training with Adam, decoupled weight decay and a cosine
//! learning-rate schedule.
//!
//! Each training subject forms a unit together with its augmented copies;
//! units are shuffled every epoch and a batch holds `batch_size` units, so
//! a copy always shares the batch of its source.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_many, GradCheckConfig, GradCheckReport, Matrix, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphbuild::HeteroGraph;
use crate::model::{positive_probability, Mode, Model, ModelConfig, ModelDims};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Anneal the learning rate along a half cosine over the epochs.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 32,
            dropout: 0.45,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "lr must be positive and weight decay nonnegative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `-log softmax(logits)[label]` for a `1 x C` logit row.
pub fn cross_entropy(tape: &mut Tape, logits: Tensor, label: usize) -> Result<Tensor> {
    if logits.rows() != 1 || label >= logits.cols() {
        return Err(Error::InvalidArgument(format!(
            "label {label} for logits of shape {:?}",
            logits.shape()
        )));
    }
    let log_p = tape.log_softmax_rows(logits)?;
    let mut onehot = Matrix::zeros(logits.shape());
    onehot[[0, label]] = 1.0;
    let onehot = tape.constant(onehot);
    let picked = tape.mul(log_p, onehot)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0)
}

/// Learning rate at `epoch` of `total`: `lr0 (1 + cos(pi epoch / total)) / 2`.
pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update with bias correction, preceded by decoupled weight
/// decay `p <- p (1 - lr wd)`.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::InvalidArgument(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = params
        .iter()
        .zip(grads)
        .position(|(p, g)| p.dim() != g.dim())
    {
        return Err(Error::InvalidArgument(format!(
            "gradient {i} shape mismatch"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * config.weight_decay;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *p *= decay;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
            });
    }
    Ok(())
}

/// Loss, per-parameter gradients and logits for a single graph.
pub fn loss_and_grads(
    model: &Model,
    hg: &HeteroGraph,
    mode: Mode,
) -> Result<(f64, Vec<Matrix>, [f64; 2])> {
    let mut tape = Tape::new();
    let p = model.params().register(&mut tape);
    let out = model.forward(&mut tape, &p, hg, mode, false)?;
    let loss = cross_entropy(&mut tape, out.logits, hg.label)?;
    let mut grads = tape.backward(loss)?;
    let g = p
        .iter()
        .map(|&t| grads.take(t).expect("parameters always receive a gradient"))
        .collect();
    let l = tape.value(out.logits);
    Ok((tape.value(loss)[[0, 0]], g, [l[[0, 0]], l[[0, 1]]]))
}

/// Finite-difference check of the full model's loss gradient on `hg` with
/// respect to every parameter, in evaluation mode.
pub fn model_grad_check(
    model: &Model,
    hg: &HeteroGraph,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    grad_check_many(
        |tape, p| {
            let out = model.forward(tape, p, hg, Mode::Eval, false)?;
            cross_entropy(tape, out.logits, hg.label)
        },
        model.params().values(),
        config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Evaluation-mode predictions for a set of graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub subject_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Probability of the positive class.
    pub scores: Vec<f64>,
    pub mean_loss: f64,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = self
            .labels
            .iter()
            .zip(&self.scores)
            .filter(|(&y, &s)| (s >= 0.5) == (y == 1))
            .count();
        hits as f64 / self.labels.len() as f64
    }
}

pub fn predict(model: &Model, graphs: &[HeteroGraph]) -> Result<Predictions> {
    let logits: Vec<[f64; 2]> = graphs
        .par_iter()
        .map(|hg| model.logits(hg))
        .collect::<Result<_>>()?;
    let mut mean_loss = 0.0;
    for (l, hg) in logits.iter().zip(graphs) {
        let m = l[0].max(l[1]);
        let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
        mean_loss += lse - l[hg.label.min(1)];
    }
    if !graphs.is_empty() {
        mean_loss /= graphs.len() as f64;
    }
    Ok(Predictions {
        subject_ids: graphs.iter().map(|g| g.subject_id.clone()).collect(),
        labels: graphs.iter().map(|g| g.label).collect(),
        scores: logits.into_iter().map(positive_probability).collect(),
        mean_loss,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub curves: Vec<EpochRecord>,
    /// Validation predictions after the last epoch.
    pub final_val: Option<Predictions>,
    /// Epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub n_train: usize,
    pub n_augmented: usize,
}

/// Deterministic child seed for stream `(a, b)` of `seed`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reject any subject present in both splits, and augmented copies whose
/// source is not a training subject.
pub fn check_leakage(
    train: &[HeteroGraph],
    augmented: &[HeteroGraph],
    val: &[HeteroGraph],
) -> Result<()> {
    let train_ids: HashSet<&str> = train.iter().map(|g| g.subject_id.as_str()).collect();
    for g in train.iter().chain(augmented) {
        if val.iter().any(|v| v.subject_id == g.subject_id) {
            return Err(Error::Leakage {
                subject: g.subject_id.clone(),
            });
        }
    }
    if let Some(g) = augmented
        .iter()
        .find(|g| !train_ids.contains(g.subject_id.as_str()))
    {
        return Err(Error::Leakage {
            subject: g.subject_id.clone(),
        });
    }
    Ok(())
}

/// Train a fresh model on `train` plus `augmented` copies and track `val`
/// after every epoch. Augmented graphs carry their source's subject id.
pub fn train_fold(
    train: &[HeteroGraph],
    augmented: &[HeteroGraph],
    val: &[HeteroGraph],
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training split".into()))?;
    check_leakage(train, augmented, val)?;
    let dims = ModelDims::of(first);
    for g in train.iter().chain(augmented).chain(val) {
        dims.check(g)?;
        if g.label > 1 {
            return Err(Error::InvalidArgument(format!(
                "subject {} has label {}",
                g.subject_id, g.label
            )));
        }
    }

    let mut model = Model::new(model_config.clone(), dims, seed)?;
    let mut optimizer = OptimizerState::new(model.params().values());

    let units: Vec<Vec<&HeteroGraph>> = train
        .iter()
        .map(|g| {
            let mut unit = vec![g];
            unit.extend(augmented.iter().filter(|a| a.subject_id == g.subject_id));
            unit
        })
        .collect();

    let mut curves = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut final_val = None;
    for epoch in 0..config.epochs {
        let lr = if config.cosine {
            cosine_lr(config.lr, epoch, config.epochs)
        } else {
            config.lr
        };
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            epoch as u64,
            0,
        )));

        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&HeteroGraph> = chunk
                .iter()
                .flat_map(|&u| units[u].iter().copied())
                .collect();
            let results: Vec<(f64, Vec<Matrix>, [f64; 2])> = batch
                .par_iter()
                .enumerate()
                .map(|(i, hg)| {
                    let mode = Mode::Train {
                        dropout: config.dropout,
                        seed: derive_seed(seed, epoch as u64, ((b as u64) << 32) | i as u64),
                    };
                    loss_and_grads(&model, hg, mode)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut grads: Vec<Matrix> = model
                .params()
                .values()
                .iter()
                .map(|p| Matrix::zeros(p.dim()))
                .collect();
            for ((loss, g, logits), hg) in results.iter().zip(&batch) {
                loss_sum += loss;
                hits += usize::from((logits[1] >= logits[0]) == (hg.label == 1));
                seen += 1;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.scaled_add(scale, gi);
                }
            }
            adam_step(
                model.params_mut().values_mut(),
                &grads,
                &mut optimizer,
                lr,
                config,
            )?;
        }

        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let preds = predict(&model, val)?;
            let acc = preds.accuracy();
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((epoch, acc));
            }
            let loss = preds.mean_loss;
            final_val = Some(preds);
            (Some(loss), Some(acc))
        };
        curves.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: hits as f64 / seen as f64,
            val_loss,
            val_acc,
        });
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        curves,
        final_val,
        best_epoch: best.map(|b| b.0),
        best_val_acc: best.map(|b| b.1),
        n_train: train.len(),
        n_augmented: augmented.len(),
    })
}
