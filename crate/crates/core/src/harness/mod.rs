//! Cross-validation driver, metrics, synthetic cohorts and pooling export.

mod baseline;
mod explain;
mod metrics;
mod synthetic;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::{logistic_baseline, mean_inter_community_fc, LogisticFit};
pub use explain::{
    adjusted_rand_index, dominant_clusters, export_pool_assignments, AssignmentRecord,
};
pub use metrics::{
    auc, confusion, metrics, roc_curve, trapezoid_area, Confusion, Metrics, THRESHOLD,
};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

use crate::augment::{augment_subject, AugmentConfig};
use crate::autodiff::{primitive_suite, GradCheckConfig, GradCheckReport, PrimitiveCheck};
use crate::error::{Error, Result};
use crate::graphbuild::{assemble, GraphConfig, HeteroGraph, SubjectRaw};
use crate::model::{Model, ModelConfig, ModelDims};
use crate::train::{
    derive_seed, model_grad_check, train_fold, EpochRecord, OptimizerState, TrainConfig,
};

/// Every setting of a cross-validated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub folds: usize,
    /// Add dynamic-FC copies of minority-class training subjects.
    pub augment_minority: bool,
    /// Record first-stage pooling assignments of validation subjects.
    pub export_assignments: bool,
    pub graph: GraphConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 5,
            augment_minority: true,
            export_assignments: true,
            graph: GraphConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Small model and short schedule sized for the default synthetic
    /// cohort on a single CPU core.
    pub fn synthetic_preset() -> Self {
        Self {
            model: ModelConfig {
                hidden: 8,
                heads: 2,
                semantic_dim: 8,
                mlp_hidden: 16,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                lr: 5e-3,
                epochs: 50,
                batch_size: 16,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

/// Subject indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified folds: each class is shuffled and dealt round-robin, with the
/// dealing position carried from one class to the next so fold sizes stay
/// within one of each other.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k = {k}, need at least 2 folds"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fold_of = vec![0usize; labels.len()];
    let mut offset = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::InsufficientClass {
                class,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            class as u64,
            7,
        )));
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = (pos + offset) % k;
        }
        offset += members.len();
    }
    Ok((0..k)
        .map(|f| FoldSplit {
            train: (0..labels.len()).filter(|&i| fold_of[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    /// Number of folds where the metric was defined.
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std, n })
    }
}

/// What a fold runner hands back for one validation split.
#[derive(Debug, Clone, Default)]
pub struct FoldOutcome {
    /// Positive-class scores aligned with the split's validation indices.
    pub scores: Vec<f64>,
    pub n_augmented: usize,
    pub curves: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub assignments: Vec<AssignmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub val_subjects: Vec<String>,
    pub val_labels: Vec<usize>,
    pub scores: Vec<f64>,
    pub n_train: usize,
    pub n_augmented: usize,
    pub metrics: Metrics,
    pub roc: Option<Vec<(f64, f64)>>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub curves: Vec<EpochRecord>,
    pub assignments: Vec<AssignmentRecord>,
}

/// Cross-validation results. Metric summaries are over folds, using the
/// model after the last epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub acc: Option<Summary>,
    pub sen: Option<Summary>,
    pub spe: Option<Summary>,
    pub auc: Option<Summary>,
    /// Confusion counts summed over folds.
    pub confusion: Confusion,
}

impl FoldReport {
    fn summarise(folds: Vec<FoldResult>) -> Self {
        let collect = |f: &dyn Fn(&Metrics) -> Option<f64>| -> Option<Summary> {
            Summary::of(
                &folds
                    .iter()
                    .filter_map(|r| f(&r.metrics))
                    .collect::<Vec<_>>(),
            )
        };
        let acc = collect(&|m| Some(m.acc));
        let sen = collect(&|m| m.sen);
        let spe = collect(&|m| m.spe);
        let auc = collect(&|m| m.auc);
        let confusion = folds
            .iter()
            .fold(Confusion::default(), |c, r| c.merge(&r.metrics.confusion));
        FoldReport {
            k: folds.len(),
            folds,
            acc,
            sen,
            spe,
            auc,
            confusion,
        }
    }
}

fn check_splits(ids: &[String], splits: &[FoldSplit]) -> Result<()> {
    for split in splits {
        if let Some(&i) = split
            .train
            .iter()
            .chain(&split.val)
            .find(|&&i| i >= ids.len())
        {
            return Err(Error::InvalidArgument(format!(
                "fold index {i} out of range"
            )));
        }
        if split.val.is_empty() || split.train.is_empty() {
            return Err(Error::InvalidArgument(
                "every fold needs training and validation subjects".into(),
            ));
        }
        let train: HashSet<&str> = split.train.iter().map(|&i| ids[i].as_str()).collect();
        if let Some(&i) = split.val.iter().find(|&&i| train.contains(ids[i].as_str())) {
            return Err(Error::Leakage {
                subject: ids[i].clone(),
            });
        }
    }
    Ok(())
}

/// Run `run` on every split in parallel and aggregate the validation
/// scores. Besides the report, returns whatever extra value each fold
/// produces, in fold order.
pub fn cross_validate<T, F>(
    ids: &[String],
    labels: &[usize],
    splits: &[FoldSplit],
    run: F,
) -> Result<(FoldReport, Vec<T>)>
where
    T: Send,
    F: Fn(usize, &FoldSplit) -> Result<(FoldOutcome, T)> + Sync,
{
    if ids.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "ids and labels differ in length".into(),
        ));
    }
    check_splits(ids, splits)?;
    let outcomes: Vec<(FoldOutcome, T)> = splits
        .par_iter()
        .enumerate()
        .map(|(f, split)| run(f, split))
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(splits.len());
    let mut extras = Vec::with_capacity(splits.len());
    for (fold, ((outcome, extra), split)) in outcomes.into_iter().zip(splits).enumerate() {
        if outcome.scores.len() != split.val.len() {
            return Err(Error::InvalidArgument(format!(
                "fold {fold} returned {} scores for {} subjects",
                outcome.scores.len(),
                split.val.len()
            )));
        }
        let val_labels: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
        let m = metrics(&outcome.scores, &val_labels)?;
        results.push(FoldResult {
            fold,
            val_subjects: split.val.iter().map(|&i| ids[i].clone()).collect(),
            roc: roc_curve(&outcome.scores, &val_labels)?,
            val_labels,
            scores: outcome.scores,
            n_train: split.train.len(),
            n_augmented: outcome.n_augmented,
            metrics: m,
            best_epoch: outcome.best_epoch,
            best_val_acc: outcome.best_val_acc,
            curves: outcome.curves,
            assignments: outcome.assignments,
        });
        extras.push(extra);
    }
    Ok((FoldReport::summarise(results), extras))
}

/// Stratified k-fold CV of an arbitrary scorer over prebuilt graphs.
/// `score` receives training and validation graphs and returns one
/// positive-class score per validation graph.
pub fn kfold_cv_with<F>(graphs: &[HeteroGraph], k: usize, seed: u64, score: F) -> Result<FoldReport>
where
    F: Fn(&[&HeteroGraph], &[&HeteroGraph]) -> Result<Vec<f64>> + Sync,
{
    let ids: Vec<String> = graphs.iter().map(|g| g.subject_id.clone()).collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let splits = stratified_folds(&labels, k, seed)?;
    let (report, _) = cross_validate(&ids, &labels, &splits, |_, split| {
        let train: Vec<&HeteroGraph> = split.train.iter().map(|&i| &graphs[i]).collect();
        let val: Vec<&HeteroGraph> = split.val.iter().map(|&i| &graphs[i]).collect();
        let scores = score(&train, &val)?;
        Ok((
            FoldOutcome {
                scores,
                ..FoldOutcome::default()
            },
            (),
        ))
    })?;
    Ok(report)
}

/// Training subjects of the smaller class in `train`, or none when both
/// classes are equally represented.
pub fn minority_indices(labels: &[usize], train: &[usize]) -> Vec<usize> {
    let pos = train.iter().filter(|&&i| labels[i] == 1).count();
    let neg = train.len() - pos;
    let minority = match pos.cmp(&neg) {
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Greater => 0,
        std::cmp::Ordering::Equal => return Vec::new(),
    };
    train
        .iter()
        .copied()
        .filter(|&i| labels[i] == minority)
        .collect()
}

/// A fold's trained model and optimizer state.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub model: Model,
    pub optimizer: OptimizerState,
}

/// Cross-validate the model on prebuilt graphs. `augmented` holds
/// dynamic-FC copies keyed by subject id; a seeded share
/// `config.augment.augmentation_ratio` of each fold's minority-class
/// training subjects receive their copy.
pub fn run_cv(
    graphs: &[HeteroGraph],
    augmented: &[HeteroGraph],
    splits: &[FoldSplit],
    config: &PipelineConfig,
) -> Result<(FoldReport, Vec<TrainedFold>)> {
    config.validate()?;
    let ids: Vec<String> = graphs.iter().map(|g| g.subject_id.clone()).collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let aug_by_id: HashMap<&str, &HeteroGraph> = augmented
        .iter()
        .map(|g| (g.subject_id.as_str(), g))
        .collect();

    cross_validate(&ids, &labels, splits, |fold, split| {
        let seed = derive_seed(config.seed, fold as u64, 1);
        let train: Vec<HeteroGraph> = split.train.iter().map(|&i| graphs[i].clone()).collect();
        let val: Vec<HeteroGraph> = split.val.iter().map(|&i| graphs[i].clone()).collect();
        let mut copies = Vec::new();
        if config.augment_minority && config.augment.augmentation_ratio > 0.0 {
            let mut pick = minority_indices(&labels, &split.train);
            pick.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 2)));
            let take = (config.augment.augmentation_ratio * pick.len() as f64).round() as usize;
            pick.truncate(take);
            pick.sort_unstable();
            for i in pick {
                let copy = aug_by_id.get(ids[i].as_str()).ok_or_else(|| {
                    Error::InvalidArgument(format!("no augmented graph for subject {}", ids[i]))
                })?;
                copies.push((*copy).clone());
            }
        }
        let outcome = train_fold(&train, &copies, &val, &config.model, &config.train, seed)?;
        let preds = outcome
            .final_val
            .as_ref()
            .expect("validation split is nonempty");
        let assignments = if config.export_assignments {
            export_pool_assignments(&outcome.model, &val)?
        } else {
            Vec::new()
        };
        Ok((
            FoldOutcome {
                scores: preds.scores.clone(),
                n_augmented: outcome.n_augmented,
                curves: outcome.curves,
                best_epoch: outcome.best_epoch,
                best_val_acc: outcome.best_val_acc,
                assignments,
            },
            TrainedFold {
                model: outcome.model,
                optimizer: outcome.optimizer,
            },
        ))
    })
}

/// Graphs for every subject, in order.
pub fn build_graphs(dataset: &[SubjectRaw], config: &GraphConfig) -> Result<Vec<HeteroGraph>> {
    dataset.par_iter().map(|s| assemble(s, config)).collect()
}

/// Dynamic-FC copies for every subject, in order.
pub fn build_augmented(
    dataset: &[SubjectRaw],
    graphs: &[HeteroGraph],
    graph_config: &GraphConfig,
    config: &AugmentConfig,
) -> Result<Vec<HeteroGraph>> {
    dataset
        .par_iter()
        .zip(graphs)
        .map(|(s, g)| augment_subject(s, g, graph_config, config))
        .collect()
}

/// Full pipeline from raw subjects: graph construction, optional
/// augmentation, stratified folds and per-fold training.
pub fn kfold_cv(dataset: &[SubjectRaw], config: &PipelineConfig) -> Result<FoldReport> {
    config.validate()?;
    let graphs = build_graphs(dataset, &config.graph)?;
    let augmented = if config.augment_minority {
        build_augmented(dataset, &graphs, &config.graph, &config.augment)?
    } else {
        Vec::new()
    };
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let splits = stratified_folds(&labels, config.folds, config.seed)?;
    Ok(run_cv(&graphs, &augmented, &splits, config)?.0)
}

/// Finite-difference verification of every primitive and of the full
/// model on a small two-modality graph.
#[derive(Debug, Clone)]
pub struct GradientSuite {
    pub primitives: Vec<PrimitiveCheck>,
    pub model: GradCheckReport,
    /// Node counts of the model check graph.
    pub graph_nodes: (usize, usize),
}

impl GradientSuite {
    pub fn passed(&self) -> bool {
        self.model.passed && self.primitives.iter().all(|p| p.report.passed)
    }
}

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

/// Small synthetic subject graph with `n_rois` nodes per modality.
pub fn small_graph(n_rois: usize, seed: u64) -> Result<HeteroGraph> {
    let spec = SyntheticSpec {
        n_per_class: [1, 1],
        n_rois,
        series_len: 24,
        dti_features: 3,
        seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    assemble(&data.subjects[1], &GraphConfig::default())
}

pub fn gradient_suite(seed: u64) -> Result<GradientSuite> {
    let primitives = primitive_suite(seed, PRIMITIVE_TOL)?;
    let hg = small_graph(6, seed)?;
    let config = ModelConfig {
        hidden: 3,
        heads: 2,
        semantic_dim: 4,
        mlp_hidden: 5,
        ..ModelConfig::default()
    };
    let model = Model::new(config, ModelDims::of(&hg), seed)?;
    let model_report = model_grad_check(&model, &hg, GradCheckConfig::with_tol(MODEL_TOL))?;
    Ok(GradientSuite {
        primitives,
        model: model_report,
        graph_nodes: (hg.n_f(), hg.n_d()),
    })
}
