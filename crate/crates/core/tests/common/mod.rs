#![allow(dead_code)]

pub mod oracles;

use brainhg::graphbuild::{HeteroGraph, SubjectRaw};
use brainhg::harness::{generate_synthetic, PipelineConfig, SyntheticSpec};
use brainhg::model::ModelConfig;

/// Small cohort used across the integration tests.
pub fn cohort(n_per_class: [usize; 2], n_rois: usize, seed: u64) -> Vec<SubjectRaw> {
    let spec = SyntheticSpec {
        n_per_class,
        n_rois,
        series_len: 60,
        dti_features: 3,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).expect("valid spec").subjects
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        hidden: 3,
        heads: 2,
        semantic_dim: 4,
        mlp_hidden: 5,
        ..ModelConfig::default()
    }
}

/// Pipeline settings that train in well under a second per fold.
pub fn quick_pipeline(seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig::synthetic_preset();
    config.seed = seed;
    config.folds = 3;
    config.model = tiny_model();
    config.model.stages = 2;
    config.train.epochs = 3;
    config.train.batch_size = 4;
    config
}

pub fn ids(graphs: &[HeteroGraph]) -> Vec<String> {
    graphs.iter().map(|g| g.subject_id.clone()).collect()
}
