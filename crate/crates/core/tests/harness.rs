mod common;

use brainhg::graphbuild::{assemble, GraphConfig, HeteroGraph};
use brainhg::harness::{
    adjusted_rand_index, auc, build_augmented, build_graphs, confusion, dominant_clusters,
    generate_synthetic, kfold_cv_with, logistic_baseline, mean_inter_community_fc, metrics, run_cv,
    stratified_folds, FoldSplit, SyntheticSpec,
};
use brainhg::Error;
use common::oracles::mann_whitney_auc;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn folds_partition_every_subject_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..30 {
        let k = rng.random_range(2..7);
        let n = rng.random_range(3 * k..60);
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
        let splits = stratified_folds(&labels, k, rng.random()).unwrap();
        assert_eq!(splits.len(), k);
        let mut count = vec![0; n];
        for s in &splits {
            for &i in &s.val {
                count[i] += 1;
                assert!(!s.train.contains(&i));
            }
            assert_eq!(s.train.len() + s.val.len(), n);
        }
        assert!(count.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = splits.iter().map(|s| s.val.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..2 {
            let per: Vec<usize> = splits
                .iter()
                .map(|s| s.val.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }
}

#[test]
fn auc_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(2..30);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        // coarse scores so that ties are common
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..6u8)) / 5.0)
            .collect();
        let got = auc(&scores, &labels).unwrap();
        let want = mann_whitney_auc(&scores, &labels);
        match (got, want) {
            (Some(g), Some(w)) => assert!((g - w).abs() < 1e-12, "{g} vs {w}"),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn confusion_matches_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(1..25);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c = confusion(&scores, &labels).unwrap();
        let tp = (0..n)
            .filter(|&i| labels[i] == 1 && scores[i] >= 0.5)
            .count();
        let tn = (0..n)
            .filter(|&i| labels[i] == 0 && scores[i] < 0.5)
            .count();
        assert_eq!((c.tp, c.tn, c.fp + c.fn_), (tp, tn, n - tp - tn));
        let m = metrics(&scores, &labels).unwrap();
        assert!((m.acc - (tp + tn) as f64 / n as f64).abs() < 1e-15);
        let pos = labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(m.sen.is_some(), pos > 0);
        assert_eq!(m.spe.is_some(), pos < n);
    }
}

#[test]
fn boundary_score_counts_as_positive() {
    let c = confusion(&[0.5, 0.4999999], &[1, 0]).unwrap();
    assert_eq!((c.tp, c.tn), (1, 1));
    assert!(metrics(&[f64::NAN], &[1]).is_err());
    assert!(metrics(&[0.5], &[2]).is_err());
}

fn cohort_graphs(n: [usize; 2], seed: u64) -> Vec<HeteroGraph> {
    common::cohort(n, 8, seed)
        .iter()
        .map(|s| assemble(s, &GraphConfig::default()).unwrap())
        .collect()
}

#[test]
fn constant_scorer_has_chance_auc() {
    let graphs = cohort_graphs([6, 6], 3);
    let report = kfold_cv_with(&graphs, 3, 0, |_, val| Ok(vec![0.7; val.len()])).unwrap();
    let auc = report.auc.unwrap();
    assert_eq!(auc.mean, 0.5);
    assert_eq!(auc.n, 3);
    assert_eq!(report.sen.unwrap().mean, 1.0);
    assert_eq!(report.spe.unwrap().mean, 0.0);
    assert_eq!(report.confusion.total(), 12);
}

#[test]
fn label_oracle_scorer_is_perfect() {
    let graphs = cohort_graphs([5, 5], 4);
    let report = kfold_cv_with(&graphs, 5, 1, |_, val| {
        Ok(val.iter().map(|g| g.label as f64).collect())
    })
    .unwrap();
    assert_eq!(report.acc.unwrap().mean, 1.0);
    assert_eq!(report.auc.unwrap().mean, 1.0);
    assert_eq!(report.acc.unwrap().std, 0.0);
}

#[test]
fn synthetic_labels_are_separable_by_baseline() {
    let spec = SyntheticSpec {
        n_per_class: [30, 30],
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let features: Vec<f64> = data
        .subjects
        .iter()
        .map(|s| mean_inter_community_fc(s, &data.communities).unwrap())
        .collect();
    let labels: Vec<usize> = data.subjects.iter().map(|s| s.label).collect();
    let fit = logistic_baseline(&features, &labels).unwrap();
    let scores: Vec<f64> = features.iter().map(|&x| fit.probability(x)).collect();
    let m = metrics(&scores, &labels).unwrap();
    assert!(m.auc.unwrap() > 0.9, "baseline AUC {:?}", m.auc);

    let null = generate_synthetic(&SyntheticSpec {
        contrast: 0.0,
        ..spec
    })
    .unwrap();
    let features: Vec<f64> = null
        .subjects
        .iter()
        .map(|s| mean_inter_community_fc(s, &null.communities).unwrap())
        .collect();
    let fit = logistic_baseline(&features, &labels).unwrap();
    let scores: Vec<f64> = features.iter().map(|&x| fit.probability(x)).collect();
    assert!(metrics(&scores, &labels).unwrap().auc.unwrap() < 0.8);
}

#[test]
fn generator_is_seeded() {
    let spec = SyntheticSpec {
        n_per_class: [2, 2],
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a.subjects, generate_synthetic(&spec).unwrap().subjects);
    let b = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.subjects, b.subjects);
    assert_eq!(a.subjects.iter().filter(|s| s.label == 1).count(), 2);
}

#[test]
fn rand_index_recovers_planted_partition() {
    let truth: Vec<usize> = (0..40).map(|i| i / 10).collect();
    assert_eq!(adjusted_rand_index(&truth, &truth).unwrap(), 1.0);
    let relabelled: Vec<usize> = truth.iter().map(|&c| 3 - c).collect();
    assert!((adjusted_rand_index(&truth, &relabelled).unwrap() - 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut noisy = truth.clone();
    for v in noisy.iter_mut().take(8) {
        *v = rng.random_range(0..4);
    }
    let planted = adjusted_rand_index(&truth, &noisy).unwrap();
    let mut perms = Vec::new();
    for _ in 0..50 {
        let mut p = truth.clone();
        p.shuffle(&mut rng);
        perms.push(adjusted_rand_index(&truth, &p).unwrap());
    }
    let perm_mean = perms.iter().sum::<f64>() / perms.len() as f64;
    assert!(perm_mean.abs() < 0.1);
    assert!(planted > perms.iter().copied().fold(f64::MIN, f64::max));
    assert_eq!(
        dominant_clusters(&ndarray::array![[0.2, 0.8], [0.5, 0.5]]),
        vec![1, 0]
    );
}

#[test]
fn pipeline_reports_augmentation_per_fold() {
    let subjects = common::cohort([8, 4], 8, 5);
    let config = common::quick_pipeline(2);
    let graphs = build_graphs(&subjects, &config.graph).unwrap();
    let aug = build_augmented(&subjects, &graphs, &config.graph, &config.augment).unwrap();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let splits = stratified_folds(&labels, config.folds, config.seed).unwrap();
    let (report, trained) = run_cv(&graphs, &aug, &splits, &config).unwrap();
    assert_eq!(trained.len(), 3);
    for (fold, split) in report.folds.iter().zip(&splits) {
        let minority = split.train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(fold.n_augmented, minority);
        assert_eq!(fold.n_train, split.train.len());
        assert_eq!(fold.assignments.len(), split.val.len());
        assert_eq!(fold.curves.len(), config.train.epochs);
    }

    let mut half = config.clone();
    half.augment.augmentation_ratio = 0.5;
    let (report, _) = run_cv(&graphs, &aug, &splits, &half).unwrap();
    for (fold, split) in report.folds.iter().zip(&splits) {
        let minority = split.train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(fold.n_augmented, (minority as f64 * 0.5).round() as usize);
    }

    let mut off = config;
    off.augment_minority = false;
    let (report, _) = run_cv(&graphs, &aug, &splits, &off).unwrap();
    assert!(report.folds.iter().all(|f| f.n_augmented == 0));
}

#[test]
fn overlapping_folds_are_rejected() {
    let subjects = common::cohort([3, 3], 6, 0);
    let config = common::quick_pipeline(0);
    let graphs = build_graphs(&subjects, &config.graph).unwrap();
    let splits = vec![FoldSplit {
        train: vec![0, 1, 2, 3],
        val: vec![3, 4, 5],
    }];
    assert!(matches!(
        run_cv(&graphs, &[], &splits, &config),
        Err(Error::Leakage { .. })
    ));
}
