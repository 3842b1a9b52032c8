mod common;

use brainhg::augment::{
    augment_subject, census_weights, global_dynamic_fc, sliding_windows, triple_census, window_fcs,
    AugmentConfig,
};
use brainhg::autodiff::Matrix;
use brainhg::graphbuild::{assemble, hetero_block, GraphConfig};
use common::oracles::{brute_census, brute_windows, random_binary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn windows_match_explicit_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (t, w, s) in [(100, 30, 5), (61, 30, 5), (40, 7, 3), (12, 3, 1)] {
        let series = Matrix::from_shape_fn((4, t), |_| rng.random::<f64>());
        let got = sliding_windows(&series, w, s).unwrap();
        assert_eq!(got.windows, brute_windows(&series, w, s));
        assert_eq!(got.len(), (t - w) / s + 1);
    }
}

#[test]
fn census_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let fcs: Vec<Matrix> = (0..3).map(|_| random_binary(&mut rng, n, 0.8)).collect();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j {
                    [0; 3]
                } else {
                    brute_census(&fcs, i, j)
                };
                assert_eq!(triple_census(&fcs, i, j).0, want, "edge ({i}, {j})");
            }
        }
    }
}

#[test]
fn structural_block_survives_augmentation() {
    let graph_config = GraphConfig::default();
    let config = AugmentConfig::default();
    for subject in common::cohort([4, 4], 12, 6) {
        let g = assemble(&subject, &graph_config).unwrap();
        let aug = augment_subject(&subject, &g, &graph_config, &config).unwrap();
        assert_eq!(aug.a_d, g.a_d);
        assert_eq!(aug.x_f, g.x_f);
        assert_eq!(aug.x_d, g.x_d);
        assert_eq!(aug.subject_id, g.subject_id);
        assert_eq!(aug.label, g.label);
        assert_eq!(
            aug.a_fd,
            hetero_block(&aug.a_f, &aug.a_d, &graph_config).unwrap()
        );
        aug.validate().unwrap();
    }
}

#[test]
fn surviving_entries_recompose_from_census() {
    let config = AugmentConfig::default();
    for subject in common::cohort([2, 2], 12, 9) {
        let ws = sliding_windows(&subject.fmri, config.window_width, config.window_stride).unwrap();
        let fcs = window_fcs(&ws, config.window_threshold);
        let fc_g = global_dynamic_fc(&fcs, &config.alpha, config.tau_g).unwrap();
        let raw = census_weights(&fcs, &config.alpha);
        let top = raw
            .iter()
            .copied()
            .filter(|&v| v >= config.tau_g)
            .fold(0.0, f64::max);
        for ((i, j), &v) in fc_g.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            let c = brute_census(&fcs, i, j);
            let recomposed: f64 = config
                .alpha
                .iter()
                .zip(c)
                .map(|(a, k)| a * f64::from(k))
                .sum();
            assert!((v - recomposed / top).abs() < 1e-12);
        }
    }
}

#[test]
fn threshold_is_inclusive() {
    // three nodes, one triangle shared by both windows: every edge has one
    // fully closed third node
    let tri = Matrix::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
    let fcs = vec![tri.clone(), tri];
    let alpha = [0.0, 0.0, 0.4];
    let kept = global_dynamic_fc(&fcs, &alpha, 0.4).unwrap();
    assert!(kept
        .iter()
        .enumerate()
        .all(|(k, &v)| if k % 4 == 0 { v == 0.0 } else { v == 1.0 }));
    let dropped = global_dynamic_fc(&fcs, &[0.0, 0.0, 0.4 - 1e-12], 0.4).unwrap();
    assert!(dropped.iter().all(|&v| v == 0.0));
}

#[test]
fn edge_missing_in_one_window_is_not_shared() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_binary(&mut rng, 6, 1.0);
    let mut b = a.clone();
    b[[0, 1]] = 0.0;
    b[[1, 0]] = 0.0;
    let w = census_weights(&[a, b], &[1.0, 1.0, 1.0]);
    assert_eq!(w[[0, 1]], 0.0);
    assert_eq!(w[[0, 2]], 4.0);
}

#[test]
fn short_series_is_rejected() {
    let subject = common::cohort([1, 1], 6, 0).remove(0);
    let config = AugmentConfig {
        window_width: 59,
        ..AugmentConfig::default()
    };
    let g = assemble(&subject, &GraphConfig::default()).unwrap();
    assert!(augment_subject(&subject, &g, &GraphConfig::default(), &config).is_err());
}
