mod common;

use brainhg::autodiff::{Matrix, Tape};
use brainhg::graphbuild::{assemble, GraphConfig, HeteroGraph};
use brainhg::harness::small_graph;
use brainhg::model::{
    hg_pool, pooled_size, GraphBlocks, MetaPath, Mode, Model, ModelConfig, ModelDims,
};
use common::oracles::{padded_assignment, padded_pool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n_f: usize, n_d: usize) -> HeteroGraph {
    let mut sym = |n: usize, density: f64| {
        let mut m = Matrix::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < density {
                    let w = rng.random_range(0.1..1.0);
                    m[[i, j]] = w;
                    m[[j, i]] = w;
                }
            }
        }
        m
    };
    let a_f = sym(n_f, 0.4);
    let a_d = sym(n_d, 0.4);
    let a_fd = Matrix::from_shape_fn((n_f, n_d), |_| {
        if rng.random::<f64>() < 0.3 {
            rng.random()
        } else {
            0.0
        }
    });
    HeteroGraph {
        subject_id: "r".into(),
        label: 0,
        x_f: Matrix::from_shape_fn((n_f, 5), |_| rng.random_range(-1.0..1.0)),
        x_d: Matrix::from_shape_fn((n_d, 3), |_| rng.random_range(-1.0..1.0)),
        a_f,
        a_d,
        a_fd,
    }
}

fn mask_of(g: &HeteroGraph, path: MetaPath) -> Matrix {
    GraphBlocks {
        a_f: g.a_f.clone(),
        a_d: g.a_d.clone(),
        a_fd: g.a_fd.clone(),
    }
    .mask(path)
}

#[test]
fn attention_rows_and_semantic_weights_are_normalised() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let (nf, nd) = (rng.random_range(3..9), rng.random_range(3..9));
        let g = random_graph(&mut rng, nf, nd);
        let model = Model::new(common::tiny_model(), ModelDims::of(&g), trial).unwrap();
        let (logits, trace) = model.infer(&g).unwrap();
        assert!(logits.iter().all(|v| v.is_finite()));
        let first = &trace.stages[0];
        for (path, _, alpha) in &first.attention.alpha {
            let mask = mask_of(&g, *path);
            for (row, m) in alpha.rows().into_iter().zip(mask.rows()) {
                let sum: f64 = row.sum();
                if m.iter().any(|&v| v != 0.0) {
                    assert!((sum - 1.0).abs() < 1e-9, "{path:?} row sums to {sum}");
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
        for stage in &trace.stages {
            assert_eq!(stage.attention.beta.len(), 2);
            for (_, b) in &stage.attention.beta {
                assert!((b[0] + b[1] - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn isolated_nodes_get_zero_messages() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = random_graph(&mut rng, 6, 5);
    g.a_fd.row_mut(0).fill(0.0);
    g.a_fd.column_mut(2).fill(0.0);
    let model = Model::new(common::tiny_model(), ModelDims::of(&g), 3).unwrap();
    let (logits, trace) = model.infer(&g).unwrap();
    assert!(logits.iter().all(|v| v.is_finite()));
    for (path, _, alpha) in &trace.stages[0].attention.alpha {
        assert!(alpha.iter().all(|v| v.is_finite()));
        match path {
            MetaPath::Df => assert!(alpha.row(0).iter().all(|&v| v == 0.0)),
            MetaPath::Fd => assert!(alpha.row(2).iter().all(|&v| v == 0.0)),
            _ => {}
        }
    }

    g.a_fd.fill(0.0);
    g.a_f.fill(0.0);
    let (logits, _) = model.infer(&g).unwrap();
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn padded_products_match_block_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (nf, nd) = (rng.random_range(2..8), rng.random_range(2..8));
        let (kf, kd) = (rng.random_range(1..=nf), rng.random_range(1..=nd));
        let g = random_graph(&mut rng, nf, nd);
        let d_f = Matrix::from_shape_fn((nf, kf), |_| rng.random::<f64>());
        let d_d = Matrix::from_shape_fn((nd, kd), |_| rng.random::<f64>());
        let blocks = GraphBlocks {
            a_f: g.a_f.clone(),
            a_d: g.a_d.clone(),
            a_fd: g.a_fd.clone(),
        };

        let mut tape = Tape::new();
        let (xf, xd) = (tape.param(g.x_f.clone()), tape.param(g.x_d.clone()));
        let (df, dd) = (tape.param(d_f.clone()), tape.param(d_d.clone()));
        let (pf, pd, pooled) = hg_pool(&mut tape, xf, xd, &blocks, df, dd).unwrap();

        let p = padded_assignment(&d_f, &d_d);
        assert!(p.slice(ndarray::s![..nf, kf..]).iter().all(|&v| v == 0.0));
        assert!(p.slice(ndarray::s![nf.., ..kf]).iter().all(|&v| v == 0.0));
        let want = padded_pool(&p, &g.block_adjacency());
        let got = brainhg::graphbuild::block_adjacency(&pooled.a_f, &pooled.a_fd, &pooled.a_d);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let want_f = d_f.t().dot(&g.x_f);
        for (a, b) in tape.value(pf).iter().zip(want_f.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(tape.value(pd).dim(), (kd, g.x_d.ncols()));
    }
}

#[test]
fn pooled_features_stay_within_type() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(&mut rng, 5, 4);
    let d_f = Matrix::from_shape_fn((5, 3), |_| rng.random::<f64>());
    let d_d = Matrix::from_shape_fn((4, 2), |_| rng.random::<f64>());
    let blocks = GraphBlocks {
        a_f: g.a_f.clone(),
        a_d: g.a_d.clone(),
        a_fd: g.a_fd.clone(),
    };
    let run = |x_d: Matrix| {
        let mut tape = Tape::new();
        let (xf, xd) = (tape.param(g.x_f.clone()), tape.param(x_d));
        let (df, dd) = (tape.constant(d_f.clone()), tape.constant(d_d.clone()));
        let (pf, _, _) = hg_pool(&mut tape, xf, xd, &blocks, df, dd).unwrap();
        tape.value(pf).clone()
    };
    assert_eq!(run(g.x_d.clone()), run(g.x_d.mapv(|v| v * 7.0 - 3.0)));
}

#[test]
fn identity_assignment_leaves_graph_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_graph(&mut rng, 6, 4);
    let blocks = GraphBlocks {
        a_f: g.a_f.clone(),
        a_d: g.a_d.clone(),
        a_fd: g.a_fd.clone(),
    };
    let mut tape = Tape::new();
    let (xf, xd) = (tape.param(g.x_f.clone()), tape.param(g.x_d.clone()));
    let (df, dd) = (tape.constant(Matrix::eye(6)), tape.constant(Matrix::eye(4)));
    let (pf, pd, pooled) = hg_pool(&mut tape, xf, xd, &blocks, df, dd).unwrap();
    assert_eq!(tape.value(pf), &g.x_f);
    assert_eq!(tape.value(pd), &g.x_d);
    assert_eq!(pooled, blocks);
}

#[test]
fn ratio_one_keeps_node_counts() {
    let config = ModelConfig {
        pool_ratio: 1.0,
        ..common::tiny_model()
    };
    let dims = ModelDims {
        n_f: 7,
        n_d: 5,
        in_f: 4,
        in_d: 2,
    };
    let model = Model::new(config, dims, 0).unwrap();
    assert!(model.node_counts().iter().all(|&c| c == (7, 5)));
}

#[test]
fn node_ladder_at_default_ratio() {
    let sizes: Vec<usize> =
        std::iter::successors(Some(90), |&n| Some(pooled_size(n, 0.8).unwrap()))
            .take(4)
            .collect();
    assert_eq!(sizes, vec![90, 72, 58, 47]);
    let dims = ModelDims {
        n_f: 90,
        n_d: 90,
        in_f: 2,
        in_d: 2,
    };
    let model = Model::new(common::tiny_model(), dims, 0).unwrap();
    let totals: Vec<usize> = model.node_counts().iter().map(|(f, d)| f + d).collect();
    assert_eq!(totals, vec![180, 144, 116, 94]);
}

#[test]
fn assignments_are_column_stochastic() {
    let g = small_graph(8, 4).unwrap();
    let model = Model::new(common::tiny_model(), ModelDims::of(&g), 4).unwrap();
    let (_, trace) = model.infer(&g).unwrap();
    for stage in &trace.stages {
        for d in [&stage.assign_f, &stage.assign_d] {
            for col in d.columns() {
                assert!((col.sum() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(stage.assign_f.dim(), (stage.nodes_in.0, stage.nodes_out.0));
    }
}

#[test]
fn zero_dropout_matches_evaluation() {
    let subject = common::cohort([1, 1], 8, 3).remove(1);
    let g = assemble(&subject, &GraphConfig::default()).unwrap();
    let model = Model::new(common::tiny_model(), ModelDims::of(&g), 1).unwrap();
    let eval = model.logits(&g).unwrap();
    let run = |mode: Mode| {
        let mut tape = Tape::new();
        let p = model.params().register(&mut tape);
        let out = model.forward(&mut tape, &p, &g, mode, false).unwrap();
        let l = tape.value(out.logits);
        [l[[0, 0]], l[[0, 1]]]
    };
    assert_eq!(
        run(Mode::Train {
            dropout: 0.0,
            seed: 9
        }),
        eval
    );
    assert_eq!(run(Mode::Eval), eval);
    let a = run(Mode::Train {
        dropout: 0.5,
        seed: 1,
    });
    assert_eq!(
        a,
        run(Mode::Train {
            dropout: 0.5,
            seed: 1
        })
    );
    assert_ne!(
        a,
        run(Mode::Train {
            dropout: 0.5,
            seed: 2
        })
    );
}

#[test]
fn wrong_graph_size_is_rejected() {
    let g = small_graph(6, 0).unwrap();
    let model = Model::new(common::tiny_model(), ModelDims::of(&g), 0).unwrap();
    let other = small_graph(7, 0).unwrap();
    assert!(model.logits(&other).is_err());
}
