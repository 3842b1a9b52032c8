//! Central finite-difference verification of tape gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, Primitive, Tape, Tensor};
use crate::error::Result;

/// Inputs are kept at least this far from kinks of max and the rectifiers.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum tolerated relative deviation.
    pub tol: f64,
    /// Denominator floor for the relative deviation, so that near-zero
    /// gradient entries are judged on an absolute scale.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per leaf.
    pub max_entries_per_leaf: Option<usize>,
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_entries_per_leaf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (leaf, row, col) of the largest relative deviation.
    pub worst: Option<(usize, usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

/// Check the tape gradient of scalar function `f` at `x`.
pub fn grad_check<F>(f: F, x: &Matrix, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Tensor) -> Result<Tensor>,
{
    grad_check_many(
        |tape, leaves| f(tape, leaves[0]),
        std::slice::from_ref(x),
        GradCheckConfig::with_tol(tol),
    )
}

/// Check the tape gradient of `f` with respect to every leaf in `xs`.
pub fn grad_check_many<F>(f: F, xs: &[Matrix], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&mut tape, &leaves)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = leaves
        .iter()
        .map(|&t| {
            grads
                .take(t)
                .expect("parameter leaves always receive a gradient")
        })
        .collect();
    let evaluate = |points: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = points.iter().map(|x| tape.param(x.clone())).collect();
        let loss = f(&mut tape, &leaves)?;
        Ok(tape.value(loss)[[0, 0]])
    };
    check_against_finite_differences(evaluate, &analytic, xs, config)
}

/// Compare a supplied gradient against central differences of `value`.
pub fn check_against_finite_differences<F>(
    value: F,
    analytic: &[Matrix],
    xs: &[Matrix],
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    let mut point: Vec<Matrix> = xs.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        tol: config.tol,
        passed: true,
    };
    for (leaf, x) in xs.iter().enumerate() {
        let (rows, cols) = x.dim();
        let total = rows * cols;
        let stride = match config.max_entries_per_leaf {
            Some(limit) if limit > 0 && total > limit => total.div_ceil(limit),
            _ => 1,
        };
        for flat in (0..total).step_by(stride) {
            let (r, c) = (flat / cols, flat % cols);
            let orig = x[[r, c]];
            point[leaf][[r, c]] = orig + config.step;
            let plus = value(&point)?;
            point[leaf][[r, c]] = orig - config.step;
            let minus = value(&point)?;
            point[leaf][[r, c]] = orig;

            let numeric = (plus - minus) / (2.0 * config.step);
            let exact = analytic[leaf][[r, c]];
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(config.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((leaf, r, c));
            }
        }
    }
    report.passed = report.max_rel_error <= config.tol;
    Ok(report)
}

/// One named entry of [`primitive_suite`].
#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Matrix::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Matrix {
    Matrix::from_shape_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-2.0..2.0);
        if v.abs() >= KINK_MARGIN {
            break v;
        }
    })
}

/// Every row holds distinct values separated by more than the kink margin.
fn distinct_rows(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Matrix {
    let mut m = Matrix::zeros(shape);
    for mut row in m.rows_mut() {
        let mut order: Vec<usize> = (0..shape.1).collect();
        order.shuffle(rng);
        for (v, k) in row.iter_mut().zip(order) {
            *v = k as f64 * 0.25 + rng.random_range(0.0..0.1) - 1.0;
        }
    }
    m
}

/// Finite-difference check of every primitive at random conforming inputs.
///
/// Each case reduces the primitive output to a scalar with a random weight
/// matrix so that every output entry contributes a generic amount.
pub fn primitive_suite(seed: u64, tol: f64) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(String, Primitive, Vec<Matrix>, Vec<bool>)> = Vec::new();
    let mut push = |name: &str, kind: Primitive, inputs: Vec<Matrix>, diff: Vec<bool>| {
        cases.push((name.to_string(), kind, inputs, diff));
    };
    let r = &mut rng;
    push(
        "matmul",
        Primitive::MatMul,
        vec![uniform(r, (3, 4), -1.0, 1.0), uniform(r, (4, 2), -1.0, 1.0)],
        vec![true, true],
    );
    push(
        "transpose",
        Primitive::Transpose,
        vec![uniform(r, (3, 2), -1.0, 1.0)],
        vec![true],
    );
    for (label, rhs) in [
        ("", (3, 4)),
        ("/row-broadcast", (1, 4)),
        ("/col-broadcast", (3, 1)),
    ] {
        let lhs = uniform(r, (3, 4), -1.0, 1.0);
        let other = uniform(r, rhs, -1.0, 1.0);
        push(
            &format!("add{label}"),
            Primitive::Add,
            vec![lhs.clone(), other.clone()],
            vec![true, true],
        );
        push(
            &format!("sub{label}"),
            Primitive::Sub,
            vec![lhs.clone(), other.clone()],
            vec![true, true],
        );
        push(
            &format!("mul{label}"),
            Primitive::Mul,
            vec![lhs.clone(), other],
            vec![true, true],
        );
        let denom = uniform(r, rhs, 0.5, 2.0).mapv(|v| if r.random_bool(0.5) { v } else { -v });
        push(
            &format!("div{label}"),
            Primitive::Div,
            vec![lhs, denom],
            vec![true, true],
        );
    }
    push(
        "scale",
        Primitive::Scale(-1.7),
        vec![uniform(r, (2, 3), -1.0, 1.0)],
        vec![true],
    );
    push(
        "add_scalar",
        Primitive::AddScalar(0.3),
        vec![uniform(r, (2, 3), -1.0, 1.0)],
        vec![true],
    );
    push(
        "concat_rows",
        Primitive::ConcatRows,
        vec![
            uniform(r, (2, 3), -1.0, 1.0),
            uniform(r, (1, 3), -1.0, 1.0),
            uniform(r, (3, 3), -1.0, 1.0),
        ],
        vec![true, true, true],
    );
    push(
        "concat_cols",
        Primitive::ConcatCols,
        vec![uniform(r, (3, 2), -1.0, 1.0), uniform(r, (3, 1), -1.0, 1.0)],
        vec![true, true],
    );
    push(
        "row_softmax",
        Primitive::RowSoftmax,
        vec![uniform(r, (3, 4), -2.0, 2.0)],
        vec![true],
    );
    let mut mask = Matrix::from_shape_fn((4, 5), |_| if r.random_bool(0.6) { 1.0 } else { 0.0 });
    mask.row_mut(3).fill(0.0);
    mask[[0, 0]] = 1.0;
    push(
        "masked_row_softmax",
        Primitive::MaskedRowSoftmax,
        vec![uniform(r, (4, 5), -2.0, 2.0), mask],
        vec![true, false],
    );
    push(
        "log_softmax_rows",
        Primitive::LogSoftmaxRows,
        vec![uniform(r, (2, 4), -3.0, 3.0)],
        vec![true],
    );
    push(
        "leaky_relu",
        Primitive::LeakyRelu(0.2),
        vec![away_from_zero(r, (3, 4))],
        vec![true],
    );
    push(
        "elu",
        Primitive::Elu(1.0),
        vec![away_from_zero(r, (3, 4))],
        vec![true],
    );
    push(
        "tanh",
        Primitive::Tanh,
        vec![uniform(r, (3, 3), -2.0, 2.0)],
        vec![true],
    );
    push(
        "exp",
        Primitive::Exp,
        vec![uniform(r, (3, 3), -2.0, 2.0)],
        vec![true],
    );
    push(
        "row_mean",
        Primitive::RowMean,
        vec![uniform(r, (3, 4), -1.0, 1.0)],
        vec![true],
    );
    push(
        "col_mean",
        Primitive::ColMean,
        vec![uniform(r, (3, 4), -1.0, 1.0)],
        vec![true],
    );
    push(
        "row_max",
        Primitive::RowMax,
        vec![distinct_rows(r, (3, 5))],
        vec![true],
    );
    push(
        "col_max",
        Primitive::ColMax,
        vec![distinct_rows(r, (4, 3)).t().to_owned()],
        vec![true],
    );
    push(
        "row_l2_norm",
        Primitive::RowL2Norm,
        vec![away_from_zero(r, (3, 4))],
        vec![true],
    );
    push(
        "sum",
        Primitive::Sum,
        vec![uniform(r, (2, 3), -1.0, 1.0)],
        vec![true],
    );

    let mut out = Vec::with_capacity(cases.len());
    for (name, kind, inputs, diff) in cases {
        // output shape fixes the random projection
        let probe = {
            let mut tape = Tape::new();
            let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
            tape.apply(kind, &leaves)?.shape()
        };
        let weights = uniform(&mut rng, probe, -1.0, 1.0);
        let diff_inputs: Vec<Matrix> = inputs
            .iter()
            .zip(&diff)
            .filter(|(_, d)| **d)
            .map(|(m, _)| m.clone())
            .collect();
        let report = grad_check_many(
            |tape, leaves| {
                let mut it = leaves.iter();
                let args: Vec<Tensor> = inputs
                    .iter()
                    .zip(&diff)
                    .map(|(m, d)| {
                        if *d {
                            *it.next().expect("leaf")
                        } else {
                            tape.constant(m.clone())
                        }
                    })
                    .collect();
                let y = tape.apply(kind, &args)?;
                let w = tape.constant(weights.clone());
                let weighted = tape.mul(y, w)?;
                tape.sum(weighted)
            },
            &diff_inputs,
            GradCheckConfig::with_tol(tol),
        )?;
        out.push(PrimitiveCheck { name, report });
    }
    Ok(out)
}
