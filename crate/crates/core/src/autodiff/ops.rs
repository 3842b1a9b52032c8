//! Primitive kernels: forward evaluation and vector-Jacobian products.
//!
//! Every kernel is a pure function of its input matrices. Non-differentiable
//! points take the left-hand branch: `leaky_relu'(0) = slope`, `elu'(0) = alpha`,
//! and `max` routes the gradient to the first maximal entry.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    MatMul,
    Transpose,
    /// Elementwise binary ops broadcast along any unit dimension.
    Add,
    Sub,
    Mul,
    /// Division by an exact zero yields zero with zero gradient.
    Div,
    Scale(f64),
    AddScalar(f64),
    ConcatRows,
    ConcatCols,
    RowSoftmax,
    /// Inputs: `[logits, mask]`. Entries with a zero mask are excluded; a
    /// fully masked row produces a zero row.
    MaskedRowSoftmax,
    LogSoftmaxRows,
    LeakyRelu(f64),
    Elu(f64),
    Tanh,
    Exp,
    RowMean,
    ColMean,
    RowMax,
    ColMax,
    RowL2Norm,
    Sum,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::ConcatRows => "concat_rows",
            Primitive::ConcatCols => "concat_cols",
            Primitive::RowSoftmax => "row_softmax",
            Primitive::MaskedRowSoftmax => "masked_row_softmax",
            Primitive::LogSoftmaxRows => "log_softmax_rows",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Elu(_) => "elu",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::RowMean => "row_mean",
            Primitive::ColMean => "col_mean",
            Primitive::RowMax => "row_max",
            Primitive::ColMax => "col_max",
            Primitive::RowL2Norm => "row_l2_norm",
            Primitive::Sum => "sum",
        }
    }

    /// Which inputs carry gradient. The mask of a masked softmax does not.
    pub(crate) fn differentiable_input(&self, index: usize) -> bool {
        !matches!((self, index), (Primitive::MaskedRowSoftmax, 1))
    }
}

fn dims(m: &Matrix) -> (usize, usize) {
    m.dim()
}

fn arity(kind: Primitive, inputs: &[&Matrix], expected: usize) -> Result<()> {
    if inputs.len() != expected {
        return Err(Error::shape(
            kind.name(),
            format!("expected {expected} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

fn broadcast_dim(kind: Primitive, a: usize, b: usize, axis: &str) -> Result<usize> {
    match (a, b) {
        _ if a == b => Ok(a),
        (1, n) | (n, 1) => Ok(n),
        _ => Err(Error::shape(
            kind.name(),
            format!("cannot broadcast {axis} {a} against {b}"),
        )),
    }
}

fn broadcast_shape(kind: Primitive, a: &Matrix, b: &Matrix) -> Result<(usize, usize)> {
    let (ar, ac) = dims(a);
    let (br, bc) = dims(b);
    Ok((
        broadcast_dim(kind, ar, br, "rows")?,
        broadcast_dim(kind, ac, bc, "cols")?,
    ))
}

fn expand(m: &Matrix, shape: (usize, usize)) -> ArrayView2<'_, f64> {
    m.broadcast(shape)
        .expect("shape checked by broadcast_shape")
}

/// Sum a broadcast gradient back down to `shape`.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn binary(kind: Primitive, a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
    let shape = broadcast_shape(kind, a, b)?;
    let mut out = Matrix::zeros(shape);
    Zip::from(&mut out)
        .and(&expand(a, shape))
        .and(&expand(b, shape))
        .for_each(|o, &x, &y| *o = f(x, y));
    Ok(out)
}

fn softmax_row(
    src: ndarray::ArrayView1<f64>,
    mask: Option<ndarray::ArrayView1<f64>>,
    dst: ndarray::ArrayViewMut1<f64>,
) {
    let active = |j: usize| mask.as_ref().is_none_or(|m| m[j] != 0.0);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in src.iter().enumerate() {
        if active(j) && v > max {
            max = v;
        }
    }
    let mut dst = dst;
    if max == f64::NEG_INFINITY {
        dst.fill(0.0);
        return;
    }
    let mut total = 0.0;
    for (j, (d, &v)) in dst.iter_mut().zip(src.iter()).enumerate() {
        *d = if active(j) { (v - max).exp() } else { 0.0 };
        total += *d;
    }
    dst.mapv_inplace(|d| d / total);
}

fn first_argmax<'a>(values: impl Iterator<Item = &'a f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub(crate) fn forward(kind: Primitive, inputs: &[&Matrix]) -> Result<Matrix> {
    use Primitive::*;
    match kind {
        MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.ncols() != b.nrows() {
                return Err(Error::shape(
                    kind.name(),
                    format!("{:?} x {:?}", a.dim(), b.dim()),
                ));
            }
            Ok(a.dot(b))
        }
        Transpose => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].t().to_owned())
        }
        Add => {
            arity(kind, inputs, 2)?;
            binary(kind, inputs[0], inputs[1], |x, y| x + y)
        }
        Sub => {
            arity(kind, inputs, 2)?;
            binary(kind, inputs[0], inputs[1], |x, y| x - y)
        }
        Mul => {
            arity(kind, inputs, 2)?;
            binary(kind, inputs[0], inputs[1], |x, y| x * y)
        }
        Div => {
            arity(kind, inputs, 2)?;
            binary(kind, inputs[0], inputs[1], |x, y| {
                if y == 0.0 {
                    0.0
                } else {
                    x / y
                }
            })
        }
        Scale(c) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0] * c)
        }
        AddScalar(c) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0] + c)
        }
        ConcatRows | ConcatCols => {
            if inputs.is_empty() {
                return Err(Error::shape(kind.name(), "no inputs"));
            }
            let axis = if kind == ConcatRows { Axis(0) } else { Axis(1) };
            let other = 1 - axis.index();
            let want = inputs[0].len_of(Axis(other));
            if let Some(bad) = inputs.iter().find(|m| m.len_of(Axis(other)) != want) {
                return Err(Error::shape(
                    kind.name(),
                    format!("{:?} does not align with {:?}", bad.dim(), inputs[0].dim()),
                ));
            }
            let views: Vec<_> = inputs.iter().map(|m| m.view()).collect();
            Ok(concatenate(axis, &views).expect("aligned"))
        }
        RowSoftmax => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let mut out = Matrix::zeros(x.dim());
            for (src, dst) in x.rows().into_iter().zip(out.rows_mut()) {
                softmax_row(src, None, dst);
            }
            Ok(out)
        }
        MaskedRowSoftmax => {
            arity(kind, inputs, 2)?;
            let (x, mask) = (inputs[0], inputs[1]);
            if x.dim() != mask.dim() {
                return Err(Error::shape(
                    kind.name(),
                    format!("logits {:?} vs mask {:?}", x.dim(), mask.dim()),
                ));
            }
            let mut out = Matrix::zeros(x.dim());
            for ((src, m), dst) in x.rows().into_iter().zip(mask.rows()).zip(out.rows_mut()) {
                softmax_row(src, Some(m), dst);
            }
            Ok(out)
        }
        LogSoftmaxRows => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.mapv_inplace(|v| v - lse);
            }
            Ok(out)
        }
        LeakyRelu(slope) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].mapv(|v| if v > 0.0 { v } else { slope * v }))
        }
        Elu(alpha) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].mapv(|v| if v > 0.0 { v } else { alpha * (v.exp() - 1.0) }))
        }
        Tanh => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].mapv(f64::tanh))
        }
        Exp => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].mapv(f64::exp))
        }
        RowMean | ColMean => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.is_empty() {
                return Err(Error::shape(kind.name(), "empty input"));
            }
            let axis = if kind == RowMean { Axis(1) } else { Axis(0) };
            let mean = x.mean_axis(axis).expect("non-empty");
            Ok(mean.insert_axis(axis))
        }
        RowMax => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.ncols() == 0 {
                return Err(Error::shape(kind.name(), "no columns"));
            }
            Ok(Matrix::from_shape_fn((x.nrows(), 1), |(i, _)| {
                first_argmax(x.row(i).iter()).1
            }))
        }
        ColMax => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.nrows() == 0 {
                return Err(Error::shape(kind.name(), "no rows"));
            }
            Ok(Matrix::from_shape_fn((1, x.ncols()), |(_, j)| {
                first_argmax(x.column(j).iter()).1
            }))
        }
        RowL2Norm => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            Ok(Matrix::from_shape_fn((x.nrows(), 1), |(i, _)| {
                x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
            }))
        }
        Sum => {
            arity(kind, inputs, 1)?;
            Ok(Matrix::from_elem((1, 1), inputs[0].sum()))
        }
    }
}

/// Gradients of the inputs given the upstream gradient of the output.
/// Entries are `None` for inputs that carry no gradient.
pub(crate) fn vjp(
    kind: Primitive,
    inputs: &[&Matrix],
    output: &Matrix,
    grad: &Matrix,
) -> Vec<Option<Matrix>> {
    use Primitive::*;
    match kind {
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![Some(grad.dot(&b.t())), Some(a.t().dot(grad))]
        }
        Transpose => vec![Some(grad.t().to_owned())],
        Add => vec![
            Some(reduce_to(grad.clone(), inputs[0].dim())),
            Some(reduce_to(grad.clone(), inputs[1].dim())),
        ],
        Sub => vec![
            Some(reduce_to(grad.clone(), inputs[0].dim())),
            Some(reduce_to(-grad, inputs[1].dim())),
        ],
        Mul => {
            let shape = grad.dim();
            let (a, b) = (expand(inputs[0], shape), expand(inputs[1], shape));
            let ga = &b * grad;
            let gb = &a * grad;
            vec![
                Some(reduce_to(ga, inputs[0].dim())),
                Some(reduce_to(gb, inputs[1].dim())),
            ]
        }
        Div => {
            let shape = grad.dim();
            let (a, b) = (expand(inputs[0], shape), expand(inputs[1], shape));
            let mut ga = Matrix::zeros(shape);
            let mut gb = Matrix::zeros(shape);
            Zip::from(&mut ga)
                .and(&mut gb)
                .and(&a)
                .and(&b)
                .and(grad)
                .for_each(|ga, gb, &x, &y, &g| {
                    if y != 0.0 {
                        *ga = g / y;
                        *gb = -g * x / (y * y);
                    }
                });
            vec![
                Some(reduce_to(ga, inputs[0].dim())),
                Some(reduce_to(gb, inputs[1].dim())),
            ]
        }
        Scale(c) => vec![Some(grad * c)],
        AddScalar(_) => vec![Some(grad.clone())],
        ConcatRows | ConcatCols => {
            let axis = if kind == ConcatRows { Axis(0) } else { Axis(1) };
            let mut offset = 0;
            inputs
                .iter()
                .map(|m| {
                    let len = m.len_of(axis);
                    let part = match axis.index() {
                        0 => grad.slice(s![offset..offset + len, ..]).to_owned(),
                        _ => grad.slice(s![.., offset..offset + len]).to_owned(),
                    };
                    offset += len;
                    Some(part)
                })
                .collect()
        }
        RowSoftmax | MaskedRowSoftmax => {
            let mut gx = Matrix::zeros(output.dim());
            for ((y, g), mut out) in output
                .rows()
                .into_iter()
                .zip(grad.rows())
                .zip(gx.rows_mut())
            {
                let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut out)
                    .and(&y)
                    .and(&g)
                    .for_each(|o, &y, &g| *o = y * (g - dot));
            }
            let mut grads = vec![Some(gx)];
            if kind == MaskedRowSoftmax {
                grads.push(None);
            }
            grads
        }
        LogSoftmaxRows => {
            let mut gx = grad.clone();
            for ((y, g), mut out) in output
                .rows()
                .into_iter()
                .zip(grad.rows())
                .zip(gx.rows_mut())
            {
                let total = g.sum();
                Zip::from(&mut out)
                    .and(&y)
                    .and(&g)
                    .for_each(|o, &y, &g| *o = g - y.exp() * total);
            }
            vec![Some(gx)]
        }
        LeakyRelu(slope) => {
            let mut gx = grad.clone();
            Zip::from(&mut gx).and(inputs[0]).for_each(|g, &x| {
                if x <= 0.0 {
                    *g *= slope;
                }
            });
            vec![Some(gx)]
        }
        Elu(alpha) => {
            let mut gx = grad.clone();
            Zip::from(&mut gx).and(inputs[0]).for_each(|g, &x| {
                if x <= 0.0 {
                    *g *= alpha * x.exp();
                }
            });
            vec![Some(gx)]
        }
        Tanh => {
            let mut gx = grad.clone();
            Zip::from(&mut gx)
                .and(output)
                .for_each(|g, &y| *g *= 1.0 - y * y);
            vec![Some(gx)]
        }
        Exp => vec![Some(grad * output)],
        RowMean => {
            let x = inputs[0];
            let n = x.ncols() as f64;
            vec![Some(expand(grad, x.dim()).mapv(|g| g / n))]
        }
        ColMean => {
            let x = inputs[0];
            let n = x.nrows() as f64;
            vec![Some(expand(grad, x.dim()).mapv(|g| g / n))]
        }
        RowMax => {
            let x = inputs[0];
            let mut gx = Matrix::zeros(x.dim());
            for i in 0..x.nrows() {
                let (j, _) = first_argmax(x.row(i).iter());
                gx[[i, j]] = grad[[i, 0]];
            }
            vec![Some(gx)]
        }
        ColMax => {
            let x = inputs[0];
            let mut gx = Matrix::zeros(x.dim());
            for j in 0..x.ncols() {
                let (i, _) = first_argmax(x.column(j).iter());
                gx[[i, j]] = grad[[0, j]];
            }
            vec![Some(gx)]
        }
        RowL2Norm => {
            let x = inputs[0];
            let mut gx = Matrix::zeros(x.dim());
            for i in 0..x.nrows() {
                let norm = output[[i, 0]];
                if norm > 0.0 {
                    let scale = grad[[i, 0]] / norm;
                    gx.row_mut(i).assign(&x.row(i).mapv(|v| v * scale));
                }
            }
            vec![Some(gx)]
        }
        Sum => vec![Some(Matrix::from_elem(inputs[0].dim(), grad[[0, 0]]))],
    }
}
