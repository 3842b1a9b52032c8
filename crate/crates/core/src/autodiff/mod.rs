//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive application in evaluation order. The
//! values live on the tape; a [`Tensor`] is a small copyable handle to one
//! recorded node. [`Tape::backward`] walks the records in reverse and
//! accumulates vector-Jacobian products into every node that needs a gradient.
//!
//! ```
//! use brainhg::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[1.0, 2.0]]);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &array![[2.0, 4.0]]);
//! ```

mod gradcheck;
mod ops;

pub use gradcheck::{
    check_against_finite_differences, grad_check, grad_check_many, primitive_suite,
    GradCheckConfig, GradCheckReport, PrimitiveCheck, KINK_MARGIN,
};
pub use ops::{Matrix, Primitive};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: NodeId,
    rows: usize,
    cols: usize,
    requires_grad: bool,
}

impl Tensor {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// True for parameter leaves and for anything computed from one.
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug, Clone)]
enum Record {
    Leaf {
        requires_grad: bool,
    },
    Apply {
        kind: Primitive,
        inputs: Vec<NodeId>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    record: Record,
    needs_grad: bool,
}

/// Ordered record of primitive applications. Inputs always precede their
/// consumers, so reverse order is a valid backward schedule.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`. `None` for tensors that do
    /// not require a gradient; a zero matrix for unused parameter leaves.
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, t: Tensor) -> Option<Matrix> {
        self.grads.get_mut(t.id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Tensor {
        self.push(value, Record::Leaf { requires_grad }, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id.0].value
    }

    fn push(&mut self, value: Matrix, record: Record, needs_grad: bool) -> Tensor {
        let (rows, cols) = value.dim();
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            record,
            needs_grad,
        });
        Tensor {
            id,
            rows,
            cols,
            requires_grad: needs_grad,
        }
    }

    /// Evaluate `kind` on `inputs` and record the result.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Tensor]) -> Result<Tensor> {
        let values: Vec<&Matrix> = inputs.iter().map(|t| &self.nodes[t.id.0].value).collect();
        let out = ops::forward(kind, &values)?;
        let needs_grad = inputs
            .iter()
            .enumerate()
            .any(|(i, t)| kind.differentiable_input(i) && self.nodes[t.id.0].needs_grad);
        let record = Record::Apply {
            kind,
            inputs: inputs.iter().map(|t| t.id).collect(),
        };
        Ok(self.push(out, record, needs_grad))
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients> {
        let (rows, cols) = loss.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if self.nodes[loss.id.0].needs_grad {
            grads[loss.id.0] = Some(Matrix::ones((1, 1)));
        }
        for idx in (0..=loss.id.0).rev() {
            let node = &self.nodes[idx];
            let Record::Apply { kind, inputs } = &node.record else {
                continue;
            };
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let values: Vec<&Matrix> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let input_grads = ops::vjp(*kind, &values, &node.value, &upstream);
            for (id, g) in inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[id.0].needs_grad {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            match node.record {
                Record::Leaf {
                    requires_grad: true,
                } => {
                    if grads[idx].is_none() {
                        grads[idx] = Some(Matrix::zeros(node.value.dim()));
                    }
                }
                _ => grads[idx] = None,
            }
        }
        Ok(Gradients { grads })
    }

    /// Recompute every recorded output from the leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.record {
                Record::Leaf { .. } => node.value.clone(),
                Record::Apply { kind, inputs } => {
                    let args: Vec<&Matrix> = inputs.iter().map(|id| &values[id.0]).collect();
                    ops::forward(*kind, &args)?
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every stored value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(self.nodes.iter().zip(&replayed).all(|(node, v)| {
            node.value.dim() == v.dim()
                && node
                    .value
                    .iter()
                    .zip(v.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        self.apply(Primitive::AddScalar(c), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        self.apply(Primitive::ConcatCols, parts)
    }

    pub fn row_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::RowSoftmax, &[a])
    }

    pub fn masked_row_softmax(&mut self, a: Tensor, mask: Tensor) -> Result<Tensor> {
        self.apply(Primitive::MaskedRowSoftmax, &[a, mask])
    }

    /// Softmax down each column.
    pub fn col_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        let t = self.transpose(a)?;
        let s = self.row_softmax(t)?;
        self.transpose(s)
    }

    pub fn log_softmax_rows(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::LogSoftmaxRows, &[a])
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Result<Tensor> {
        self.apply(Primitive::LeakyRelu(slope), &[a])
    }

    pub fn elu(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Elu(1.0), &[a])
    }

    pub fn tanh(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn exp(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn row_mean(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::RowMean, &[a])
    }

    pub fn col_mean(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::ColMean, &[a])
    }

    pub fn row_max(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::RowMax, &[a])
    }

    pub fn col_max(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::ColMax, &[a])
    }

    pub fn row_l2_norm(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::RowL2Norm, &[a])
    }

    pub fn sum(&mut self, a: Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sum, &[a])
    }
}
