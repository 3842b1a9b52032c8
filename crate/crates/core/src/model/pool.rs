//! Soft cluster pooling for heterogeneous graphs. Each node type gets its
//! own assignment matrix, so fMRI nodes only merge with fMRI nodes and DTI
//! nodes with DTI nodes.

use super::han::{han_target, type_name, GraphBlocks, HanParams, HanTrace, MaskTensors};
use super::params::{Builder, ParamId};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphbuild::Modality;

/// Node count after pooling `n` nodes at `ratio`.
pub fn pooled_size(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pool ratio {ratio} outside (0, 1]"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot pool an empty node set".into(),
        ));
    }
    // guard against 0.8 * 90 landing a hair above an integer
    Ok(((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize)
}

/// Parameters producing the assignment matrix of one node type.
#[derive(Debug, Clone)]
pub struct PoolParams {
    pub target: Modality,
    pub n_in: usize,
    pub n_out: usize,
    /// Single-head attention layer whose output width is `n_out`.
    pub score: HanParams,
    /// `n_out x n_out` summariser.
    pub w: ParamId,
    /// `1 x n_out` summariser bias.
    pub b: ParamId,
}

impl PoolParams {
    pub(crate) fn build(
        b: &mut Builder,
        prefix: &str,
        target: Modality,
        n_in: usize,
        n_out: usize,
        in_width: usize,
        semantic_dim: usize,
    ) -> Self {
        let p = format!("{prefix}.{}", type_name(target));
        let score = HanParams::build(
            b,
            &format!("{p}.score"),
            &[target],
            in_width,
            n_out,
            1,
            semantic_dim,
        );
        Self {
            target,
            n_in,
            n_out,
            score,
            w: b.weight(format!("{p}.w"), n_out, n_out),
            b: b.zeros(format!("{p}.b"), 1, n_out),
        }
    }
}

/// Column-stochastic assignment of the `target` nodes to `n_out` clusters.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assignment(
    tape: &mut Tape,
    p: &[Tensor],
    pool: &PoolParams,
    x_f: Tensor,
    x_d: Tensor,
    masks: &MaskTensors,
    slope: f64,
    trace: Option<&mut HanTrace>,
) -> Result<Tensor> {
    let s = han_target(
        tape,
        p,
        &pool.score,
        pool.target,
        x_f,
        x_d,
        masks,
        slope,
        trace,
    )?;
    let logits = tape.matmul(s, p[pool.w.index()])?;
    let logits = tape.add(logits, p[pool.b.index()])?;
    tape.col_softmax(logits)
}

/// Pool features and adjacency with given assignments `d_f` (N_f x N_f') and
/// `d_d` (N_d x N_d'). With the block-padded `P = [P_f | P_d]` this is
/// `X_t' = P_t^T X_H` and `A_H' = P^T A_H P`; the zero padding is skipped.
pub fn hg_pool(
    tape: &mut Tape,
    x_f: Tensor,
    x_d: Tensor,
    blocks: &GraphBlocks,
    d_f: Tensor,
    d_d: Tensor,
) -> Result<(Tensor, Tensor, GraphBlocks)> {
    if d_f.rows() != x_f.rows() || d_d.rows() != x_d.rows() {
        return Err(Error::shape(
            "hg_pool",
            format!(
                "assignments {:?}/{:?} do not match {} fMRI and {} DTI nodes",
                d_f.shape(),
                d_d.shape(),
                x_f.rows(),
                x_d.rows()
            ),
        ));
    }
    if blocks.n_f() != x_f.rows() || blocks.n_d() != x_d.rows() {
        return Err(Error::shape(
            "hg_pool",
            String::from("adjacency blocks do not match features"),
        ));
    }
    let df_t = tape.transpose(d_f)?;
    let dd_t = tape.transpose(d_d)?;
    let xf = tape.matmul(df_t, x_f)?;
    let xd = tape.matmul(dd_t, x_d)?;

    let (df, dd) = (tape.value(d_f), tape.value(d_d));
    let pooled = GraphBlocks {
        a_f: df.t().dot(&blocks.a_f).dot(df),
        a_d: dd.t().dot(&blocks.a_d).dot(dd),
        a_fd: df.t().dot(&blocks.a_fd).dot(dd),
    };
    Ok((xf, xd, pooled))
}
