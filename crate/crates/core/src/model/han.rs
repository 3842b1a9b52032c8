//! Heterogeneous graph attention: per-meta-path node attention with several
//! heads, followed by semantic attention over the meta-paths that end at
//! each node type.

use serde::{Deserialize, Serialize};

use super::params::{Builder, ParamId};
use crate::autodiff::{Matrix, Tape, Tensor};
use crate::error::Result;
use crate::graphbuild::Modality;

/// The four meta-paths of the fMRI/DTI graph, named source then target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaPath {
    /// fMRI to fMRI.
    Ff,
    /// DTI to DTI.
    Dd,
    /// fMRI to DTI, attended by DTI nodes.
    Fd,
    /// DTI to fMRI, attended by fMRI nodes.
    Df,
}

impl MetaPath {
    pub const ALL: [MetaPath; 4] = [MetaPath::Ff, MetaPath::Dd, MetaPath::Fd, MetaPath::Df];

    pub fn source(self) -> Modality {
        match self {
            MetaPath::Ff | MetaPath::Fd => Modality::Fmri,
            MetaPath::Dd | MetaPath::Df => Modality::Dti,
        }
    }

    pub fn target(self) -> Modality {
        match self {
            MetaPath::Ff | MetaPath::Df => Modality::Fmri,
            MetaPath::Dd | MetaPath::Fd => Modality::Dti,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetaPath::Ff => "ff",
            MetaPath::Dd => "dd",
            MetaPath::Fd => "fd",
            MetaPath::Df => "df",
        }
    }

    /// Meta-paths whose target is `t`, homogeneous one first.
    pub fn into_type(t: Modality) -> [MetaPath; 2] {
        match t {
            Modality::Fmri => [MetaPath::Ff, MetaPath::Df],
            Modality::Dti => [MetaPath::Dd, MetaPath::Fd],
        }
    }
}

pub(crate) fn type_name(t: Modality) -> &'static str {
    match t {
        Modality::Fmri => "f",
        Modality::Dti => "d",
    }
}

/// Weighted adjacency blocks of a (possibly pooled) heterogeneous graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBlocks {
    pub a_f: Matrix,
    pub a_d: Matrix,
    /// N_f x N_d.
    pub a_fd: Matrix,
}

impl GraphBlocks {
    pub fn n_f(&self) -> usize {
        self.a_f.nrows()
    }

    pub fn n_d(&self) -> usize {
        self.a_d.nrows()
    }

    /// Binary neighbourhood mask of `path`, target rows by source columns.
    /// Homogeneous paths include self loops.
    pub fn mask(&self, path: MetaPath) -> Matrix {
        let nz = |v: &f64| if *v != 0.0 { 1.0 } else { 0.0 };
        let with_loops = |a: &Matrix| {
            let mut m = a.map(nz);
            m.diag_mut().fill(1.0);
            m
        };
        match path {
            MetaPath::Ff => with_loops(&self.a_f),
            MetaPath::Dd => with_loops(&self.a_d),
            MetaPath::Fd => self.a_fd.t().map(nz),
            MetaPath::Df => self.a_fd.map(nz),
        }
    }
}

/// Masks of all four paths placed on a tape as constants.
pub(crate) struct MaskTensors([Tensor; 4]);

impl MaskTensors {
    pub fn new(tape: &mut Tape, blocks: &GraphBlocks) -> Self {
        Self(MetaPath::ALL.map(|p| tape.constant(blocks.mask(p))))
    }

    fn get(&self, path: MetaPath) -> Tensor {
        self.0[path as usize]
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub theta: ParamId,
    pub attn_target: ParamId,
    pub attn_source: ParamId,
}

#[derive(Debug, Clone)]
pub struct PathParams {
    pub path: MetaPath,
    pub heads: Vec<HeadParams>,
}

#[derive(Debug, Clone)]
pub struct SemanticParams {
    pub target: Modality,
    pub w: ParamId,
    pub b: ParamId,
    pub psi: ParamId,
}

/// One attention layer. Only the paths ending at `targets` are present.
#[derive(Debug, Clone)]
pub struct HanParams {
    pub paths: Vec<PathParams>,
    pub semantic: Vec<SemanticParams>,
    pub head_width: usize,
}

impl HanParams {
    pub(crate) fn build(
        b: &mut Builder,
        prefix: &str,
        targets: &[Modality],
        in_width: usize,
        head_width: usize,
        heads: usize,
        semantic_dim: usize,
    ) -> Self {
        let mut paths = Vec::new();
        let mut semantic = Vec::new();
        for &t in targets {
            for path in MetaPath::into_type(t) {
                let heads = (0..heads)
                    .map(|k| {
                        let p = format!("{prefix}.{}.head{k}", path.name());
                        HeadParams {
                            theta: b.weight(format!("{p}.theta"), in_width, head_width),
                            attn_target: b.weight(format!("{p}.attn_target"), head_width, 1),
                            attn_source: b.weight(format!("{p}.attn_source"), head_width, 1),
                        }
                    })
                    .collect();
                paths.push(PathParams { path, heads });
            }
            let p = format!("{prefix}.semantic.{}", type_name(t));
            let out_width = head_width * heads;
            semantic.push(SemanticParams {
                target: t,
                w: b.weight(format!("{p}.w"), out_width, semantic_dim),
                b: b.zeros(format!("{p}.b"), 1, semantic_dim),
                psi: b.weight(format!("{p}.psi"), semantic_dim, 1),
            });
        }
        Self {
            paths,
            semantic,
            head_width,
        }
    }

    fn path(&self, path: MetaPath) -> &PathParams {
        self.paths
            .iter()
            .find(|p| p.path == path)
            .expect("layer built for this target type")
    }

    fn semantic(&self, t: Modality) -> &SemanticParams {
        self.semantic
            .iter()
            .find(|s| s.target == t)
            .expect("layer built for this target type")
    }
}

/// Attention weights recorded during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HanTrace {
    /// Node-level attention per path and head, target rows by source columns.
    pub alpha: Vec<(MetaPath, usize, Matrix)>,
    /// Semantic weights per target type, in [`MetaPath::into_type`] order.
    pub beta: Vec<(Modality, [f64; 2])>,
}

/// Node-level attention along one path, heads concatenated column-wise.
#[allow(clippy::too_many_arguments)]
fn path_attention(
    tape: &mut Tape,
    p: &[Tensor],
    params: &PathParams,
    x_src: Tensor,
    x_tgt: Tensor,
    mask: Tensor,
    slope: f64,
    mut trace: Option<&mut HanTrace>,
) -> Result<Tensor> {
    let homogeneous = params.path.source() == params.path.target();
    let mut outs = Vec::with_capacity(params.heads.len());
    for (k, head) in params.heads.iter().enumerate() {
        let theta = p[head.theta.index()];
        let hs = tape.matmul(x_src, theta)?;
        let ht = if homogeneous {
            hs
        } else {
            tape.matmul(x_tgt, theta)?
        };
        let et = tape.matmul(ht, p[head.attn_target.index()])?;
        let es = tape.matmul(hs, p[head.attn_source.index()])?;
        let es = tape.transpose(es)?;
        let e = tape.add(et, es)?;
        let e = tape.leaky_relu(e, slope)?;
        let alpha = tape.masked_row_softmax(e, mask)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.alpha.push((params.path, k, tape.value(alpha).clone()));
        }
        let agg = tape.matmul(alpha, hs)?;
        outs.push(tape.elu(agg)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Embeddings of the nodes of type `target`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn han_target(
    tape: &mut Tape,
    p: &[Tensor],
    params: &HanParams,
    target: Modality,
    x_f: Tensor,
    x_d: Tensor,
    masks: &MaskTensors,
    slope: f64,
    mut trace: Option<&mut HanTrace>,
) -> Result<Tensor> {
    let pick = |t: Modality| if t == Modality::Fmri { x_f } else { x_d };
    let paths = MetaPath::into_type(target);
    let mut zs = Vec::with_capacity(2);
    for path in paths {
        let z = path_attention(
            tape,
            p,
            params.path(path),
            pick(path.source()),
            pick(path.target()),
            masks.get(path),
            slope,
            trace.as_deref_mut(),
        )?;
        zs.push(z);
    }

    let sem = params.semantic(target);
    let mut scores = Vec::with_capacity(2);
    for &z in &zs {
        let proj = tape.matmul(z, p[sem.w.index()])?;
        let proj = tape.add(proj, p[sem.b.index()])?;
        let proj = tape.tanh(proj)?;
        let q = tape.matmul(proj, p[sem.psi.index()])?;
        scores.push(tape.col_mean(q)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let beta = tape.row_softmax(scores)?;
    if let Some(tr) = trace {
        let b = tape.value(beta);
        tr.beta.push((target, [b[[0, 0]], b[[0, 1]]]));
    }

    let mut out: Option<Tensor> = None;
    for (i, &z) in zs.iter().enumerate() {
        let mut pick_col = Matrix::zeros((2, 1));
        pick_col[[i, 0]] = 1.0;
        let pick_col = tape.constant(pick_col);
        let weight = tape.matmul(beta, pick_col)?;
        let term = tape.mul(z, weight)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(out.expect("two paths per target"))
}
