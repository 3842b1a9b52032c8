//! Heterogeneous graph classifier.
//!
//! Each modality's node features are projected to a shared width. Three
//! stages follow, each made of a heterogeneous attention layer, per-type
//! PairNorm, type-preserving soft pooling and a max/mean readout. The three
//! readouts are concatenated and passed through dropout and a two-layer MLP
//! producing two class logits.

mod han;
mod layers;
mod params;
mod pool;

use serde::{Deserialize, Serialize};

pub use han::{GraphBlocks, HanParams, HanTrace, HeadParams, MetaPath, PathParams, SemanticParams};
pub use layers::{dropout, linear, pair_norm, readout, PAIR_NORM_EPS};
pub use params::{ParamId, ParamStore};
pub use pool::{hg_pool, pooled_size, PoolParams};

use crate::autodiff::{Matrix, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphbuild::{HeteroGraph, Modality};
use han::{han_target, MaskTensors};
use params::Builder;
use pool::assignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of each attention head.
    pub hidden: usize,
    pub heads: usize,
    /// Hidden width of the semantic attention scorer.
    pub semantic_dim: usize,
    pub mlp_hidden: usize,
    /// Number of attention/pool/readout stages.
    pub stages: usize,
    /// Fraction of nodes of each type kept by every pooling step.
    pub pool_ratio: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 8,
            semantic_dim: 128,
            mlp_hidden: 64,
            stages: 3,
            pool_ratio: 0.8,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn width(&self) -> usize {
        self.hidden * self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.semantic_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config(
                "model widths and head count must be positive".into(),
            ));
        }
        if self.stages == 0 {
            return Err(Error::Config("at least one stage is required".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "pool ratio {} outside (0, 1]",
                self.pool_ratio
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }
}

/// Input sizes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_f: usize,
    pub n_d: usize,
    /// Feature width of fMRI nodes (time points).
    pub in_f: usize,
    /// Feature width of DTI nodes.
    pub in_d: usize,
}

impl ModelDims {
    pub fn of(hg: &HeteroGraph) -> Self {
        Self {
            n_f: hg.n_f(),
            n_d: hg.n_d(),
            in_f: hg.x_f.ncols(),
            in_d: hg.x_d.ncols(),
        }
    }

    pub fn check(&self, hg: &HeteroGraph) -> Result<()> {
        let got = Self::of(hg);
        if got != *self {
            return Err(Error::InvalidArgument(format!(
                "graph {} has sizes {got:?}, model expects {self:?}",
                hg.subject_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageParams {
    pub han: HanParams,
    pub pool_f: PoolParams,
    pub pool_d: PoolParams,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub input_f: (ParamId, ParamId),
    pub input_d: (ParamId, ParamId),
    pub stages: Vec<StageParams>,
    pub mlp_hidden: (ParamId, ParamId),
    pub mlp_out: (ParamId, ParamId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Dropout active with a mask drawn from `seed`.
    Train {
        dropout: f64,
        seed: u64,
    },
}

/// Per-stage intermediate values recorded by [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    /// fMRI and DTI node counts entering the stage.
    pub nodes_in: (usize, usize),
    pub nodes_out: (usize, usize),
    pub attention: HanTrace,
    /// Assignment matrices, input nodes by clusters.
    pub assign_f: Matrix,
    pub assign_d: Matrix,
    pub readout: Matrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub stages: Vec<StageTrace>,
}

pub struct Forward {
    /// `1 x 2` class logits.
    pub logits: Tensor,
    pub trace: Option<ForwardTrace>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    dims: ModelDims,
    params: ParamStore,
    layout: Layout,
}

fn build_layout(config: &ModelConfig, dims: &ModelDims, b: &mut Builder) -> Result<Layout> {
    config.validate()?;
    if dims.n_f == 0 || dims.n_d == 0 || dims.in_f == 0 || dims.in_d == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty model dimensions {dims:?}"
        )));
    }
    let width = config.width();
    let input_f = (
        b.weight("input.f.w", dims.in_f, width),
        b.zeros("input.f.b", 1, width),
    );
    let input_d = (
        b.weight("input.d.w", dims.in_d, width),
        b.zeros("input.d.b", 1, width),
    );
    let (mut n_f, mut n_d) = (dims.n_f, dims.n_d);
    let mut stages = Vec::with_capacity(config.stages);
    for l in 0..config.stages {
        let han = HanParams::build(
            b,
            &format!("stage{l}.han"),
            &[Modality::Fmri, Modality::Dti],
            width,
            config.hidden,
            config.heads,
            config.semantic_dim,
        );
        let (out_f, out_d) = (
            pooled_size(n_f, config.pool_ratio)?,
            pooled_size(n_d, config.pool_ratio)?,
        );
        let prefix = format!("stage{l}.pool");
        let pool_f = PoolParams::build(
            b,
            &prefix,
            Modality::Fmri,
            n_f,
            out_f,
            width,
            config.semantic_dim,
        );
        let pool_d = PoolParams::build(
            b,
            &prefix,
            Modality::Dti,
            n_d,
            out_d,
            width,
            config.semantic_dim,
        );
        stages.push(StageParams {
            han,
            pool_f,
            pool_d,
        });
        (n_f, n_d) = (out_f, out_d);
    }
    let embed = config.stages * 2 * width;
    let mlp_hidden = (
        b.weight("mlp.hidden.w", embed, config.mlp_hidden),
        b.zeros("mlp.hidden.b", 1, config.mlp_hidden),
    );
    let mlp_out = (
        b.weight("mlp.out.w", config.mlp_hidden, 2),
        b.zeros("mlp.out.b", 1, 2),
    );
    Ok(Layout {
        input_f,
        input_d,
        stages,
        mlp_hidden,
        mlp_out,
    })
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(config: ModelConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        let mut b = Builder::new(seed);
        let layout = build_layout(&config, &dims, &mut b)?;
        Ok(Self {
            config,
            dims,
            params: b.store,
            layout,
        })
    }

    /// Model with the given parameter values, which must match the layout
    /// implied by `config` and `dims` in name, order and shape.
    pub fn from_params(
        config: ModelConfig,
        dims: ModelDims,
        names: &[String],
        values: Vec<Matrix>,
    ) -> Result<Self> {
        let mut model = Self::new(config, dims, 0)?;
        if names.len() != model.params.len() || values.len() != names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {} names and {} values",
                model.params.len(),
                names.len(),
                values.len()
            )));
        }
        for (i, ((name, value), (want, fresh))) in names
            .iter()
            .zip(&values)
            .zip(model.params.iter())
            .enumerate()
        {
            if name != want {
                return Err(Error::InvalidArgument(format!(
                    "parameter {i} is {name}, expected {want}"
                )));
            }
            if value.dim() != fresh.dim() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.dim(),
                    fresh.dim()
                )));
            }
        }
        model
            .params
            .values_mut()
            .iter_mut()
            .zip(values)
            .for_each(|(p, v)| *p = v);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// fMRI and DTI node counts at the input of every stage and after the
    /// last one.
    pub fn node_counts(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.dims.n_f, self.dims.n_d)];
        out.extend(
            self.layout
                .stages
                .iter()
                .map(|s| (s.pool_f.n_out, s.pool_d.n_out)),
        );
        out
    }

    /// Record the forward pass for `hg` on `tape`. `p` holds one tensor per
    /// parameter in store order, normally from [`ParamStore::register`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[Tensor],
        hg: &HeteroGraph,
        mode: Mode,
        record: bool,
    ) -> Result<Forward> {
        self.dims.check(hg)?;
        if p.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter tensors for {} parameters",
                p.len(),
                self.params.len()
            )));
        }
        let slope = self.config.leaky_slope;
        let mut trace = record.then(ForwardTrace::default);

        let xf_in = tape.constant(hg.x_f.clone());
        let xd_in = tape.constant(hg.x_d.clone());
        let (w, b) = self.layout.input_f;
        let mut x_f = linear(tape, xf_in, p[w.index()], p[b.index()])?;
        let (w, b) = self.layout.input_d;
        let mut x_d = linear(tape, xd_in, p[w.index()], p[b.index()])?;
        let mut blocks = GraphBlocks {
            a_f: hg.a_f.clone(),
            a_d: hg.a_d.clone(),
            a_fd: hg.a_fd.clone(),
        };

        let mut readouts = Vec::with_capacity(self.layout.stages.len());
        for stage in &self.layout.stages {
            let nodes_in = (blocks.n_f(), blocks.n_d());
            let mut attention = record.then(HanTrace::default);
            let masks = MaskTensors::new(tape, &blocks);
            let h_f = han_target(
                tape,
                p,
                &stage.han,
                Modality::Fmri,
                x_f,
                x_d,
                &masks,
                slope,
                attention.as_mut(),
            )?;
            let h_d = han_target(
                tape,
                p,
                &stage.han,
                Modality::Dti,
                x_f,
                x_d,
                &masks,
                slope,
                attention.as_mut(),
            )?;
            let h_f = pair_norm(tape, h_f)?;
            let h_d = pair_norm(tape, h_d)?;
            let d_f = assignment(tape, p, &stage.pool_f, h_f, h_d, &masks, slope, None)?;
            let d_d = assignment(tape, p, &stage.pool_d, h_f, h_d, &masks, slope, None)?;
            let (pf, pd, pooled) = hg_pool(tape, h_f, h_d, &blocks, d_f, d_d)?;
            let r = readout(tape, pf, pd)?;
            readouts.push(r);
            if let Some(tr) = trace.as_mut() {
                tr.stages.push(StageTrace {
                    nodes_in,
                    nodes_out: (pooled.n_f(), pooled.n_d()),
                    attention: attention.unwrap_or_default(),
                    assign_f: tape.value(d_f).clone(),
                    assign_d: tape.value(d_d).clone(),
                    readout: tape.value(r).clone(),
                });
            }
            (x_f, x_d, blocks) = (pf, pd, pooled);
        }

        let mut z = tape.concat_cols(&readouts)?;
        if let Mode::Train {
            dropout: rate,
            seed,
        } = mode
        {
            z = dropout(tape, z, rate, seed)?;
        }
        let (w, b) = self.layout.mlp_hidden;
        let h = linear(tape, z, p[w.index()], p[b.index()])?;
        let h = tape.elu(h)?;
        let (w, b) = self.layout.mlp_out;
        let logits = linear(tape, h, p[w.index()], p[b.index()])?;
        Ok(Forward { logits, trace })
    }

    /// Evaluation-mode logits and trace.
    pub fn infer(&self, hg: &HeteroGraph) -> Result<([f64; 2], ForwardTrace)> {
        let mut tape = Tape::new();
        let p: Vec<Tensor> = self
            .params
            .values()
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        let out = self.forward(&mut tape, &p, hg, Mode::Eval, true)?;
        let l = tape.value(out.logits);
        Ok(([l[[0, 0]], l[[0, 1]]], out.trace.unwrap_or_default()))
    }

    pub fn logits(&self, hg: &HeteroGraph) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let p: Vec<Tensor> = self
            .params
            .values()
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        let out = self.forward(&mut tape, &p, hg, Mode::Eval, false)?;
        let l = tape.value(out.logits);
        Ok([l[[0, 0]], l[[0, 1]]])
    }

    /// Softmax probability of the positive (patient) class.
    pub fn predict_proba(&self, hg: &HeteroGraph) -> Result<f64> {
        Ok(positive_probability(self.logits(hg)?))
    }
}

pub fn positive_probability(logits: [f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            hidden: 3,
            heads: 2,
            semantic_dim: 4,
            mlp_hidden: 5,
            stages: 3,
            pool_ratio: 0.8,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn pooled_sizes_follow_ratio() {
        assert_eq!(pooled_size(90, 0.8).unwrap(), 72);
        assert_eq!(pooled_size(5, 0.8).unwrap(), 4);
        assert_eq!(pooled_size(1, 0.5).unwrap(), 1);
        assert!(pooled_size(4, 0.0).is_err());
        assert!(pooled_size(4, 1.5).is_err());
    }

    #[test]
    fn node_count_ladder() {
        let dims = ModelDims {
            n_f: 90,
            n_d: 90,
            in_f: 4,
            in_d: 3,
        };
        let model = Model::new(tiny_config(), dims, 1).unwrap();
        let counts: Vec<usize> = model.node_counts().iter().map(|(f, d)| f + d).collect();
        assert_eq!(counts, vec![180, 144, 116, 94]);
    }

    #[test]
    fn same_seed_same_params() {
        let dims = ModelDims {
            n_f: 5,
            n_d: 5,
            in_f: 4,
            in_d: 3,
        };
        let a = Model::new(tiny_config(), dims, 9).unwrap();
        let b = Model::new(tiny_config(), dims, 9).unwrap();
        let c = Model::new(tiny_config(), dims, 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn from_params_rejects_wrong_shape() {
        let dims = ModelDims {
            n_f: 5,
            n_d: 5,
            in_f: 4,
            in_d: 3,
        };
        let m = Model::new(tiny_config(), dims, 9).unwrap();
        let names = m.params().names().to_vec();
        let mut values = m.params().values().to_vec();
        assert!(Model::from_params(tiny_config(), dims, &names, values.clone()).is_ok());
        values[0] = Matrix::zeros((1, 1));
        assert!(Model::from_params(tiny_config(), dims, &names, values).is_err());
    }
}
