//! Subject-level heterogeneous graph construction.
//!
//! Two homogeneous meta-paths come straight from each modality: thresholded
//! functional correlation (fMRI to fMRI) and thresholded fiber counts (DTI to
//! DTI). The cross-modal block joins fMRI node `i` to DTI node `j` from two
//! sources of evidence:
//!
//! * node level: the `k` DTI rows whose connection pattern is most similar to
//!   fMRI row `i` (structure-function coupling);
//! * community level: every triangle that is closed in both modalities.
//!
//! Both are summed and scaled to `[0, 1]`. The DTI-to-fMRI block is the
//! transpose of the fMRI-to-DTI block.

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Fmri,
    Dti,
}

/// Raw per-subject inputs: ROI time series, ROI radiomic features and
/// fiber counts, all indexed by the same ROI order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRaw {
    pub id: String,
    pub label: usize,
    /// N x T mean time series per ROI.
    pub fmri: Matrix,
    /// N x D radiomic features per ROI.
    pub dti: Matrix,
    /// N x N fiber counts.
    pub sc: Matrix,
}

impl SubjectRaw {
    pub fn n_rois(&self) -> usize {
        self.fmri.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.fmri.nrows();
        let bad = |what: String| {
            Err(Error::InvalidArgument(format!(
                "subject {}: {what}",
                self.id
            )))
        };
        if n == 0 {
            return bad("no ROIs".into());
        }
        if self.dti.nrows() != n {
            return bad(format!("{} fMRI ROIs but {} DTI ROIs", n, self.dti.nrows()));
        }
        if self.sc.dim() != (n, n) {
            return bad(format!(
                "sc-counts shape {:?}, expected {n}x{n}",
                self.sc.dim()
            ));
        }
        for i in 0..n {
            if self.sc[[i, i]] != 0.0 {
                return bad(format!("sc-counts diagonal entry {i} is nonzero"));
            }
            for j in 0..n {
                let v = self.sc[[i, j]];
                if !(v >= 0.0) {
                    return bad(format!("sc-counts entry ({i},{j}) = {v} is negative"));
                }
                if v != self.sc[[j, i]] {
                    return bad(format!("sc-counts not symmetric at ({i},{j})"));
                }
            }
        }
        if !self
            .fmri
            .iter()
            .chain(self.dti.iter())
            .all(|v| v.is_finite())
        {
            return bad("non-finite values".into());
        }
        Ok(())
    }
}

/// Node features plus adjacency for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub modality: Modality,
}

/// Subject-level heterogeneous graph with two node types and four
/// meta-paths. Features keep their native widths per modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub subject_id: String,
    pub label: usize,
    /// fMRI node features, N_f x T.
    pub x_f: Matrix,
    /// DTI node features, N_d x D_d.
    pub x_d: Matrix,
    /// fMRI to fMRI adjacency.
    pub a_f: Matrix,
    /// DTI to DTI adjacency.
    pub a_d: Matrix,
    /// fMRI to DTI adjacency, N_f x N_d; its transpose is the reverse path.
    pub a_fd: Matrix,
}

impl HeteroGraph {
    pub fn n_f(&self) -> usize {
        self.a_f.nrows()
    }

    pub fn n_d(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn fmri_graph(&self) -> ModalityGraph {
        ModalityGraph {
            features: self.x_f.clone(),
            adjacency: self.a_f.clone(),
            modality: Modality::Fmri,
        }
    }

    pub fn dti_graph(&self) -> ModalityGraph {
        ModalityGraph {
            features: self.x_d.clone(),
            adjacency: self.a_d.clone(),
            modality: Modality::Dti,
        }
    }

    /// The full `(N_f + N_d)` square block adjacency
    /// `[[A_f, A_fd], [A_fd^T, A_d]]`.
    pub fn block_adjacency(&self) -> Matrix {
        block_adjacency(&self.a_f, &self.a_fd, &self.a_d)
    }

    pub fn validate(&self) -> Result<()> {
        let (nf, nd) = (self.n_f(), self.n_d());
        let bad = |what: String| {
            Err(Error::InvalidArgument(format!(
                "graph {}: {what}",
                self.subject_id
            )))
        };
        if self.a_f.dim() != (nf, nf) || self.a_d.dim() != (nd, nd) {
            return bad("homogeneous blocks must be square".into());
        }
        if self.a_fd.dim() != (nf, nd) {
            return bad(format!(
                "hetero block {:?}, expected {nf}x{nd}",
                self.a_fd.dim()
            ));
        }
        if self.x_f.nrows() != nf || self.x_d.nrows() != nd {
            return bad("feature rows do not match node counts".into());
        }
        let in_unit = |m: &Matrix| m.iter().all(|v| (0.0..=1.0).contains(v));
        if !(in_unit(&self.a_f) && in_unit(&self.a_d) && in_unit(&self.a_fd)) {
            return bad("adjacency entries outside [0, 1]".into());
        }
        Ok(())
    }
}

pub fn block_adjacency(a_f: &Matrix, a_fd: &Matrix, a_d: &Matrix) -> Matrix {
    let top = concatenate(Axis(1), &[a_f.view(), a_fd.view()]).expect("rows align");
    let a_df = a_fd.t();
    let bottom = concatenate(Axis(1), &[a_df, a_d.view()]).expect("rows align");
    concatenate(Axis(0), &[top.view(), bottom.view()]).expect("cols align")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Correlations below this are dropped from the functional graph.
    pub fc_threshold: f64,
    /// Fiber counts below this are dropped from the structural graph.
    pub sc_threshold: f64,
    /// Cross-modal neighbours kept per fMRI node.
    pub top_k: usize,
    /// Add community-level (shared triangle) cross-modal edges.
    pub community_edges: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            fc_threshold: 0.2,
            sc_threshold: 5.0,
            top_k: 8,
            community_edges: true,
        }
    }
}

/// Pearson correlation of every row pair. Rows with zero variance are
/// reported in the second return value and correlate 0 with everything.
pub(crate) fn correlation_with_flat_rows(series: &Matrix) -> (Matrix, Vec<usize>) {
    let (n, t) = series.dim();
    let mut centered = series.clone();
    let mut norms = vec![0.0; n];
    let mut flat = Vec::new();
    for (i, mut row) in centered.rows_mut().into_iter().enumerate() {
        let mean = row.iter().sum::<f64>() / t as f64;
        row.mapv_inplace(|v| v - mean);
        norms[i] = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norms[i] == 0.0 {
            flat.push(i);
        }
    }
    let mut corr = Matrix::zeros((n, n));
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        corr[[i, i]] = 1.0;
        for j in (i + 1)..n {
            if norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = centered
                .row(i)
                .iter()
                .zip(centered.row(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            corr[[i, j]] = r;
            corr[[j, i]] = r;
        }
    }
    (corr, flat)
}

/// ROI-by-ROI Pearson correlation of an `N x T` series.
pub fn pearson_fc(series: &Matrix) -> Result<Matrix> {
    let t = series.ncols();
    if t < 3 {
        return Err(Error::SeriesTooShort(format!(
            "{t} time points, need at least 3"
        )));
    }
    let (corr, flat) = correlation_with_flat_rows(series);
    if let Some(&roi) = flat.first() {
        return Err(Error::ZeroVariance { roi });
    }
    Ok(corr)
}

/// Divide by the largest entry. An all-zero (or all-negative) matrix is
/// returned unchanged.
pub fn scale_by_global_max(m: &Matrix) -> Matrix {
    let max = m.iter().copied().fold(0.0_f64, f64::max);
    if max > 0.0 {
        m.mapv(|v| v / max)
    } else {
        m.clone()
    }
}

/// Drop entries below `tau`, clear the diagonal, and scale survivors into
/// `[0, 1]` by the largest survivor.
pub fn threshold_normalize(raw: &Matrix, tau: f64) -> Matrix {
    let mut m = raw.mapv(|v| if v < tau { 0.0 } else { v });
    m.diag_mut().fill(0.0);
    scale_by_global_max(&m)
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Connection-pattern similarity between every fMRI row and every DTI
/// row: cosine similarity clamped below at zero.
pub fn coupling_similarity(a_f: &Matrix, a_d: &Matrix) -> Result<Matrix> {
    if a_f.ncols() != a_d.ncols() {
        return Err(Error::InvalidArgument(format!(
            "connection patterns of different length: {} vs {}",
            a_f.ncols(),
            a_d.ncols()
        )));
    }
    Ok(Matrix::from_shape_fn(
        (a_f.nrows(), a_d.nrows()),
        |(i, j)| cosine(a_f.row(i), a_d.row(j)).max(0.0),
    ))
}

/// Node-level cross-modal edges: keep the `k` most similar DTI nodes for
/// each fMRI node. Ties go to the lower column index.
pub fn node_level_hetero(a_f: &Matrix, a_d: &Matrix, k: usize) -> Result<Matrix> {
    if !a_f.is_square() || !a_d.is_square() || a_f.nrows() != a_d.nrows() {
        return Err(Error::InvalidArgument(format!(
            "homogeneous blocks must be square and equal: {:?} vs {:?}",
            a_f.dim(),
            a_d.dim()
        )));
    }
    let n_d = a_d.nrows();
    if k == 0 || k > n_d {
        return Err(Error::InvalidArgument(format!(
            "top-k must lie in 1..={n_d}, got {k}"
        )));
    }
    let eps = coupling_similarity(a_f, a_d)?;
    let mut out = Matrix::zeros(eps.dim());
    let mut order: Vec<usize> = Vec::with_capacity(n_d);
    for (i, row) in eps.rows().into_iter().enumerate() {
        order.clear();
        order.extend(0..n_d);
        let rank = |&a: &usize, &b: &usize| row[b].total_cmp(&row[a]).then(a.cmp(&b));
        if k < n_d {
            order.select_nth_unstable_by(k - 1, rank);
        }
        for &j in &order[..k] {
            out[[i, j]] = row[j];
        }
    }
    Ok(out)
}

/// Community-level cross-modal edges: for each triangle closed in both
/// graphs, mark every ordered pair of its vertices.
pub fn community_level_hetero(a_f: &Matrix, a_d: &Matrix) -> Result<Matrix> {
    if !a_f.is_square() || a_f.dim() != a_d.dim() {
        return Err(Error::InvalidArgument(format!(
            "homogeneous blocks must be square and equal: {:?} vs {:?}",
            a_f.dim(),
            a_d.dim()
        )));
    }
    let n = a_f.nrows();
    // neighbours with a larger index in the graph of shared edges
    let forward: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            ((i + 1)..n)
                .filter(|&j| a_f[[i, j]] > 0.0 && a_d[[i, j]] > 0.0)
                .collect()
        })
        .collect();
    let mut out = Matrix::zeros((n, n));
    for i in 0..n {
        for (pos, &j) in forward[i].iter().enumerate() {
            // k > j, adjacent to both i and j: merge the two sorted lists
            let (mut a, mut b) = (
                forward[i][pos + 1..].iter().peekable(),
                forward[j].iter().peekable(),
            );
            while let (Some(&&x), Some(&&y)) = (a.peek(), b.peek()) {
                match x.cmp(&y) {
                    std::cmp::Ordering::Less => {
                        a.next();
                    }
                    std::cmp::Ordering::Greater => {
                        b.next();
                    }
                    std::cmp::Ordering::Equal => {
                        for (p, q) in [(i, j), (j, x), (i, x)] {
                            out[[p, q]] = 1.0;
                            out[[q, p]] = 1.0;
                        }
                        a.next();
                        b.next();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sum both kinds of cross-modal evidence and scale into `[0, 1]`.
pub fn combine_hetero(node_part: &Matrix, community_part: &Matrix) -> Result<Matrix> {
    if node_part.dim() != community_part.dim() {
        return Err(Error::InvalidArgument(format!(
            "cannot combine {:?} with {:?}",
            node_part.dim(),
            community_part.dim()
        )));
    }
    Ok(scale_by_global_max(&(node_part + community_part)))
}

/// The fMRI-to-DTI block from the two homogeneous adjacencies.
pub fn hetero_block(a_f: &Matrix, a_d: &Matrix, config: &GraphConfig) -> Result<Matrix> {
    let node = node_level_hetero(a_f, a_d, config.top_k.min(a_d.nrows()))?;
    let community = if config.community_edges {
        community_level_hetero(a_f, a_d)?
    } else {
        Matrix::zeros(node.dim())
    };
    combine_hetero(&node, &community)
}

/// Build the heterogeneous graph of one subject.
pub fn assemble(subject: &SubjectRaw, config: &GraphConfig) -> Result<HeteroGraph> {
    subject.validate()?;
    let fc = pearson_fc(&subject.fmri)?;
    let a_f = threshold_normalize(&fc, config.fc_threshold);
    let a_d = threshold_normalize(&subject.sc, config.sc_threshold);
    let a_fd = hetero_block(&a_f, &a_d, config)?;
    Ok(HeteroGraph {
        subject_id: subject.id.clone(),
        label: subject.label,
        x_f: subject.fmri.clone(),
        x_d: subject.dti.clone(),
        a_f,
        a_d,
        a_fd,
    })
}
