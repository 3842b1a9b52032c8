//! Graph augmentation by dynamic functional connectivity.
//!
//! The fMRI series is cut into overlapping windows and a binary functional
//! graph is built per window. For every edge present in all windows, the
//! third nodes that close a three-node subgraph with it are counted by how
//! many of the subgraph's three edges are themselves present in all windows.
//! A fixed weight per count turns the census into a global dynamic FC, which
//! replaces the static functional block. The structural block is kept as is
//! and the cross-modal blocks are rebuilt from the new pair.

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graphbuild::{
    correlation_with_flat_rows, hetero_block, scale_by_global_max, GraphConfig, HeteroGraph,
    SubjectRaw,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Time points per window.
    pub window_width: usize,
    pub window_stride: usize,
    /// Binarisation threshold for per-window correlations.
    pub window_threshold: f64,
    /// Weight of three-node subgraphs with one, two and three shared edges.
    pub alpha: [f64; 3],
    /// Global dynamic FC entries below this are dropped.
    pub tau_g: f64,
    /// Fraction of minority-class training subjects that get an augmented copy.
    pub augmentation_ratio: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            window_width: 30,
            window_stride: 5,
            window_threshold: 0.2,
            alpha: [0.01, 0.02, 0.1],
            tau_g: 0.4,
            augmentation_ratio: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_width < 3 {
            return Err(Error::Config(format!(
                "window width {} < 3",
                self.window_width
            )));
        }
        if self.window_stride == 0 {
            return Err(Error::Config("window stride must be positive".into()));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config(format!(
                "alpha must be nonnegative, got {:?}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.augmentation_ratio) {
            return Err(Error::Config(format!(
                "augmentation ratio {} outside [0, 1]",
                self.augmentation_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Matrix>,
    pub width: usize,
    pub stride: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Counts of third nodes closing a subgraph with one, two or three edges
/// shared by every window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TripleCensus(pub [u32; 3]);

impl TripleCensus {
    pub fn weighted(&self, alpha: &[f64; 3]) -> f64 {
        alpha[0] * f64::from(self.0[0])
            + alpha[1] * f64::from(self.0[1])
            + alpha[2] * f64::from(self.0[2])
    }
}

/// Overlapping windows of `width` time points every `stride` points. Tail
/// points that do not fill a window are discarded; at least two windows
/// are required.
pub fn sliding_windows(series: &Matrix, width: usize, stride: usize) -> Result<WindowSet> {
    if width < 3 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window width {width} must be >= 3 and stride {stride} >= 1"
        )));
    }
    let t = series.ncols();
    if t < width + stride {
        return Err(Error::SeriesTooShort(format!(
            "{t} time points give fewer than 2 windows of width {width}, stride {stride}"
        )));
    }
    let count = (t - width) / stride + 1;
    let windows = (0..count)
        .map(|w| {
            series
                .slice(s![.., w * stride..w * stride + width])
                .to_owned()
        })
        .collect();
    Ok(WindowSet {
        windows,
        width,
        stride,
    })
}

/// Binary functional graph per window. A flat ROI in a window has no edges
/// in that window.
pub fn window_fcs(ws: &WindowSet, tau: f64) -> Vec<Matrix> {
    ws.windows
        .iter()
        .map(|w| {
            let (corr, _) = correlation_with_flat_rows(w);
            let mut bin = corr.mapv(|r| if r >= tau { 1.0 } else { 0.0 });
            bin.diag_mut().fill(0.0);
            bin
        })
        .collect()
}

/// Edges present in every window.
fn shared_edges(fcs: &[Matrix]) -> Matrix {
    let mut shared = fcs[0].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    for fc in &fcs[1..] {
        ndarray::Zip::from(&mut shared).and(fc).for_each(|s, &v| {
            if v <= 0.0 {
                *s = 0.0;
            }
        });
    }
    shared
}

fn census_from_shared(shared: &Matrix, i: usize, j: usize) -> TripleCensus {
    let mut counts = [0u32; 3];
    if i == j || shared[[i, j]] == 0.0 {
        return TripleCensus(counts);
    }
    for k in 0..shared.nrows() {
        if k == i || k == j {
            continue;
        }
        let edges = 1 + (shared[[j, k]] > 0.0) as usize + (shared[[k, i]] > 0.0) as usize;
        counts[edges - 1] += 1;
    }
    TripleCensus(counts)
}

/// Census of the three-node subgraphs containing edge `(i, j)`.
pub fn triple_census(fcs: &[Matrix], i: usize, j: usize) -> TripleCensus {
    if fcs.is_empty() {
        return TripleCensus::default();
    }
    census_from_shared(&shared_edges(fcs), i, j)
}

/// Raw census-weighted values before thresholding and scaling.
pub fn census_weights(fcs: &[Matrix], alpha: &[f64; 3]) -> Matrix {
    let Some(first) = fcs.first() else {
        return Matrix::zeros((0, 0));
    };
    let n = first.nrows();
    let shared = shared_edges(fcs);
    let mut out = Matrix::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if shared[[i, j]] > 0.0 && shared[[j, i]] > 0.0 {
                let v = census_from_shared(&shared, i, j).weighted(alpha);
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
    }
    out
}

/// Global dynamic FC: census-weighted shared edges, entries strictly below
/// `tau_g` dropped, then scaled by the largest entry.
pub fn global_dynamic_fc(fcs: &[Matrix], alpha: &[f64; 3], tau_g: f64) -> Result<Matrix> {
    if alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha:?}"
        )));
    }
    let raw = census_weights(fcs, alpha);
    let kept = raw.mapv(|v| if v < tau_g { 0.0 } else { v });
    Ok(scale_by_global_max(&kept))
}

/// Augmented copy of `hg`: functional block from dynamic FC, structural
/// block unchanged, cross-modal blocks rebuilt.
pub fn augment_subject(
    subject: &SubjectRaw,
    hg: &HeteroGraph,
    graph_config: &GraphConfig,
    config: &AugmentConfig,
) -> Result<HeteroGraph> {
    if subject.id != hg.subject_id {
        return Err(Error::InvalidArgument(format!(
            "graph {} was not built from subject {}",
            hg.subject_id, subject.id
        )));
    }
    let windows = sliding_windows(&subject.fmri, config.window_width, config.window_stride)?;
    let fcs = window_fcs(&windows, config.window_threshold);
    let a_f = global_dynamic_fc(&fcs, &config.alpha, config.tau_g)?;
    let a_fd = hetero_block(&a_f, &hg.a_d, graph_config)?;
    Ok(HeteroGraph {
        subject_id: hg.subject_id.clone(),
        label: hg.label,
        x_f: hg.x_f.clone(),
        x_d: hg.x_d.clone(),
        a_f,
        a_d: hg.a_d.clone(),
        a_fd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, t: usize) -> Matrix {
        Matrix::from_shape_fn((n, t), |(i, k)| {
            ((i + 1) * k) as f64 + (k % 3) as f64 * i as f64
        })
    }

    #[test]
    fn window_count() {
        let ws = sliding_windows(&ramp(3, 100), 30, 5).unwrap();
        assert_eq!(ws.len(), 15);
        assert!(sliding_windows(&ramp(3, 30), 30, 5).is_err());
        assert!(sliding_windows(&ramp(3, 100), 2, 5).is_err());
    }

    #[test]
    fn census_single_triangle() {
        let mut fc = Matrix::zeros((3, 3));
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            fc[[a, b]] = 1.0;
            fc[[b, a]] = 1.0;
        }
        assert_eq!(triple_census(&[fc], 0, 1), TripleCensus([0, 0, 1]));
    }

    #[test]
    fn census_isolated_edge() {
        let n = 6;
        let mut fc = Matrix::zeros((n, n));
        fc[[2, 4]] = 1.0;
        fc[[4, 2]] = 1.0;
        assert_eq!(
            triple_census(&[fc.clone(), fc], 2, 4),
            TripleCensus([n as u32 - 2, 0, 0])
        );
    }

    #[test]
    fn boundary_value_is_kept() {
        // edge (0,1) closes four triangles that persist in both windows
        let n = 6;
        let mut fc = Matrix::ones((n, n));
        fc.diag_mut().fill(0.0);
        let census = triple_census(&[fc.clone(), fc.clone()], 0, 1);
        assert_eq!(census, TripleCensus([0, 0, 4]));
        let alpha = [0.01, 0.02, 0.1];
        assert_eq!(census.weighted(&alpha), 0.4);
        let g = global_dynamic_fc(&[fc.clone(), fc], &alpha, 0.4).unwrap();
        assert_eq!(g[[0, 1]], 1.0);
        assert_eq!(g.diag().sum(), 0.0);
    }

    #[test]
    fn no_shared_edge_gives_zero() {
        let mut a = Matrix::zeros((4, 4));
        let mut b = Matrix::zeros((4, 4));
        a[[0, 1]] = 1.0;
        a[[1, 0]] = 1.0;
        b[[2, 3]] = 1.0;
        b[[3, 2]] = 1.0;
        let g = global_dynamic_fc(&[a, b], &[0.01, 0.02, 0.1], 0.0).unwrap();
        assert_eq!(g, Matrix::zeros((4, 4)));
    }

    #[test]
    fn config_validation() {
        let mut c = AugmentConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = [0.1, -0.1, 0.0];
        assert!(c.validate().is_err());
    }
}
