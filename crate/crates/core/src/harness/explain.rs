//! First-stage pooling assignments for interpretation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graphbuild::HeteroGraph;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub subject_id: String,
    pub label: usize,
    /// fMRI ROIs by clusters, columns summing to one.
    pub fmri: Matrix,
    pub dti: Matrix,
    /// Cluster with the largest assignment weight per ROI.
    pub fmri_dominant: Vec<usize>,
    pub dti_dominant: Vec<usize>,
}

/// Index of the largest entry in every row; ties go to the lower index.
pub fn dominant_clusters(assignment: &Matrix) -> Vec<usize> {
    assignment
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn export_pool_assignments(
    model: &Model,
    graphs: &[HeteroGraph],
) -> Result<Vec<AssignmentRecord>> {
    graphs
        .par_iter()
        .map(|hg| {
            let (_, trace) = model.infer(hg)?;
            let stage = trace
                .stages
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidArgument("model has no pooling stage".into()))?;
            Ok(AssignmentRecord {
                subject_id: hg.subject_id.clone(),
                label: hg.label,
                fmri_dominant: dominant_clusters(&stage.assign_f),
                dti_dominant: dominant_clusters(&stage.assign_d),
                fmri: stage.assign_f,
                dti: stage.assign_d,
            })
        })
        .collect()
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Returns 1
/// when both labelings are trivial in the same way.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
