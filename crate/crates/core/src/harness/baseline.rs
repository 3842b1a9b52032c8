//! Logistic-regression sanity baseline on mean inter-community correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::{pearson_fc, SubjectRaw};

/// Mean Pearson correlation over ROI pairs in different communities.
pub fn mean_inter_community_fc(subject: &SubjectRaw, communities: &[usize]) -> Result<f64> {
    if communities.len() != subject.n_rois() {
        return Err(Error::InvalidArgument(format!(
            "{} community labels for {} ROIs",
            communities.len(),
            subject.n_rois()
        )));
    }
    let fc = pearson_fc(&subject.fmri)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..communities.len() {
        for j in (i + 1)..communities.len() {
            if communities[i] != communities[j] {
                sum += fc[[i, j]];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "all ROIs share one community".into(),
        ));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub weight: f64,
    pub bias: f64,
    /// Feature standardisation applied before the linear score.
    pub mean: f64,
    pub scale: f64,
    pub train_accuracy: f64,
}

impl LogisticFit {
    pub fn probability(&self, x: f64) -> f64 {
        let z = self.weight * (x - self.mean) / self.scale + self.bias;
        1.0 / (1.0 + (-z).exp())
    }
}

/// One-feature logistic regression fitted by Newton iterations with a
/// small ridge penalty, which keeps the fit finite on separable data.
pub fn logistic_baseline(features: &[f64], labels: &[usize]) -> Result<LogisticFit> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument(
            "baseline needs equal, nonempty inputs".into(),
        ));
    }
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let var = features.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let xs: Vec<f64> = features.iter().map(|x| (x - mean) / scale).collect();
    let ridge = 1e-3;

    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (ridge * w, 0.0, ridge, 0.0, 1e-9);
        for (&x, &y) in xs.iter().zip(labels) {
            let p = 1.0 / (1.0 + (-(w * x + b)).exp());
            let r = p - y as f64;
            gw += r * x;
            gb += r;
            let s = p * (1.0 - p);
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        let det = hww * hbb - hwb * hwb;
        if det.abs() < 1e-300 {
            break;
        }
        let dw = (hbb * gw - hwb * gb) / det;
        let db = (hww * gb - hwb * gw) / det;
        w -= dw;
        b -= db;
        if dw.abs().max(db.abs()) < 1e-12 {
            break;
        }
    }
    let mut fit = LogisticFit {
        weight: w,
        bias: b,
        mean,
        scale,
        train_accuracy: 0.0,
    };
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(&x, &y)| (fit.probability(x) >= 0.5) == (y == 1))
        .count();
    fit.train_accuracy = hits as f64 / n;
    Ok(fit)
}
