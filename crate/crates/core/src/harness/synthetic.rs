//! Synthetic two-modality cohorts with planted communities.
//!
//! ROIs are split into contiguous communities. Each community has a latent
//! time course; every ROI series mixes its community's latent, a global
//! signal scaled by the coupling strength, and white noise, so the mean
//! correlation between communities grows with the square of the coupling.
//! Fiber counts are Poisson with a higher rate inside communities, so both
//! modalities share the same community structure. Radiomic features carry a
//! per-community mean.
//!
//! Patients (label 1) differ from controls through `contrast`, which scales
//! three effects: a larger coupling strength, a few ROIs moved from the
//! first community to the second in both modalities, and a radiomic mean
//! shift on the first planted community. At `contrast = 0` the two
//! classes are drawn from the same distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graphbuild::SubjectRaw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Controls, then patients.
    pub n_per_class: [usize; 2],
    pub n_rois: usize,
    pub n_communities: usize,
    pub series_len: usize,
    pub dti_features: usize,
    /// Overall class separation; 0 makes the classes identical.
    pub contrast: f64,
    /// Coupling strength of controls.
    pub coupling_base: f64,
    /// Added coupling for patients at contrast 1.
    pub coupling_delta: f64,
    /// ROIs moved between communities for patients at contrast 1.
    pub membership_shift: usize,
    /// Radiomic mean shift for patients at contrast 1, in noise units.
    pub feature_shift: f64,
    /// Standard deviation of the per-ROI noise in both modalities.
    pub noise: f64,
    /// Poisson rates for fiber counts inside and between communities.
    pub fiber_rate_within: f64,
    pub fiber_rate_between: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: [40, 40],
            n_rois: 16,
            n_communities: 2,
            series_len: 80,
            dti_features: 4,
            contrast: 1.0,
            coupling_base: 0.3,
            coupling_delta: 0.6,
            membership_shift: 2,
            feature_shift: 1.0,
            noise: 0.5,
            fiber_rate_within: 20.0,
            fiber_rate_between: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_per_class.contains(&0) {
            return bad("both classes need subjects".into());
        }
        if self.n_communities == 0 || self.n_rois < 2 * self.n_communities {
            return bad(format!(
                "{} ROIs cannot hold {} communities of at least 2",
                self.n_rois, self.n_communities
            ));
        }
        if self.series_len < 3 || self.dti_features == 0 {
            return bad("series length must be >= 3 and feature width positive".into());
        }
        let reals = [
            self.contrast,
            self.coupling_base,
            self.coupling_delta,
            self.feature_shift,
            self.noise,
            self.fiber_rate_within,
            self.fiber_rate_between,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("real-valued parameters must be finite and nonnegative".into());
        }
        if self.noise == 0.0 {
            return bad("noise must be positive".into());
        }
        if self.fiber_rate_within == 0.0 {
            return bad("within-community fiber rate must be positive".into());
        }
        Ok(())
    }

    /// Planted community of every ROI in contiguous blocks.
    pub fn communities(&self) -> Vec<usize> {
        (0..self.n_rois)
            .map(|i| i * self.n_communities / self.n_rois)
            .collect()
    }

    /// Community membership of a subject with label `label`.
    pub fn membership(&self, label: usize) -> Vec<usize> {
        let mut m = self.communities();
        if label == 1 && self.n_communities > 1 {
            let moved = (self.contrast * self.membership_shift as f64).round() as usize;
            let first: Vec<usize> = (0..self.n_rois).filter(|&i| m[i] == 0).collect();
            // keep at least two ROIs in the first community
            let moved = moved.min(first.len().saturating_sub(2));
            for &i in first.iter().rev().take(moved) {
                m[i] = 1;
            }
        }
        m
    }

    pub fn coupling(&self, label: usize) -> f64 {
        self.coupling_base + label as f64 * self.contrast * self.coupling_delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub subjects: Vec<SubjectRaw>,
    /// Planted community per ROI (control membership).
    pub communities: Vec<usize>,
}

fn subject_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ 0x5851_F42D_4C95_7F2D
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let communities = spec.communities();
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    // community means of the radiomic features, shared by both classes
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, u64::MAX));
    let means = Matrix::from_shape_fn((spec.n_communities, spec.dti_features), |_| {
        std.sample(&mut rng)
    });

    let mut subjects = Vec::with_capacity(spec.n_per_class[0] + spec.n_per_class[1]);
    let mut index = 0u64;
    for label in 0..2 {
        let membership = spec.membership(label);
        let kappa = spec.coupling(label);
        for _ in 0..spec.n_per_class[label] {
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, index));
            let id = format!("sub-{index:04}");
            subjects.push(sample_subject(
                spec,
                &mut rng,
                id,
                label,
                &membership,
                &communities,
                kappa,
                &means,
            ));
            index += 1;
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        subjects,
        communities,
    })
}

#[allow(clippy::too_many_arguments)]
fn sample_subject(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    id: String,
    label: usize,
    membership: &[usize],
    planted: &[usize],
    kappa: f64,
    means: &Matrix,
) -> SubjectRaw {
    let n = spec.n_rois;
    let t = spec.series_len;
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let latent = Matrix::from_shape_fn((spec.n_communities, t), |_| std.sample(rng));
    let global: Vec<f64> = (0..t).map(|_| std.sample(rng)).collect();
    let fmri = Matrix::from_shape_fn((n, t), |(i, k)| {
        latent[[membership[i], k]] + kappa * global[k] + spec.noise * std.sample(rng)
    });

    let within = Poisson::new(spec.fiber_rate_within).expect("positive rate");
    let between = (spec.fiber_rate_between > 0.0)
        .then(|| Poisson::new(spec.fiber_rate_between).expect("positive rate"));
    let mut sc = Matrix::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = if membership[i] == membership[j] {
                within.sample(rng)
            } else {
                between.map_or(0.0, |d| d.sample(rng))
            };
            sc[[i, j]] = v;
            sc[[j, i]] = v;
        }
    }

    let shift = label as f64 * spec.contrast * spec.feature_shift;
    let dti = Matrix::from_shape_fn((n, spec.dti_features), |(i, k)| {
        let base = means[[membership[i], k]] + spec.noise * std.sample(rng);
        if planted[i] == 0 {
            base + shift
        } else {
            base
        }
    });

    SubjectRaw {
        id,
        label,
        fmri,
        dti,
        sc,
    }
}
