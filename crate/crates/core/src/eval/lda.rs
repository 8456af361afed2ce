//! Shrinkage linear discriminant baseline.

use nalgebra::{DMatrix, DVector};

use crate::data::{Label, Trial};
use crate::error::{Error, Result};

pub const DEFAULT_SHRINKAGE: f64 = 0.1;
pub const DEFAULT_DECIMATION: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Lda {
    /// Fits `w = S⁻¹ (μ₁ − μ₀)` with `S = (1−γ) Σ + γ ν I`, where Σ is the
    /// pooled within-class covariance and ν its mean variance. The bias puts
    /// the boundary halfway between the class means.
    pub fn fit(features: &[Vec<f64>], labels: &[Label], shrinkage: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::config(format!("shrinkage {shrinkage} outside [0, 1]")));
        }
        if features.len() != labels.len() {
            return Err(Error::shape(format!("{} feature rows for {} labels", features.len(), labels.len())));
        }
        let d = features.first().map_or(0, Vec::len);
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::shape("lda: empty or ragged feature rows"));
        }
        let mut means = [DVector::<f64>::zeros(d), DVector::zeros(d)];
        let mut counts = [0usize; 2];
        for (f, &l) in features.iter().zip(labels) {
            means[l as usize] += DVector::from_column_slice(f);
            counts[l as usize] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::UndefinedMetric("lda needs both classes".into()));
        }
        for c in 0..2 {
            means[c] /= counts[c] as f64;
        }
        let n = features.len();
        let mut centered = DMatrix::<f64>::zeros(n, d);
        for (i, (f, &l)) in features.iter().zip(labels).enumerate() {
            for j in 0..d {
                centered[(i, j)] = f[j] - means[l as usize][j];
            }
        }
        let dof = (n.saturating_sub(2)).max(1) as f64;
        let sigma = centered.transpose() * &centered / dof;
        let nu = sigma.trace() / d as f64;
        let mut s = sigma * (1.0 - shrinkage);
        for j in 0..d {
            s[(j, j)] += shrinkage * nu;
        }
        let diff = &means[1] - &means[0];
        let singular = || {
            Error::SingularCovariance(format!(
                "{d}-dimensional covariance from {n} trials is not positive definite; use shrinkage > 0"
            ))
        };
        let chol = s.cholesky().ok_or_else(singular)?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo > 1e-7 * hi) {
            return Err(singular());
        }
        let w = chol.solve(&diff);
        let mid = (&means[0] + &means[1]) * 0.5;
        let bias = -w.dot(&mid);
        Ok(Self {
            weights: w.iter().copied().collect(),
            bias,
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Flattened `[M, N]` trial with each channel block-averaged over `decimate`
/// samples (a trailing remainder is dropped).
pub fn lda_features(data: &[f32], n_channels: usize, decimate: usize) -> Vec<f64> {
    let decimate = decimate.max(1);
    let n = data.len() / n_channels;
    let mut out = Vec::with_capacity(n_channels * (n / decimate));
    for row in data.chunks_exact(n) {
        for block in row.chunks_exact(decimate) {
            out.push(block.iter().map(|&v| v as f64).sum::<f64>() / decimate as f64);
        }
    }
    out
}

/// Fits on `train` and returns one score per `test` trial.
pub fn lda_baseline(train: &[&Trial], test: &[&Trial], n_channels: usize, shrinkage: f64, decimate: usize) -> Result<Vec<f64>> {
    let feats: Vec<Vec<f64>> = train.iter().map(|t| lda_features(&t.data, n_channels, decimate)).collect();
    let labels: Vec<Label> = train.iter().map(|t| t.label).collect();
    let lda = Lda::fit(&feats, &labels, shrinkage)?;
    Ok(test
        .iter()
        .map(|t| lda.score(&lda_features(&t.data, n_channels, decimate)))
        .collect())
}
