use serde::{Deserialize, Serialize};

use super::SurrogatePosterior;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `f_best` (minimization).
pub fn acq_ei(post: &SurrogatePosterior, f_best: f64) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&mu, &var)| {
            let sigma = var.max(0.0).sqrt();
            if sigma < 1e-12 {
                return (f_best - mu).max(0.0);
            }
            let z = (f_best - mu) / sigma;
            ((f_best - mu) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
        })
        .collect()
}

/// Lower confidence bound μ − κσ (lower is more promising).
pub fn acq_lcb(post: &SurrogatePosterior, kappa: f64) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&mu, &var)| mu - kappa * var.max(0.0).sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AcquisitionKind {
    #[default]
    Ei,
    Lcb {
        kappa: f64,
    },
}

impl AcquisitionKind {
    /// Utility to maximize: EI itself, or the negated LCB.
    pub fn score(&self, post: &SurrogatePosterior, f_best: f64) -> Vec<f64> {
        match self {
            AcquisitionKind::Ei => acq_ei(post, f_best),
            AcquisitionKind::Lcb { kappa } => acq_lcb(post, *kappa).into_iter().map(|v| -v).collect(),
        }
    }
}
