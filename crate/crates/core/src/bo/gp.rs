use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoError, SurrogatePosterior};

const NOISE_FLOOR: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn isotropic(dims: usize, length_scale: f64, signal_var: f64, noise_var: f64) -> Self {
        GpHyper {
            length_scales: vec![length_scale; dims],
            signal_var,
            noise_var,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        GpHyper {
            length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_var: theta[d].exp(),
            noise_var: theta[d + 1].exp(),
        }
    }
}

/// Matérn-5/2 with per-dimension length scales.
pub fn matern52(a: &[f64], b: &[f64], hyper: &GpHyper) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&hyper.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    let r = r2.sqrt();
    let s5 = 5f64.sqrt() * r;
    hyper.signal_var * (1.0 + s5 + 5.0 * r2 / 3.0) * (-s5).exp()
}

/// Exact GP on standardized targets with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn check(x: &[Vec<f64>], y: &[f64]) -> Result<usize, BoError> {
    if x.is_empty() {
        return Err(BoError::Empty);
    }
    if x.len() != y.len() {
        return Err(BoError::DimMismatch);
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(BoError::DimMismatch);
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(BoError::NonFinite);
    }
    Ok(d)
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    (y.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

/// Cholesky of K + (σ_n² + jitter)I with jitter escalated ×10 from the
/// noise floor up to `MAX_JITTER`.
fn factor(x: &[Vec<f64>], hyper: &GpHyper) -> Result<(DMatrix<f64>, f64), BoError> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| matern52(&x[i], &x[j], hyper));
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.l(), jitter));
        }
        jitter = if jitter == 0.0 { NOISE_FLOOR } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(BoError::NotPositiveDefinite);
        }
    }
}

fn solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("cholesky factor is non-singular");
    l.transpose().solve_upper_triangular(&z).expect("cholesky factor is non-singular")
}

/// Log marginal likelihood of standardized targets under `hyper`.
pub fn log_marginal_likelihood(x: &[Vec<f64>], ys: &[f64], hyper: &GpHyper) -> Option<f64> {
    let (l, _) = factor(x, hyper).ok()?;
    let yv = DVector::from_column_slice(ys);
    let alpha = solve(&l, &yv);
    let logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    let n = ys.len() as f64;
    let v = -0.5 * yv.dot(&alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    v.is_finite().then_some(v)
}

/// Log-space bounds: length scales, signal variance, noise variance.
const LOG_LS: (f64, f64) = (-4.605_170_185_988_091, 2.995_732_273_553_991); // [0.01, 20]
const LOG_SF: (f64, f64) = (-2.995_732_273_553_991, 2.995_732_273_553_991); // [0.05, 20]
const LOG_SN: (f64, f64) = (-18.420_680_743_952_367, 0.0); // [1e-8, 1]

fn bounds(i: usize, d: usize) -> (f64, f64) {
    if i < d {
        LOG_LS
    } else if i == d {
        LOG_SF
    } else {
        LOG_SN
    }
}

/// Maximum-likelihood hyperparameters: the best point of an isotropic grid,
/// refined by coordinate ascent in log space. `trace` receives the
/// likelihood after every accepted step (non-decreasing by construction).
pub fn fit_hyperparameters(x: &[Vec<f64>], ys: &[f64], trace: &mut Vec<f64>) -> GpHyper {
    let d = x[0].len();
    let mut best: Option<(f64, GpHyper)> = None;
    for &ls in &[0.05, 0.2, 0.5, 1.0, 2.0] {
        for &sn in &[1e-6, 1e-3, 1e-1] {
            let h = GpHyper::isotropic(d, ls, 1.0, sn);
            if let Some(v) = log_marginal_likelihood(x, ys, &h) {
                if best.as_ref().map_or(true, |b| v > b.0) {
                    best = Some((v, h));
                }
            }
        }
    }
    let Some((mut value, start)) = best else {
        return GpHyper::isotropic(d, 0.5, 1.0, 1e-2);
    };
    trace.push(value);
    let mut theta = start.to_log();
    let mut step = 1.0;
    let mut evals = 0;
    while step > 0.03 && evals < 60 * (d + 2) {
        let mut improved = false;
        for i in 0..theta.len() {
            let (lo, hi) = bounds(i, d);
            for dir in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[i] = (theta[i] + dir * step).clamp(lo, hi);
                if cand[i] == theta[i] {
                    continue;
                }
                evals += 1;
                if let Some(v) = log_marginal_likelihood(x, ys, &GpHyper::from_log(&cand)) {
                    if v > value {
                        value = v;
                        theta = cand;
                        trace.push(value);
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    GpHyper::from_log(&theta)
}

impl GpModel {
    /// Fits hyperparameters by maximum likelihood, then conditions.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, BoError> {
        check(x, y)?;
        let (ys, _, _) = standardize(y);
        let hyper = fit_hyperparameters(x, &ys, &mut Vec::new());
        Self::with_hyperparameters(x, y, hyper)
    }

    pub fn with_hyperparameters(x: &[Vec<f64>], y: &[f64], mut hyper: GpHyper) -> Result<Self, BoError> {
        let d = check(x, y)?;
        if hyper.length_scales.len() != d {
            return Err(BoError::DimMismatch);
        }
        if hyper.length_scales.iter().any(|l| !(*l > 0.0)) || !(hyper.signal_var > 0.0) {
            return Err(BoError::NonFinite);
        }
        hyper.noise_var = hyper.noise_var.max(NOISE_FLOOR);
        let (ys, y_mean, y_std) = standardize(y);
        let (chol, jitter) = factor(x, &hyper)?;
        let alpha = solve(&chol, &DVector::from_column_slice(&ys));
        Ok(GpModel {
            hyper,
            x: x.to_vec(),
            y: y.to_vec(),
            y_mean,
            y_std,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn training(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.x, &self.y)
    }

    /// Posterior on the standardized scale.
    pub fn predict_standardized(&self, xq: &[Vec<f64>]) -> SurrogatePosterior {
        let mut mean = Vec::with_capacity(xq.len());
        let mut variance = Vec::with_capacity(xq.len());
        for q in xq {
            let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(xi, q, &self.hyper)));
            mean.push(k.dot(&self.alpha));
            let v = self.chol.solve_lower_triangular(&k).expect("cholesky factor is non-singular");
            variance.push((self.hyper.signal_var - v.dot(&v)).max(0.0));
        }
        SurrogatePosterior { mean, variance }
    }

    pub fn predict(&self, xq: &[Vec<f64>]) -> SurrogatePosterior {
        let mut p = self.predict_standardized(xq);
        for m in &mut p.mean {
            *m = self.y_mean + self.y_std * *m;
        }
        for v in &mut p.variance {
            *v *= self.y_std * self.y_std;
        }
        p
    }
}
