use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{training_set, AdvisorError};
use crate::space::{DimKind, SearchSpace, INACTIVE};
use crate::strategy::{Observation, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub task_id: TaskId,
    pub x: f64,
    pub y: f64,
    pub reward: f64,
}

/// Gower distance between encodings: mean over dimensions active in both
/// of |Δ| (numeric, already range-normalized) or mismatch (categorical).
/// Pairs with no shared active dimension are at distance 1.
pub fn gower_distance(a: &[f64], b: &[f64], kinds: &[DimKind]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((x, y), k) in a.iter().zip(b).zip(kinds) {
        if *x == INACTIVE || *y == INACTIVE {
            continue;
        }
        count += 1;
        sum += match k {
            DimKind::Categorical { .. } => f64::from(u8::from(x != y)),
            _ => (x - y).abs(),
        };
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

/// Classical multidimensional scaling of the Gower distance matrix onto the
/// two leading axes. Each axis is oriented so the first point with a
/// non-zero coordinate on it is positive.
pub fn project_2d(observations: &[Observation], space: &SearchSpace) -> Result<Vec<ProjectedPoint>, AdvisorError> {
    let n = observations.len();
    if n < 2 {
        return Err(AdvisorError::InsufficientData { need: 2, got: n });
    }
    let (x, y) = training_set(observations, space);
    let kinds = space.layout().dim_kinds();
    let d2 = DMatrix::from_fn(n, n, |i, j| gower_distance(&x[i], &x[j], &kinds).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else {
            return vec![0.0; n];
        };
        let lambda = eig.eigenvalues[idx];
        let scale = if lambda > 1e-9 * top { lambda.sqrt() } else { 0.0 };
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().map(|c| c * scale).collect();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
        }
        v
    };
    let (mut ax, mut ay) = (axis(0), axis(1));
    for i in 1..n {
        if let Some(j) = (0..i).find(|&j| x[j] == x[i]) {
            ax[i] = ax[j];
            ay[i] = ay[j];
        }
    }
    Ok(observations
        .iter()
        .enumerate()
        .map(|(i, o)| ProjectedPoint {
            task_id: o.task_id,
            x: ax[i],
            y: ay[i],
            reward: y[i],
        })
        .collect())
}
