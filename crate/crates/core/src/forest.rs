//! Regression forests over encoded configurations. Used as a BO surrogate
//! and as the model behind functional ANOVA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::space::DimKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 32,
            min_leaf: 1,
            max_depth: 32,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Routing rule of a split: `x <= t` (numeric) or membership in a set of
/// category codes (categorical). Matching points go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rule {
    Le(f64),
    In(Vec<f64>),
}

impl Rule {
    pub fn goes_left(&self, x: f64) -> bool {
        match self {
            Rule::Le(t) => x <= *t,
            Rule::In(set) => set.contains(&x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, count: usize },
    Split { dim: usize, rule: Rule, left: usize, right: usize },
}

/// A tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { dim, rule, left, right } => {
                    i = if rule.goes_left(x[*dim]) { *left } else { *right };
                }
            }
        }
    }

    pub fn fit(x: &[Vec<f64>], y: &[f64], rows: Vec<usize>, kinds: &[DimKind], config: &ForestConfig) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(x, y, rows, kinds, config, 0);
        tree
    }

    fn grow(
        &mut self,
        x: &[Vec<f64>],
        y: &[f64],
        rows: Vec<usize>,
        kinds: &[DimKind],
        config: &ForestConfig,
        depth: usize,
    ) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf {
            value: mean,
            count: rows.len(),
        });
        if depth >= config.max_depth || rows.len() < 2 * config.min_leaf.max(1) {
            return id;
        }
        let Some((dim, rule)) = best_split(x, y, &rows, mean, kinds, config.min_leaf.max(1)) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| rule.goes_left(x[row][dim]));
        let left = self.grow(x, y, l, kinds, config, depth + 1);
        let right = self.grow(x, y, r, kinds, config, depth + 1);
        self.nodes[id] = Node::Split { dim, rule, left, right };
        id
    }
}

/// Variance-reduction split search. Responses are centered on the node mean
/// so the gain is invariant to affine changes of `y` up to rounding.
fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    mean: f64,
    kinds: &[DimKind],
    min_leaf: usize,
) -> Option<(usize, Rule)> {
    let yc: Vec<f64> = rows.iter().map(|&r| y[r] - mean).collect();
    let sse: f64 = yc.iter().map(|v| v * v).sum();
    if sse <= 0.0 {
        return None;
    }
    let n = rows.len();
    let gain = |sl: f64, nl: usize| {
        let sr = -sl;
        sl * sl / nl as f64 + sr * sr / (n - nl) as f64
    };
    let tol = 1e-12 * sse;
    let mut best: Option<(f64, usize, Rule)> = None;
    let dims = x[rows[0]].len();
    for d in 0..dims {
        let categorical = matches!(kinds.get(d), Some(DimKind::Categorical { .. }));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[rows[a]][d].total_cmp(&x[rows[b]][d]));
        if categorical {
            // group by code, order groups by mean response, scan prefixes
            let mut groups: Vec<(f64, f64, usize)> = Vec::new();
            for &i in &order {
                let v = x[rows[i]][d];
                match groups.last_mut() {
                    Some(g) if g.0 == v => {
                        g.1 += yc[i];
                        g.2 += 1;
                    }
                    _ => groups.push((v, yc[i], 1)),
                }
            }
            groups.sort_by(|a, b| (a.1 / a.2 as f64).total_cmp(&(b.1 / b.2 as f64)).then(a.0.total_cmp(&b.0)));
            let (mut sl, mut nl) = (0.0, 0usize);
            for j in 0..groups.len().saturating_sub(1) {
                sl += groups[j].1;
                nl += groups[j].2;
                if nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let g = gain(sl, nl);
                if best.as_ref().map_or(g > tol, |b| g > b.0 + tol) {
                    let mut set: Vec<f64> = groups[..=j].iter().map(|g| g.0).collect();
                    set.sort_by(f64::total_cmp);
                    best = Some((g, d, Rule::In(set)));
                }
            }
        } else {
            let mut sl = 0.0;
            for k in 0..n - 1 {
                sl += yc[order[k]];
                let (a, b) = (x[rows[order[k]]][d], x[rows[order[k + 1]]][d]);
                let nl = k + 1;
                if a == b || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let g = gain(sl, nl);
                if best.as_ref().map_or(g > tol, |bst| g > bst.0 + tol) {
                    best = Some((g, d, Rule::Le(0.5 * (a + b))));
                }
            }
        }
    }
    best.map(|(_, d, rule)| (d, rule))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
    kinds: Vec<DimKind>,
    config: ForestConfig,
}

impl ForestModel {
    /// Fits `config.trees` trees; `kinds` may be shorter than the dimension
    /// (missing entries are treated as continuous).
    pub fn fit(x: &[Vec<f64>], y: &[f64], kinds: &[DimKind], config: &ForestConfig) -> Self {
        assert!(!x.is_empty() && x.len() == y.len(), "forest needs a non-empty training set");
        let n = x.len();
        let trees = (0..config.trees.max(1))
            .map(|t| {
                let rows = if config.bootstrap {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, rows, kinds, config)
            })
            .collect();
        ForestModel {
            trees,
            kinds: kinds.to_vec(),
            config: config.clone(),
        }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn kinds(&self) -> &[DimKind] {
        &self.kinds
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// Mean of tree predictions and their variance across trees (floored).
    pub fn predict_one(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let m = preds.iter().sum::<f64>() / preds.len() as f64;
        let v = preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / preds.len() as f64;
        (m, v.max(1e-12))
    }
}
