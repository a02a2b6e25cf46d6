use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{training_set, AdvisorError, MIN_OBSERVATIONS};
use crate::forest::{ForestConfig, ForestModel, Node, RegressionTree, Rule};
use crate::space::INACTIVE;
use crate::space::{DimKind, SearchSpace};
use crate::strategy::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamImportance {
    pub path: String,
    pub schema_path: String,
    /// Fraction of variance explained by this parameter alone.
    pub fraction: f64,
    pub activation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub params: Vec<ParamImportance>,
    pub total_variance: f64,
    pub observations: usize,
    /// Rewards were constant; every fraction is zero.
    pub constant: bool,
}

/// Probability measure of one encoded dimension: an atom at the inactive
/// sentinel plus either a uniform density on [0,1] or uniform atoms on the
/// encoded levels.
#[derive(Debug, Clone)]
struct Measure {
    inactive: f64,
    atoms: Option<Vec<f64>>,
}

impl Measure {
    fn new(kind: DimKind, inactive: f64) -> Self {
        let levels = match kind {
            DimKind::Continuous => None,
            DimKind::Ordinal { levels } | DimKind::Categorical { levels } => Some(levels.max(1)),
        };
        let atoms = levels.map(|l| {
            if l == 1 {
                vec![0.0]
            } else {
                (0..l).map(|k| k as f64 / (l - 1) as f64).collect()
            }
        });
        Measure { inactive, atoms }
    }

    /// Cells (representative point, mass) refined by `cuts`, restricted to
    /// the active part when `active_only`, each tagged with a bin index
    /// out of `bins`.
    fn cells(&self, cuts: &[f64], active_only: bool, bins: usize) -> Vec<(f64, f64, usize)> {
        let active = if active_only { 1.0 } else { 1.0 - self.inactive };
        let mut out = Vec::new();
        if !active_only && self.inactive > 0.0 {
            out.push((INACTIVE, self.inactive, usize::MAX));
        }
        match &self.atoms {
            Some(atoms) => {
                let bins = bins.clamp(1, atoms.len());
                let w = active / atoms.len() as f64;
                for (k, a) in atoms.iter().enumerate() {
                    out.push((*a, w, k * bins / atoms.len()));
                }
            }
            None => {
                let bins = bins.max(1);
                let mut edges: Vec<f64> = cuts.iter().copied().filter(|c| *c > 0.0 && *c < 1.0).collect();
                edges.extend((1..bins).map(|b| b as f64 / bins as f64));
                edges.push(0.0);
                edges.push(1.0);
                edges.sort_by(f64::total_cmp);
                edges.dedup();
                for w in edges.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let bin = ((mid * bins as f64) as usize).min(bins - 1);
                    out.push((mid, active * (w[1] - w[0]), bin));
                }
            }
        }
        out
    }

    fn bins(&self, bins: usize) -> usize {
        match &self.atoms {
            Some(a) => bins.clamp(1, a.len()),
            None => bins.max(1),
        }
    }
}

/// Region of a leaf along one dimension: `(lo, hi]`, optionally restricted
/// to a set of category codes and minus excluded codes.
#[derive(Debug, Clone)]
struct Span {
    lo: f64,
    hi: f64,
    only: Option<Vec<f64>>,
    except: Vec<f64>,
}

impl Span {
    fn contains(&self, v: f64) -> bool {
        v > self.lo
            && v <= self.hi
            && self.only.as_ref().map_or(true, |s| s.contains(&v))
            && !self.except.contains(&v)
    }
}

struct Leaf {
    value: f64,
    spans: Vec<Span>,
}

struct Partition {
    leaves: Vec<Leaf>,
    /// Numeric split thresholds per dimension.
    cuts: Vec<Vec<f64>>,
}

fn partition(tree: &RegressionTree, dims: usize) -> Partition {
    let full = Span {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        only: None,
        except: Vec::new(),
    };
    let mut leaves = Vec::new();
    let mut cuts = vec![Vec::new(); dims];
    let mut stack = vec![(0usize, vec![full; dims])];
    while let Some((i, spans)) = stack.pop() {
        match &tree.nodes()[i] {
            Node::Leaf { value, .. } => leaves.push(Leaf { value: *value, spans }),
            Node::Split { dim, rule, left, right } => {
                let (mut l, mut r) = (spans.clone(), spans);
                match rule {
                    Rule::Le(t) => {
                        cuts[*dim].push(*t);
                        l[*dim].hi = l[*dim].hi.min(*t);
                        r[*dim].lo = r[*dim].lo.max(*t);
                    }
                    Rule::In(set) => {
                        l[*dim].only = Some(match &l[*dim].only {
                            Some(only) => only.iter().copied().filter(|v| set.contains(v)).collect(),
                            None => set.clone(),
                        });
                        r[*dim].except.extend(set.iter().copied());
                    }
                }
                stack.push((*right, r));
                stack.push((*left, l));
            }
        }
    }
    Partition { leaves, cuts }
}

type Cell = (f64, f64, usize);

/// Per-leaf mass along every dimension.
fn masses(part: &Partition, cells: &[Vec<Cell>]) -> Vec<Vec<f64>> {
    part.leaves
        .iter()
        .map(|leaf| {
            leaf.spans
                .iter()
                .zip(cells)
                .map(|(span, cs)| cs.iter().filter(|c| span.contains(c.0)).map(|c| c.1).sum())
                .collect()
        })
        .collect()
}

/// Product of masses over all dimensions except those in `skip`.
fn product_except(m: &[f64], skip: &[usize]) -> f64 {
    m.iter()
        .enumerate()
        .filter(|(e, _)| !skip.contains(e))
        .map(|(_, v)| v)
        .product()
}

/// Total variance of a tree and the unary variance of each target
/// dimension, under the product of `measures`.
fn decompose(tree: &RegressionTree, measures: &[Measure], targets: &[usize]) -> Option<(f64, Vec<f64>)> {
    let dims = measures.len();
    let part = partition(tree, dims);
    let cells: Vec<Vec<Cell>> = measures
        .iter()
        .enumerate()
        .map(|(d, m)| m.cells(&part.cuts[d], false, 1))
        .collect();
    let mass = masses(&part, &cells);
    let weight: Vec<f64> = mass.iter().map(|m| m.iter().product()).collect();
    let f0: f64 = part.leaves.iter().zip(&weight).map(|(l, w)| l.value * w).sum();
    let centered: Vec<f64> = part.leaves.iter().map(|l| l.value - f0).collect();
    let total: f64 = centered.iter().zip(&weight).map(|(c, w)| c * c * w).sum();
    let scale: f64 = part.leaves.iter().zip(&weight).map(|(l, w)| l.value * l.value * w).sum();
    if !(total > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let unary = targets
        .iter()
        .map(|&d| {
            let excl: Vec<f64> = mass.iter().map(|m| product_except(m, &[d])).collect();
            cells[d]
                .iter()
                .map(|&(rep, w, _)| {
                    let fd: f64 = part
                        .leaves
                        .iter()
                        .zip(&centered)
                        .zip(&excl)
                        .filter(|((leaf, _), _)| leaf.spans[d].contains(rep))
                        .map(|((_, c), e)| c * e)
                        .sum();
                    w * fd * fd
                })
                .sum::<f64>()
        })
        .collect();
    Some((total, unary))
}

fn forest_config(seed: u64) -> ForestConfig {
    ForestConfig {
        trees: 64,
        min_leaf: 1,
        max_depth: 64,
        bootstrap: true,
        seed,
    }
}

fn measures(x: &[Vec<f64>], rows: &[usize], kinds: &[DimKind]) -> Vec<Measure> {
    kinds
        .iter()
        .enumerate()
        .map(|(d, k)| {
            let inactive = rows.iter().filter(|&&r| x[r][d] == INACTIVE).count();
            Measure::new(*k, inactive as f64 / rows.len() as f64)
        })
        .collect()
}

fn subset(x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    rows.iter().map(|&r| (x[r].clone(), y[r])).unzip()
}

fn is_constant(y: &[f64]) -> bool {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0)
}

/// Unary importance per flattened parameter. A conditional parameter is
/// analysed on a forest fitted to the observations where it is active, and
/// its fraction is scaled by its activation rate.
pub fn importance(observations: &[Observation], space: &SearchSpace, seed: u64) -> Result<ImportanceReport, AdvisorError> {
    let n = observations.len();
    if n < MIN_OBSERVATIONS {
        return Err(AdvisorError::InsufficientData {
            need: MIN_OBSERVATIONS,
            got: n,
        });
    }
    let (x, y) = training_set(observations, space);
    let layout = space.layout();
    let kinds = layout.dim_kinds();
    let dims = kinds.len();
    let mut params: Vec<ParamImportance> = layout
        .slots()
        .iter()
        .enumerate()
        .map(|(d, slot)| ParamImportance {
            path: slot.path.clone(),
            schema_path: slot.schema_path.clone(),
            fraction: 0.0,
            activation_rate: x.iter().filter(|r| r[d] != INACTIVE).count() as f64 / n as f64,
        })
        .collect();
    if is_constant(&y) {
        return Ok(ImportanceReport {
            params,
            total_variance: 0.0,
            observations: n,
            constant: true,
        });
    }

    let mut groups: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for d in 0..dims {
        let rows: Vec<usize> = (0..n).filter(|&r| x[r][d] != INACTIVE).collect();
        if rows.len() >= 2 {
            groups.entry(rows).or_default().push(d);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    groups.entry(all.clone()).or_default();
    let mut total_variance = 0.0;
    let mut ordered: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
    ordered.sort();
    for (rows, targets) in ordered {
        let (sx, sy) = subset(&x, &y, &rows);
        if is_constant(&sy) {
            continue;
        }
        let forest = ForestModel::fit(&sx, &sy, &kinds, &forest_config(seed));
        let ms = measures(&sx, &(0..rows.len()).collect::<Vec<_>>(), &kinds);
        let mut sums = vec![0.0; targets.len()];
        let (mut used, mut var_sum) = (0usize, 0.0);
        for tree in forest.trees() {
            if let Some((total, unary)) = decompose(tree, &ms, &targets) {
                used += 1;
                var_sum += total;
                for (s, u) in sums.iter_mut().zip(unary) {
                    *s += u / total;
                }
            }
        }
        if rows == all {
            total_variance = var_sum / forest.trees().len() as f64;
        }
        if used == 0 {
            continue;
        }
        let rate = rows.len() as f64 / n as f64;
        for (d, s) in targets.iter().zip(sums) {
            params[*d].fraction = (s / used as f64 * rate).clamp(0.0, 1.0);
        }
    }
    Ok(ImportanceReport {
        params,
        total_variance,
        observations: n,
        constant: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal2d {
    pub a: String,
    pub b: String,
    /// Decoded value at the centre of each bin.
    pub a_labels: Vec<String>,
    pub b_labels: Vec<String>,
    /// `z[i][j]`: mean prediction over bin i of `a` and bin j of `b`.
    pub z: Vec<Vec<f64>>,
}

/// Forest marginal of the objective over a `grid`×`grid` binning of two
/// parameters, averaging out every other dimension. Discrete parameters
/// get at most one bin per level.
pub fn pairwise_marginal(
    observations: &[Observation],
    space: &SearchSpace,
    a: &str,
    b: &str,
    grid: usize,
    seed: u64,
) -> Result<Marginal2d, AdvisorError> {
    let layout = space.layout();
    let da = layout.slot_index(a).ok_or_else(|| AdvisorError::UnknownPath(a.into()))?;
    let db = layout.slot_index(b).ok_or_else(|| AdvisorError::UnknownPath(b.into()))?;
    if da == db {
        return Err(AdvisorError::UnknownPath(format!("{a} (paired with itself)")));
    }
    let (x, y) = training_set(observations, space);
    let rows: Vec<usize> = (0..x.len()).filter(|&r| x[r][da] != INACTIVE && x[r][db] != INACTIVE).collect();
    if rows.len() < MIN_OBSERVATIONS {
        return Err(AdvisorError::InsufficientData {
            need: MIN_OBSERVATIONS,
            got: rows.len(),
        });
    }
    let kinds = layout.dim_kinds();
    let (sx, sy) = subset(&x, &y, &rows);
    let forest = ForestModel::fit(&sx, &sy, &kinds, &forest_config(seed));
    let ms = measures(&sx, &(0..rows.len()).collect::<Vec<_>>(), &kinds);
    let (na, nb) = (ms[da].bins(grid), ms[db].bins(grid));
    let mut z = vec![vec![0.0; nb]; na];
    for tree in forest.trees() {
        let part = partition(tree, kinds.len());
        let cells: Vec<Vec<Cell>> = ms
            .iter()
            .enumerate()
            .map(|(d, m)| {
                if d == da || d == db {
                    m.cells(&part.cuts[d], true, grid)
                } else {
                    m.cells(&part.cuts[d], false, 1)
                }
            })
            .collect();
        let mass = masses(&part, &cells);
        let bin_mass = |d: usize, bins: usize| {
            let mut w = vec![0.0; bins];
            for c in &cells[d] {
                w[c.2] += c.1;
            }
            w
        };
        let (wa, wb) = (bin_mass(da, na), bin_mass(db, nb));
        for (leaf, m) in part.leaves.iter().zip(&mass) {
            let rest = product_except(m, &[da, db]);
            if rest == 0.0 {
                continue;
            }
            let share = |d: usize, bins: usize, w: &[f64]| {
                let mut s = vec![0.0; bins];
                for c in cells[d].iter().filter(|c| leaf.spans[d].contains(c.0)) {
                    s[c.2] += c.1;
                }
                s.iter().zip(w).map(|(v, t)| v / t).collect::<Vec<f64>>()
            };
            let (sa, sb) = (share(da, na, &wa), share(db, nb, &wb));
            for i in 0..na {
                for j in 0..nb {
                    z[i][j] += leaf.value * rest * (sa[i] * sb[j]);
                }
            }
        }
    }
    let t = forest.trees().len() as f64;
    for row in &mut z {
        for v in row.iter_mut() {
            *v /= t;
        }
    }
    let labels = |d: usize, bins: usize| -> Vec<String> {
        let domain = &layout.slots()[d].domain;
        match &ms[d].atoms {
            Some(atoms) => (0..bins)
                .map(|bin| {
                    let members: Vec<String> = atoms
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| k * bins / atoms.len() == bin)
                        .map(|(_, a)| domain.from_unit(*a).to_string())
                        .collect();
                    members.join("|")
                })
                .collect(),
            None => (0..bins)
                .map(|bin| domain.from_unit((bin as f64 + 0.5) / bins as f64).to_string())
                .collect(),
        }
    };
    Ok(Marginal2d {
        a: a.into(),
        b: b.into(),
        a_labels: labels(da, na),
        b_labels: labels(db, nb),
        z,
    })
}
