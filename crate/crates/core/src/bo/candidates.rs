use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::space::{Configuration, Domain, SearchSpace, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: Configuration,
    pub encoded: Vec<f64>,
}

impl Candidate {
    pub fn new(space: &SearchSpace, config: Configuration) -> Self {
        let encoded = space.encode_projected(&config);
        Candidate { config, encoded }
    }
}

/// Exact identity of an encoding, usable as a set key.
pub fn encoding_key(encoded: &[f64]) -> Vec<u64> {
    encoded.iter().map(|v| v.to_bits()).collect()
}

/// Pool composition: `local_fraction` of the pool are mutations of the
/// incumbent, the rest uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStrategy {
    pub local_fraction: f64,
}

impl Default for PoolStrategy {
    fn default() -> Self {
        PoolStrategy { local_fraction: 0.3 }
    }
}

/// `n` candidates drawn from the given (current) space version.
pub fn generate_candidates(
    space: &SearchSpace,
    n: usize,
    seed: u64,
    pool: &PoolStrategy,
    incumbent: Option<&Configuration>,
) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = match incumbent {
        Some(_) => ((n as f64) * pool.local_fraction.clamp(0.0, 1.0)).round() as usize,
        None => 0,
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n - local {
        out.push(Candidate::new(space, space.sample_with(&mut rng)));
    }
    if let Some(inc) = incumbent {
        let base = space.rebuild(inc, &IndexMap::new(), &mut rng);
        for _ in 0..local {
            let mut c = base.clone();
            for _ in 0..rng.gen_range(1..=3) {
                c = space.mutate(&c, &mut rng).0;
            }
            out.push(Candidate::new(space, c));
        }
    }
    out
}

fn neighbor_values(domain: &Domain, current: &Value, rng: &mut impl Rng) -> Vec<Value> {
    match (domain, current) {
        (Domain::Int { lo, hi }, Value::Int(v)) => {
            if hi - lo <= 10 {
                (*lo..=*hi).filter(|x| x != v).map(Value::Int).collect()
            } else {
                let step = ((hi - lo) / 10).max(1);
                let mut vals: Vec<i64> = vec![v - 1, v + 1, v - step, v + step, rng.gen_range(*lo..=*hi)];
                vals.retain(|x| x != v && (lo..=hi).contains(&x));
                vals.sort();
                vals.dedup();
                vals.into_iter().map(Value::Int).collect()
            }
        }
        (Domain::Float { .. }, Value::Float(_)) => {
            let u = domain.to_unit(current).unwrap_or(0.5);
            [0.02, 0.1, 0.3]
                .iter()
                .map(|s| {
                    let delta: f64 = rng.gen_range(-1.0..=1.0) * s;
                    domain.from_unit((u + delta).clamp(0.0, 1.0))
                })
                .filter(|x| x != current)
                .collect()
        }
        (Domain::Choice { values }, Value::Choice(c)) => {
            values.iter().filter(|v| *v != c).map(|v| Value::Choice(v.clone())).collect()
        }
        _ => Vec::new(),
    }
}

/// Every single-parameter change of `config` (sampled for wide ranges),
/// capped at `cap` neighbors.
fn neighbors(space: &SearchSpace, config: &Configuration, rng: &mut impl Rng, cap: usize) -> Vec<Candidate> {
    let layout = space.layout();
    let mut moves: Vec<(String, Value)> = Vec::new();
    for (path, value) in &config.assignments {
        if let Some(i) = layout.slot_index(path) {
            for v in neighbor_values(&layout.slots()[i].domain, value, rng) {
                moves.push((path.clone(), v));
            }
        }
    }
    if moves.len() > cap {
        moves.shuffle(rng);
        moves.truncate(cap);
    }
    moves
        .into_iter()
        .map(|(path, v)| {
            let mut o = IndexMap::new();
            o.insert(path, v);
            Candidate::new(space, space.rebuild(config, &o, rng))
        })
        .collect()
}

fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    let (sa, sb) = (if a.0.is_nan() { f64::NEG_INFINITY } else { a.0 }, if b.0.is_nan() { f64::NEG_INFINITY } else { b.0 });
    match sa.total_cmp(&sb) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let lex = a.1.iter().zip(b.1).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
            lex.unwrap_or(a.1.len().cmp(&b.1.len())).is_lt()
        }
    }
}

/// Argmax of `score` over the pool (ties to the lexicographically lowest
/// encoding), refined by up to `local_steps` hill-climbing moves. Excluded
/// encodings are never returned.
pub fn optimize_acquisition(
    space: &SearchSpace,
    score: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    pool: Vec<Candidate>,
    local_steps: usize,
    rng: &mut impl Rng,
    exclude: &HashSet<Vec<u64>>,
) -> Option<(Candidate, f64)> {
    let pool: Vec<Candidate> = pool
        .into_iter()
        .filter(|c| !exclude.contains(&encoding_key(&c.encoded)))
        .collect();
    let pick = |cands: Vec<Candidate>| -> Option<(Candidate, f64)> {
        if cands.is_empty() {
            return None;
        }
        let xs: Vec<Vec<f64>> = cands.iter().map(|c| c.encoded.clone()).collect();
        let scores = score(&xs);
        let mut best = 0;
        for i in 1..cands.len() {
            if better((scores[i], &xs[i]), (scores[best], &xs[best])) {
                best = i;
            }
        }
        let s = scores[best];
        cands.into_iter().nth(best).map(|c| (c, s))
    };
    let (mut current, mut value) = pick(pool)?;
    for _ in 0..local_steps {
        let near: Vec<Candidate> = neighbors(space, &current.config, rng, 256)
            .into_iter()
            .filter(|c| !exclude.contains(&encoding_key(&c.encoded)))
            .collect();
        match pick(near) {
            Some((c, s)) if s > value => {
                current = c;
                value = s;
            }
            _ => break,
        }
    }
    Some((current, value))
}
