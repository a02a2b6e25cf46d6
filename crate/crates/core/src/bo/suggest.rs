use std::collections::HashSet;

use rand::Rng;

use super::{encoding_key, generate_candidates, optimize_acquisition, BoConfig, BoError, Candidate};
use crate::space::{Configuration, SearchSpace};

/// Configurations awaiting evaluation and the value they are imputed with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchContext {
    pub pending: Vec<Vec<f64>>,
    pub liar_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuggestResult {
    pub chosen: Vec<Candidate>,
    /// Set when the space ran out of unseen configurations.
    pub truncated: bool,
}

/// Constant-liar batch suggestion. Each pick is imputed with the liar value
/// (default: best observed loss) and the surrogate is refit with fixed
/// hyperparameters before the next pick. Never returns an observed, pending
/// or already-chosen configuration.
#[allow(clippy::too_many_arguments)]
pub fn suggest_batch(
    space: &SearchSpace,
    config: &BoConfig,
    x: &[Vec<f64>],
    y: &[f64],
    incumbent: Option<&Configuration>,
    q: usize,
    ctx: &BatchContext,
    rng: &mut impl Rng,
) -> Result<SuggestResult, BoError> {
    if x.is_empty() {
        return Err(BoError::Empty);
    }
    let f_best = y.iter().copied().fold(f64::INFINITY, f64::min);
    let liar = ctx.liar_value.unwrap_or(f_best);
    let mut train_x: Vec<Vec<f64>> = x.to_vec();
    let mut train_y: Vec<f64> = y.to_vec();
    for p in &ctx.pending {
        train_x.push(p.clone());
        train_y.push(liar);
    }
    let mut exclude: HashSet<Vec<u64>> = train_x.iter().map(|e| encoding_key(e)).collect();
    let kinds = space.layout().dim_kinds();
    let mut model = config.surrogate.fit(&train_x, &train_y, &kinds, config.trees, rng.gen())?;
    let enumerated = space.enumerate(config.pool_size);
    let mut chosen = Vec::new();
    let mut truncated = false;
    for j in 0..q {
        if j > 0 {
            model = model.refit(&train_x, &train_y)?;
        }
        let pool = match &enumerated {
            Some(all) => all.iter().map(|c| Candidate::new(space, c.clone())).collect(),
            None => generate_candidates(space, config.pool_size.max(1), rng.gen(), &config.pool, incumbent),
        };
        let score = |xs: &[Vec<f64>]| config.acquisition.score(&model.predict(xs), f_best);
        let Some((best, _)) = optimize_acquisition(space, &score, pool, config.local_steps, rng, &exclude) else {
            truncated = true;
            break;
        };
        exclude.insert(encoding_key(&best.encoded));
        train_x.push(best.encoded.clone());
        train_y.push(liar);
        chosen.push(best);
    }
    Ok(SuggestResult { chosen, truncated })
}
