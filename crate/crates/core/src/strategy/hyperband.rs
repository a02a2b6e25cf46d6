use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    FidelityBudget, Observation, Proposal, Result, SearchStrategy, StrategyCore, StrategyError, TaskId,
};
use crate::space::{Configuration, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub n: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: u32,
    pub n0: usize,
    pub r0: f64,
    pub rounds: Vec<Round>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbandPlan {
    pub max_resource: f64,
    pub eta: f64,
    pub s_max: u32,
    /// Most aggressive bracket first.
    pub brackets: Vec<Bracket>,
}

impl HyperbandPlan {
    pub fn bracket_budget(&self, bracket: &Bracket) -> f64 {
        bracket.rounds.iter().map(|r| r.n as f64 * r.r).sum()
    }
}

/// Canonical hyperband brackets for maximum resource `max_resource` and
/// reduction factor `eta`.
pub fn hyperband_schedule(max_resource: f64, eta: f64) -> Result<HyperbandPlan> {
    if !(max_resource >= 1.0 && max_resource.is_finite()) {
        return Err(StrategyError::InvalidPlan(format!("R must be >= 1, got {max_resource}")));
    }
    if !(eta > 1.0 && eta.is_finite()) {
        return Err(StrategyError::InvalidPlan(format!("eta must be > 1, got {eta}")));
    }
    // floor(log_eta R) without trusting ln() at exact powers
    let mut s_max = 0u32;
    while eta.powi(s_max as i32 + 1) <= max_resource * (1.0 + 1e-9) {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let n0 = ((s_max + 1) as f64 / (s + 1) as f64 * eta.powi(s as i32) - 1e-9).ceil() as usize;
            let r0 = max_resource * eta.powi(-(s as i32));
            let mut rounds = Vec::with_capacity(s as usize + 1);
            let (mut n, mut r) = (n0, r0);
            for i in 0..=s {
                rounds.push(Round { n, r });
                if i < s {
                    n = (n as f64 / eta + 1e-9).floor() as usize;
                    r *= eta;
                }
            }
            Bracket { s, n0, r0, rounds }
        })
        .collect();
    Ok(HyperbandPlan {
        max_resource,
        eta,
        s_max,
        brackets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Slot {
    Waiting,
    Issued(TaskId),
    Done(TaskId, f64),
    Lost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    config: Configuration,
    slot: Slot,
}

/// Successive halving brackets, cycling from most to least aggressive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperband {
    core: StrategyCore,
    plan: HyperbandPlan,
    bracket: usize,
    round: usize,
    started: bool,
    rung: Vec<Entry>,
}

impl Hyperband {
    pub fn new(seed: u64, plan: HyperbandPlan) -> Self {
        Hyperband {
            core: StrategyCore::new(seed),
            plan,
            bracket: 0,
            round: 0,
            started: false,
            rung: Vec::new(),
        }
    }

    pub fn plan(&self) -> &HyperbandPlan {
        &self.plan
    }

    /// (bracket s, round index) currently being filled.
    pub fn position(&self) -> (u32, usize) {
        (self.plan.brackets[self.bracket].s, self.round)
    }

    fn current_round(&self) -> Round {
        self.plan.brackets[self.bracket].rounds[self.round]
    }

    fn start_round_zero(&mut self, space: &SearchSpace) {
        let n = self.current_round().n;
        self.rung = (0..n)
            .map(|_| Entry {
                config: space.sample_with(&mut self.core.rng),
                slot: Slot::Waiting,
            })
            .collect();
    }

    fn resolved(&self) -> bool {
        self.rung.iter().all(|e| matches!(e.slot, Slot::Done(..) | Slot::Lost))
    }

    /// Moves to the next round (promoting the best) or the next bracket.
    fn advance(&mut self, space: &SearchSpace) {
        let bracket = &self.plan.brackets[self.bracket];
        if self.round + 1 < bracket.rounds.len() {
            let keep = bracket.rounds[self.round + 1].n;
            let survivors = promote(&self.rung, keep);
            self.round += 1;
            self.rung = survivors
                .into_iter()
                .map(|config| Entry {
                    config: space.rebuild(&config, &Default::default(), &mut self.core.rng),
                    slot: Slot::Waiting,
                })
                .collect();
        } else {
            self.bracket = (self.bracket + 1) % self.plan.brackets.len();
            self.round = 0;
            self.start_round_zero(space);
        }
    }
}

/// The `keep` lowest-loss completed entries, ties to the earlier task.
fn promote(rung: &[Entry], keep: usize) -> Vec<Configuration> {
    let mut done: Vec<(TaskId, f64, &Configuration)> = rung
        .iter()
        .filter_map(|e| match e.slot {
            Slot::Done(id, reward) => Some((id, reward, &e.config)),
            _ => None,
        })
        .collect();
    done.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    done.into_iter().take(keep).map(|(_, _, c)| c.clone()).collect()
}

impl SearchStrategy for Hyperband {
    fn bind_space(&mut self, space: Arc<SearchSpace>) {
        // configurations not yet issued move into the new space
        for entry in &mut self.rung {
            if entry.slot == Slot::Waiting {
                entry.config = space.rebuild(&entry.config, &Default::default(), &mut self.core.rng);
            }
        }
        self.core.space = Some(space);
    }

    fn space(&self) -> Option<&Arc<SearchSpace>> {
        self.core.space.as_ref()
    }

    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>> {
        let space = self.core.space()?;
        if !self.started {
            self.started = true;
            self.start_round_zero(&space);
        }
        let mut out = Vec::new();
        // empty rungs (everything lost) are skipped in the same call
        for _ in 0..=self.plan.brackets.len() * (self.plan.s_max as usize + 2) {
            if out.len() == batch {
                break;
            }
            let fidelity = FidelityBudget {
                resource: self.current_round().r,
                is_final: self.round + 1 == self.plan.brackets[self.bracket].rounds.len(),
            };
            let mut issued_any = false;
            for i in 0..self.rung.len() {
                if out.len() == batch {
                    break;
                }
                if self.rung[i].slot == Slot::Waiting {
                    let p = self.core.issue(self.rung[i].config.clone(), fidelity);
                    self.rung[i].slot = Slot::Issued(p.task_id);
                    out.push(p);
                    issued_any = true;
                }
            }
            if issued_any || !self.resolved() {
                break;
            }
            self.advance(&space);
        }
        Ok(out)
    }

    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()> {
        let added = self.core.ingest(rewards)?;
        for obs in added {
            if let Some(e) = self
                .rung
                .iter_mut()
                .find(|e| matches!(e.slot, Slot::Issued(id) if id == obs.task_id))
            {
                e.slot = Slot::Done(obs.task_id, obs.reward);
            }
        }
        Ok(())
    }

    fn handle_lost(&mut self, ids: &[TaskId]) {
        for e in &mut self.rung {
            if matches!(e.slot, Slot::Issued(id) if ids.contains(&id)) {
                e.slot = Slot::Lost;
            }
        }
    }

    fn observations(&self) -> &[Observation] {
        &self.core.observations
    }
}
