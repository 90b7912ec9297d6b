use super::enumerate::{enumerate_schedules, placed_universe};
use super::policy::{is_compliant, Policy};
use super::schedule::Schedule;
use crate::bytecode::{Inputs, Program};
use crate::interp::{run_with, CostModel, RunOptions};

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub schedule: Schedule,
    pub delta: u64,
    /// Schedules evaluated.
    pub explored: usize,
}

fn delta_of(p: &Program, pair: (&Inputs, &Inputs), s: &Schedule, cm: &CostModel) -> Option<u64> {
    let opts = RunOptions::quiet();
    let a = run_with(p, pair.0, s, cm, &opts).ok()?;
    let b = run_with(p, pair.1, s, cm, &opts).ok()?;
    Some(a.total_cost.abs_diff(b.total_cost))
}

/// Looks for the schedule that maximizes the cost gap between two inputs:
/// all schedules up to two directives, then greedy extension of the best one
/// while `budget` evaluations remain. Ties keep the earliest schedule found.
pub fn adversarial_search(
    p: &Program,
    pair: (&Inputs, &Inputs),
    budget: usize,
    cm: &CostModel,
    pol: Option<&Policy>,
) -> SearchResult {
    let mut best = SearchResult {
        schedule: Schedule::empty(),
        delta: delta_of(p, pair, &Schedule::empty(), cm).unwrap_or(0),
        explored: 1,
    };
    let cands = enumerate_schedules(p, 2, pol, usize::MAX).unwrap_or_default();
    for s in cands.iter().skip(1) {
        if best.explored >= budget {
            return best;
        }
        best.explored += 1;
        if let Some(d) = delta_of(p, pair, s, cm) {
            if d > best.delta {
                best.delta = d;
                best.schedule = s.clone();
            }
        }
    }
    let uni: Vec<_> = placed_universe(p)
        .into_iter()
        .filter(|e| {
            pol.is_none_or(|pol| {
                e.directive
                    .target()
                    .is_some_and(|t| is_compliant(&e.directive, t, pol, p))
            })
        })
        .collect();
    loop {
        let mut improved = false;
        for e in &uni {
            if best.explored >= budget {
                return best;
            }
            if best.schedule.entries.iter().any(|x| x.at == e.at && x.directive.target() == e.directive.target()) {
                continue;
            }
            let mut s = best.schedule.clone();
            s.entries.push(e.clone());
            best.explored += 1;
            if let Some(d) = delta_of(p, pair, &s, cm) {
                if d > best.delta {
                    best.delta = d;
                    best.schedule = s;
                    improved = true;
                }
            }
        }
        if !improved {
            return best;
        }
    }
}
