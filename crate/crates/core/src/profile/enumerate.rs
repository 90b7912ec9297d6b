use super::policy::{is_compliant, Policy};
use super::schedule::{Schedule, ScheduleEntry, Trigger};
use crate::bytecode::{Ident, Method, Program};
use crate::jit::{compile_directive, inline_tree, BranchOpt, CodeHeap, Directive, InlineTree, OptKind, Pref};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnumError {
    #[error("more than {0} schedules")]
    Budget(usize),
}

const OPTS: [(OptKind, Pref); 4] = [
    (OptKind::Bp, Pref::If),
    (OptKind::Bp, Pref::Else),
    (OptKind::Oc, Pref::If),
    (OptKind::Oc, Pref::Else),
];

/// Inline trees of depth one and two along a single chain of call sites.
fn chain_trees(m: &Method, ch: &CodeHeap) -> Vec<InlineTree> {
    let mut out = Vec::new();
    for (s, c) in m.callees() {
        out.push(InlineTree::leaf(&m.name).with(s, InlineTree::leaf(c)));
        if let Some(cm) = ch.base(c) {
            for (s2, c2) in cm.callees() {
                let inner = InlineTree::leaf(c).with(s2, InlineTree::leaf(c2));
                out.push(InlineTree::leaf(&m.name).with(s, inner));
            }
        }
    }
    out
}

/// Candidate directives for `m`: one branch optimization on the bytecode,
/// every chain tree alone, and every chain tree with one branch optimization.
pub fn method_universe(p: &Program, m: &str) -> Vec<Directive> {
    let ch = CodeHeap::new(p);
    let Some(base) = ch.base(m).cloned() else { return Vec::new() };
    let mut out = Vec::new();
    let mut push = |tree: &InlineTree, omega: Vec<BranchOpt>| {
        let d = Directive::Compile {
            method: base.name.clone(),
            tree: tree.clone(),
            omega,
        };
        if compile_directive(&ch, &d).is_ok() {
            out.push(d);
        }
    };
    let leaf = InlineTree::leaf(&base.name);
    for q in base.conditionals() {
        for (kind, pref) in OPTS {
            push(&leaf, vec![BranchOpt { kind, point: q, pref }]);
        }
    }
    for t in chain_trees(&base, &ch) {
        push(&t, Vec::new());
        let Ok(tm) = inline_tree(&base, &t, &ch) else { continue };
        for q in tm.conditionals() {
            for (kind, pref) in OPTS {
                push(&t, vec![BranchOpt { kind, point: q, pref }]);
            }
        }
    }
    out
}

/// Every `(trigger, directive)` pair: compile before the run, or at the
/// first invocation for methods that are invoked somewhere.
pub fn placed_universe(p: &Program) -> Vec<ScheduleEntry> {
    let invoked: BTreeSet<Ident> = p
        .methods
        .values()
        .flat_map(|m| m.callees().map(|(_, c)| c.clone()).collect::<Vec<_>>())
        .collect();
    let mut out = Vec::new();
    for name in p.methods.keys() {
        let ds = method_universe(p, name);
        for d in &ds {
            out.push(ScheduleEntry {
                at: Trigger::Start,
                directive: d.clone(),
            });
        }
        if invoked.contains(name) {
            for d in ds {
                out.push(ScheduleEntry {
                    at: Trigger::Call(name.clone(), 1),
                    directive: d,
                });
            }
        }
    }
    out
}

fn placement(e: &ScheduleEntry) -> (Trigger, Option<Ident>) {
    (e.at.clone(), e.directive.target().cloned())
}

/// All schedules with at most `depth` (≤ 2) non-empty directives drawn from
/// the placed universe, filtered by `pol` when given. The empty schedule
/// comes first.
pub fn enumerate_schedules(
    p: &Program,
    depth: usize,
    pol: Option<&Policy>,
    limit: usize,
) -> Result<Vec<Schedule>, EnumError> {
    let mut uni = placed_universe(p);
    if let Some(pol) = pol {
        uni.retain(|e| {
            e.directive
                .target()
                .is_some_and(|t| is_compliant(&e.directive, t, pol, p))
        });
    }
    let mut out = vec![Schedule::empty()];
    if depth >= 1 {
        for e in &uni {
            out.push(Schedule::explicit(vec![e.clone()]));
            if out.len() > limit {
                return Err(EnumError::Budget(limit));
            }
        }
    }
    if depth >= 2 {
        for (a, ea) in uni.iter().enumerate() {
            for eb in &uni[a + 1..] {
                if placement(ea) == placement(eb) {
                    continue;
                }
                out.push(Schedule::explicit(vec![ea.clone(), eb.clone()]));
                if out.len() > limit {
                    return Err(EnumError::Budget(limit));
                }
            }
        }
    }
    Ok(out)
}
