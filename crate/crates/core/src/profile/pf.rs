use super::policy::Policy;
use crate::bytecode::{Ident, Instr};
use crate::interp::TraceEvent;
use crate::jit::{compile_directive, inline_tree, BranchOpt, CodeHeap, Directive, InlineTree, OptKind, Pref};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchCount {
    /// Went to the jump target (in bytecode terms).
    pub taken: u64,
    pub not_taken: u64,
}

impl BranchCount {
    pub fn total(&self) -> u64 {
        self.taken + self.not_taken
    }
}

/// Invocation, branch and call-site counters, keyed by bytecode coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Profile {
    pub invocations: BTreeMap<Ident, u64>,
    pub branches: BTreeMap<Ident, BTreeMap<usize, BranchCount>>,
    pub call_sites: BTreeMap<Ident, BTreeMap<usize, u64>>,
}

impl Profile {
    pub fn invocations(&self, m: &str) -> u64 {
        self.invocations.get(m).copied().unwrap_or(0)
    }

    pub fn branch(&self, m: &str, point: usize) -> BranchCount {
        self.branches
            .get(m)
            .and_then(|b| b.get(&point))
            .copied()
            .unwrap_or_default()
    }

    pub fn call_site(&self, m: &str, point: usize) -> u64 {
        self.call_sites
            .get(m)
            .and_then(|b| b.get(&point))
            .copied()
            .unwrap_or(0)
    }

    /// Counts an invocation that did not come from an `invoke` (the entry).
    pub fn record_entry(&mut self, m: &Ident) {
        *self.invocations.entry(m.clone()).or_insert(0) += 1;
    }

    pub fn observe(&mut self, ev: &TraceEvent) {
        match &ev.instr {
            Instr::Invoke(c) => {
                *self.invocations.entry(c.clone()).or_insert(0) += 1;
                *self
                    .call_sites
                    .entry(ev.site.method.clone())
                    .or_default()
                    .entry(ev.site.point)
                    .or_insert(0) += 1;
            }
            Instr::Ifeq(_) | Instr::Ifneq(_) => {
                if let Some(taken) = ev.bytecode_taken() {
                    let c = self
                        .branches
                        .entry(ev.site.method.clone())
                        .or_default()
                        .entry(ev.site.point)
                        .or_default();
                    if taken {
                        c.taken += 1;
                    } else {
                        c.not_taken += 1;
                    }
                }
            }
            _ => {}
        }
    }
}

/// Pure fold step.
pub fn update_profile(mut pr: Profile, ev: &TraceEvent) -> Profile {
    pr.observe(ev);
    pr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfConfig {
    pub compile_threshold: u64,
    pub inline_threshold: u64,
    pub inline_size: usize,
    pub min_obs: u64,
    pub oc_cutoff: f64,
    pub bp_cutoff: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            compile_threshold: 10,
            inline_threshold: 10,
            inline_size: 12,
            min_obs: 8,
            oc_cutoff: 0.02,
            bp_cutoff: 0.85,
        }
    }
}

/// `pf_m(π̂)` without a protection policy.
pub fn pf_next_directive(pr: &Profile, ch: &CodeHeap, m: &str, cfg: &PfConfig) -> Directive {
    pf_directive(pr, ch, m, cfg, None)
}

/// `pf_m(π̂)`, restricted to what `pol` allows when one is given.
///
/// Only bytecode methods are compiled. Inlining considers direct call sites of
/// already hot, small callees; each conditional of the inlined body with
/// enough observations gets a trap or a layout entry toward its dominant side.
pub fn pf_directive(pr: &Profile, ch: &CodeHeap, m: &str, cfg: &PfConfig, pol: Option<&Policy>) -> Directive {
    let Some(base) = ch.base(m) else { return Directive::Empty };
    if ch.version(m) != 0 || pr.invocations(m) < cfg.compile_threshold {
        return Directive::Empty;
    }
    if pol.is_some_and(|p| !p.may_compile(m)) {
        return Directive::Empty;
    }
    let mut tree = InlineTree::leaf(&base.name);
    for (site, c) in base.callees() {
        let small = ch.base(c).is_some_and(|cm| cm.len() <= cfg.inline_size);
        let allowed = pol.is_none_or(|p| p.may_inline(c));
        if allowed && small && pr.invocations(c) >= cfg.inline_threshold {
            tree = tree.with(site, InlineTree::leaf(c));
        }
    }
    let tm = match inline_tree(base, &tree, ch) {
        Ok(tm) => tm,
        Err(_) => {
            tree = InlineTree::leaf(&base.name);
            (**base).clone()
        }
    };
    let mut d = Directive::Compile {
        method: base.name.clone(),
        tree,
        omega: Vec::new(),
    };
    for q in tm.conditionals() {
        let site = tm.site(q);
        if pol.is_some_and(|p| p.protects_branch(&site.method, site.point)) {
            continue;
        }
        let bc = pr.branch(&site.method, site.point);
        let total = bc.total();
        if total < cfg.min_obs || total == 0 {
            continue;
        }
        let (pref, dominant, minority) = if bc.taken > bc.not_taken {
            (Pref::If, bc.taken, bc.not_taken)
        } else {
            (Pref::Else, bc.not_taken, bc.taken)
        };
        let t = total as f64;
        let kind = if (minority as f64) / t < cfg.oc_cutoff && site.method == base.name {
            OptKind::Oc
        } else if (dominant as f64) / t >= cfg.bp_cutoff {
            OptKind::Bp
        } else {
            continue;
        };
        let Directive::Compile { method, tree, omega } = &d else { unreachable!() };
        let mut next = omega.clone();
        next.push(BranchOpt { kind, point: q, pref });
        let cand = Directive::Compile {
            method: method.clone(),
            tree: tree.clone(),
            omega: next,
        };
        if compile_directive(ch, &cand).is_ok() {
            d = cand;
        }
    }
    d
}
