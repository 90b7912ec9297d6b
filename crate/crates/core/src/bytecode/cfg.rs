use super::{Instr, Method};
use fixedbitset::FixedBitSet;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{method}@{point}: branch has no junction point")]
    NoJunction { method: String, point: usize },
}

/// Control-flow facts used by the JIT layout passes and the type checker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CfgInfo {
    pub nxt: Vec<BTreeSet<usize>>,
    pub preds: Vec<BTreeSet<usize>>,
    /// Branch point to its immediate post-dominator.
    pub junc: BTreeMap<usize, usize>,
    pub region: BTreeMap<usize, BTreeSet<usize>>,
    pub maxbp: BTreeMap<usize, BTreeSet<usize>>,
}

impl CfgInfo {
    pub fn is_junction(&self, p: usize) -> bool {
        self.maxbp.contains_key(&p)
    }

    /// Branch points whose junction is `j`.
    pub fn branches_joining(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.junc.iter().filter(move |(_, &jj)| jj == j).map(|(&i, _)| i)
    }
}

/// Points reachable from `start` without entering any point of `stop`.
pub fn arm_points(m: &Method, start: usize, stop: &[usize]) -> BTreeSet<usize> {
    let n = m.instrs.len();
    let mut out = BTreeSet::new();
    let mut work = vec![start];
    while let Some(p) = work.pop() {
        if p >= n || stop.contains(&p) || !out.insert(p) {
            continue;
        }
        work.extend(m.instrs[p].successors(p).iter());
    }
    out
}

fn post_dominators(m: &Method) -> Vec<FixedBitSet> {
    let n = m.instrs.len();
    let mut full = FixedBitSet::with_capacity(n);
    full.insert_range(..);
    let mut pdom: Vec<FixedBitSet> = (0..n)
        .map(|i| {
            if matches!(m.instrs[i], Instr::Return) {
                let mut s = FixedBitSet::with_capacity(n);
                s.insert(i);
                s
            } else {
                full.clone()
            }
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            if matches!(m.instrs[i], Instr::Return) {
                continue;
            }
            let mut acc: Option<FixedBitSet> = None;
            for s in m.instrs[i].successors(i).iter().filter(|&s| s < n) {
                match &mut acc {
                    None => acc = Some(pdom[s].clone()),
                    Some(a) => a.intersect_with(&pdom[s]),
                }
            }
            let mut next = acc.unwrap_or_else(|| full.clone());
            next.insert(i);
            if next != pdom[i] {
                pdom[i] = next;
                changed = true;
            }
        }
    }
    pdom
}

/// Successors, junctions, regions and maximal branch points of `m`.
///
/// Nodes that cannot reach a `return` (uncommon traps) are post-dominated by
/// every node, so branches guarding a trap still have a junction.
pub fn analyze_cfg(m: &Method) -> Result<CfgInfo, AnalysisError> {
    let n = m.instrs.len();
    let mut nxt = vec![BTreeSet::new(); n];
    let mut preds = vec![BTreeSet::new(); n];
    for i in 0..n {
        for s in m.instrs[i].successors(i).iter().filter(|&s| s < n) {
            nxt[i].insert(s);
            preds[s].insert(i);
        }
    }
    let pdom = post_dominators(m);
    let mut returns = vec![false; n];
    let mut work: Vec<usize> = (0..n).filter(|&i| matches!(m.instrs[i], Instr::Return)).collect();
    while let Some(p) = work.pop() {
        if !returns[p] {
            returns[p] = true;
            work.extend(preds[p].iter().copied());
        }
    }
    let mut junc = BTreeMap::new();
    let mut region = BTreeMap::new();
    for i in m.conditionals() {
        if !returns[i] {
            return Err(AnalysisError::NoJunction {
                method: m.name.to_string(),
                point: i,
            });
        }
        let mut strict = pdom[i].clone();
        strict.set(i, false);
        let j = strict
            .ones()
            .find(|&d| pdom[d] == strict)
            .ok_or_else(|| AnalysisError::NoJunction {
                method: m.name.to_string(),
                point: i,
            })?;
        junc.insert(i, j);
        let mut reg = BTreeSet::new();
        for s in &nxt[i] {
            reg.extend(arm_points(m, *s, &[j]));
        }
        region.insert(i, reg);
    }
    let mut maxbp: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (&i, &j) in &junc {
        let ri = &region[&i];
        let nested = junc.iter().any(|(&k, &jk)| {
            k != i && jk == j && {
                let rk = &region[&k];
                ri.len() < rk.len() && ri.is_subset(rk)
            }
        });
        if !nested {
            maxbp.entry(j).or_default().insert(i);
        }
    }
    Ok(CfgInfo {
        nxt,
        preds,
        junc,
        region,
        maxbp,
    })
}
