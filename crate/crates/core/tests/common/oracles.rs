//! Brute-force reference implementations used to cross-check the library.

use jitct::bytecode::{Instr, Method};
use std::collections::{BTreeMap, BTreeSet};

fn succ(m: &Method, i: usize) -> Vec<usize> {
    m.instrs[i].successors(i).iter().filter(|&s| s < m.len()).collect()
}

/// Whether a `return` is reachable from `from` without visiting `avoid`.
fn reaches_return(m: &Method, from: usize, avoid: Option<usize>) -> bool {
    let mut seen = BTreeSet::new();
    let mut work = vec![from];
    while let Some(p) = work.pop() {
        if Some(p) == avoid || !seen.insert(p) {
            continue;
        }
        if matches!(m.instrs[p], Instr::Return) {
            return true;
        }
        work.extend(succ(m, p));
    }
    false
}

/// `d` post-dominates `n` iff every path from `n` to a return passes `d`.
pub fn post_dominates(m: &Method, d: usize, n: usize) -> bool {
    d == n || !reaches_return(m, n, Some(d))
}

pub fn can_return(m: &Method, n: usize) -> bool {
    reaches_return(m, n, None)
}

/// Immediate post-dominator of `i` by enumeration; `None` when `i` never returns.
pub fn junction(m: &Method, i: usize) -> Option<usize> {
    if !can_return(m, i) {
        return None;
    }
    let strict: Vec<usize> = (0..m.len()).filter(|&d| d != i && post_dominates(m, d, i)).collect();
    strict
        .iter()
        .copied()
        .find(|&d| strict.iter().all(|&e| e == d || post_dominates(m, e, d)))
}

/// Points reachable from a successor of `i` before reaching its junction.
pub fn region(m: &Method, i: usize, j: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut work = succ(m, i);
    while let Some(p) = work.pop() {
        if p == j || !out.insert(p) {
            continue;
        }
        work.extend(succ(m, p));
    }
    out
}

/// Plug-in `H(K) - H(K|T)` in bits, straight from a joint count table.
pub fn mi_by_entropy(joint: &BTreeMap<(usize, usize), u64>) -> f64 {
    let n: f64 = joint.values().sum::<u64>() as f64;
    let mut ck: BTreeMap<usize, f64> = BTreeMap::new();
    let mut ct: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(k, t), &c) in joint {
        *ck.entry(k).or_default() += c as f64;
        *ct.entry(t).or_default() += c as f64;
    }
    let h_k: f64 = ck.values().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).log2()).sum();
    let mut h_k_t = 0.0;
    for (&t, &nt) in &ct {
        if nt == 0.0 {
            continue;
        }
        for (&(_, t2), &c) in joint {
            if t2 == t && c > 0 {
                let p = c as f64 / nt;
                h_k_t -= (nt / n) * p * p.log2();
            }
        }
    }
    h_k - h_k_t
}
