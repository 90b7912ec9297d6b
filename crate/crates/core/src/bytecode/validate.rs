use super::{CodeOrigin, Ident, Instr, Method, Program};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "rule")]
pub enum Violation {
    #[error("{method}: method has no instructions")]
    EmptyMethod { method: Ident },
    #[error("{method}: method must contain return")]
    MissingReturn { method: Ident },
    #[error("{method}@{point}: return inside a branch region")]
    EarlyReturn { method: Ident, point: usize },
    #[error("{method}@{point}: jump target out of range")]
    JumpOutOfRange { method: Ident, point: usize },
    #[error("{method}@{point}: execution falls off the end of the method")]
    FallOffEnd { method: Ident, point: usize },
    #[error("{method}@{point}: deopt in a bytecode method")]
    DeoptInBytecode { method: Ident, point: usize },
    #[error("{method}: version {version} inconsistent with origin {origin:?}")]
    VersionOrigin {
        method: Ident,
        version: u32,
        origin: CodeOrigin,
    },
    #[error("{method}@{point}: no path to return")]
    NoPathToReturn { method: Ident, point: usize },
    #[error("{method}@{point}: operand stack depth differs between paths")]
    StackMismatch { method: Ident, point: usize },
    #[error("{method}@{point}: operand stack underflow")]
    StackUnderflow { method: Ident, point: usize },
    #[error("{method}@{point}: undeclared global `{var}`")]
    UndeclaredGlobal {
        method: Ident,
        point: usize,
        var: Ident,
    },
    #[error("{method}@{point}: local `{var}` may be read before assignment")]
    UnassignedLocal {
        method: Ident,
        point: usize,
        var: Ident,
    },
    #[error("{method}@{point}: unknown method `{callee}`")]
    UnknownMethod {
        method: Ident,
        point: usize,
        callee: Ident,
    },
    #[error("recursion through {}", cycle.join(" -> "))]
    RecursionCycle { cycle: Vec<Ident> },
    #[error("entry `{entry}` is not a method")]
    UnknownEntry { entry: Ident },
    #[error("public input `{var}` is neither an entry argument nor a global")]
    UnknownPublic { var: Ident },
}

/// Operand-stack depth before each point; `None` for unreachable points.
pub fn stack_depths(
    m: &Method,
    arity: &dyn Fn(&str) -> Option<usize>,
) -> Result<Vec<Option<usize>>, Violation> {
    let n = m.instrs.len();
    let mut depth: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return Ok(depth);
    }
    depth[0] = Some(0);
    let mut work = vec![0usize];
    let under = |point| Violation::StackUnderflow {
        method: m.name.clone(),
        point,
    };
    while let Some(i) = work.pop() {
        let d = depth[i].unwrap_or(0);
        let (pops, pushes) = match &m.instrs[i] {
            Instr::Binop(_) => (2, 1),
            Instr::Push(_) | Instr::Load(_) | Instr::Get(_) => (0, 1),
            Instr::Pop | Instr::Store(_) | Instr::Put(_) => (1, 0),
            Instr::Swap => (2, 2),
            Instr::Ifeq(_) | Instr::Ifneq(_) => (1, 0),
            Instr::Goto(_) | Instr::Deopt(_) => (0, 0),
            Instr::Return => (1, 0),
            Instr::Invoke(c) => (arity(c).unwrap_or(0), 1),
        };
        if d < pops {
            return Err(under(i));
        }
        let nd = d - pops + pushes;
        for s in m.instrs[i].successors(i).iter() {
            if s >= n {
                continue;
            }
            match depth[s] {
                None => {
                    depth[s] = Some(nd);
                    work.push(s);
                }
                Some(old) if old != nd => {
                    return Err(Violation::StackMismatch {
                        method: m.name.clone(),
                        point: s,
                    })
                }
                _ => {}
            }
        }
    }
    Ok(depth)
}

fn reachable(m: &Method) -> Vec<bool> {
    let n = m.instrs.len();
    let mut seen = vec![false; n];
    let mut work = vec![0usize];
    while let Some(i) = work.pop() {
        if i >= n || seen[i] {
            continue;
        }
        seen[i] = true;
        work.extend(m.instrs[i].successors(i).iter());
    }
    seen
}

fn method_violations(p: &Program, m: &Method, out: &mut Vec<Violation>) {
    let name = || m.name.clone();
    let n = m.instrs.len();
    if n == 0 {
        out.push(Violation::EmptyMethod { method: name() });
        return;
    }
    if (m.version == 0) != (m.origin == CodeOrigin::Bytecode) {
        out.push(Violation::VersionOrigin {
            method: name(),
            version: m.version,
            origin: m.origin,
        });
    }
    let mut structural = false;
    for (i, ins) in m.instrs.iter().enumerate() {
        if let Some(j) = ins.jump_target() {
            if j >= n {
                out.push(Violation::JumpOutOfRange { method: name(), point: i });
                structural = true;
            }
        }
        if ins.falls_through() && i + 1 == n {
            out.push(Violation::FallOffEnd { method: name(), point: i });
            structural = true;
        }
        match ins {
            Instr::Deopt(_) if m.origin == CodeOrigin::Bytecode => {
                out.push(Violation::DeoptInBytecode { method: name(), point: i })
            }
            Instr::Get(y) | Instr::Put(y) if !p.globals.contains_key(y) => {
                out.push(Violation::UndeclaredGlobal {
                    method: name(),
                    point: i,
                    var: y.clone(),
                })
            }
            Instr::Invoke(c) if !p.methods.contains_key(c) => {
                out.push(Violation::UnknownMethod {
                    method: name(),
                    point: i,
                    callee: c.clone(),
                });
                structural = true;
            }
            _ => {}
        }
    }
    let returns: Vec<usize> = (0..n).filter(|&i| matches!(m.instrs[i], Instr::Return)).collect();
    if returns.is_empty() {
        out.push(Violation::MissingReturn { method: name() });
        return;
    }
    // The last return is the method's exit; any other one exits from inside a branch.
    for &r in &returns[..returns.len() - 1] {
        out.push(Violation::EarlyReturn { method: name(), point: r });
    }
    if structural {
        return;
    }

    // Backward reachability to a return from every reachable point.
    let reach = reachable(m);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for s in m.instrs[i].successors(i).iter() {
            preds[s].push(i);
        }
    }
    let mut to_ret = vec![false; n];
    let mut work: Vec<usize> = returns.clone();
    if m.origin == CodeOrigin::Native {
        work.extend((0..n).filter(|&i| matches!(m.instrs[i], Instr::Deopt(_))));
    }
    while let Some(i) = work.pop() {
        if to_ret[i] {
            continue;
        }
        to_ret[i] = true;
        work.extend(preds[i].iter().copied());
    }
    for i in 0..n {
        if reach[i] && !to_ret[i] {
            out.push(Violation::NoPathToReturn { method: name(), point: i });
        }
    }

    let arity = |c: &str| p.methods.get(c).map(|cm| cm.argv.len());
    match stack_depths(m, &arity) {
        Err(v) => out.push(v),
        Ok(depths) => {
            for &r in &returns {
                if depths[r] == Some(0) {
                    out.push(Violation::StackUnderflow { method: name(), point: r });
                }
            }
        }
    }

    // Definite assignment of locals.
    let locals = m.locals();
    let idx: BTreeMap<&str, usize> = locals.iter().enumerate().map(|(i, x)| (&**x, i)).collect();
    let all: BTreeSet<usize> = (0..locals.len()).collect();
    let mut assigned: Vec<Option<BTreeSet<usize>>> = vec![None; n];
    assigned[0] = Some((0..m.argv.len()).collect());
    let mut work = vec![0usize];
    while let Some(i) = work.pop() {
        let mut cur = assigned[i].clone().unwrap_or_else(|| all.clone());
        if let Instr::Store(x) = &m.instrs[i] {
            cur.insert(idx[&**x]);
        }
        for s in m.instrs[i].successors(i).iter() {
            let next = match &assigned[s] {
                None => cur.clone(),
                Some(old) => old.intersection(&cur).copied().collect(),
            };
            if assigned[s].as_ref() != Some(&next) {
                assigned[s] = Some(next);
                work.push(s);
            }
        }
    }
    let mut flagged = BTreeSet::new();
    for i in 0..n {
        if let (Instr::Load(x), Some(a)) = (&m.instrs[i], &assigned[i]) {
            if !a.contains(&idx[&**x]) && flagged.insert(x.clone()) {
                out.push(Violation::UnassignedLocal {
                    method: name(),
                    point: i,
                    var: x.clone(),
                });
            }
        }
    }
}

fn find_cycle(p: &Program) -> Option<Vec<Ident>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn dfs(p: &Program, m: &Ident, marks: &mut BTreeMap<Ident, Mark>, path: &mut Vec<Ident>) -> Option<Vec<Ident>> {
        marks.insert(m.clone(), Mark::Active);
        path.push(m.clone());
        if let Some(meth) = p.methods.get(m) {
            for (_, c) in meth.callees() {
                match marks.get(c).copied().unwrap_or(Mark::New) {
                    Mark::Active => {
                        let start = path.iter().position(|x| x == c).unwrap_or(0);
                        let mut cyc = path[start..].to_vec();
                        cyc.push(c.clone());
                        return Some(cyc);
                    }
                    Mark::New if p.methods.contains_key(c) => {
                        if let Some(cyc) = dfs(p, c, marks, path) {
                            return Some(cyc);
                        }
                    }
                    _ => {}
                }
            }
        }
        path.pop();
        marks.insert(m.clone(), Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for m in p.methods.keys() {
        if marks.get(m).copied().unwrap_or(Mark::New) == Mark::New {
            if let Some(c) = dfs(p, m, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Checks every structural assumption the machine and analyses rely on.
pub fn validate(p: &Program) -> Vec<Violation> {
    let mut out = Vec::new();
    for m in p.methods.values() {
        method_violations(p, m, &mut out);
    }
    if let Some(cycle) = find_cycle(p) {
        out.push(Violation::RecursionCycle { cycle });
    }
    match p.methods.get(&p.entry) {
        None => out.push(Violation::UnknownEntry { entry: p.entry.clone() }),
        Some(e) => {
            for v in &p.public_inputs {
                if !e.argv.contains(v) && !p.globals.contains_key(v) {
                    out.push(Violation::UnknownPublic { var: v.clone() });
                }
            }
        }
    }
    out
}
