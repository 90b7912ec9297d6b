use super::{base_version, Body, CodeHeap, InlineTree, JitError};
use crate::bytecode::{stack_depths, CodeOrigin, Ident, Instr, Method, Site};
use std::collections::HashMap;
use std::sync::Arc;

/// `t(m)`: every invocation designated by `t` replaced by the callee body.
pub fn inline_tree(m: &Method, t: &InlineTree, ch: &CodeHeap) -> Result<Method, JitError> {
    if t.children.is_empty() && t.method == m.name {
        return Ok(m.clone());
    }
    let body = inline_body(m, t, ch, &mut 0)?;
    let mut out = body.to_method(m.version.max(1));
    out.origin = CodeOrigin::Native;
    Ok(out)
}

/// Symbolic jump target while the new body is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Parent(usize),
    Callee(usize, usize),
}

fn rename(ins: &Instr, map: &HashMap<Ident, Ident>) -> Instr {
    match ins {
        Instr::Load(x) => Instr::Load(map[x].clone()),
        Instr::Store(x) => Instr::Store(map[x].clone()),
        other => other.clone(),
    }
}

pub(crate) fn inline_body(m: &Method, t: &InlineTree, ch: &CodeHeap, fresh: &mut u32) -> Result<Body, JitError> {
    if t.method != m.name {
        return Err(JitError::Inline(format!(
            "tree node `{}` does not label method `{}`",
            t.method, m.name
        )));
    }
    let mut callees: HashMap<usize, Body> = HashMap::new();
    for (site, sub) in &t.children {
        match m.instrs.get(*site) {
            Some(Instr::Invoke(c)) if *c == sub.method => {}
            _ => {
                return Err(JitError::Inline(format!(
                    "point {site} of `{}` does not hold `invoke {}`",
                    m.name, sub.method
                )))
            }
        }
        if callees.contains_key(site) {
            return Err(JitError::Inline(format!("call site {site} of `{}` inlined twice", m.name)));
        }
        let cbase = base_version(ch, &sub.method)?;
        let inner = inline_body(cbase, sub, ch, fresh)?;
        callees.insert(*site, inner);
    }

    let mut instrs: Vec<(Instr, Option<Key>)> = Vec::new();
    let mut sites: Vec<Site> = Vec::new();
    let mut at: HashMap<Key, usize> = HashMap::new();
    let arity = |c: &str| ch.base(c).map(|cm| cm.argv.len());
    for (p, ins) in m.instrs.iter().enumerate() {
        at.insert(Key::Parent(p), instrs.len());
        let here = m.site(p);
        let Some(cb) = callees.get(&p) else {
            let key = ins.jump_target().map(Key::Parent);
            instrs.push((ins.clone(), key));
            sites.push(here);
            continue;
        };
        *fresh += 1;
        let tag = *fresh;
        let names: HashMap<Ident, Ident> = cb
            .to_method(0)
            .locals()
            .into_iter()
            .map(|x| {
                let r: Ident = Arc::from(format!("{x}${tag}"));
                (x, r)
            })
            .collect();
        for x in cb.argv.iter().rev() {
            instrs.push((Instr::Store(names[x].clone()), None));
            sites.push(here.clone());
        }
        let cm = Method {
            origin: CodeOrigin::Native,
            version: 1,
            ..cb.to_method(1)
        };
        let depths = stack_depths(&cm, &arity)
            .map_err(|v| JitError::Inline(format!("callee `{}` is not stack-balanced: {v}", cb.name)))?;
        let post = Key::Parent(p + 1);
        for (q, cins) in cb.instrs.iter().enumerate() {
            at.insert(Key::Callee(p, q), instrs.len());
            let csite = cb.sites[q].clone();
            match cins {
                Instr::Return => {
                    let d = depths[q].unwrap_or(1);
                    // Drop whatever the callee left under its return value.
                    for _ in 1..d {
                        instrs.push((Instr::Swap, None));
                        sites.push(csite.clone());
                        instrs.push((Instr::Pop, None));
                        sites.push(csite.clone());
                    }
                    instrs.push((Instr::Goto(0), Some(post)));
                    sites.push(csite);
                }
                other => {
                    let key = other.jump_target().map(|j| Key::Callee(p, j));
                    instrs.push((rename(other, &names), key));
                    sites.push(csite);
                }
            }
        }
    }
    let resolved: Vec<Instr> = instrs
        .into_iter()
        .map(|(ins, key)| match key {
            Some(k) => ins.with_target(at[&k]),
            None => ins,
        })
        .collect();
    let n = resolved.len();
    Ok(Body {
        name: m.name.clone(),
        argv: m.argv.clone(),
        instrs: resolved,
        sites,
        tid: (0..n).map(Some).collect(),
    })
}
