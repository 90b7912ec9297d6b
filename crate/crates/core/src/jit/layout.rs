use super::{Body, JitError, OptKind, Pref};
use crate::bytecode::{analyze_cfg, arm_points, CodeOrigin, DeoptMeta, Instr, Method, Site};
use std::collections::{BTreeSet, HashMap};

/// Branch prediction at conditional `i`, favouring arm `b`.
pub fn transform_bp(m: &Method, i: usize, b: Pref) -> Result<Method, JitError> {
    let out = branch_opt(&Body::from_method(m), i, OptKind::Bp, b)?;
    Ok(out.to_method(m.version.max(1)))
}

/// Optimistic compilation at conditional `i`: the arm not favoured by `b`
/// becomes an uncommon trap.
pub fn transform_oc(m: &Method, i: usize, b: Pref) -> Result<Method, JitError> {
    let out = branch_opt(&Body::from_method(m), i, OptKind::Oc, b)?;
    Ok(out.to_method(m.version.max(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Old(usize),
    /// Jump to the slot holding an old point.
    Goto(usize),
    Trap,
}

fn terr<T>(msg: String) -> Result<T, JitError> {
    Err(JitError::Transform(msg))
}

/// Reorders the blocks around conditional `i`: the favoured arm right after
/// the branch, the other arm (or a trap) at the end of the method.
pub(crate) fn branch_opt(body: &Body, i: usize, kind: OptKind, pref: Pref) -> Result<Body, JitError> {
    let n = body.instrs.len();
    let (flip_to, j) = match body.instrs.get(i) {
        Some(Instr::Ifeq(j)) => (Instr::Ifneq(0), *j),
        Some(Instr::Ifneq(j)) => (Instr::Ifeq(0), *j),
        _ => return terr(format!("point {i} of `{}` is not a conditional", body.name)),
    };
    let m = Method {
        name: body.name.clone(),
        argv: body.argv.clone(),
        instrs: body.instrs.clone(),
        version: 1,
        origin: CodeOrigin::Native,
        sites: body.sites.clone(),
    };
    let cfg = analyze_cfg(&m).map_err(|e| JitError::Transform(e.to_string()))?;
    let jn = cfg.junc[&i];
    let arm = |start: usize| -> Result<BTreeSet<usize>, JitError> {
        if start == jn {
            return Ok(BTreeSet::new());
        }
        if start <= i {
            return terr(format!("arm of branch {i} starts before the branch"));
        }
        Ok(arm_points(&m, start, &[jn, i]).into_iter().filter(|&p| p > i).collect())
    };
    let if_arm = arm(j)?;
    let else_arm = arm(i + 1)?;
    if !if_arm.is_disjoint(&else_arm) {
        return terr(format!("arms of branch {i} share code"));
    }
    let entry = |start: usize, a: &BTreeSet<usize>| if a.is_empty() { jn } else { start };
    let (hot, hot_entry, cold, cold_entry, flipped) = match pref {
        Pref::Else => (&else_arm, entry(i + 1, &else_arm), &if_arm, entry(j, &if_arm), false),
        Pref::If => (&if_arm, entry(j, &if_arm), &else_arm, entry(i + 1, &else_arm), true),
    };

    let mut order: Vec<Slot> = (0..=i).map(Slot::Old).collect();
    order.extend(hot.iter().map(|&p| Slot::Old(p)));
    let hot_end = order.len();
    order.extend(
        (i + 1..n)
            .filter(|p| !hot.contains(p) && !cold.contains(p))
            .map(Slot::Old),
    );
    match kind {
        OptKind::Bp => {
            if !cold.is_empty() {
                order.extend(cold.iter().map(|&p| Slot::Old(p)));
                order.push(Slot::Goto(jn));
            }
        }
        OptKind::Oc => order.push(Slot::Trap),
    }

    // The favoured arm's closing jump is dead when the junction follows it.
    let mut redirect: HashMap<usize, usize> = HashMap::new();
    if !hot.is_empty() {
        if let (Slot::Old(q), Some(Slot::Old(next))) = (order[hot_end - 1], order.get(hot_end)) {
            if body.instrs[q] == Instr::Goto(jn) && *next == jn {
                order.remove(hot_end - 1);
                redirect.insert(q, jn);
            }
        }
    }
    let follow = |p: usize| *redirect.get(&p).unwrap_or(&p);

    let branch_target = match kind {
        OptKind::Oc => None,
        OptKind::Bp => Some(follow(cold_entry)),
    };
    // Successor each slot must reach by falling through.
    let fall = |s: Slot| -> Option<usize> {
        match s {
            Slot::Old(p) if p == i => Some(follow(hot_entry)),
            Slot::Old(p) if body.instrs[p].falls_through() => Some(follow(p + 1)),
            _ => None,
        }
    };
    let jump_of = |s: Slot| -> Option<usize> {
        match s {
            Slot::Goto(t) => Some(follow(t)),
            Slot::Old(p) if p != i => match &body.instrs[p] {
                Instr::Goto(t) => Some(follow(*t)),
                _ => None,
            },
            _ => None,
        }
    };
    let mut slots: Vec<Slot> = Vec::with_capacity(order.len() + 4);
    for (k, &s) in order.iter().enumerate() {
        slots.push(s);
        if let Some(t) = fall(s) {
            let next = order.get(k + 1).copied();
            let ok = match next {
                Some(g @ Slot::Old(q)) => q == t || jump_of(g) == Some(t),
                Some(g @ Slot::Goto(_)) => jump_of(g) == Some(t),
                _ => false,
            };
            if !ok {
                slots.push(Slot::Goto(t));
            }
        }
    }

    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut trap_pos = None;
    for (k, s) in slots.iter().enumerate() {
        match s {
            Slot::Old(p) => {
                pos.insert(*p, k);
            }
            Slot::Trap => trap_pos = Some(k),
            Slot::Goto(_) => {}
        }
    }
    let at = |p: usize| -> Result<usize, JitError> {
        match pos.get(&follow(p)) {
            Some(k) => Ok(*k),
            None => terr(format!("branch {i}: point {p} is entered from outside the pruned arm")),
        }
    };

    let resume_site = body.sites[cold_entry].clone();
    if kind == OptKind::Oc && resume_site.method != body.name {
        return terr(format!(
            "branch {i} of `{}` would trap into inlined code of `{}`",
            body.name, resume_site.method
        ));
    }

    let mut instrs = Vec::with_capacity(slots.len());
    let mut sites = Vec::with_capacity(slots.len());
    let mut tid = Vec::with_capacity(slots.len());
    for s in &slots {
        match *s {
            Slot::Old(p) if p == i => {
                let target = match branch_target {
                    Some(t) => at(t)?,
                    None => trap_pos.expect("trap slot"),
                };
                let ins = if flipped {
                    flip_to.with_target(target)
                } else {
                    body.instrs[i].with_target(target)
                };
                instrs.push(ins);
                let mut site = body.sites[i].clone();
                site.flipped ^= flipped;
                sites.push(site);
                tid.push(body.tid[i]);
            }
            Slot::Old(p) => {
                let ins = &body.instrs[p];
                instrs.push(match ins.jump_target() {
                    Some(t) => ins.with_target(at(t)?),
                    None => ins.clone(),
                });
                sites.push(body.sites[p].clone());
                tid.push(body.tid[p]);
            }
            Slot::Goto(t) => {
                instrs.push(Instr::Goto(at(t)?));
                sites.push(Site {
                    flipped: false,
                    ..body.sites[follow(t)].clone()
                });
                tid.push(None);
            }
            Slot::Trap => {
                instrs.push(Instr::Deopt(DeoptMeta {
                    source_method: body.name.clone(),
                    resume_pc: resume_site.point,
                }));
                sites.push(Site {
                    flipped: false,
                    ..resume_site.clone()
                });
                tid.push(None);
            }
        }
    }
    Ok(Body {
        name: body.name.clone(),
        argv: body.argv.clone(),
        instrs,
        sites,
        tid,
    })
}
