use super::check::{check_program, environment, start_ctx, ProgramReport};
use super::{lookup, set, vars_join, Ctx, Env, Level, Obligation, Signature, Signatures, TypeError, VarTypes};
use crate::bytecode::{analyze_cfg, arm_points, CfgInfo, Ident, Instr, Program};
use crate::profile::{Mode, Policy};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, Serialize)]
pub struct Inference {
    pub sigs: Signatures,
    pub policy: Policy,
    /// Conditionals typed `H`, per method, including those of `prot1` methods.
    pub secret_branches: BTreeMap<Ident, BTreeSet<usize>>,
    pub rounds: usize,
}

fn raise(slot: &mut Level, l: Level) -> bool {
    let n = slot.join(l);
    let changed = n != *slot;
    *slot = n;
    changed
}

fn raise_vars(slot: &mut VarTypes, v: &VarTypes) -> bool {
    let n = vars_join(slot, v);
    let changed = n != *slot;
    *slot = n;
    changed
}

/// Signatures and policy for `p`.
///
/// Starts from the entry signature given by the public inputs and `L`
/// everywhere else, then raises callee signatures to every call context and
/// return types to every returned level until nothing changes. Methods whose
/// signature ends with path context `H` form `prot1`; the `H` conditionals of
/// the other methods form `prot2`.
pub fn infer_policy(p: &Program) -> Result<Inference, TypeError> {
    let mut sigs: Signatures = p
        .methods
        .iter()
        .map(|(n, m)| {
            (
                n.clone(),
                Signature {
                    argv: m.argv.clone(),
                    ..Default::default()
                },
            )
        })
        .collect();
    let entry = p.entry_method();
    if let Some(sig) = sigs.get_mut(&p.entry) {
        for x in p.secret_inputs() {
            if entry.argv.contains(&x) {
                set(&mut sig.lt_in, &x, Level::H);
            } else {
                set(&mut sig.ht_in, &x, Level::H);
            }
        }
    }
    let cfgs: BTreeMap<Ident, CfgInfo> = p
        .methods
        .iter()
        .map(|(n, m)| {
            analyze_cfg(m).map(|c| (n.clone(), c)).map_err(|e| TypeError::Cfg {
                method: n.clone(),
                msg: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut order = p.callees_first();
    order.reverse();
    let mut secret_branches: BTreeMap<Ident, BTreeSet<usize>> = BTreeMap::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut changed = false;
        for name in &order {
            let m = &p.methods[name];
            let (w, obs) = environment(m, &cfgs[name], &sigs, start_ctx(&sigs[name]))?;
            if !w.secret_branches.is_empty() {
                secret_branches.entry(name.clone()).or_default().extend(w.secret_branches);
            }
            for (_, ob) in obs {
                match ob {
                    Obligation::Branch { .. } => {}
                    Obligation::Call { callee, pt, ht, args } => {
                        let s = sigs.get_mut(&callee).expect("validated callee");
                        changed |= raise(&mut s.pt, pt);
                        changed |= raise_vars(&mut s.ht_in, &ht);
                        for (x, l) in args {
                            let mut cur = lookup(&s.lt_in, &x);
                            if raise(&mut cur, l) {
                                set(&mut s.lt_in, &x, cur);
                                changed = true;
                            }
                        }
                    }
                    Obligation::Ret { ht, tau } => {
                        let s = sigs.get_mut(name).expect("own signature");
                        changed |= raise_vars(&mut s.ht_out, &ht);
                        changed |= raise(&mut s.ret, tau);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let prot1: BTreeSet<Ident> = sigs
        .iter()
        .filter(|(_, s)| s.pt == Level::H)
        .map(|(n, _)| n.clone())
        .collect();
    let prot2 = secret_branches
        .iter()
        .filter(|(m, s)| !prot1.contains(*m) && !s.is_empty())
        .map(|(m, s)| (m.clone(), s.clone()))
        .collect();
    Ok(Inference {
        sigs,
        policy: Policy {
            prot1,
            prot2,
            mode: Mode::Full,
        },
        secret_branches,
        rounds,
    })
}

fn invoked(p: &Program, m: &str, pts: &BTreeSet<usize>) -> BTreeMap<Ident, usize> {
    let mut out = BTreeMap::new();
    for &q in pts {
        if let Instr::Invoke(c) = &p.methods[m].instrs[q] {
            *out.entry(c.clone()).or_insert(0) += 1;
        }
    }
    out
}

/// Whether both arms of every `prot2` branch invoke the same multiset of
/// methods, the condition under which blocking only inlining suffices.
pub fn check_light_assumption(p: &Program, pol: &Policy) -> bool {
    for (name, pts) in &pol.prot2 {
        let Some(m) = p.method(name) else { continue };
        let Ok(cfg) = analyze_cfg(m) else { return false };
        for &i in pts {
            let (Some(&j), Some(t)) = (cfg.junc.get(&i), m.instrs.get(i).and_then(Instr::jump_target)) else {
                continue;
            };
            let if_arm = arm_points(m, t, &[j, i]);
            let else_arm = arm_points(m, i + 1, &[j, i]);
            if invoked(p, name, &if_arm) != invoked(p, name, &else_arm) {
                return false;
            }
        }
    }
    true
}

fn fmt_vars(v: &VarTypes) -> String {
    let hs: Vec<&str> = v.iter().filter(|(_, l)| **l == Level::H).map(|(x, _)| &**x).collect();
    if hs.is_empty() {
        "-".into()
    } else {
        format!("H:{}", hs.join(","))
    }
}

fn fmt_ctx(c: &Ctx) -> String {
    let st: String = c.st.iter().map(|l| l.to_string()).collect();
    format!("pt={} ht={} lt={} st=[{st}]", c.pt, fmt_vars(&c.ht), fmt_vars(&c.lt))
}

/// Per method: signature, `se_m` table, and every secret branch with its
/// region and the call sites it sweeps into `prot1`.
pub fn report(p: &Program, inf: &Inference) -> String {
    let chk: ProgramReport = check_program(p, &inf.sigs, &inf.policy);
    let mut s = String::new();
    for w in &chk.witnesses {
        let sig = &inf.sigs[&w.method];
        let tag = if inf.policy.prot1.contains(&w.method) { " [prot1]" } else { "" };
        let _ = writeln!(
            s,
            "method {}{tag}: ({}, {}, {}) -> ({}, {})",
            w.method,
            sig.pt,
            fmt_vars(&sig.ht_in),
            fmt_vars(&sig.lt_in),
            fmt_vars(&sig.ht_out),
            sig.ret
        );
        let m = &p.methods[&w.method];
        for (i, e) in w.se.iter().enumerate() {
            let row = match e {
                None => "unreachable".to_string(),
                Some(Env::Ctx(c)) => fmt_ctx(c),
                Some(Env::Ret { ht, tau }) => format!("ret ht={} tau={tau}", fmt_vars(ht)),
            };
            let _ = writeln!(s, "  {i:>3}: {:<14} {row}", m.instrs[i].to_string());
        }
        if let Ok(cfg) = analyze_cfg(m) {
            for i in &w.secret_branches {
                let region: Vec<String> = cfg.region[i].iter().map(|x| x.to_string()).collect();
                let calls: Vec<String> = cfg.region[i]
                    .iter()
                    .filter_map(|&q| match &m.instrs[q] {
                        Instr::Invoke(c) => Some(format!("{q}->{c}")),
                        _ => None,
                    })
                    .collect();
                let _ = writeln!(
                    s,
                    "  secret branch {i}: junction {} region {{{}}} calls [{}]",
                    cfg.junc[i],
                    region.join(","),
                    calls.join(", ")
                );
            }
        }
    }
    for e in &chk.errors {
        let _ = writeln!(s, "error: {e}");
    }
    s
}
