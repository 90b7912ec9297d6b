use super::{
    discharge, lookup, transfer_raw, vars_join, Ctx, Level, Obligation, Out, Signatures, TypeError, VarTypes,
};
use crate::bytecode::{analyze_cfg, CfgInfo, Ident, Method, Program};
use crate::profile::Policy;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// `se_m(i)`: a context, or `(ht, τ)` at the return point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Env {
    Ctx(Ctx),
    Ret { ht: VarTypes, tau: Level },
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodWitness {
    pub method: Ident,
    /// `None` at unreachable points.
    pub se: Vec<Option<Env>>,
    /// Junction point to the maximal branch point chosen as witness.
    pub junction_witness: BTreeMap<usize, usize>,
    /// Conditionals typed with `pt' = H`.
    pub secret_branches: BTreeSet<usize>,
}

fn join_ctx(m: &Method, j: usize, a: &Ctx, b: &Ctx) -> Result<Ctx, TypeError> {
    if a.st.len() != b.st.len() {
        return Err(TypeError::StackMismatch {
            method: m.name.clone(),
            point: j,
        });
    }
    Ok(Ctx {
        pt: a.pt.join(b.pt),
        ht: vars_join(&a.ht, &b.ht),
        lt: vars_join(&a.lt, &b.lt),
        st: a.st.iter().zip(&b.st).map(|(x, y)| x.join(*y)).collect(),
    })
}

/// Security environment of `m` from `start`, as the least fixpoint of the
/// rules, together with every side condition met along the way.
///
/// At a junction the path context comes from the maximal branch points
/// joining there (their incoming context) and from predecessors outside
/// every branch region ending there; variables and stack join over all
/// predecessors. Elsewhere everything joins over all predecessors.
pub fn environment(
    m: &Method,
    cfg: &CfgInfo,
    sigs: &Signatures,
    start: Ctx,
) -> Result<(MethodWitness, Vec<(usize, Obligation)>), TypeError> {
    let n = m.len();
    let mut inp: Vec<Option<Ctx>> = vec![None; n];
    let mut out: Vec<Option<Out>> = vec![None; n];
    // Predecessors whose path context does not flow into a junction.
    let mut inside: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &j in cfg.maxbp.keys() {
        let mut s = BTreeSet::new();
        for b in cfg.branches_joining(j) {
            s.insert(b);
            s.extend(cfg.region[&b].iter().copied());
        }
        inside.insert(j, s);
    }
    let mut dirty: BTreeSet<usize> = BTreeSet::new();
    dirty.insert(0);
    while let Some(i) = dirty.pop_first() {
        let mut acc: Option<Ctx> = if i == 0 { Some(start.clone()) } else { None };
        let junction = cfg.maxbp.get(&i);
        let mut pt_from_preds = Level::L;
        for &q in &cfg.preds[i] {
            let Some(Out::Next(c)) = &out[q] else { continue };
            acc = Some(match acc {
                None => c.clone(),
                Some(a) => join_ctx(m, i, &a, c)?,
            });
            if junction.is_none() || !inside[&i].contains(&q) {
                pt_from_preds = pt_from_preds.join(c.pt);
            }
        }
        let Some(mut ctx) = acc else { continue };
        if let Some(wits) = junction {
            let mut pt = pt_from_preds;
            if i == 0 {
                pt = pt.join(start.pt);
            }
            for w in wits {
                if let Some(c) = &inp[*w] {
                    pt = pt.join(c.pt);
                }
            }
            ctx.pt = pt;
        }
        if inp[i].as_ref() == Some(&ctx) {
            continue;
        }
        let (o, _) = transfer_raw(m, i, &ctx, sigs)?;
        inp[i] = Some(ctx);
        if let Some(&j) = cfg.junc.get(&i) {
            dirty.insert(j);
        }
        if out[i].as_ref() != Some(&o) {
            out[i] = Some(o);
            dirty.extend(cfg.nxt[i].iter().copied());
        }
    }

    let mut obligations = Vec::new();
    let mut secret_branches = BTreeSet::new();
    let mut se = Vec::with_capacity(n);
    for i in 0..n {
        match (&inp[i], &out[i]) {
            (Some(c), Some(o)) => {
                let (_, ob) = transfer_raw(m, i, c, sigs)?;
                if let Some(ob) = ob {
                    if ob == (Obligation::Branch { pt: Level::H }) {
                        secret_branches.insert(i);
                    }
                    obligations.push((i, ob));
                }
                se.push(Some(match o {
                    Out::Ret { ht, tau } => Env::Ret {
                        ht: ht.clone(),
                        tau: *tau,
                    },
                    Out::Next(_) => Env::Ctx(c.clone()),
                }));
            }
            _ => se.push(None),
        }
    }
    let mut junction_witness = BTreeMap::new();
    for (&j, wits) in &cfg.maxbp {
        let Some(Env::Ctx(cj)) = &se[j] else { continue };
        if let Some(w) = wits
            .iter()
            .find(|w| matches!(&se[**w], Some(Env::Ctx(c)) if c.pt.leq(cj.pt)))
        {
            junction_witness.insert(j, *w);
        }
    }
    Ok((
        MethodWitness {
            method: m.name.clone(),
            se,
            junction_witness,
            secret_branches,
        },
        obligations,
    ))
}

/// Initial context of `m` under its signature.
pub(crate) fn start_ctx(sig: &super::Signature) -> Ctx {
    Ctx {
        pt: sig.pt,
        ht: sig.ht_in.clone(),
        lt: sig
            .argv
            .iter()
            .filter(|x| lookup(&sig.lt_in, x) == Level::H)
            .map(|x| (x.clone(), Level::H))
            .collect(),
        st: Vec::new(),
    }
}

/// `(prot1, prot2, sig) ▷ m`.
pub fn check_method(m: &Method, sigs: &Signatures, pol: &Policy) -> Result<MethodWitness, TypeError> {
    let sig = sigs.get(&m.name).ok_or_else(|| TypeError::MissingSignature { method: m.name.clone() })?;
    let cfg = analyze_cfg(m).map_err(|e| TypeError::Cfg {
        method: m.name.clone(),
        msg: e.to_string(),
    })?;
    let (w, obs) = environment(m, &cfg, sigs, start_ctx(sig))?;
    for (i, ob) in &obs {
        discharge(m, *i, ob, sigs, pol)?;
    }
    Ok(w)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProgramReport {
    pub typable: bool,
    pub errors: Vec<TypeError>,
    pub witnesses: Vec<MethodWitness>,
}

/// `(prot1, prot2, sig) ▷ P`: the entry runs under `L` with every secret
/// input `H`, signatures with an `H` path context belong to `prot1`, and
/// every method is typable.
pub fn check_program(p: &Program, sigs: &Signatures, pol: &Policy) -> ProgramReport {
    let mut errors = Vec::new();
    let mut witnesses = Vec::new();
    match sigs.get(&p.entry) {
        None => errors.push(TypeError::MissingSignature { method: p.entry.clone() }),
        Some(sig) => {
            if sig.pt != Level::L {
                errors.push(TypeError::EntrySignature {
                    method: p.entry.clone(),
                    msg: "path context must be L".into(),
                });
            }
            let entry = p.entry_method();
            for x in p.secret_inputs() {
                let lvl = if entry.argv.contains(&x) {
                    lookup(&sig.lt_in, &x)
                } else {
                    lookup(&sig.ht_in, &x)
                };
                if lvl != Level::H {
                    errors.push(TypeError::EntrySignature {
                        method: p.entry.clone(),
                        msg: format!("secret input `{x}` must be H"),
                    });
                }
            }
        }
    }
    for (name, sig) in sigs {
        if sig.pt == Level::H && !pol.prot1.contains(name) {
            errors.push(TypeError::HighContextNotProtected { method: name.clone() });
        }
    }
    for m in p.methods.values() {
        match check_method(m, sigs, pol) {
            Ok(w) => witnesses.push(w),
            Err(e) => errors.push(e),
        }
    }
    ProgramReport {
        typable: errors.is_empty(),
        errors,
        witnesses,
    }
}
