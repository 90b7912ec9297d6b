//! Security levels, the instruction typing rules, typable methods and
//! programs, and inference of signatures and protection policies.

mod check;
mod infer;

pub use check::{check_method, check_program, environment, Env, MethodWitness, ProgramReport};
pub use infer::{check_light_assumption, infer_policy, report, Inference};

use crate::bytecode::{Ident, Instr, Method};
use crate::profile::Policy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Level {
    #[default]
    L,
    H,
}

impl Level {
    pub fn join(self, other: Level) -> Level {
        self.max(other)
    }

    pub fn leq(self, other: Level) -> bool {
        self <= other
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L => "L",
            Level::H => "H",
        })
    }
}

/// Variable typing; unlisted variables are `L`.
pub type VarTypes = BTreeMap<Ident, Level>;

fn lookup(t: &VarTypes, x: &str) -> Level {
    t.get(x).copied().unwrap_or_default()
}

fn set(t: &mut VarTypes, x: &Ident, l: Level) {
    if l == Level::L {
        t.remove(x);
    } else {
        t.insert(x.clone(), l);
    }
}

fn vars_leq(a: &VarTypes, b: &VarTypes) -> bool {
    a.iter().all(|(x, l)| l.leq(lookup(b, x)))
}

fn vars_join(a: &VarTypes, b: &VarTypes) -> VarTypes {
    let mut out = a.clone();
    for (x, l) in b {
        let v = lookup(a, x).join(*l);
        set(&mut out, x, v);
    }
    out
}

/// `(pt, ht, lt, st)`; the stack top is the last element.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Ctx {
    pub pt: Level,
    pub ht: VarTypes,
    pub lt: VarTypes,
    pub st: Vec<Level>,
}

impl Ctx {
    pub fn leq(&self, o: &Ctx) -> bool {
        self.pt.leq(o.pt)
            && vars_leq(&self.ht, &o.ht)
            && vars_leq(&self.lt, &o.lt)
            && self.st.len() == o.st.len()
            && self.st.iter().zip(&o.st).all(|(a, b)| a.leq(*b))
    }
}

/// `(pt, ht₁, lt₁) ↪ (ht₂, τ)`; `lt₁` ranges over the formal arguments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Signature {
    /// Formal arguments, the domain of `lt_in`.
    pub argv: Vec<Ident>,
    pub pt: Level,
    pub ht_in: VarTypes,
    pub lt_in: VarTypes,
    pub ht_out: VarTypes,
    pub ret: Level,
}

pub type Signatures = BTreeMap<Ident, Signature>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "error")]
pub enum TypeError {
    #[error("{method}@{point}: secret branch not in prot2")]
    UnprotectedSecretBranch { method: Ident, point: usize },
    #[error("{method}@{point}: return context exceeds the signature of `{method}`")]
    SignatureViolation { method: Ident, point: usize },
    #[error("{method}@{point}: call to `{callee}` violates {premise}")]
    CallContextViolation {
        method: Ident,
        point: usize,
        callee: Ident,
        premise: String,
    },
    #[error("{method}@{point}: operand stack type underflow")]
    StackUnderflow { method: Ident, point: usize },
    #[error("{method}@{point}: stack types of different depth meet")]
    StackMismatch { method: Ident, point: usize },
    #[error("{method}@{point}: no typing rule for `{instr}`")]
    NoRule { method: Ident, point: usize, instr: String },
    #[error("`{method}` has no signature")]
    MissingSignature { method: Ident },
    #[error("entry `{method}`: {msg}")]
    EntrySignature { method: Ident, msg: String },
    #[error("`{method}` has path context H in its signature but is not in prot1")]
    HighContextNotProtected { method: Ident },
    #[error("{method}: {msg}")]
    Cfg { method: Ident, msg: String },
}

/// Result of one typing rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Out {
    Next(Ctx),
    Ret { ht: VarTypes, tau: Level },
}

/// Side conditions a rule imposes on the policy or the signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Obligation {
    /// A conditional whose branches run under `pt'`.
    Branch { pt: Level },
    Call {
        callee: Ident,
        pt: Level,
        ht: VarTypes,
        args: Vec<(Ident, Level)>,
    },
    Ret { ht: VarTypes, tau: Level },
}

/// The instruction rule without its side conditions, which are returned as
/// an obligation instead.
pub(crate) fn transfer_raw(
    m: &Method,
    i: usize,
    ctx: &Ctx,
    sigs: &Signatures,
) -> Result<(Out, Option<Obligation>), TypeError> {
    let under = || TypeError::StackUnderflow {
        method: m.name.clone(),
        point: i,
    };
    let mut c = ctx.clone();
    let pt = c.pt;
    let pop = |c: &mut Ctx| c.st.pop().ok_or_else(under);
    let ins = &m.instrs[i];
    let ob = match ins {
        Instr::Push(_) => {
            c.st.push(pt);
            None
        }
        Instr::Binop(_) => {
            let t1 = pop(&mut c)?;
            let t2 = pop(&mut c)?;
            c.st.push(t1.join(t2).join(pt));
            None
        }
        Instr::Pop => {
            pop(&mut c)?;
            None
        }
        Instr::Swap => {
            let t1 = pop(&mut c)?;
            let t2 = pop(&mut c)?;
            c.st.push(t1.join(pt));
            c.st.push(t2.join(pt));
            None
        }
        Instr::Load(x) => {
            c.st.push(lookup(&c.lt, x).join(pt));
            None
        }
        Instr::Store(x) => {
            let t = pop(&mut c)?;
            set(&mut c.lt, x, t.join(pt));
            None
        }
        Instr::Get(y) => {
            c.st.push(lookup(&c.ht, y).join(pt));
            None
        }
        Instr::Put(y) => {
            let t = pop(&mut c)?;
            set(&mut c.ht, y, t.join(pt));
            None
        }
        Instr::Ifeq(_) | Instr::Ifneq(_) => {
            let t = pop(&mut c)?;
            c.pt = t.join(pt);
            Some(Obligation::Branch { pt: c.pt })
        }
        Instr::Goto(_) => None,
        Instr::Return => {
            let tau = pop(&mut c)?;
            let ob = Obligation::Ret {
                ht: c.ht.clone(),
                tau,
            };
            return Ok((Out::Ret { ht: c.ht, tau }, Some(ob)));
        }
        Instr::Invoke(callee) => {
            let sig = sigs.get(callee).ok_or_else(|| TypeError::MissingSignature { method: callee.clone() })?;
            let mut args = Vec::new();
            for x in sig.argv.iter().rev() {
                args.push((x.clone(), pop(&mut c)?));
            }
            args.reverse();
            let ob = Obligation::Call {
                callee: callee.clone(),
                pt,
                ht: c.ht.clone(),
                args,
            };
            c.ht = sig.ht_out.clone();
            c.st.push(sig.ret.join(pt));
            Some(ob)
        }
        Instr::Deopt(_) => {
            return Err(TypeError::NoRule {
                method: m.name.clone(),
                point: i,
                instr: ins.to_string(),
            })
        }
    };
    Ok((Out::Next(c), ob))
}

/// One typing rule with its side conditions checked against `sigs` and `pol`.
pub fn type_transfer(m: &Method, i: usize, ctx: &Ctx, sigs: &Signatures, pol: &Policy) -> Result<Out, TypeError> {
    let (out, ob) = transfer_raw(m, i, ctx, sigs)?;
    if let Some(ob) = ob {
        discharge(m, i, &ob, sigs, pol)?;
    }
    Ok(out)
}

pub(crate) fn discharge(m: &Method, i: usize, ob: &Obligation, sigs: &Signatures, pol: &Policy) -> Result<(), TypeError> {
    match ob {
        Obligation::Branch { pt } => {
            if *pt == Level::H && !pol.protects_branch(&m.name, i) && !pol.prot1.contains(&m.name) {
                return Err(TypeError::UnprotectedSecretBranch {
                    method: m.name.clone(),
                    point: i,
                });
            }
        }
        Obligation::Call { callee, pt, ht, args } => {
            let sig = &sigs[callee];
            let fail = |premise: String| {
                Err(TypeError::CallContextViolation {
                    method: m.name.clone(),
                    point: i,
                    callee: callee.clone(),
                    premise,
                })
            };
            if !pt.leq(sig.pt) {
                return fail(format!("pt ⊑ pt1 ({pt} vs {})", sig.pt));
            }
            if !vars_leq(ht, &sig.ht_in) {
                return fail("ht ⊑ ht1".into());
            }
            for (x, t) in args {
                if !t.leq(lookup(&sig.lt_in, x)) {
                    return fail(format!("argument level ⊑ lt1({x})"));
                }
            }
        }
        Obligation::Ret { ht, tau } => {
            let sig = sigs.get(&m.name).ok_or_else(|| TypeError::MissingSignature { method: m.name.clone() })?;
            if !vars_leq(ht, &sig.ht_out) || !tau.leq(sig.ret) {
                return Err(TypeError::SignatureViolation {
                    method: m.name.clone(),
                    point: i,
                });
            }
        }
    }
    Ok(())
}
