//! One accepting and one rejecting instance per instruction typing rule.
//!
//! A rule instance `i ⊢ ctx ⇒ claimed` holds when the rule's side conditions
//! are met and its conclusion is below the claimed successor context.

use jitct::bytecode::{ident, BinOp, Instr, Method};
use jitct::infoflow::{type_transfer, Ctx, Level, Out, Signature, Signatures, TypeError};
use jitct::profile::Policy;
use std::collections::BTreeMap;

use Level::{H, L};

pub struct RuleCase {
    pub rule: &'static str,
    pub expect_accept: bool,
    pub accepted: bool,
    pub detail: String,
}

fn ctx(pt: Level, st: &[Level]) -> Ctx {
    Ctx {
        pt,
        st: st.to_vec(),
        ..Default::default()
    }
}

fn with_lt(mut c: Ctx, x: &str, l: Level) -> Ctx {
    c.lt.insert(ident(x), l);
    c
}

fn with_ht(mut c: Ctx, y: &str, l: Level) -> Ctx {
    c.ht.insert(ident(y), l);
    c
}

fn sigs_for(m: &Method, extra: &[(&str, Signature)]) -> Signatures {
    let mut s: Signatures = BTreeMap::new();
    s.insert(
        m.name.clone(),
        Signature {
            argv: m.argv.clone(),
            ..Default::default()
        },
    );
    for (n, sig) in extra {
        s.insert(ident(n), sig.clone());
    }
    s
}

/// Judges `i ⊢ ctx ⇒ claimed`; `claimed` of `None` accepts any conclusion.
fn judge(m: &Method, i: usize, c: &Ctx, sigs: &Signatures, pol: &Policy, claimed: Option<&Ctx>) -> (bool, String) {
    match type_transfer(m, i, c, sigs, pol) {
        Err(e) => (false, e.to_string()),
        Ok(Out::Ret { ht, tau }) => (true, format!("ret ht={ht:?} tau={tau}")),
        Ok(Out::Next(out)) => match claimed {
            Some(cl) if !out.leq(cl) => (false, format!("conclusion {out:?} not below {cl:?}")),
            _ => (true, format!("{out:?}")),
        },
    }
}

fn case(
    rule: &'static str,
    expect_accept: bool,
    m: &Method,
    i: usize,
    c: Ctx,
    sigs: &Signatures,
    pol: &Policy,
    claimed: Option<Ctx>,
) -> RuleCase {
    let (accepted, detail) = judge(m, i, &c, sigs, pol, claimed.as_ref());
    RuleCase {
        rule,
        expect_accept,
        accepted,
        detail,
    }
}

fn one(ins: Instr) -> Method {
    Method::new("f", &["a"], vec![ins, Instr::Return])
}

pub fn verify_pin() -> Method {
    Method::new(
        "verifyPin",
        &["x0"],
        vec![
            Instr::Load(ident("x0")),
            Instr::Get(ident("pin")),
            Instr::Binop(BinOp::Sub),
            Instr::Ifeq(6),
            Instr::Push(0),
            Instr::Goto(8),
            Instr::Push(1),
            Instr::Goto(8),
            Instr::Return,
        ],
    )
}

pub fn all_cases() -> Vec<RuleCase> {
    let none = Policy::default();
    let mut out = Vec::new();

    let m = one(Instr::Push(3));
    let s = sigs_for(&m, &[]);
    out.push(case("T-Push", true, &m, 0, ctx(H, &[]), &s, &none, Some(ctx(H, &[H]))));
    out.push(case("T-Push", false, &m, 0, ctx(H, &[]), &s, &none, Some(ctx(H, &[L]))));

    let m = one(Instr::Binop(BinOp::Add));
    let s = sigs_for(&m, &[]);
    out.push(case("T-Bop", true, &m, 0, ctx(L, &[H, L]), &s, &none, Some(ctx(L, &[H]))));
    out.push(case("T-Bop", false, &m, 0, ctx(L, &[L, H]), &s, &none, Some(ctx(L, &[L]))));
    out.push(case("T-Bop", false, &m, 0, ctx(L, &[L]), &s, &none, None));

    let m = one(Instr::Pop);
    let s = sigs_for(&m, &[]);
    out.push(case("T-Pop", true, &m, 0, ctx(L, &[L, H]), &s, &none, Some(ctx(L, &[L]))));
    out.push(case("T-Pop", false, &m, 0, ctx(L, &[]), &s, &none, None));

    let m = one(Instr::Swap);
    let s = sigs_for(&m, &[]);
    out.push(case("T-Swap", true, &m, 0, ctx(L, &[H, L]), &s, &none, Some(ctx(L, &[L, H]))));
    out.push(case("T-Swap", true, &m, 0, ctx(H, &[L, L]), &s, &none, Some(ctx(H, &[H, H]))));
    out.push(case("T-Swap", false, &m, 0, ctx(L, &[H, L]), &s, &none, Some(ctx(L, &[H, L]))));
    out.push(case("T-Swap", false, &m, 0, ctx(H, &[L, L]), &s, &none, Some(ctx(H, &[L, L]))));

    let m = one(Instr::Store(ident("x")));
    let s = sigs_for(&m, &[]);
    out.push(case(
        "T-Str",
        true,
        &m,
        0,
        ctx(L, &[H]),
        &s,
        &none,
        Some(with_lt(ctx(L, &[]), "x", H)),
    ));
    out.push(case("T-Str", false, &m, 0, ctx(L, &[H]), &s, &none, Some(ctx(L, &[]))));
    out.push(case("T-Str", false, &m, 0, ctx(H, &[L]), &s, &none, Some(ctx(H, &[]))));

    let m = one(Instr::Load(ident("a")));
    let s = sigs_for(&m, &[]);
    out.push(case(
        "T-Load",
        true,
        &m,
        0,
        with_lt(ctx(L, &[]), "a", H),
        &s,
        &none,
        Some(with_lt(ctx(L, &[H]), "a", H)),
    ));
    out.push(case(
        "T-Load",
        false,
        &m,
        0,
        with_lt(ctx(L, &[]), "a", H),
        &s,
        &none,
        Some(with_lt(ctx(L, &[L]), "a", H)),
    ));

    let m = one(Instr::Put(ident("g")));
    let s = sigs_for(&m, &[]);
    out.push(case(
        "T-Put",
        true,
        &m,
        0,
        ctx(H, &[L]),
        &s,
        &none,
        Some(with_ht(ctx(H, &[]), "g", H)),
    ));
    out.push(case("T-Put", false, &m, 0, ctx(H, &[L]), &s, &none, Some(ctx(H, &[]))));

    let m = one(Instr::Get(ident("g")));
    let s = sigs_for(&m, &[]);
    out.push(case(
        "T-Get",
        true,
        &m,
        0,
        with_ht(ctx(L, &[]), "g", H),
        &s,
        &none,
        Some(with_ht(ctx(L, &[H]), "g", H)),
    ));
    out.push(case(
        "T-Get",
        false,
        &m,
        0,
        with_ht(ctx(L, &[]), "g", H),
        &s,
        &none,
        Some(with_ht(ctx(L, &[L]), "g", H)),
    ));

    let m = Method::new("f", &[], vec![Instr::Goto(1), Instr::Push(0), Instr::Return]);
    let s = sigs_for(&m, &[]);
    out.push(case("T-Goto", true, &m, 0, ctx(H, &[L]), &s, &none, Some(ctx(H, &[L]))));
    out.push(case("T-Goto", false, &m, 0, ctx(H, &[L]), &s, &none, Some(ctx(L, &[L]))));

    let vp = verify_pin();
    let s = sigs_for(&vp, &[]);
    let mut prot = Policy::default();
    prot.prot2.insert(ident("verifyPin"), [3].into_iter().collect());
    out.push(case("T-If", true, &vp, 3, ctx(L, &[H]), &s, &prot, Some(ctx(H, &[]))));
    out.push(case("T-If", false, &vp, 3, ctx(L, &[H]), &s, &none, None));
    out.push(case("T-If", true, &vp, 3, ctx(L, &[L]), &s, &none, Some(ctx(L, &[]))));

    let mut vn = verify_pin();
    vn.instrs[3] = Instr::Ifneq(6);
    let s = sigs_for(&vn, &[]);
    out.push(case("T-Ifn", true, &vn, 3, ctx(L, &[H]), &s, &prot, Some(ctx(H, &[]))));
    out.push(case("T-Ifn", false, &vn, 3, ctx(L, &[H]), &s, &none, None));

    let m = Method::new("f", &[], vec![Instr::Push(0), Instr::Return]);
    let hi_ret = Signature {
        ret: H,
        ..Default::default()
    };
    let mut s = sigs_for(&m, &[]);
    out.push(case("T-Ret", false, &m, 1, ctx(L, &[H]), &s, &none, None));
    out.push(case("T-Ret", false, &m, 1, with_ht(ctx(L, &[L]), "g", H), &s, &none, None));
    s.insert(ident("f"), hi_ret);
    out.push(case("T-Ret", true, &m, 1, ctx(L, &[H]), &s, &none, None));

    let m = Method::new(
        "f",
        &[],
        vec![Instr::Push(1), Instr::Invoke(ident("c")), Instr::Return],
    );
    let low_callee = Signature {
        argv: vec![ident("z")],
        ..Default::default()
    };
    let mut high_callee = low_callee.clone();
    high_callee.pt = H;
    high_callee.lt_in.insert(ident("z"), H);
    high_callee.ht_in.insert(ident("g"), H);
    let s_low = sigs_for(&m, &[("c", low_callee)]);
    let s_high = sigs_for(&m, &[("c", high_callee)]);
    out.push(case("T-Call", true, &m, 1, ctx(H, &[L]), &s_high, &none, Some(ctx(H, &[H]))));
    out.push(case("T-Call", true, &m, 1, ctx(L, &[L]), &s_low, &none, Some(ctx(L, &[L]))));
    out.push(case("T-Call", false, &m, 1, ctx(H, &[L]), &s_low, &none, None));
    out.push(case("T-Call", false, &m, 1, ctx(L, &[H]), &s_low, &none, None));
    out.push(case("T-Call", false, &m, 1, with_ht(ctx(L, &[L]), "g", H), &s_low, &none, None));
    out.push(case("T-Call", false, &m, 1, ctx(H, &[L]), &s_high, &none, Some(ctx(H, &[L]))));
    out
}

/// Every rule listed has both an accepting and a rejecting instance.
pub const RULES: [&str; 13] = [
    "T-Push", "T-Bop", "T-Pop", "T-Swap", "T-Str", "T-Load", "T-Put", "T-Get", "T-Goto", "T-If", "T-Ifn", "T-Ret", "T-Call",
];

pub fn is_call_violation(e: &TypeError) -> bool {
    matches!(e, TypeError::CallContextViolation { .. })
}
