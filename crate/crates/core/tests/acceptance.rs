//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use common::{gen_inputs, gen_program, gen_public, oracles, rules, GenConfig};
use jitct::bytecode::{analyze_cfg, ident, BinOp, Inputs, Instr, Method, Program};
use jitct::infoflow::{check_light_assumption, check_program, infer_policy};
use jitct::interp::{run_with, CostModel, RunOptions};
use jitct::jit::{Directive, OptKind};
use jitct::leakage::{
    check_constant_time, check_jit_constant_time, mutual_information, run_demo, DemoName, DemoOptions, IoSpec,
    JitCheckOptions, Protect, Verdict,
};
use jitct::profile::{enumerate_schedules, method_universe, Mode, Schedule, ScheduleEntry, Trigger};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn inputs(pairs: &[(&str, i64)]) -> Inputs {
    pairs.iter().map(|(k, v)| (ident(k), *v)).collect()
}

fn c1_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cm = CostModel::default();
    let opts = RunOptions::quiet();
    let (mut runs, mut failures, mut first) = (0usize, 0usize, None);
    let n = 500;
    for k in 0..n {
        let p = gen_program(&mut rng, &GenConfig::default());
        let inp = gen_inputs(&mut rng, &p);
        let base = run_with(&p, &inp, &Schedule::empty(), &cm, &opts).expect("d_empty run");
        let scheds = enumerate_schedules(&p, 2, None, usize::MAX).expect("no budget");
        for s in &scheds {
            runs += 1;
            let ok = match run_with(&p, &inp, s, &cm, &opts) {
                Ok(r) => r.return_value == base.return_value && r.final_heap == base.final_heap,
                Err(_) => false,
            };
            if !ok {
                failures += 1;
                first.get_or_insert(format!("program {k}: {s}"));
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "{n} programs, {runs} schedule runs at depth <= 2, {failures} mismatches{}",
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

/// `p` with `m` as the entry, so every run executes `m`.
fn rooted(p: &Program, m: &str) -> Program {
    let mut q = p.clone();
    q.entry = ident(m);
    q.public_inputs.clear();
    q
}

fn c2_transforms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cm = CostModel::default();
    let opts = RunOptions::quiet();
    let tr = RunOptions::default();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let (mut failures, mut first) = (0usize, None);
    let (mut kept, mut trapped) = (0usize, 0usize);
    for k in 0..60 {
        let p = gen_program(&mut rng, &GenConfig::default());
        for name in p.methods.keys() {
            let q = rooted(&p, name);
            let ins: Vec<Inputs> = (0..100).map(|_| gen_inputs(&mut rng, &q)).collect();
            let base: Vec<_> = ins
                .iter()
                .map(|i| run_with(&q, i, &Schedule::empty(), &cm, &opts).expect("bytecode run"))
                .collect();
            for d in method_universe(&q, name) {
                let Directive::Compile { tree, omega, .. } = &d else { continue };
                let label = match (tree.depth(), omega.first().map(|o| o.kind)) {
                    (0, Some(OptKind::Bp)) => "T_bp",
                    (0, Some(OptKind::Oc)) => "T_oc",
                    (_, None) => "inline",
                    (_, Some(_)) => "inline+opt",
                };
                if tree.depth() > 2 {
                    continue;
                }
                *counts.entry(label).or_default() += 1;
                let s = Schedule::start(d.clone());
                for (i, b) in ins.iter().zip(&base) {
                    let r = run_with(&q, i, &s, &cm, if label == "T_oc" { &tr } else { &opts });
                    let ok = match &r {
                        Ok(r) => r.return_value == b.return_value && r.final_heap == b.final_heap,
                        Err(_) => false,
                    };
                    if label == "T_oc" {
                        if let Ok(r) = &r {
                            if r.trace.iter().any(|e| e.deopt_fired) {
                                trapped += 1;
                            } else {
                                kept += 1;
                            }
                        }
                    }
                    if !ok {
                        failures += 1;
                        first.get_or_insert(format!("program {k} {name}: {d}"));
                    }
                }
            }
        }
    }
    outcome(
        failures == 0 && kept > 0 && trapped > 0,
        format!(
            "directives {counts:?}, 100 inputs each; T_oc runs {kept} kept-branch + {trapped} trap; {failures} mismatches{}",
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn c3_verify_pin() -> Outcome {
    let p = DemoName::VerifyPin.program();
    let cm = CostModel::default();
    let io = IoSpec::new(inputs(&[("x0", 5)]), vec![inputs(&[("pin", 5)]), inputs(&[("pin", 9)])]);
    let attack = check_jit_constant_time(&p, &io, None, 1, &cm, &JitCheckOptions::default()).expect("check");
    let delta = attack.witness.as_ref().map(|w| w.delta);
    let bp = attack.witness.as_ref().is_some_and(|w| match &w.source {
        jitct::leakage::WitnessSource::Explicit { schedule } => schedule.entries.iter().any(|e| {
            matches!(&e.directive, Directive::Compile { omega, .. }
                if omega.iter().any(|o| o.kind == OptKind::Bp && o.point == 3))
        }),
        _ => false,
    });
    let pol = infer_policy(&p).expect("infer").policy;
    let defended = check_jit_constant_time(&p, &io, Some(&pol), 2, &cm, &JitCheckOptions::default()).expect("check");
    outcome(
        attack.verdict == Verdict::Leaky && delta == Some(1) && bp && defended.is_secure() && defended.max_delta == 0,
        format!(
            "depth 1 unprotected: {:?} witness delta {:?} (T_bp at 3: {bp}); depth 2 full policy: {:?} over {} schedules, max delta {}",
            attack.verdict, delta, defended.verdict, defended.schedules_checked, defended.max_delta
        ),
    )
}

fn c4_pwd_eq() -> Outcome {
    let cm = CostModel::default();
    let o = DemoOptions::default();
    let none = run_demo(DemoName::PwdEq, Protect::None, &cm, &o).expect("demo");
    let full = run_demo(DemoName::PwdEq, Protect::Full, &cm, &o).expect("demo");
    let oc = none.probe_schedule.entries.iter().any(|e| {
        matches!(&e.directive, Directive::Compile { omega, .. }
            if omega.iter().any(|b| b.kind == OptKind::Oc && b.point == 17))
    });
    let (t, n) = (none.class_range(0).unwrap(), none.class_range(1).unwrap());
    let gap = t.0 as i64 - n.1 as i64;
    outcome(
        oc && gap >= cm.deopt_penalty as i64 && none.mi() == 1.0 && full.mi() == 0.0,
        format!(
            "profiler issued T_oc at 17: {oc}; trap class {t:?} vs {n:?}, gap {gap} (>= {}); MI none {} bit, full {} bit",
            cm.deopt_penalty,
            none.mi(),
            full.mi()
        ),
    )
}

fn c5_check_secret() -> Outcome {
    let cm = CostModel::default();
    let p = DemoName::CheckSecret.program();
    let c1 = p.method("consume1").unwrap().clone();
    let s = Schedule::start(Directive::plain(&c1.name));
    let opts = RunOptions::quiet();
    let n = 4i64;
    let a = run_with(&p, &inputs(&[("guess", 8), ("n", n), ("secret", 9)]), &s, &cm, &opts).unwrap();
    let b = run_with(&p, &inputs(&[("guess", 8), ("n", n), ("secret", 3)]), &s, &cm, &opts).unwrap();
    let calls = (n * n) as u64;
    let per_call = (b.total_cost as i64 - a.total_cost as i64) as f64 / calls as f64;
    let needed: f64 = c1
        .instrs
        .iter()
        .map(|i| (cm.cf_bc(i.opcode()) - cm.cf_nc(i.opcode())) as f64)
        .sum();
    let o = DemoOptions::default();
    let full = run_demo(DemoName::CheckSecret, Protect::Full, &cm, &o).unwrap();
    let light = run_demo(DemoName::CheckSecret, Protect::Light, &cm, &o).unwrap();
    let pol = infer_policy(&p).unwrap().policy;
    let light_ok = check_light_assumption(&p, &pol);
    outcome(
        per_call >= needed && full.mi() == 0.0 && light.mi() == 1.0 && !light_ok,
        format!(
            "consume1 compiled: {} vs {} over {calls} calls, {per_call} per call (>= {needed}, cf_bc - cf_nc summed over {} callee instrs); MI full {}, light {}; light assumption {light_ok}",
            a.total_cost,
            b.total_cost,
            c1.len(),
            full.mi(),
            light.mi()
        ),
    )
}

fn c6_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cm = CostModel::default();
    let cfg = GenConfig {
        balanced: 0.85,
        secret_bias: 0.45,
        ..Default::default()
    };
    let (mut accepted, mut tried, mut failures, mut schedules, mut with_prot) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let (mut first, mut with_prot1) = (None, 0usize);
    let opts = JitCheckOptions::default();
    let target: usize = std::env::var("SOUNDNESS_PROGRAMS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    while accepted < target && tried < 25 * target {
        tried += 1;
        let p = gen_program(&mut rng, &cfg);
        let Ok(inf) = infer_policy(&p) else { continue };
        if !check_program(&p, &inf.sigs, &inf.policy).typable {
            continue;
        }
        let ios: Vec<IoSpec> = (0..2)
            .map(|_| {
                let public = gen_public(&mut rng, &p);
                IoSpec::exhaustive(&p, public, &[0, 2, 5])
            })
            .collect();
        if !ios.iter().all(|io| check_constant_time(&p, io, &cm).is_ok_and(|r| r.is_secure())) {
            continue;
        }
        accepted += 1;
        if !inf.policy.is_empty() {
            with_prot += 1;
        }
        if !inf.policy.prot1.is_empty() {
            with_prot1 += 1;
        }
        let pol = inf.policy.with_mode(Mode::Full);
        for io in &ios {
            match check_jit_constant_time(&p, io, Some(&pol), 2, &cm, &opts) {
                Ok(r) => {
                    schedules += r.schedules_checked;
                    if !r.is_secure() {
                        failures += 1;
                        first.get_or_insert_with(|| format!("{:?}", r.witness));
                    }
                }
                Err(e) => {
                    failures += 1;
                    first.get_or_insert_with(|| e.to_string());
                }
            }
        }
    }
    outcome(
        accepted >= target.max(200) && failures == 0,
        format!(
            "{accepted} constant-time typable programs ({with_prot} with a non-empty policy, {with_prot1} with prot1 methods) of {tried} generated, {schedules} compliant schedules/probes, {failures} failures{}",
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn random_cfg<R: Rng>(rng: &mut R) -> Method {
    let n = rng.random_range(3..=16);
    let mut code = Vec::with_capacity(n);
    for i in 0..n - 1 {
        code.push(match rng.random_range(0..6) {
            0 | 1 => Instr::Ifeq(rng.random_range(0..n)),
            2 => Instr::Goto(rng.random_range(i + 1..n)),
            3 if i > 0 => Instr::Goto(rng.random_range(0..n)),
            _ => Instr::Push(0),
        });
    }
    code.push(Instr::Return);
    Method::new("g", &[], code)
}

fn c7_types_and_cfg() -> Outcome {
    let cases = rules::all_cases();
    let wrong: Vec<String> = cases
        .iter()
        .filter(|c| c.accepted != c.expect_accept)
        .map(|c| format!("{} expected {} got {} ({})", c.rule, c.expect_accept, c.accepted, c.detail))
        .collect();
    let covered = rules::RULES.iter().all(|r| {
        cases.iter().any(|c| c.rule == *r && c.expect_accept) && cases.iter().any(|c| c.rule == *r && !c.expect_accept)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut cfgs, mut branches, mut bad) = (0usize, 0usize, Vec::new());
    while cfgs < 250 {
        let m = random_cfg(&mut rng);
        let conds: Vec<usize> = m.conditionals().collect();
        if conds.is_empty() {
            continue;
        }
        cfgs += 1;
        let expect: Vec<(usize, Option<usize>)> = conds.iter().map(|&i| (i, oracles::junction(&m, i))).collect();
        match analyze_cfg(&m) {
            Err(_) => {
                if expect.iter().all(|(_, j)| j.is_some()) {
                    bad.push(format!("{m:?}: analysis failed but every branch returns"));
                }
            }
            Ok(info) => {
                for (i, j) in expect {
                    branches += 1;
                    let Some(j) = j else {
                        bad.push(format!("branch {i} never returns yet analysis succeeded"));
                        continue;
                    };
                    if info.junc.get(&i) != Some(&j) {
                        bad.push(format!("junc({i}) = {:?}, oracle {j}", info.junc.get(&i)));
                    }
                    if info.region.get(&i) != Some(&oracles::region(&m, i, j)) {
                        bad.push(format!("region({i}) differs"));
                    }
                    if info.region[&i].iter().any(|&q| oracles::can_return(&m, q) && !oracles::post_dominates(&m, j, q)) {
                        bad.push(format!("region({i}) holds a point not post-dominated by {j}"));
                    }
                }
            }
        }
    }
    outcome(
        wrong.is_empty() && covered && bad.is_empty(),
        format!(
            "{} rule instances over {} rules, {} mismatched, all rules accept+reject: {covered}; {cfgs} random CFGs, {branches} branches, {} oracle disagreements{}",
            cases.len(),
            rules::RULES.len(),
            wrong.len(),
            bad.len(),
            wrong.first().or(bad.first()).map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn c8_mi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let b = rng.random_range(3..=20);
        let mut joint = BTreeMap::new();
        for c in 0..k {
            for t in 0..b {
                joint.insert((c, t), rng.random_range(0..6u64));
            }
        }
        // Occupy both ends so the observed range spans all bins.
        *joint.get_mut(&(0, 0)).unwrap() += 1;
        *joint.get_mut(&(k - 1, b - 1)).unwrap() += 1;
        let samples: Vec<(usize, f64)> = joint
            .iter()
            .flat_map(|(&(c, t), &n)| std::iter::repeat_n((c, t as f64), n as usize))
            .collect();
        let got = mutual_information(&samples, b).unwrap();
        worst = worst.max((got - oracles::mi_by_entropy(&joint)).abs());
    }
    let sep: Vec<(usize, f64)> = (0..4).flat_map(|c| (0..5).map(move |_| (c, 100.0 * c as f64))).collect();
    let same: Vec<(usize, f64)> = (0..4).flat_map(|c| (0..5).map(move |_| (c, 42.0))).collect();
    let hi = mutual_information(&sep, 20).unwrap();
    let lo = mutual_information(&same, 20).unwrap();
    outcome(
        worst <= 1e-9 && hi == 2.0 && lo == 0.0,
        format!("50 random histograms, max |error| {worst:e}; separated 4 classes {hi} bits (log2 4 = 2), identical times {lo} bits"),
    )
}

fn c9_policies() -> Outcome {
    let set = |xs: &[usize]| xs.iter().copied().collect::<BTreeSet<usize>>();
    let vp = infer_policy(&DemoName::VerifyPin.program()).unwrap().policy;
    let cs = infer_policy(&DemoName::CheckSecret.program()).unwrap().policy;
    let pw = infer_policy(&DemoName::PwdEq.program()).unwrap().policy;
    let vp_ok = vp.prot1.is_empty() && vp.prot2.len() == 1 && vp.prot2.get("verifyPin") == Some(&set(&[3]));
    let want: BTreeSet<_> = [ident("consume1"), ident("consume2")].into_iter().collect();
    let cs_ok = cs.prot1 == want;
    let pw_ok = pw.prot1.is_empty() && pw.prot2.len() == 1 && pw.prot2.get("pwdEq") == Some(&set(&[17]));
    outcome(
        vp_ok && cs_ok && pw_ok,
        format!(
            "verifyPin prot1 {:?} prot2 {:?}; checkSecret prot1 {:?}; pwdEq prot2 {:?}",
            vp.prot1, vp.prot2, cs.prot1, pw.prot2
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("consistency", c1_consistency, Duration::from_secs(120)),
        ("transformation equivalence", c2_transforms, Duration::from_secs(300)),
        ("verifyPin branch-layout leak", c3_verify_pin, Duration::from_secs(5)),
        ("pwdEq optimistic-compilation leak", c4_pwd_eq, Duration::from_secs(10)),
        ("checkSecret inlining leak", c5_check_secret, Duration::from_secs(10)),
        ("JIT-constant-time of typable programs", c6_soundness, Duration::from_secs(300)),
        ("typing rules and CFG analyses", c7_types_and_cfg, Duration::from_secs(300)),
        ("mutual information estimator", c8_mi, Duration::from_secs(300)),
        ("policy inference spot checks", c9_policies, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (k, (name, f, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let el = t.elapsed();
        let pass = o.pass && el <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} [{name}]: {} {} ({:.2}s, limit {}s)",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            limit.as_secs()
        );
    }
    let _ = (Arc::new(0), BinOp::Add, Trigger::Start, None::<ScheduleEntry>);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
