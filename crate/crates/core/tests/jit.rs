mod common;

use common::{gen_inputs, gen_program, GenConfig};
use jitct::bytecode::{ident, parse_program, validate, Inputs, Instr, Method, Program};
use jitct::interp::{run, run_from, CostModel, RunOptions, ScheduleSource};
use jitct::jit::{
    apply_directive, base_version, compile_directive, inline_tree, parse_directive, transform_bp, transform_oc,
    BranchOpt, CodeHeap, Directive, InlineTree, JitError, OptKind, Pref,
};
use jitct::leakage::{CHECK_SECRET, VERIFY_PIN};
use jitct::profile::{enumerate_schedules, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(pairs: &[(&str, i64)]) -> Inputs {
    pairs.iter().map(|(k, v)| (ident(k), *v)).collect()
}

fn vp() -> Program {
    parse_program(VERIFY_PIN).unwrap()
}

fn listing(m: &Method) -> Vec<String> {
    m.instrs.iter().map(|i| i.to_string()).collect()
}

fn bp(point: usize, pref: Pref) -> BranchOpt {
    BranchOpt {
        kind: OptKind::Bp,
        point,
        pref,
    }
}

fn oc(point: usize, pref: Pref) -> BranchOpt {
    BranchOpt {
        kind: OptKind::Oc,
        point,
        pref,
    }
}

fn compile(m: &str, omega: Vec<BranchOpt>) -> Directive {
    Directive::Compile {
        method: ident(m),
        tree: InlineTree::leaf(&ident(m)),
        omega,
    }
}

#[test]
fn branch_prediction_on_verify_pin_matches_the_known_listing() {
    let p = vp();
    let t = transform_bp(p.entry_method(), 3, Pref::Else).unwrap();
    assert_eq!(
        listing(&t),
        ["load x0", "get pin", "binop sub", "ifeq 6", "push 0", "return", "push 1", "goto 5", "goto 5"]
    );
    assert!(t.is_native());
}

#[test]
fn native_path_lengths_are_seven_and_six() {
    let p = vp();
    let s = Schedule::start(compile("verifyPin", vec![bp(3, Pref::Else)]));
    let cm = CostModel::uniform(10, 1, 50);
    let hit = run(&p, &inputs(&[("x0", 5)]), &s, &cm).unwrap();
    let miss = run(&p, &inputs(&[("x0", 9)]), &s, &cm).unwrap();
    assert_eq!((hit.return_value, hit.total_cost), (1, 7));
    assert_eq!((miss.return_value, miss.total_cost), (0, 6));
}

#[test]
fn optimistic_compilation_traps_back_to_bytecode() {
    let p = vp();
    let t = transform_oc(p.entry_method(), 3, Pref::Else).unwrap();
    let traps: Vec<_> = t
        .instrs
        .iter()
        .filter_map(|i| match i {
            Instr::Deopt(md) => Some((md.source_method.to_string(), md.resume_pc)),
            _ => None,
        })
        .collect();
    assert_eq!(traps, [("verifyPin".to_string(), 6)]);
    let s = Schedule::start(compile("verifyPin", vec![oc(3, Pref::Else)]));
    let cm = CostModel::default();
    let kept = run(&p, &inputs(&[("x0", 9)]), &s, &cm).unwrap();
    let trapped = run(&p, &inputs(&[("x0", 5)]), &s, &cm).unwrap();
    assert_eq!((kept.return_value, trapped.return_value), (0, 1));
    assert!(trapped.trace.iter().any(|e| e.deopt_fired));
    assert!(trapped.total_cost >= kept.total_cost + 50);
}

#[test]
fn directive_application_bumps_versions_up_to_the_maximum() {
    let p = vp();
    let ch = CodeHeap::new(&p);
    let d = compile("verifyPin", vec![bp(3, Pref::Else)]);
    let ch1 = apply_directive(&ch, "verifyPin", &d, 1).unwrap();
    assert_eq!(ch1.version("verifyPin"), 1);
    assert_eq!(listing(ch1.current("verifyPin").unwrap()), listing(&transform_bp(p.entry_method(), 3, Pref::Else).unwrap()));
    assert!(matches!(apply_directive(&ch1, "verifyPin", &d, 1), Err(JitError::InvalidDirective(_))));
    let ch2 = apply_directive(&ch1, "verifyPin", &d, 3).unwrap();
    assert_eq!(ch2.version("verifyPin"), 2);
    assert_eq!(apply_directive(&ch, "verifyPin", &Directive::Empty, 3).unwrap(), ch);
    assert_eq!(base_version(&ch2, "verifyPin").unwrap().instrs, p.entry_method().instrs);
    assert!(base_version(&ch2, "nope").is_err());
}

#[test]
fn at_most_one_optimization_per_point() {
    let p = vp();
    let ch = CodeHeap::new(&p);
    let d = compile("verifyPin", vec![bp(3, Pref::Else), oc(3, Pref::If)]);
    assert!(matches!(apply_directive(&ch, "verifyPin", &d, 3), Err(JitError::InvalidDirective(_))));
    let d = compile("verifyPin", vec![bp(2, Pref::Else)]);
    assert!(matches!(apply_directive(&ch, "verifyPin", &d, 3), Err(JitError::InvalidDirective(_))));
}

const CALLER: &str = "method inc(a):\n  0: load a\n  1: push 1\n  2: binop add\n  3: return\nmethod leaky(a):\n  0: push 9\n  1: push 8\n  2: load a\n  3: return\nmethod main(x):\n  0: load x\n  1: invoke inc\n  2: load x\n  3: invoke leaky\n  4: binop add\n  5: return\nentry main\npublic x\n";

#[test]
fn inlining_grows_by_callee_size_plus_stores_minus_one() {
    let p = parse_program(CALLER).unwrap();
    let ch = CodeHeap::new(&p);
    let main = p.method("main").unwrap();
    let t = InlineTree::leaf(&ident("main")).with(1, InlineTree::leaf(&ident("inc")));
    let m = inline_tree(main, &t, &ch).unwrap();
    assert_eq!(m.len(), main.len() + 4 + 1 - 1);
    assert!(!m.instrs.iter().any(|i| *i == Instr::Invoke(ident("inc"))));
    assert!(m.instrs.contains(&Instr::Invoke(ident("leaky"))));
    // Two operands left under the return value: a swap and a pop for each.
    let t = InlineTree::leaf(&ident("main")).with(3, InlineTree::leaf(&ident("leaky")));
    let m = inline_tree(main, &t, &ch).unwrap();
    assert_eq!(m.len(), main.len() + 4 + 1 - 1 + 2 * 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in [
        InlineTree::leaf(&ident("main")).with(1, InlineTree::leaf(&ident("inc"))),
        InlineTree::leaf(&ident("main"))
            .with(1, InlineTree::leaf(&ident("inc")))
            .with(3, InlineTree::leaf(&ident("leaky"))),
    ] {
        let d = Directive::Compile {
            method: ident("main"),
            tree: t,
            omega: vec![],
        };
        let s = Schedule::start(d);
        for _ in 0..100 {
            let x = inputs(&[("x", rng.random_range(-1000..1000))]);
            let a = run(&p, &x, &Schedule::empty(), &CostModel::default()).unwrap();
            let b = run(&p, &x, &s, &CostModel::default()).unwrap();
            assert_eq!(a.return_value, b.return_value);
        }
    }
}

#[test]
fn inline_errors() {
    let p = parse_program(CALLER).unwrap();
    let ch = CodeHeap::new(&p);
    let main = p.method("main").unwrap();
    let bad = InlineTree::leaf(&ident("main")).with(0, InlineTree::leaf(&ident("inc")));
    assert!(matches!(inline_tree(main, &bad, &ch), Err(JitError::Inline(_))));
    let wrong = InlineTree::leaf(&ident("main")).with(1, InlineTree::leaf(&ident("leaky")));
    assert!(matches!(inline_tree(main, &wrong, &ch), Err(JitError::Inline(_))));
}

#[test]
fn root_only_tree_is_the_identity() {
    let p = parse_program(CHECK_SECRET).unwrap();
    let ch = CodeHeap::new(&p);
    for m in p.methods.values() {
        let out = inline_tree(m, &InlineTree::leaf(&m.name), &ch).unwrap();
        assert_eq!(out.instrs, m.instrs);
    }
}

#[test]
fn every_enumerated_depth_two_schedule_agrees_with_the_plain_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..80 {
        let p = gen_program(&mut rng, &GenConfig::default());
        let i = gen_inputs(&mut rng, &p);
        let cm = CostModel::default();
        let base = run(&p, &i, &Schedule::empty(), &cm).unwrap();
        for s in enumerate_schedules(&p, 2, None, usize::MAX).unwrap() {
            let r = run(&p, &i, &s, &cm).unwrap();
            assert_eq!((r.return_value, &r.final_heap), (base.return_value, &base.final_heap), "{s}");
        }
    }
}

#[test]
fn transforms_preserve_results_on_generated_methods() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cm = CostModel::default();
    for _ in 0..80 {
        let p = gen_program(&mut rng, &GenConfig::default());
        let entry = p.entry_method().clone();
        let conds: Vec<usize> = (0..entry.len()).filter(|&i| entry.instrs[i].is_cond()).collect();
        for &c in &conds {
            for pref in [Pref::If, Pref::Else] {
                for kind in [OptKind::Bp, OptKind::Oc] {
                    let d = compile(&entry.name, vec![BranchOpt { kind, point: c, pref }]);
                    let native = compile_directive(&CodeHeap::new(&p), &d).unwrap();
                    let ch = CodeHeap::with_natives(&p, &[native]).unwrap();
                    for _ in 0..10 {
                        let i = gen_inputs(&mut rng, &p);
                        let a = run(&p, &i, &Schedule::empty(), &cm).unwrap();
                        let empty = Schedule::empty();
                        let mut src = ScheduleSource::new(&empty);
                        let b = run_from(&p, ch.clone(), &i, &mut src, &cm, &RunOptions::quiet()).unwrap();
                        assert_eq!((a.return_value, &a.final_heap), (b.return_value, &b.final_heap));
                    }
                }
            }
        }
    }
}

#[test]
fn favoured_else_arm_follows_the_branch_without_gotos() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    for _ in 0..100 {
        let p = gen_program(&mut rng, &GenConfig::default());
        let m = p.entry_method();
        let cfg = jitct::bytecode::analyze_cfg(m).unwrap();
        for i in (0..m.len()).filter(|&i| m.instrs[i].is_cond()) {
            let arm = jitct::bytecode::arm_points(m, i + 1, &[cfg.junc[&i], i]);
            if arm.is_empty() || arm.iter().any(|&q| q < i) {
                continue;
            }
            let t = transform_bp(m, i, Pref::Else).unwrap();
            // The arm's final jump to the junction may be replaced by the
            // junction code itself.
            let j = cfg.junc[&i];
            let mut orig: Vec<&Instr> = arm.iter().map(|&q| &m.instrs[q]).collect();
            if orig.last().is_some_and(|x| **x == Instr::Goto(j)) {
                orig.pop();
            }
            let hot: Vec<&Instr> = t.instrs[i + 1..i + 1 + orig.len()].iter().collect();
            let strip = |v: &[&Instr]| -> Vec<String> {
                v.iter()
                    .map(|x| match x.jump_target() {
                        Some(_) => format!("{:?}", std::mem::discriminant(*x)),
                        None => x.to_string(),
                    })
                    .collect()
            };
            assert_eq!(strip(&hot), strip(&orig));
            let gotos_in = orig.iter().filter(|x| matches!(x, Instr::Goto(_))).count();
            assert_eq!(hot.iter().filter(|x| matches!(x, Instr::Goto(_))).count(), gotos_in);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn directive_literals_round_trip() {
    for text in [
        "empty",
        "compile verifyPin { inline: []; opt: [bp@3:else] }",
        "compile main { inline: [1->inc, 3->leaky]; opt: [oc@2:if, bp@9:else] }",
        "compile a { inline: [0->b(2->c)]; opt: [] }",
    ] {
        let d = parse_directive(text).unwrap();
        assert_eq!(d.to_string(), text);
        assert_eq!(parse_directive(&d.to_string()).unwrap(), d);
    }
    assert!(parse_directive("compile x { opt: [zz@1:if] }").is_err());
}

#[test]
fn compiled_methods_keep_validating() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..50 {
        let p = gen_program(&mut rng, &GenConfig::default());
        for s in enumerate_schedules(&p, 1, None, usize::MAX).unwrap() {
            let Some(d) = s.entries.first().map(|e| e.directive.clone()) else { continue };
            let native = compile_directive(&CodeHeap::new(&p), &d).unwrap();
            let ch = CodeHeap::with_natives(&p, std::slice::from_ref(&native)).unwrap();
            assert_eq!(ch.natives().len(), 1);
            assert!(native.is_native());
        }
        assert!(validate(&p).is_empty());
    }
}
