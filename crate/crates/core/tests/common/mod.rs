//! Random well-formed programs: at most four methods, at most forty
//! instructions each, loops with constant trip counts, no recursion.

#![allow(dead_code)]

pub mod oracles;
pub mod rules;

use jitct::bytecode::{ident, validate, BinOp, Ident, Inputs, Instr, Method, Program};
use rand::seq::IndexedRandom;
use rand::Rng;
use std::collections::BTreeSet;
use std::sync::Arc;

pub const MAX_METHODS: usize = 4;
pub const MAX_INSTRS: usize = 40;
pub const PUBLIC_GLOBAL: &str = "g";
pub const SECRET_GLOBALS: [&str; 2] = ["s", "t"];

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_methods: usize,
    /// Both arms of a conditional run the same statements up to constants,
    /// with this probability; the else arm also ends in a jump.
    pub balanced: f64,
    /// Chance that a leaf reads a secret global.
    pub secret_bias: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_methods: MAX_METHODS,
            balanced: 0.0,
            secret_bias: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
enum Expr {
    Push(i64),
    Load(Ident),
    Get(Ident),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone)]
enum Stmt {
    Store(Ident, Expr),
    Put(Ident, Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Loop(i64, Ident, Vec<Stmt>),
    Call(Ident, Vec<Expr>, Option<Ident>),
}

const OPS: [BinOp; 8] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::Eq,
    BinOp::Lt,
    BinOp::And,
    BinOp::Or,
    BinOp::Xor,
];

struct Scope<'a> {
    locals: Vec<Ident>,
    callees: &'a [(Ident, usize)],
    loops: usize,
    cfg: &'a GenConfig,
}

fn gen_expr<R: Rng>(rng: &mut R, sc: &Scope, depth: usize) -> Expr {
    if depth > 0 && rng.random_bool(0.4) {
        let op = *OPS.choose(rng).unwrap();
        return Expr::Bin(op, Box::new(gen_expr(rng, sc, depth - 1)), Box::new(gen_expr(rng, sc, depth - 1)));
    }
    if rng.random_bool(sc.cfg.secret_bias) {
        return Expr::Get(ident(SECRET_GLOBALS.choose(rng).unwrap()));
    }
    match rng.random_range(0..3) {
        0 => Expr::Push(rng.random_range(-2..=6)),
        1 => Expr::Load(sc.locals.choose(rng).unwrap().clone()),
        _ => Expr::Get(ident(PUBLIC_GLOBAL)),
    }
}

fn gen_block<R: Rng>(rng: &mut R, sc: &mut Scope, nest: usize, n: usize) -> Vec<Stmt> {
    (0..n).map(|_| gen_stmt(rng, sc, nest)).collect()
}

fn gen_stmt<R: Rng>(rng: &mut R, sc: &mut Scope, nest: usize) -> Stmt {
    let roll = rng.random_range(0..10);
    if nest < 2 && roll < 3 {
        let c = gen_expr(rng, sc, 1);
        let a = rng.random_range(1..=2);
        let then = gen_block(rng, sc, nest + 1, a);
        let els = if rng.random_bool(sc.cfg.balanced) {
            mirror(rng, &then)
        } else {
            let b = rng.random_range(0..=2);
            gen_block(rng, sc, nest + 1, b)
        };
        return Stmt::If(c, then, els);
    }
    if nest < 2 && roll == 3 {
        let ctr = ident(&format!("c{}", sc.loops));
        sc.loops += 1;
        let n = rng.random_range(0..=3);
        let len = rng.random_range(1..=2);
        let body = gen_block(rng, sc, nest + 1, len);
        return Stmt::Loop(n, ctr, body);
    }
    if (roll == 4 || roll == 6) && !sc.callees.is_empty() {
        let (c, k) = sc.callees.choose(rng).unwrap().clone();
        let args = (0..k).map(|_| gen_expr(rng, sc, 1)).collect();
        let dest = rng.random_bool(0.7).then(|| sc.locals.choose(rng).unwrap().clone());
        return Stmt::Call(c, args, dest);
    }
    if roll == 5 {
        let g = if rng.random_bool(0.5) {
            ident(PUBLIC_GLOBAL)
        } else {
            ident(SECRET_GLOBALS.choose(rng).unwrap())
        };
        return Stmt::Put(g, gen_expr(rng, sc, 1));
    }
    let x = sc.locals.choose(rng).unwrap().clone();
    Stmt::Store(x, gen_expr(rng, sc, 2))
}

fn mirror_expr<R: Rng>(rng: &mut R, e: &Expr) -> Expr {
    match e {
        Expr::Push(_) => Expr::Push(rng.random_range(-2..=6)),
        Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(mirror_expr(rng, a)), Box::new(mirror_expr(rng, b))),
        other => other.clone(),
    }
}

/// Same statements and callees, fresh constants.
fn mirror<R: Rng>(rng: &mut R, b: &[Stmt]) -> Vec<Stmt> {
    b.iter()
        .map(|s| match s {
            Stmt::Store(x, e) => Stmt::Store(x.clone(), mirror_expr(rng, e)),
            Stmt::Put(g, e) => Stmt::Put(g.clone(), mirror_expr(rng, e)),
            Stmt::If(c, t, e) => Stmt::If(mirror_expr(rng, c), mirror(rng, t), mirror(rng, e)),
            Stmt::Loop(n, c, body) => Stmt::Loop(*n, c.clone(), mirror(rng, body)),
            Stmt::Call(m, args, d) => Stmt::Call(m.clone(), args.iter().map(|a| mirror_expr(rng, a)).collect(), d.clone()),
        })
        .collect()
}

struct Emitter {
    code: Vec<Instr>,
    balanced: bool,
}

impl Emitter {
    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Push(v) => self.code.push(Instr::Push(*v)),
            Expr::Load(x) => self.code.push(Instr::Load(x.clone())),
            Expr::Get(g) => self.code.push(Instr::Get(g.clone())),
            Expr::Bin(op, a, b) => {
                self.expr(a);
                self.expr(b);
                self.code.push(Instr::Binop(*op));
            }
        }
    }

    fn block(&mut self, b: &[Stmt]) {
        for s in b {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Store(x, e) => {
                self.expr(e);
                self.code.push(Instr::Store(x.clone()));
            }
            Stmt::Put(g, e) => {
                self.expr(e);
                self.code.push(Instr::Put(g.clone()));
            }
            Stmt::If(c, t, e) => {
                self.expr(c);
                let br = self.code.len();
                self.code.push(Instr::Ifeq(0));
                self.block(t);
                let g1 = self.code.len();
                self.code.push(Instr::Goto(0));
                let els = self.code.len();
                self.block(e);
                let g2 = self.balanced.then(|| {
                    self.code.push(Instr::Goto(0));
                    self.code.len() - 1
                });
                let end = self.code.len();
                self.code[br] = Instr::Ifeq(els);
                self.code[g1] = Instr::Goto(end);
                if let Some(g2) = g2 {
                    self.code[g2] = Instr::Goto(end);
                }
            }
            Stmt::Loop(n, c, body) => {
                self.code.push(Instr::Push(*n));
                self.code.push(Instr::Store(c.clone()));
                let head = self.code.len();
                self.code.push(Instr::Load(c.clone()));
                let br = self.code.len();
                self.code.push(Instr::Ifeq(0));
                self.block(body);
                self.code.push(Instr::Push(1));
                self.code.push(Instr::Load(c.clone()));
                self.code.push(Instr::Binop(BinOp::Sub));
                self.code.push(Instr::Store(c.clone()));
                self.code.push(Instr::Goto(head));
                let end = self.code.len();
                self.code[br] = Instr::Ifeq(end);
            }
            Stmt::Call(m, args, dest) => {
                for a in args {
                    self.expr(a);
                }
                self.code.push(Instr::Invoke(m.clone()));
                match dest {
                    Some(x) => self.code.push(Instr::Store(x.clone())),
                    None => self.code.push(Instr::Pop),
                }
            }
        }
    }
}

fn gen_method<R: Rng>(rng: &mut R, name: &str, argc: usize, callees: &[(Ident, usize)], cfg: &GenConfig) -> Method {
    let argv: Vec<String> = (0..argc).map(|k| format!("a{k}")).collect();
    loop {
        let mut locals: Vec<Ident> = argv.iter().map(|a| ident(a)).collect();
        locals.push(ident("x"));
        locals.push(ident("y"));
        let mut sc = Scope {
            locals,
            callees,
            loops: 0,
            cfg,
        };
        let n = rng.random_range(1..=5);
        let body = gen_block(rng, &mut sc, 0, n);
        let mut em = Emitter {
            code: Vec::new(),
            balanced: cfg.balanced > 0.0,
        };
        for x in ["x", "y"] {
            em.code.push(Instr::Push(rng.random_range(0..=3)));
            em.code.push(Instr::Store(ident(x)));
        }
        em.block(&body);
        let ret = gen_expr(rng, &sc, 1);
        em.expr(&ret);
        em.code.push(Instr::Return);
        if em.code.len() <= MAX_INSTRS {
            let a: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
            return Method::new(name, &a, em.code);
        }
    }
}

/// A valid program; methods may only call methods defined after them.
pub fn gen_program<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Program {
    let k = rng.random_range(1..=cfg.max_methods);
    let argcs: Vec<usize> = (0..k).map(|_| rng.random_range(0..=2)).collect();
    let names: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
    let mut methods = indexmap::IndexMap::new();
    for i in 0..k {
        let callees: Vec<(Ident, usize)> = (i + 1..k).map(|j| (ident(&names[j]), argcs[j])).collect();
        let m = gen_method(rng, &names[i], argcs[i], &callees, cfg);
        methods.insert(m.name.clone(), Arc::new(m));
    }
    let mut globals = indexmap::IndexMap::new();
    globals.insert(ident(PUBLIC_GLOBAL), rng.random_range(0..=4));
    for s in SECRET_GLOBALS {
        globals.insert(ident(s), rng.random_range(0..=4));
    }
    let mut public_inputs = BTreeSet::new();
    public_inputs.insert(ident(PUBLIC_GLOBAL));
    if argcs[0] > 0 {
        public_inputs.insert(ident("a0"));
    }
    let p = Program {
        globals,
        methods,
        entry: ident(&names[0]),
        public_inputs,
    };
    let v = validate(&p);
    assert!(v.is_empty(), "generator produced an invalid program: {v:?}");
    p
}

/// Random values for every input of `p`.
pub fn gen_inputs<R: Rng>(rng: &mut R, p: &Program) -> Inputs {
    p.input_vars()
        .into_iter()
        .map(|x| (x, rng.random_range(-3..=8)))
        .collect()
}

/// Random values for the public inputs of `p` only.
pub fn gen_public<R: Rng>(rng: &mut R, p: &Program) -> Inputs {
    p.input_vars()
        .into_iter()
        .filter(|x| p.is_public(x))
        .map(|x| (x, rng.random_range(-3..=8)))
        .collect()
}

/// Missing secret entry arguments set to zero, so runs on public-only maps succeed.
pub fn with_default_args(p: &Program, mut inp: Inputs) -> Inputs {
    for a in &p.entry_method().argv {
        inp.entry(a.clone()).or_insert(0);
    }
    inp
}
