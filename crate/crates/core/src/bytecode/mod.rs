//! Program model: instructions, methods, programs and their textual form.

mod cfg;
mod parse;
mod validate;

pub use cfg::{analyze_cfg, arm_points, AnalysisError, CfgInfo};
pub use parse::{parse_program, serialize_method, serialize_program, ParseError};
pub use validate::{stack_depths, validate, Violation};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Interned identifier for methods, locals and globals.
pub type Ident = Arc<str>;

/// Global or argument bindings used to start a run.
pub type Inputs = IndexMap<Ident, i64>;

pub fn ident(s: &str) -> Ident {
    Arc::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Lt,
    And,
    Or,
    Xor,
}

impl BinOp {
    pub const ALL: [BinOp; 9] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Eq,
        BinOp::Lt,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Eq => "eq",
            BinOp::Lt => "lt",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
        }
    }

    pub fn from_name(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.name() == s)
    }

    /// `top op second`; `None` on division by zero.
    pub fn apply(self, top: i64, second: i64) -> Option<i64> {
        Some(match self {
            BinOp::Add => top.wrapping_add(second),
            BinOp::Sub => top.wrapping_sub(second),
            BinOp::Mul => top.wrapping_mul(second),
            BinOp::Div => {
                if second == 0 {
                    return None;
                }
                top.wrapping_div(second)
            }
            BinOp::Eq => (top == second) as i64,
            BinOp::Lt => (top < second) as i64,
            BinOp::And => top & second,
            BinOp::Or => top | second,
            BinOp::Xor => top ^ second,
        })
    }
}

/// Where an uncommon trap resumes interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeoptMeta {
    pub source_method: Ident,
    pub resume_pc: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "op", content = "arg")]
pub enum Instr {
    Binop(BinOp),
    Push(i64),
    Pop,
    Swap,
    Load(Ident),
    Store(Ident),
    Get(Ident),
    Put(Ident),
    Ifeq(usize),
    Ifneq(usize),
    Goto(usize),
    Invoke(Ident),
    Return,
    Deopt(DeoptMeta),
}

/// Opcode without operands; the key of cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Binop,
    Push,
    Pop,
    Swap,
    Load,
    Store,
    Get,
    Put,
    Ifeq,
    Ifneq,
    Goto,
    Invoke,
    Return,
    Deopt,
}

impl Opcode {
    pub const ALL: [Opcode; 14] = [
        Opcode::Binop,
        Opcode::Push,
        Opcode::Pop,
        Opcode::Swap,
        Opcode::Load,
        Opcode::Store,
        Opcode::Get,
        Opcode::Put,
        Opcode::Ifeq,
        Opcode::Ifneq,
        Opcode::Goto,
        Opcode::Invoke,
        Opcode::Return,
        Opcode::Deopt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Binop => "binop",
            Opcode::Push => "push",
            Opcode::Pop => "pop",
            Opcode::Swap => "swap",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Get => "get",
            Opcode::Put => "put",
            Opcode::Ifeq => "ifeq",
            Opcode::Ifneq => "ifneq",
            Opcode::Goto => "goto",
            Opcode::Invoke => "invoke",
            Opcode::Return => "return",
            Opcode::Deopt => "deopt",
        }
    }
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::Binop(_) => Opcode::Binop,
            Instr::Push(_) => Opcode::Push,
            Instr::Pop => Opcode::Pop,
            Instr::Swap => Opcode::Swap,
            Instr::Load(_) => Opcode::Load,
            Instr::Store(_) => Opcode::Store,
            Instr::Get(_) => Opcode::Get,
            Instr::Put(_) => Opcode::Put,
            Instr::Ifeq(_) => Opcode::Ifeq,
            Instr::Ifneq(_) => Opcode::Ifneq,
            Instr::Goto(_) => Opcode::Goto,
            Instr::Invoke(_) => Opcode::Invoke,
            Instr::Return => Opcode::Return,
            Instr::Deopt(_) => Opcode::Deopt,
        }
    }

    pub fn is_cond(&self) -> bool {
        matches!(self, Instr::Ifeq(_) | Instr::Ifneq(_))
    }

    pub fn jump_target(&self) -> Option<usize> {
        match self {
            Instr::Ifeq(j) | Instr::Ifneq(j) | Instr::Goto(j) => Some(*j),
            _ => None,
        }
    }

    pub fn with_target(&self, t: usize) -> Instr {
        match self {
            Instr::Ifeq(_) => Instr::Ifeq(t),
            Instr::Ifneq(_) => Instr::Ifneq(t),
            Instr::Goto(_) => Instr::Goto(t),
            other => other.clone(),
        }
    }

    /// Successor points (`nxt`): `deopt` leaves the method, like `return`.
    pub fn successors(&self, i: usize) -> Succ {
        match self {
            Instr::Goto(j) => Succ::One(*j),
            Instr::Ifeq(j) | Instr::Ifneq(j) => Succ::Two(i + 1, *j),
            Instr::Return | Instr::Deopt(_) => Succ::None,
            _ => Succ::One(i + 1),
        }
    }

    /// Whether control can continue at `i + 1`.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            Instr::Goto(_) | Instr::Return | Instr::Deopt(_)
        )
    }
}

/// At most two successors, without allocating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Succ {
    None,
    One(usize),
    Two(usize, usize),
}

impl Succ {
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let (a, b) = match self {
            Succ::None => (None, None),
            Succ::One(x) => (Some(x), None),
            Succ::Two(x, y) => (Some(x), if x == y { None } else { Some(y) }),
        };
        a.into_iter().chain(b)
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Binop(op) => write!(f, "binop {}", op.name()),
            Instr::Push(v) => write!(f, "push {v}"),
            Instr::Pop => f.write_str("pop"),
            Instr::Swap => f.write_str("swap"),
            Instr::Load(x) => write!(f, "load {x}"),
            Instr::Store(x) => write!(f, "store {x}"),
            Instr::Get(y) => write!(f, "get {y}"),
            Instr::Put(y) => write!(f, "put {y}"),
            Instr::Ifeq(j) => write!(f, "ifeq {j}"),
            Instr::Ifneq(j) => write!(f, "ifneq {j}"),
            Instr::Goto(j) => write!(f, "goto {j}"),
            Instr::Invoke(m) => write!(f, "invoke {m}"),
            Instr::Return => f.write_str("return"),
            Instr::Deopt(md) => write!(f, "deopt {}@{}", md.source_method, md.resume_pc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodeOrigin {
    #[default]
    Bytecode,
    Native,
}

/// Bytecode point a native slot was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub method: Ident,
    pub point: usize,
    /// Set when the slot is a conditional whose sense was inverted by layout.
    #[serde(default)]
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub name: Ident,
    pub argv: Vec<Ident>,
    pub instrs: Vec<Instr>,
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub origin: CodeOrigin,
    /// Per-slot bytecode origin; empty for bytecode methods.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<Site>,
}

impl Method {
    pub fn new(name: &str, argv: &[&str], instrs: Vec<Instr>) -> Method {
        Method {
            name: ident(name),
            argv: argv.iter().map(|a| ident(a)).collect(),
            instrs,
            version: 0,
            origin: CodeOrigin::Bytecode,
            sites: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn is_native(&self) -> bool {
        self.origin == CodeOrigin::Native
    }

    /// Bytecode origin of slot `i`.
    pub fn site(&self, i: usize) -> Site {
        match self.sites.get(i) {
            Some(s) => s.clone(),
            None => Site {
                method: self.name.clone(),
                point: i,
                flipped: false,
            },
        }
    }

    pub fn conditionals(&self) -> impl Iterator<Item = usize> + '_ {
        self.instrs
            .iter()
            .enumerate()
            .filter(|(_, ins)| ins.is_cond())
            .map(|(i, _)| i)
    }

    pub fn callees(&self) -> impl Iterator<Item = (usize, &Ident)> + '_ {
        self.instrs.iter().enumerate().filter_map(|(i, ins)| match ins {
            Instr::Invoke(m) => Some((i, m)),
            _ => None,
        })
    }

    /// All locals mentioned by the method, arguments first.
    pub fn locals(&self) -> Vec<Ident> {
        let mut out: Vec<Ident> = self.argv.clone();
        for ins in &self.instrs {
            if let Instr::Load(x) | Instr::Store(x) = ins {
                if !out.iter().any(|y| y == x) {
                    out.push(x.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    /// Declared globals with their initial values.
    pub globals: IndexMap<Ident, i64>,
    pub methods: IndexMap<Ident, Arc<Method>>,
    pub entry: Ident,
    pub public_inputs: BTreeSet<Ident>,
}

impl Program {
    pub fn method(&self, name: &str) -> Option<&Arc<Method>> {
        self.methods.get(name)
    }

    pub fn entry_method(&self) -> &Arc<Method> {
        &self.methods[&self.entry]
    }

    /// Input variables: entry arguments and globals.
    pub fn input_vars(&self) -> Vec<Ident> {
        let mut v: Vec<Ident> = self.entry_method().argv.clone();
        v.extend(self.globals.keys().cloned());
        v
    }

    pub fn is_public(&self, var: &str) -> bool {
        self.public_inputs.contains(var)
    }

    pub fn secret_inputs(&self) -> Vec<Ident> {
        self.input_vars()
            .into_iter()
            .filter(|v| !self.is_public(v))
            .collect()
    }

    /// Methods in an order where callees precede callers.
    pub fn callees_first(&self) -> Vec<Ident> {
        fn visit(p: &Program, m: &Ident, seen: &mut Vec<Ident>, stack: &mut Vec<Ident>) {
            if seen.contains(m) || stack.contains(m) {
                return;
            }
            stack.push(m.clone());
            if let Some(meth) = p.methods.get(m) {
                for (_, c) in meth.callees() {
                    visit(p, c, seen, stack);
                }
            }
            stack.pop();
            seen.push(m.clone());
        }
        let mut seen = Vec::new();
        for m in self.methods.keys() {
            visit(self, m, &mut seen, &mut Vec::new());
        }
        seen
    }

    /// Methods reachable through calls from `m`, excluding `m` unless recursive.
    pub fn transitive_callees(&self, m: &str) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        let mut work: Vec<Ident> = self
            .methods
            .get(m)
            .map(|x| x.callees().map(|(_, c)| c.clone()).collect())
            .unwrap_or_default();
        while let Some(c) = work.pop() {
            if out.insert(c.clone()) {
                if let Some(cm) = self.methods.get(&c) {
                    work.extend(cm.callees().map(|(_, c)| c.clone()));
                }
            }
        }
        out
    }

    /// Initial values for every input: declared globals, then overrides.
    pub fn initial_bindings(&self, inputs: &Inputs) -> Inputs {
        let mut b = self.globals.clone();
        for (k, v) in inputs {
            b.insert(k.clone(), *v);
        }
        b
    }
}
