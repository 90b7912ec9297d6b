use super::{BinOp, DeoptMeta, Ident, Instr, Method, Program};
use indexmap::IndexMap;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

fn err<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        col,
        msg: msg.into(),
    })
}

struct Interner(HashMap<String, Ident>);

impl Interner {
    fn get(&mut self, s: &str) -> Ident {
        if let Some(x) = self.0.get(s) {
            return x.clone();
        }
        let x: Ident = Arc::from(s);
        self.0.insert(s.to_string(), x.clone());
        x
    }
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$' || c == '.')
}

struct Pending {
    method: Method,
    line: usize,
    /// (point, line, col) of every jump and invoke, checked after all methods are read.
    jumps: Vec<(usize, usize, usize)>,
    invokes: Vec<(Ident, usize, usize)>,
}

/// Parses the line-oriented assembly format.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut names = Interner(HashMap::new());
    let mut globals: IndexMap<Ident, i64> = IndexMap::new();
    let mut methods: Vec<Pending> = Vec::new();
    let mut entry: Option<(Ident, usize)> = None;
    let mut public = BTreeSet::new();

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let body = raw.split('#').next().unwrap_or("");
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let col = body.len() - body.trim_start().len() + 1;
        let (kw, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (trimmed, ""),
        };
        match kw {
            "global" => {
                let Some((name, val)) = rest.split_once('=') else {
                    return err(ln, col, "expected `global NAME = VALUE`");
                };
                let name = name.trim();
                if !is_ident(name) {
                    return err(ln, col + 7, format!("bad global name `{name}`"));
                }
                let Ok(v) = val.trim().parse::<i64>() else {
                    return err(ln, col, format!("bad integer `{}`", val.trim()));
                };
                if globals.insert(names.get(name), v).is_some() {
                    return err(ln, col, format!("duplicate global `{name}`"));
                }
            }
            "method" => {
                let Some(sig) = rest.strip_suffix(':') else {
                    return err(ln, col, "method header must end with `:`");
                };
                let (name, args) = match sig.split_once('(') {
                    Some((n, a)) => match a.trim_end().strip_suffix(')') {
                        Some(a) => (n.trim(), a),
                        None => return err(ln, col, "missing `)` in method header"),
                    },
                    None => return err(ln, col, "missing `(` in method header"),
                };
                if !is_ident(name) {
                    return err(ln, col + 7, format!("bad method name `{name}`"));
                }
                if methods.iter().any(|p| &*p.method.name == name) {
                    return err(ln, col + 7, format!("duplicate method `{name}`"));
                }
                let mut argv = Vec::new();
                for a in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
                    if !is_ident(a) {
                        return err(ln, col, format!("bad argument name `{a}`"));
                    }
                    argv.push(names.get(a));
                }
                methods.push(Pending {
                    method: Method {
                        name: names.get(name),
                        argv,
                        instrs: Vec::new(),
                        version: 0,
                        origin: Default::default(),
                        sites: Vec::new(),
                    },
                    line: ln,
                    jumps: Vec::new(),
                    invokes: Vec::new(),
                });
            }
            "entry" => {
                if !is_ident(rest) {
                    return err(ln, col, "expected `entry NAME`");
                }
                entry = Some((names.get(rest), ln));
            }
            "public" => {
                for v in rest.split(|c: char| c == ',' || c.is_whitespace()) {
                    if v.is_empty() {
                        continue;
                    }
                    if !is_ident(v) {
                        return err(ln, col, format!("bad variable name `{v}`"));
                    }
                    public.insert(names.get(v));
                }
            }
            label if label.ends_with(':') => {
                let Some(cur) = methods.last_mut() else {
                    return err(ln, col, "instruction outside of a method");
                };
                let Ok(n) = label[..label.len() - 1].parse::<usize>() else {
                    return err(ln, col, format!("bad label `{label}`"));
                };
                if n != cur.method.instrs.len() {
                    return err(
                        ln,
                        col,
                        format!("label {n} out of sequence, expected {}", cur.method.instrs.len()),
                    );
                }
                let ocol = col + label.len() + 1;
                let ins = parse_instr(rest, ln, ocol, &mut names)?;
                match &ins {
                    Instr::Ifeq(_) | Instr::Ifneq(_) | Instr::Goto(_) => cur.jumps.push((n, ln, ocol)),
                    Instr::Invoke(m) => cur.invokes.push((m.clone(), ln, ocol)),
                    _ => {}
                }
                cur.method.instrs.push(ins);
            }
            other => return err(ln, col, format!("unknown directive or mnemonic `{other}`")),
        }
    }

    let known: BTreeSet<Ident> = methods.iter().map(|p| p.method.name.clone()).collect();
    let mut out = IndexMap::new();
    for p in methods {
        let m = p.method;
        if !m.instrs.iter().any(|i| matches!(i, Instr::Return)) {
            return err(p.line, 1, format!("method must contain return (`{}`)", m.name));
        }
        for (pt, ln, c) in p.jumps {
            let j = m.instrs[pt].jump_target().unwrap_or(0);
            if j >= m.instrs.len() {
                return err(ln, c, format!("jump target out of range: {j} (method has {} instructions)", m.instrs.len()));
            }
        }
        for (callee, ln, c) in p.invokes {
            if !known.contains(&callee) {
                return err(ln, c, format!("unknown invoke target `{callee}`"));
            }
        }
        out.insert(m.name.clone(), Arc::new(m));
    }
    let Some((entry, eln)) = entry else {
        return err(text.lines().count().max(1), 1, "missing `entry` declaration");
    };
    if !out.contains_key(&entry) {
        return err(eln, 1, format!("entry `{entry}` is not a method"));
    }
    Ok(Program {
        globals,
        methods: out,
        entry,
        public_inputs: public,
    })
}

fn parse_instr(s: &str, ln: usize, col: usize, names: &mut Interner) -> Result<Instr, ParseError> {
    let mut parts = s.split_whitespace();
    let Some(mn) = parts.next() else {
        return err(ln, col, "missing instruction");
    };
    let arg = parts.next();
    if parts.next().is_some() {
        return err(ln, col, format!("too many operands for `{mn}`"));
    }
    let need = |a: Option<&str>| -> Result<String, ParseError> {
        match a {
            Some(x) => Ok(x.to_string()),
            None => err(ln, col, format!("`{mn}` needs an operand")),
        }
    };
    let none = |a: Option<&str>, ins: Instr| -> Result<Instr, ParseError> {
        match a {
            None => Ok(ins),
            Some(x) => err(ln, col, format!("unexpected operand `{x}` for `{mn}`")),
        }
    };
    let var = |a: Option<&str>, names: &mut Interner| -> Result<Ident, ParseError> {
        let a = need(a)?;
        if !is_ident(&a) {
            return err(ln, col, format!("malformed operand `{a}`"));
        }
        Ok(names.get(&a))
    };
    let point = |a: Option<&str>| -> Result<usize, ParseError> {
        let a = need(a)?;
        a.parse::<usize>()
            .or_else(|_| err(ln, col, format!("malformed jump target `{a}`")))
    };
    Ok(match mn {
        "binop" => {
            let a = need(arg)?;
            match BinOp::from_name(&a) {
                Some(op) => Instr::Binop(op),
                None => return err(ln, col, format!("unknown binary operator `{a}`")),
            }
        }
        "push" => {
            let a = need(arg)?;
            match a.parse::<i64>() {
                Ok(v) => Instr::Push(v),
                Err(_) => return err(ln, col, format!("malformed integer `{a}`")),
            }
        }
        "pop" => none(arg, Instr::Pop)?,
        "swap" => none(arg, Instr::Swap)?,
        "return" => none(arg, Instr::Return)?,
        "load" => Instr::Load(var(arg, names)?),
        "store" => Instr::Store(var(arg, names)?),
        "get" => Instr::Get(var(arg, names)?),
        "put" => Instr::Put(var(arg, names)?),
        "invoke" => Instr::Invoke(var(arg, names)?),
        "ifeq" => Instr::Ifeq(point(arg)?),
        "ifneq" => Instr::Ifneq(point(arg)?),
        "goto" => Instr::Goto(point(arg)?),
        "deopt" => {
            let a = need(arg)?;
            let Some((m, pc)) = a.split_once('@') else {
                return err(ln, col, "expected `deopt METHOD@POINT`");
            };
            let Ok(pc) = pc.parse::<usize>() else {
                return err(ln, col, format!("malformed resume point `{pc}`"));
            };
            Instr::Deopt(DeoptMeta {
                source_method: names.get(m),
                resume_pc: pc,
            })
        }
        other => return err(ln, col, format!("unknown mnemonic `{other}`")),
    })
}

/// Method listing in the assembly format.
pub fn serialize_method(m: &Method) -> String {
    let mut s = String::new();
    let args: Vec<&str> = m.argv.iter().map(|a| &**a).collect();
    let _ = writeln!(s, "method {}({}):", m.name, args.join(", "));
    for (i, ins) in m.instrs.iter().enumerate() {
        let _ = writeln!(s, "  {i}: {ins}");
    }
    s
}

pub fn serialize_program(p: &Program) -> String {
    let mut s = String::new();
    for (g, v) in &p.globals {
        let _ = writeln!(s, "global {g} = {v}");
    }
    for m in p.methods.values() {
        s.push_str(&serialize_method(m));
    }
    let _ = writeln!(s, "entry {}", p.entry);
    if !p.public_inputs.is_empty() {
        let v: Vec<&str> = p.public_inputs.iter().map(|x| &**x).collect();
        let _ = writeln!(s, "public {}", v.join(" "));
    }
    s
}
