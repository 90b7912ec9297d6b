//! Compilation directives: inline trees, branch prediction and optimistic
//! compilation, applied to the code heap with version bookkeeping.

mod inline;
mod layout;
mod literal;

pub use inline::inline_tree;
pub use layout::{transform_bp, transform_oc};
pub use literal::{parse_directive, LiteralError};

use crate::bytecode::{CodeOrigin, Ident, Instr, Method, Program, Site};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum JitError {
    #[error("unknown method `{0}`")]
    UnknownMethod(Ident),
    #[error("inline: {0}")]
    Inline(String),
    #[error("transform: {0}")]
    Transform(String),
    #[error("invalid directive: {0}")]
    InvalidDirective(String),
}

/// Methods labelled in a tree; children are `(call site in the parent's bytecode, subtree)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InlineTree {
    pub method: Ident,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<(usize, InlineTree)>,
}

impl InlineTree {
    pub fn leaf(method: &Ident) -> Self {
        InlineTree {
            method: method.clone(),
            children: Vec::new(),
        }
    }

    pub fn with(mut self, site: usize, child: InlineTree) -> Self {
        self.children.push((site, child));
        self
    }

    /// Every method label in the tree, root included.
    pub fn labels(&self) -> Vec<Ident> {
        let mut v = vec![self.method.clone()];
        for (_, c) in &self.children {
            v.extend(c.labels());
        }
        v
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|(_, c)| 1 + c.depth()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Bp,
    Oc,
}

/// Which arm a branch optimization favours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pref {
    /// The jump-target arm.
    If,
    /// The fall-through arm.
    Else,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchOpt {
    pub kind: OptKind,
    /// Branch point in the inlined method `t(m)`.
    pub point: usize,
    pub pref: Pref,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Directive {
    Empty,
    Compile {
        method: Ident,
        tree: InlineTree,
        omega: Vec<BranchOpt>,
    },
}

impl Directive {
    /// Compile `m` without inlining or branch optimizations.
    pub fn plain(m: &Ident) -> Self {
        Directive::Compile {
            method: m.clone(),
            tree: InlineTree::leaf(m),
            omega: Vec::new(),
        }
    }

    pub fn target(&self) -> Option<&Ident> {
        match self {
            Directive::Empty => None,
            Directive::Compile { method, .. } => Some(method),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Directive::Empty)
    }
}

impl fmt::Display for InlineTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (site, c)) in self.children.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{site}->{}", c.method)?;
            if !c.children.is_empty() {
                write!(f, "({c})")?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for BranchOpt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            OptKind::Bp => "bp",
            OptKind::Oc => "oc",
        };
        let b = match self.pref {
            Pref::If => "if",
            Pref::Else => "else",
        };
        write!(f, "{k}@{}:{b}", self.point)
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Empty => f.write_str("empty"),
            Directive::Compile { method, tree, omega } => {
                let opts: Vec<String> = omega.iter().map(|o| o.to_string()).collect();
                write!(f, "compile {method} {{ inline: [{tree}]; opt: [{}] }}", opts.join(", "))
            }
        }
    }
}

/// Latest version of every method, plus the registered bytecode versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeHeap {
    base: Arc<IndexMap<Ident, Arc<Method>>>,
    current: IndexMap<Ident, Arc<Method>>,
}

impl CodeHeap {
    pub fn new(p: &Program) -> Self {
        CodeHeap {
            base: Arc::new(p.methods.clone()),
            current: p.methods.clone(),
        }
    }

    /// Starting heap with the given compiled methods installed.
    pub fn with_natives(p: &Program, natives: &[Method]) -> Result<Self, JitError> {
        let mut ch = CodeHeap::new(p);
        for m in natives {
            if !ch.base.contains_key(&m.name) {
                return Err(JitError::UnknownMethod(m.name.clone()));
            }
            ch.current.insert(m.name.clone(), Arc::new(m.clone()));
        }
        Ok(ch)
    }

    pub fn base(&self, name: &str) -> Option<&Arc<Method>> {
        self.base.get(name)
    }

    pub fn current(&self, name: &str) -> Option<&Arc<Method>> {
        self.current.get(name)
    }

    pub fn version(&self, name: &str) -> u32 {
        self.current.get(name).map(|m| m.version).unwrap_or(0)
    }

    pub fn install(&mut self, m: Method) {
        self.current.insert(m.name.clone(), Arc::new(m));
    }

    pub fn reset_to_base(&mut self, name: &str) {
        if let Some(b) = self.base.get(name) {
            self.current.insert(b.name.clone(), b.clone());
        }
    }

    /// Installed compiled methods, in program order.
    pub fn natives(&self) -> Vec<Method> {
        self.current
            .values()
            .filter(|m| m.is_native())
            .map(|m| (**m).clone())
            .collect()
    }
}

/// The registered bytecode version of `name`.
pub fn base_version<'a>(ch: &'a CodeHeap, name: &str) -> Result<&'a Arc<Method>, JitError> {
    ch.base(name).ok_or_else(|| JitError::UnknownMethod(Arc::from(name)))
}

/// Working form of a method under transformation.
#[derive(Debug, Clone)]
pub(crate) struct Body {
    pub name: Ident,
    pub argv: Vec<Ident>,
    pub instrs: Vec<Instr>,
    pub sites: Vec<Site>,
    /// Index of the slot in `t(m)`, for slots that come from it.
    pub tid: Vec<Option<usize>>,
}

impl Body {
    pub fn from_method(m: &Method) -> Body {
        let n = m.instrs.len();
        Body {
            name: m.name.clone(),
            argv: m.argv.clone(),
            instrs: m.instrs.clone(),
            sites: (0..n).map(|i| m.site(i)).collect(),
            tid: (0..n).map(Some).collect(),
        }
    }

    pub fn to_method(&self, version: u32) -> Method {
        Method {
            name: self.name.clone(),
            argv: self.argv.clone(),
            instrs: self.instrs.clone(),
            version,
            origin: CodeOrigin::Native,
            sites: self.sites.clone(),
        }
    }
}

/// `d(m)` built from the bytecode version: inline `t`, then apply `ω` in order.
///
/// `ω` points are positions in `t(m)`; they are carried through earlier
/// entries, and an entry whose point was pruned by an earlier trap is invalid.
pub fn compile_directive(ch: &CodeHeap, d: &Directive) -> Result<Method, JitError> {
    let Directive::Compile { method, tree, omega } = d else {
        return Err(JitError::InvalidDirective("empty directive has no compiled form".into()));
    };
    if &tree.method != method {
        return Err(JitError::InvalidDirective(format!(
            "inline tree rooted at `{}` for method `{method}`",
            tree.method
        )));
    }
    let base = base_version(ch, method)?;
    let mut body = inline::inline_body(base, tree, ch, &mut 0)?;
    let tm: Vec<bool> = body.instrs.iter().map(Instr::is_cond).collect();
    body.tid = (0..tm.len()).map(Some).collect();
    let mut seen = Vec::new();
    for o in omega {
        if seen.contains(&o.point) {
            return Err(JitError::InvalidDirective(format!("branch point {} occurs twice", o.point)));
        }
        seen.push(o.point);
        if !tm.get(o.point).copied().unwrap_or(false) {
            return Err(JitError::InvalidDirective(format!(
                "point {} of t({method}) is not a conditional",
                o.point
            )));
        }
        let Some(cur) = body.tid.iter().position(|t| *t == Some(o.point)) else {
            return Err(JitError::InvalidDirective(format!(
                "branch point {} was pruned by an earlier optimization",
                o.point
            )));
        };
        body = layout::branch_opt(&body, cur, o.kind, o.pref)?;
    }
    Ok(body.to_method(1))
}

/// `ch[m ↦ d(m)]` with the version bumped; the empty directive leaves `ch` unchanged.
pub fn apply_directive(ch: &CodeHeap, m: &str, d: &Directive, v_max: u32) -> Result<CodeHeap, JitError> {
    let Directive::Compile { method, .. } = d else {
        return Ok(ch.clone());
    };
    if &**method != m {
        return Err(JitError::InvalidDirective(format!("directive for `{method}` applied to `{m}`")));
    }
    let cur = ch.current(m).ok_or_else(|| JitError::UnknownMethod(Arc::from(m)))?;
    let version = cur.version + 1;
    if version > v_max {
        return Err(JitError::InvalidDirective(format!(
            "version {version} of `{m}` exceeds the maximum {v_max}"
        )));
    }
    let mut compiled = compile_directive(ch, d)?;
    compiled.version = version;
    let mut next = ch.clone();
    next.install(compiled);
    Ok(next)
}
