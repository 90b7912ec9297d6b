use crate::bytecode::{Ident, Program};
use crate::jit::{inline_tree, CodeHeap, Directive, InlineTree};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    /// Only inlining of `prot1` methods is blocked.
    Light,
}

/// Methods that may not be compiled or inlined, and branch points (bytecode
/// coordinates) that may not be branch-optimized.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default)]
    pub prot1: BTreeSet<Ident>,
    #[serde(default)]
    pub prot2: BTreeMap<Ident, BTreeSet<usize>>,
    #[serde(default)]
    pub mode: Mode,
}

impl Policy {
    pub fn with_mode(&self, mode: Mode) -> Policy {
        Policy {
            mode,
            ..self.clone()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.prot1.is_empty() && self.prot2.values().all(|s| s.is_empty())
    }

    pub fn protects_branch(&self, m: &str, point: usize) -> bool {
        self.prot2.get(m).is_some_and(|s| s.contains(&point))
    }

    /// Whether `m` may be compiled at all.
    pub fn may_compile(&self, m: &str) -> bool {
        self.mode == Mode::Light || !self.prot1.contains(m)
    }

    pub fn may_inline(&self, m: &str) -> bool {
        !self.prot1.contains(m)
    }

    /// `dom(prot2) ∩ prot1 = ∅`.
    pub fn well_formed(&self) -> bool {
        self.prot2
            .iter()
            .all(|(m, s)| s.is_empty() || !self.prot1.contains(m))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Policy, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// HotSpot `CompileCommand`-style lines.
    pub fn hotspot_lines(&self) -> String {
        let mut s = String::new();
        for m in &self.prot1 {
            if self.mode == Mode::Full {
                let _ = writeln!(s, "exclude {m}");
            }
            let _ = writeln!(s, "dontinline {m}");
        }
        for (m, pts) in &self.prot2 {
            if pts.is_empty() {
                continue;
            }
            let list: Vec<String> = pts.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(s, "dontprune {m} {}", list.join(","));
        }
        s
    }
}

fn tree_ok(t: &InlineTree, pol: &Policy) -> bool {
    t.children
        .iter()
        .all(|(_, c)| pol.may_inline(&c.method) && tree_ok(c, pol))
}

fn prune_tree(t: &InlineTree, pol: &Policy) -> InlineTree {
    InlineTree {
        method: t.method.clone(),
        children: t
            .children
            .iter()
            .filter(|(_, c)| pol.may_inline(&c.method))
            .map(|(s, c)| (*s, prune_tree(c, pol)))
            .collect(),
    }
}

/// Whether directive `d`, offered for `target`, respects `pol`.
pub fn is_compliant(d: &Directive, target: &str, pol: &Policy, p: &Program) -> bool {
    let Directive::Compile { method, tree, omega } = d else {
        return true;
    };
    if &**method != target || !pol.may_compile(target) || !tree_ok(tree, pol) {
        return false;
    }
    if omega.is_empty() {
        return true;
    }
    let ch = CodeHeap::new(p);
    let Some(base) = ch.base(target) else { return false };
    let Ok(tm) = inline_tree(base, tree, &ch) else { return false };
    omega.iter().all(|o| {
        let site = tm.site(o.point);
        o.point < tm.len() && !pol.protects_branch(&site.method, site.point)
    })
}

/// Closest compliant directive: protected branch entries are dropped, and a
/// tree that had to lose `prot1` nodes keeps no branch entries at all.
pub fn enforce(d: &Directive, target: &str, pol: &Policy, p: &Program) -> Directive {
    let Directive::Compile { method, tree, omega } = d else {
        return Directive::Empty;
    };
    if &**method != target || !pol.may_compile(target) {
        return Directive::Empty;
    }
    if !tree_ok(tree, pol) {
        return Directive::Compile {
            method: method.clone(),
            tree: prune_tree(tree, pol),
            omega: Vec::new(),
        };
    }
    let ch = CodeHeap::new(p);
    let tm = match ch.base(target).map(|b| inline_tree(b, tree, &ch)) {
        Some(Ok(tm)) => tm,
        _ => return Directive::Empty,
    };
    let omega = omega
        .iter()
        .filter(|o| {
            let site = tm.site(o.point);
            !pol.protects_branch(&site.method, site.point)
        })
        .copied()
        .collect();
    Directive::Compile {
        method: method.clone(),
        tree: tree.clone(),
        omega,
    }
}
