use crate::bytecode::{Ident, Instr, Site};
use crate::jit::Directive;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub method: Ident,
    pub version: u32,
    pub pc: usize,
    pub instr: Instr,
    pub cost: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directive_applied: Option<Directive>,
    pub deopt_fired: bool,
    /// Bytecode point this slot was compiled from.
    pub site: Site,
    /// For conditionals: whether the jump was taken in the executing code.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jumped: Option<bool>,
}

impl TraceEvent {
    /// Whether a conditional went to its jump target in bytecode terms.
    pub fn bytecode_taken(&self) -> Option<bool> {
        self.jumped.map(|j| j != self.site.flipped)
    }
}

/// `(pc, version)` of every event executed by any version of `m`.
pub fn project_trace(tr: &[TraceEvent], m: &str) -> Vec<(usize, u32)> {
    tr.iter()
        .filter(|e| &*e.method == m)
        .map(|e| (e.pc, e.version))
        .collect()
}

pub fn trace_csv(tr: &[TraceEvent]) -> String {
    let mut s = String::from("event_idx,method,version,pc,opcode,cost,deopt\n");
    for (i, e) in tr.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{}",
            e.method,
            e.version,
            e.pc,
            e.instr.opcode().name(),
            e.cost,
            e.deopt_fired as u8
        );
    }
    s
}
