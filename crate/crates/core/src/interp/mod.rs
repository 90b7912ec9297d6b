//! Small-step machine over configurations with cost accounting.

mod cost;
mod trace;

pub use cost::{CostError, CostModel};
pub use trace::{project_trace, trace_csv, TraceEvent};

use crate::bytecode::{CodeOrigin, DeoptMeta, Ident, Inputs, Instr, Method, Program};
use crate::jit::{apply_directive, CodeHeap, Directive, JitError};
use crate::profile::{Schedule, ScheduleEntry, Trigger};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

pub type Heap = IndexMap<Ident, i64>;

/// Locals as a short association list; methods have few of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locals(Vec<(Ident, i64)>);

impl Locals {
    #[inline]
    pub fn get(&self, x: &Ident) -> Option<i64> {
        self.0
            .iter()
            .find(|(k, _)| Arc::ptr_eq(k, x) || k == x)
            .map(|(_, v)| *v)
    }

    #[inline]
    pub fn set(&mut self, x: &Ident, v: i64) {
        match self.0.iter_mut().find(|(k, _)| Arc::ptr_eq(k, x) || k == x) {
            Some(slot) => slot.1 = v,
            None => self.0.push((x.clone(), v)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, i64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }
}

/// One activation: program point, executing method version, locals, operand stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub pc: usize,
    pub method: Arc<Method>,
    pub locals: Locals,
    /// Operand stack, top at the end.
    pub os: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Final(i64),
}

#[derive(Debug, Clone)]
pub struct Configuration {
    pub ch: CodeHeap,
    pub h: Heap,
    pub s: State,
    pub cs: Vec<State>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum StuckReason {
    #[error("operand stack underflow")]
    StackUnderflow,
    #[error("unbound local `{0}`")]
    UnboundLocal(Ident),
    #[error("unbound global `{0}`")]
    UnboundGlobal(Ident),
    #[error("division by zero")]
    DivByZero,
    #[error("unknown method `{0}`")]
    UnknownMethod(Ident),
    #[error("invalid directive: {0}")]
    InvalidDirective(String),
    #[error("deopt in a bytecode method")]
    DeoptInBytecode,
    #[error("deoptimization oracle: {0}")]
    Oracle(String),
    #[error("program point out of range")]
    PcOutOfRange,
    #[error("configuration is already final")]
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("stuck at {method}@{pc}: {reason}")]
pub struct Stuck {
    pub method: Ident,
    pub pc: usize,
    pub reason: StuckReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Stuck(#[from] Stuck),
    #[error("step budget of {0} exceeded")]
    NonTermination(u64),
    #[error("missing binding for entry argument `{0}`")]
    MissingInput(Ident),
    #[error("unknown input variable `{0}`")]
    UnknownInput(Ident),
    #[error("initial directive for `{method}` rejected: {reason}")]
    InitialDirective { method: Ident, reason: String },
}

/// Identifies one `invoke` transition for a directive source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvokeSite {
    pub caller: Ident,
    pub pc: usize,
    pub callee: Ident,
    pub callee_version: u32,
    /// 1-based index of this invoke transition in the run.
    pub ordinal: u64,
    /// 1-based index of this invocation among calls to `callee` in the run.
    pub call_index: u64,
}

/// Supplies compilation directives at invoke transitions.
pub trait DirectiveSource {
    /// `None` stands for the empty directive.
    fn directive(&mut self, site: &InvokeSite, ch: &CodeHeap) -> Option<Directive>;

    /// Invalid directives degrade to the empty directive instead of getting stuck.
    fn lenient(&self) -> bool {
        false
    }

    /// Whether `observe` needs to be called.
    fn wants_events(&self) -> bool {
        false
    }

    fn observe(&mut self, _ev: &TraceEvent) {}
}

/// The empty schedule.
pub struct NoJit;

impl DirectiveSource for NoJit {
    fn directive(&mut self, _: &InvokeSite, _: &CodeHeap) -> Option<Directive> {
        None
    }
}

/// Replays an explicit schedule.
pub struct ScheduleSource<'a> {
    by_ordinal: HashMap<u64, &'a Directive>,
    by_call: HashMap<(Ident, u64), &'a Directive>,
    lenient: bool,
}

impl<'a> ScheduleSource<'a> {
    pub fn new(s: &'a Schedule) -> Self {
        let mut by_ordinal = HashMap::new();
        let mut by_call = HashMap::new();
        for e in &s.entries {
            match &e.at {
                Trigger::Start => {}
                Trigger::Invoke(n) => {
                    by_ordinal.insert(*n, &e.directive);
                }
                Trigger::Call(m, k) => {
                    by_call.insert((m.clone(), *k), &e.directive);
                }
            }
        }
        ScheduleSource {
            by_ordinal,
            by_call,
            lenient: false,
        }
    }

    pub fn lenient(mut self, on: bool) -> Self {
        self.lenient = on;
        self
    }
}

impl DirectiveSource for ScheduleSource<'_> {
    fn directive(&mut self, site: &InvokeSite, _: &CodeHeap) -> Option<Directive> {
        if self.by_ordinal.is_empty() && self.by_call.is_empty() {
            return None;
        }
        self.by_ordinal
            .get(&site.ordinal)
            .or_else(|| self.by_call.get(&(site.callee.clone(), site.call_index)))
            .map(|d| (*d).clone())
    }

    fn lenient(&self) -> bool {
        self.lenient
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub step_budget: u64,
    pub v_max: u32,
    pub record_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            step_budget: 1_000_000,
            v_max: 3,
            record_trace: true,
        }
    }
}

impl RunOptions {
    pub fn quiet() -> Self {
        RunOptions {
            record_trace: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub final_heap: Heap,
    pub return_value: i64,
    pub total_cost: u64,
    pub steps: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
    pub schedule_consumed: Schedule,
}

/// Bookkeeping that is not part of the machine state proper.
#[derive(Debug, Clone, Default)]
pub struct Control {
    pub invokes: u64,
    pub calls: HashMap<Ident, u64>,
    pub applied: Vec<ScheduleEntry>,
    pub v_max: u32,
}

impl Control {
    pub fn new(v_max: u32) -> Self {
        Control {
            v_max,
            ..Default::default()
        }
    }
}

impl Configuration {
    /// Initial configuration: entry at point 0 with empty stacks.
    pub fn initial(p: &Program, ch: CodeHeap, inputs: &Inputs) -> Result<Configuration, RunError> {
        let entry = ch.current(&p.entry).cloned().ok_or_else(|| RunError::MissingInput(p.entry.clone()))?;
        for k in inputs.keys() {
            if !entry.argv.contains(k) && !p.globals.contains_key(k) {
                return Err(RunError::UnknownInput(k.clone()));
            }
        }
        let mut locals = Locals::default();
        for x in &entry.argv {
            match inputs.get(x) {
                Some(v) => locals.set(x, *v),
                None => return Err(RunError::MissingInput(x.clone())),
            }
        }
        let mut h = p.globals.clone();
        for (k, v) in inputs {
            if let Some(slot) = h.get_mut(k) {
                *slot = *v;
            }
        }
        Ok(Configuration {
            ch,
            h,
            s: State {
                pc: 0,
                method: entry,
                locals,
                os: Vec::new(),
            },
            cs: Vec::new(),
            status: Status::Running,
        })
    }

    /// Pure single step: returns the successor configuration and its event.
    pub fn step<S: DirectiveSource + ?Sized>(
        &self,
        cm: &CostModel,
        src: &mut S,
        ctl: &mut Control,
    ) -> Result<(Configuration, TraceEvent), Stuck> {
        let mut next = self.clone();
        let (_, ev) = next.step_mut(cm, src, ctl, true)?;
        Ok((next, ev.expect("event requested")))
    }

    fn stuck(&self, reason: StuckReason) -> Stuck {
        Stuck {
            method: self.s.method.name.clone(),
            pc: self.s.pc,
            reason,
        }
    }

    #[inline]
    fn pop(&mut self) -> Result<i64, Stuck> {
        match self.s.os.pop() {
            Some(v) => Ok(v),
            None => Err(self.stuck(StuckReason::StackUnderflow)),
        }
    }

    /// In-place step returning the charged cost; builds the event only when
    /// `want_event` or the source asks.
    pub fn step_mut<S: DirectiveSource + ?Sized>(
        &mut self,
        cm: &CostModel,
        src: &mut S,
        ctl: &mut Control,
        want_event: bool,
    ) -> Result<(u64, Option<TraceEvent>), Stuck> {
        if self.status != Status::Running {
            return Err(self.stuck(StuckReason::Final));
        }
        let method = self.s.method.clone();
        let pc = self.s.pc;
        let Some(ins) = method.instrs.get(pc) else {
            return Err(self.stuck(StuckReason::PcOutOfRange));
        };
        let mut cost = cm.cost(method.origin, ins.opcode());
        let mut deopt_fired = false;
        let mut jumped = None;
        let mut applied = None;
        match ins {
            Instr::Binop(op) => {
                let v1 = self.pop()?;
                let v2 = self.pop()?;
                match op.apply(v1, v2) {
                    Some(v) => self.s.os.push(v),
                    None => return Err(self.stuck(StuckReason::DivByZero)),
                }
                self.s.pc += 1;
            }
            Instr::Push(v) => {
                self.s.os.push(*v);
                self.s.pc += 1;
            }
            Instr::Pop => {
                self.pop()?;
                self.s.pc += 1;
            }
            Instr::Swap => {
                let v1 = self.pop()?;
                let v2 = self.pop()?;
                self.s.os.push(v1);
                self.s.os.push(v2);
                self.s.pc += 1;
            }
            Instr::Load(x) => match self.s.locals.get(x) {
                Some(v) => {
                    self.s.os.push(v);
                    self.s.pc += 1;
                }
                None => return Err(self.stuck(StuckReason::UnboundLocal(x.clone()))),
            },
            Instr::Store(x) => {
                let v = self.pop()?;
                self.s.locals.set(x, v);
                self.s.pc += 1;
            }
            Instr::Get(y) => match self.h.get(y) {
                Some(v) => {
                    self.s.os.push(*v);
                    self.s.pc += 1;
                }
                None => return Err(self.stuck(StuckReason::UnboundGlobal(y.clone()))),
            },
            Instr::Put(y) => {
                let v = self.pop()?;
                match self.h.get_mut(y) {
                    Some(slot) => *slot = v,
                    None => return Err(self.stuck(StuckReason::UnboundGlobal(y.clone()))),
                }
                self.s.pc += 1;
            }
            Instr::Ifeq(j) | Instr::Ifneq(j) => {
                let v = self.pop()?;
                let jump = (v == 0) == matches!(ins, Instr::Ifeq(_));
                self.s.pc = if jump { *j } else { pc + 1 };
                jumped = Some(jump);
            }
            Instr::Goto(j) => self.s.pc = *j,
            Instr::Invoke(callee) => {
                ctl.invokes += 1;
                let k = ctl.calls.entry(callee.clone()).or_insert(0);
                *k += 1;
                let call_index = *k;
                let Some(cur) = self.ch.current(callee).cloned() else {
                    return Err(self.stuck(StuckReason::UnknownMethod(callee.clone())));
                };
                let site = InvokeSite {
                    caller: method.name.clone(),
                    pc,
                    callee: callee.clone(),
                    callee_version: cur.version,
                    ordinal: ctl.invokes,
                    call_index,
                };
                if let Some(d) = src.directive(&site, &self.ch) {
                    match self.apply(callee, &d, ctl.v_max) {
                        Ok(()) => {
                            ctl.applied.push(ScheduleEntry {
                                at: Trigger::Invoke(ctl.invokes),
                                directive: d.clone(),
                            });
                            applied = Some(d);
                        }
                        Err(e) if !src.lenient() => {
                            return Err(self.stuck(StuckReason::InvalidDirective(e.to_string())))
                        }
                        Err(_) => {}
                    }
                }
                let target = self.ch.current(callee).cloned().expect("callee present");
                let k = target.argv.len();
                if self.s.os.len() < k {
                    return Err(self.stuck(StuckReason::StackUnderflow));
                }
                let args = self.s.os.split_off(self.s.os.len() - k);
                let mut locals = Locals::default();
                for (x, v) in target.argv.iter().zip(args) {
                    locals.set(x, v);
                }
                let callee_state = State {
                    pc: 0,
                    method: target,
                    locals,
                    os: Vec::new(),
                };
                let mut caller = std::mem::replace(&mut self.s, callee_state);
                caller.pc = pc + 1;
                self.cs.push(caller);
            }
            Instr::Return => {
                let v = self.pop()?;
                match self.cs.pop() {
                    None => self.status = Status::Final(v),
                    Some(mut caller) => {
                        caller.os.push(v);
                        self.s = caller;
                    }
                }
            }
            Instr::Deopt(md) => {
                deopt_fired = true;
                cost += cm.deopt_penalty;
                self.deopt_oracle(md)?;
            }
        }
        if want_event || src.wants_events() {
            let ev = TraceEvent {
                method: method.name.clone(),
                version: method.version,
                pc,
                instr: ins.clone(),
                cost,
                directive_applied: applied,
                deopt_fired,
                site: method.site(pc),
                jumped,
            };
            src.observe(&ev);
            Ok((cost, Some(ev)))
        } else {
            Ok((cost, None))
        }
    }

    fn apply(&mut self, callee: &Ident, d: &Directive, v_max: u32) -> Result<(), JitError> {
        if let Directive::Compile { method, .. } = d {
            if method != callee {
                return Err(JitError::InvalidDirective(format!(
                    "directive for `{method}` offered at a call to `{callee}`"
                )));
            }
        }
        self.ch = apply_directive(&self.ch, callee, d, v_max)?;
        Ok(())
    }

    /// Resumes the base version at the trap's bytecode point, same locals,
    /// operand stack and heap, and rolls the code heap back for this method.
    pub fn deopt_oracle(&mut self, md: &DeoptMeta) -> Result<(), Stuck> {
        let m = self.s.method.clone();
        if m.version == 0 || m.origin == CodeOrigin::Bytecode {
            return Err(self.stuck(StuckReason::DeoptInBytecode));
        }
        let Some(base) = self.ch.base(&md.source_method).cloned() else {
            return Err(self.stuck(StuckReason::Oracle(format!("no base version of `{}`", md.source_method))));
        };
        if md.resume_pc >= base.instrs.len() {
            return Err(self.stuck(StuckReason::Oracle(format!("resume point {} out of range", md.resume_pc))));
        }
        if md.source_method != m.name {
            return Err(self.stuck(StuckReason::Oracle(format!(
                "trap in `{}` resumes foreign method `{}`",
                m.name, md.source_method
            ))));
        }
        self.ch.reset_to_base(&m.name);
        self.s.method = base;
        self.s.pc = md.resume_pc;
        Ok(())
    }
}

/// Runs to completion from an explicit starting code heap.
pub fn run_from<S: DirectiveSource + ?Sized>(
    p: &Program,
    ch: CodeHeap,
    inputs: &Inputs,
    src: &mut S,
    cm: &CostModel,
    opts: &RunOptions,
) -> Result<RunResult, RunError> {
    run_keep_heap(p, ch, inputs, src, cm, opts).map(|(r, _)| r)
}

/// As `run_from`, also returning the code heap of the final configuration.
pub fn run_keep_heap<S: DirectiveSource + ?Sized>(
    p: &Program,
    ch: CodeHeap,
    inputs: &Inputs,
    src: &mut S,
    cm: &CostModel,
    opts: &RunOptions,
) -> Result<(RunResult, CodeHeap), RunError> {
    let mut c = Configuration::initial(p, ch, inputs)?;
    let mut ctl = Control::new(opts.v_max);
    let mut trace = Vec::new();
    let mut total = 0u64;
    let mut steps = 0u64;
    while c.status == Status::Running {
        if steps >= opts.step_budget {
            return Err(RunError::NonTermination(opts.step_budget));
        }
        let (cost, ev) = c.step_mut(cm, src, &mut ctl, opts.record_trace)?;
        total += cost;
        steps += 1;
        if let Some(ev) = ev {
            if opts.record_trace {
                trace.push(ev);
            }
        }
    }
    let Status::Final(v) = c.status else { unreachable!() };
    Ok((
        RunResult {
            final_heap: c.h,
            return_value: v,
            total_cost: total,
            steps,
            trace,
            schedule_consumed: Schedule::explicit(ctl.applied),
        },
        c.ch,
    ))
}

/// Applies the schedule's start entries to a code heap.
pub fn prime_heap(mut ch: CodeHeap, sched: &Schedule, v_max: u32) -> Result<CodeHeap, RunError> {
    for e in &sched.entries {
        if e.at == Trigger::Start {
            let Directive::Compile { method, .. } = &e.directive else { continue };
            ch = apply_directive(&ch, method, &e.directive, v_max).map_err(|err| RunError::InitialDirective {
                method: method.clone(),
                reason: err.to_string(),
            })?;
        }
    }
    Ok(ch)
}

/// JIT-execution of `p` under an explicit schedule.
pub fn run(p: &Program, inputs: &Inputs, sched: &Schedule, cm: &CostModel) -> Result<RunResult, RunError> {
    run_with(p, inputs, sched, cm, &RunOptions::default())
}

pub fn run_with(
    p: &Program,
    inputs: &Inputs,
    sched: &Schedule,
    cm: &CostModel,
    opts: &RunOptions,
) -> Result<RunResult, RunError> {
    let ch = prime_heap(CodeHeap::new(p), sched, opts.v_max)?;
    let mut src = ScheduleSource::new(sched);
    let mut r = run_from(p, ch, inputs, &mut src, cm, opts)?;
    let mut consumed: Vec<ScheduleEntry> =
        sched.entries.iter().filter(|e| e.at == Trigger::Start).cloned().collect();
    consumed.append(&mut r.schedule_consumed.entries);
    r.schedule_consumed = Schedule::explicit(consumed);
    Ok(r)
}
