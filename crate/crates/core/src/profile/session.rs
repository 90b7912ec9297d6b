use super::pf::{pf_directive, PfConfig, Profile};
use super::policy::Policy;
use super::schedule::{Schedule, ScheduleEntry, ScheduleOrigin, Trigger};
use crate::bytecode::{Inputs, Program};
use crate::interp::{run_keep_heap, CostModel, DirectiveSource, InvokeSite, RunError, RunOptions, RunResult, TraceEvent};
use crate::jit::{apply_directive, CodeHeap, Directive};
use std::sync::Arc;

/// Directive source that asks the profiler at every invoke and folds every
/// executed event into the profile.
pub struct PfSource<'a> {
    pub profile: &'a mut Profile,
    pub cfg: &'a PfConfig,
    pub policy: Option<&'a Policy>,
}

impl DirectiveSource for PfSource<'_> {
    fn directive(&mut self, site: &InvokeSite, ch: &CodeHeap) -> Option<Directive> {
        let d = pf_directive(self.profile, ch, &site.callee, self.cfg, self.policy);
        (!d.is_empty()).then_some(d)
    }

    fn lenient(&self) -> bool {
        true
    }

    fn wants_events(&self) -> bool {
        true
    }

    fn observe(&mut self, ev: &TraceEvent) {
        self.profile.observe(ev);
    }
}

/// A long-lived virtual machine: code heap and profile persist across runs,
/// so earlier runs prime the compiler for later ones.
#[derive(Debug, Clone)]
pub struct Session {
    pub program: Arc<Program>,
    pub ch: CodeHeap,
    pub profile: Profile,
    pub policy: Option<Policy>,
    pub cfg: PfConfig,
    pub cm: CostModel,
    pub opts: RunOptions,
}

impl Session {
    pub fn new(p: Arc<Program>, cm: CostModel) -> Session {
        Session {
            ch: CodeHeap::new(&p),
            program: p,
            profile: Profile::default(),
            policy: None,
            cfg: PfConfig::default(),
            cm,
            opts: RunOptions::quiet(),
        }
    }

    pub fn with_policy(mut self, pol: Option<Policy>) -> Session {
        self.policy = pol;
        self
    }

    pub fn with_options(mut self, opts: RunOptions) -> Session {
        self.opts = opts;
        self
    }

    /// One execution of the entry method. The entry is offered to the
    /// profiler before it starts; that directive is recorded as `@start`.
    pub fn run(&mut self, inputs: &Inputs) -> Result<RunResult, RunError> {
        let p = self.program.clone();
        let pol = self.policy.as_ref();
        let mut entries = Vec::new();
        let d = pf_directive(&self.profile, &self.ch, &p.entry, &self.cfg, pol);
        if !d.is_empty() {
            if let Ok(ch) = apply_directive(&self.ch, &p.entry, &d, self.opts.v_max) {
                self.ch = ch;
                entries.push(ScheduleEntry {
                    at: Trigger::Start,
                    directive: d,
                });
            }
        }
        self.profile.record_entry(&p.entry);
        let mut src = PfSource {
            profile: &mut self.profile,
            cfg: &self.cfg,
            policy: pol,
        };
        let (mut r, ch) = run_keep_heap(&p, self.ch.clone(), inputs, &mut src, &self.cm, &self.opts)?;
        self.ch = ch;
        entries.append(&mut r.schedule_consumed.entries);
        r.schedule_consumed = Schedule {
            entries,
            origin: ScheduleOrigin::PfGenerated,
        };
        Ok(r)
    }

    /// Runs every input in order, discarding results.
    pub fn prime<'a>(&mut self, runs: impl IntoIterator<Item = &'a Inputs>) -> Result<(), RunError> {
        for inp in runs {
            self.run(inp)?;
        }
        Ok(())
    }
}
