//! Constant-time and JIT-constant-time checks, witnesses, mutual
//! information, and the three bundled attack demos.

mod demo;
mod mi;

pub use demo::{pack, run_demo, DemoName, DemoOptions, DemoReport, Protect, CHECK_SECRET, PWD_EQ, VERIFY_PIN};
pub use mi::{
    histogram, histogram_csv, joint_counts, mi_from_counts, mutual_information, Binning, HistRow, MiError,
};

use crate::bytecode::{Ident, Inputs, Program};
use crate::interp::{run_with, CostModel, RunError, RunOptions};
use crate::profile::{enumerate_schedules, Policy, Schedule, Session};
use serde::Serialize;
use std::sync::Arc;

/// One secret assignment and the class it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecretCase {
    pub class: usize,
    pub inputs: Inputs,
}

/// A public assignment shared by every run, and the secret assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IoSpec {
    pub public: Inputs,
    pub secrets: Vec<SecretCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LeakError {
    #[error("secret case {case} assigns public input `{var}`")]
    PublicInSecret { case: usize, var: Ident },
    #[error("no secret assignments")]
    NoSecrets,
    #[error(transparent)]
    Run(#[from] RunError),
}

impl IoSpec {
    /// One class per secret assignment.
    pub fn new(public: Inputs, secrets: Vec<Inputs>) -> IoSpec {
        IoSpec {
            public,
            secrets: secrets
                .into_iter()
                .enumerate()
                .map(|(class, inputs)| SecretCase { class, inputs })
                .collect(),
        }
    }

    /// Every combination of `domain` values over the secret inputs of `p`.
    pub fn exhaustive(p: &Program, public: Inputs, domain: &[i64]) -> IoSpec {
        let vars = p.secret_inputs();
        let mut all: Vec<Inputs> = vec![Inputs::new()];
        for x in &vars {
            all = all
                .into_iter()
                .flat_map(|a| {
                    domain.iter().map(move |v| {
                        let mut b = a.clone();
                        b.insert(x.clone(), *v);
                        b
                    })
                })
                .collect();
        }
        IoSpec::new(public, all)
    }

    /// Full input map of case `k`.
    pub fn inputs(&self, k: usize) -> Inputs {
        let mut m = self.public.clone();
        for (x, v) in &self.secrets[k].inputs {
            m.insert(x.clone(), *v);
        }
        m
    }

    pub fn check(&self, p: &Program) -> Result<(), LeakError> {
        if self.secrets.is_empty() {
            return Err(LeakError::NoSecrets);
        }
        for (case, s) in self.secrets.iter().enumerate() {
            if let Some(var) = s.inputs.keys().find(|x| p.is_public(x)) {
                return Err(LeakError::PublicInSecret {
                    case,
                    var: var.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "verdict", content = "depth")]
pub enum Verdict {
    Secure,
    Leaky,
    Inconclusive(usize),
}

/// How the witness schedules come about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WitnessSource {
    /// The same explicit schedule for both runs.
    Explicit { schedule: Schedule },
    /// Profile-driven compilation after running `priming` on one session;
    /// both runs start from that session's state.
    Pf { priming: Vec<Inputs> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub source: WitnessSource,
    pub inputs_a: Inputs,
    pub inputs_b: Inputs,
    pub cost_a: u64,
    pub cost_b: u64,
    pub delta: u64,
    /// Directives consumed by each run.
    pub consumed_a: Schedule,
    pub consumed_b: Schedule,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeakReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Largest cost gap seen over all compared pairs.
    pub max_delta: u64,
    pub schedules_checked: usize,
    pub runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutual_information_bits: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub histogram: Vec<HistRow>,
}

impl LeakReport {
    fn new() -> LeakReport {
        LeakReport {
            verdict: Verdict::Secure,
            witness: None,
            max_delta: 0,
            schedules_checked: 0,
            runs: 0,
            mutual_information_bits: None,
            histogram: Vec::new(),
        }
    }

    pub fn is_secure(&self) -> bool {
        self.verdict == Verdict::Secure
    }

    /// Records one group of runs that must all cost the same.
    fn group(&mut self, source: WitnessSource, runs: Vec<(Inputs, u64, Schedule)>) {
        self.runs += runs.len();
        let (Some(lo), Some(hi)) = (
            runs.iter().min_by_key(|r| r.1),
            runs.iter().max_by_key(|r| r.1),
        ) else {
            return;
        };
        let delta = hi.1 - lo.1;
        self.max_delta = self.max_delta.max(delta);
        if delta > 0 && self.witness.is_none() {
            self.verdict = Verdict::Leaky;
            self.witness = Some(Witness {
                source,
                inputs_a: lo.0.clone(),
                inputs_b: hi.0.clone(),
                cost_a: lo.1,
                cost_b: hi.1,
                delta,
                consumed_a: lo.2.clone(),
                consumed_b: hi.2.clone(),
            });
        }
    }
}

fn samples_of(io: &IoSpec, costs: &[u64]) -> Vec<(usize, f64)> {
    io.secrets
        .iter()
        .zip(costs)
        .map(|(s, c)| (s.class, *c as f64))
        .collect()
}

/// JIT-free runs on every secret assignment; secure iff all costs agree.
pub fn check_constant_time(p: &Program, io: &IoSpec, cm: &CostModel) -> Result<LeakReport, LeakError> {
    io.check(p)?;
    let mut rep = LeakReport::new();
    let opts = RunOptions::quiet();
    let mut runs = Vec::new();
    for k in 0..io.secrets.len() {
        let inp = io.inputs(k);
        let r = run_with(p, &inp, &Schedule::empty(), cm, &opts)?;
        runs.push((inp, r.total_cost, r.schedule_consumed));
    }
    let costs: Vec<u64> = runs.iter().map(|r| r.1).collect();
    rep.schedules_checked = 1;
    rep.group(
        WitnessSource::Explicit {
            schedule: Schedule::empty(),
        },
        runs,
    );
    let samples = samples_of(io, &costs);
    rep.mutual_information_bits = mutual_information(&samples, 20).ok();
    rep.histogram = histogram(&samples, 20).unwrap_or_default();
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct JitCheckOptions {
    /// Bound on enumerated schedules before giving up as inconclusive.
    pub schedule_limit: usize,
    /// Also probe profile-driven compilation from primed sessions.
    pub pf_probes: bool,
    /// Worker threads; the report does not depend on it.
    pub jobs: usize,
}

impl Default for JitCheckOptions {
    fn default() -> Self {
        JitCheckOptions {
            schedule_limit: 200_000,
            pf_probes: true,
            jobs: 1,
        }
    }
}

/// Every enumerated schedule with at most `depth` directives (compliant with
/// `pol` when given) is run on every secret assignment; then, for every
/// assignment and `k` in `0..=depth`, a session primed with `k` times the
/// compile threshold runs of that assignment is probed with all of them.
pub fn check_jit_constant_time(
    p: &Program,
    io: &IoSpec,
    pol: Option<&Policy>,
    depth: usize,
    cm: &CostModel,
    opts: &JitCheckOptions,
) -> Result<LeakReport, LeakError> {
    io.check(p)?;
    let mut rep = LeakReport::new();
    let scheds = match enumerate_schedules(p, depth, pol, opts.schedule_limit) {
        Ok(s) => s,
        Err(_) => {
            rep.verdict = Verdict::Inconclusive(depth);
            return Ok(rep);
        }
    };
    let ropts = RunOptions::quiet();
    let inputs: Vec<Inputs> = (0..io.secrets.len()).map(|k| io.inputs(k)).collect();
    let explicit = par_map(&scheds, opts.jobs, |s| {
        inputs
            .iter()
            .map(|inp| {
                let r = run_with(p, inp, s, cm, &ropts)?;
                Ok((inp.clone(), r.total_cost, r.schedule_consumed))
            })
            .collect::<Result<Vec<_>, RunError>>()
    });
    for (s, runs) in scheds.iter().zip(explicit) {
        rep.schedules_checked += 1;
        rep.group(WitnessSource::Explicit { schedule: s.clone() }, runs?);
    }
    if opts.pf_probes {
        let prog = Arc::new(p.clone());
        let primed = par_map(&inputs, opts.jobs, |prime| {
            let mut sess = Session::new(prog.clone(), cm.clone()).with_policy(pol.cloned());
            let per = sess.cfg.compile_threshold as usize;
            let mut priming = Vec::new();
            let mut groups = Vec::new();
            for k in 0..=depth {
                if k > 0 {
                    for _ in 0..per {
                        sess.run(prime)?;
                        priming.push(prime.clone());
                    }
                }
                let mut runs = Vec::with_capacity(inputs.len());
                for inp in &inputs {
                    let mut probe = sess.clone();
                    let r = probe.run(inp)?;
                    runs.push((inp.clone(), r.total_cost, r.schedule_consumed));
                }
                groups.push((priming.clone(), runs));
            }
            Ok::<_, RunError>(groups)
        });
        for groups in primed {
            for (priming, runs) in groups? {
                rep.schedules_checked += 1;
                rep.group(WitnessSource::Pf { priming }, runs);
            }
        }
    }
    Ok(rep)
}

/// Maps `f` over `xs` on up to `jobs` threads, keeping the order of `xs`.
fn par_map<T: Sync, R: Send>(xs: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, xs.len().max(1));
    if jobs == 1 {
        return xs.iter().map(f).collect();
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = xs
            .chunks(xs.len().div_ceil(jobs))
            .map(|chunk| s.spawn(move || chunk.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Re-executes a witness and returns the cost gap it produces.
pub fn replay_witness(p: &Program, w: &Witness, pol: Option<&Policy>, cm: &CostModel) -> Result<u64, RunError> {
    let (a, b) = match &w.source {
        WitnessSource::Explicit { schedule } => {
            let opts = RunOptions::quiet();
            (
                run_with(p, &w.inputs_a, schedule, cm, &opts)?.total_cost,
                run_with(p, &w.inputs_b, schedule, cm, &opts)?.total_cost,
            )
        }
        WitnessSource::Pf { priming } => {
            let mut sess = Session::new(Arc::new(p.clone()), cm.clone()).with_policy(pol.cloned());
            sess.prime(priming)?;
            let mut sb = sess.clone();
            (sess.run(&w.inputs_a)?.total_cost, sb.run(&w.inputs_b)?.total_cost)
        }
    };
    Ok(a.abs_diff(b))
}
