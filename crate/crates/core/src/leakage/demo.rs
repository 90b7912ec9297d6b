use super::{histogram, histogram_csv, mutual_information, HistRow, LeakReport, Verdict, Witness, WitnessSource};
use crate::bytecode::{ident, parse_program, Inputs, Program};
use crate::infoflow::infer_policy;
use crate::interp::{CostModel, RunError};
use crate::profile::{Mode, Policy, Schedule, Session};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

pub const VERIFY_PIN: &str = include_str!("../../programs/verifyPin.jvm");
pub const PWD_EQ: &str = include_str!("../../programs/pwdEq.jvm");
pub const CHECK_SECRET: &str = include_str!("../../programs/checkSecret.jvm");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DemoName {
    #[serde(rename = "pwdEq")]
    PwdEq,
    #[serde(rename = "verifyPin")]
    VerifyPin,
    #[serde(rename = "checkSecret")]
    CheckSecret,
}

impl DemoName {
    pub const ALL: [DemoName; 3] = [DemoName::PwdEq, DemoName::VerifyPin, DemoName::CheckSecret];

    pub fn source(self) -> &'static str {
        match self {
            DemoName::PwdEq => PWD_EQ,
            DemoName::VerifyPin => VERIFY_PIN,
            DemoName::CheckSecret => CHECK_SECRET,
        }
    }

    pub fn program(self) -> Program {
        parse_program(self.source()).expect("bundled program parses")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DemoName::PwdEq => "pwdEq",
            DemoName::VerifyPin => "verifyPin",
            DemoName::CheckSecret => "checkSecret",
        }
    }
}

impl FromStr for DemoName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DemoName::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown demo `{s}` (expected pwdEq, verifyPin or checkSecret)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protect {
    None,
    Full,
    Light,
}

impl FromStr for Protect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Protect::None),
            "full" => Ok(Protect::Full),
            "light" => Ok(Protect::Light),
            _ => Err(format!("unknown protection `{s}` (expected none, full or light)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub probes_per_class: usize,
    /// Standard deviation of Gaussian noise added to plotted times; 0 is off.
    pub jitter: f64,
    pub seed: u64,
    pub n_bins: usize,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            probes_per_class: 8,
            jitter: 0.0,
            seed: 0,
            n_bins: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub demo: DemoName,
    pub protect: Protect,
    pub policy: Option<Policy>,
    /// Directives the profiler issued while priming.
    pub priming_schedule: Schedule,
    /// Directives the first probe picked up on top of the primed state.
    pub probe_schedule: Schedule,
    /// `(class, cost, time)` per probe; time is the cost plus jitter.
    pub samples: Vec<(usize, u64, f64)>,
    pub classes: Vec<String>,
    pub deopts_per_class: Vec<usize>,
    pub report: LeakReport,
    #[serde(skip)]
    pub csv: String,
}

impl DemoReport {
    pub fn mi(&self) -> f64 {
        self.report.mutual_information_bits.unwrap_or(0.0)
    }

    /// Smallest and largest cost seen in `class`.
    pub fn class_range(&self, class: usize) -> Option<(u64, u64)> {
        let cs: Vec<u64> = self.samples.iter().filter(|s| s.0 == class).map(|s| s.1).collect();
        Some((*cs.iter().min()?, *cs.iter().max()?))
    }
}

/// Eight characters packed little-endian, first character in the low byte.
pub fn pack(s: &str) -> i64 {
    s.bytes().take(8).enumerate().fold(0i64, |acc, (i, b)| acc | ((b as i64) << (8 * i)))
}

fn inputs(pairs: &[(&str, i64)]) -> Inputs {
    pairs.iter().map(|(k, v)| (ident(k), *v)).collect()
}

struct Recipe {
    priming: Vec<Inputs>,
    classes: [&'static str; 2],
    probes: Vec<(usize, Inputs)>,
}

fn recipe(name: DemoName, per: usize) -> Recipe {
    match name {
        // One run in eight matches, then the pin varies under a fixed guess.
        DemoName::VerifyPin => Recipe {
            priming: (1..=10)
                .map(|r| inputs(&[("x0", if r % 8 == 0 { 5 } else { 100 + r })]))
                .collect(),
            classes: ["pin matches", "pin differs"],
            probes: (0..per)
                .map(|_| (0, inputs(&[("x0", 5), ("pin", 5)])))
                .chain((0..per).map(|k| (1, inputs(&[("x0", 5), ("pin", 6 + k as i64)]))))
                .collect(),
        },
        // Every character mismatches while priming, so the match arm looks dead.
        DemoName::PwdEq => {
            let tails = ["assword", "bcdefgh", "xxxxxxx", "qwertyu", "1234567", "letmein", "zzzzzzz", "abcdefg"];
            let heads = b"qrstuvwxyzabcdef";
            Recipe {
                priming: (0..10).map(|_| inputs(&[("x", pack("PASSWORD"))])).collect(),
                classes: ["first character matches", "first character differs"],
                probes: (0..per)
                    .map(|k| {
                        let pwd = format!("p{}", tails[k % tails.len()]);
                        (0, inputs(&[("x", pack("pASSWORD")), ("pwd", pack(&pwd))]))
                    })
                    .chain((0..per).map(|k| {
                        let pwd = format!("{}{}", heads[k % heads.len()] as char, tails[k % tails.len()]);
                        (1, inputs(&[("x", pack("pASSWORD")), ("pwd", pack(&pwd))]))
                    }))
                    .collect(),
            }
        }
        // A guess below the secret runs the consume1 arm often enough to compile it.
        DemoName::CheckSecret => Recipe {
            priming: vec![inputs(&[("guess", 3), ("n", 4)])],
            classes: ["guess <= secret", "guess > secret"],
            probes: (0..per)
                .map(|k| (0, inputs(&[("guess", 8), ("n", 4), ("secret", 8 + k as i64)])))
                .chain((0..per).map(|k| (1, inputs(&[("guess", 8), ("n", 4), ("secret", (k % 8) as i64)]))))
                .collect(),
        },
    }
}

/// Primes a session per the demo's attack recipe, probes both secret classes
/// from that primed state, and measures the leakage.
pub fn run_demo(name: DemoName, protect: Protect, cm: &CostModel, opts: &DemoOptions) -> Result<DemoReport, RunError> {
    let p = Arc::new(name.program());
    let policy = match protect {
        Protect::None => None,
        Protect::Full | Protect::Light => {
            let inf = infer_policy(&p).expect("bundled programs type");
            let mode = if protect == Protect::Full { Mode::Full } else { Mode::Light };
            Some(inf.policy.with_mode(mode))
        }
    };
    let rc = recipe(name, opts.probes_per_class);
    let mut sess = Session::new(p.clone(), cm.clone()).with_policy(policy.clone());
    let mut priming_schedule = Schedule::empty();
    for inp in &rc.priming {
        let r = sess.run(inp)?;
        priming_schedule.entries.extend(r.schedule_consumed.entries);
    }
    priming_schedule.origin = crate::profile::ScheduleOrigin::PfGenerated;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.jitter.max(0.0)).expect("finite jitter");
    let mut samples = Vec::new();
    let mut deopts = vec![0usize; 2];
    let mut runs = Vec::new();
    for (class, inp) in &rc.probes {
        let mut probe = sess.clone();
        probe.opts.record_trace = true;
        let r = probe.run(inp)?;
        deopts[*class] += r.trace.iter().filter(|e| e.deopt_fired).count();
        let t = if opts.jitter > 0.0 {
            r.total_cost as f64 + noise.sample(&mut rng)
        } else {
            r.total_cost as f64
        };
        samples.push((*class, r.total_cost, t));
        runs.push((inp.clone(), r.total_cost, r.schedule_consumed));
    }

    let mut report = LeakReport::new();
    report.schedules_checked = 1;
    let lo = runs.iter().min_by_key(|r| r.1).cloned();
    let hi = runs.iter().max_by_key(|r| r.1).cloned();
    report.runs = runs.len();
    if let (Some(lo), Some(hi)) = (lo, hi) {
        report.max_delta = hi.1 - lo.1;
        if hi.1 != lo.1 {
            report.verdict = Verdict::Leaky;
            report.witness = Some(Witness {
                source: WitnessSource::Pf {
                    priming: rc.priming.clone(),
                },
                inputs_a: lo.0,
                inputs_b: hi.0,
                cost_a: lo.1,
                cost_b: hi.1,
                delta: hi.1 - lo.1,
                consumed_a: lo.2,
                consumed_b: hi.2,
            });
        }
    }
    let timed: Vec<(usize, f64)> = samples.iter().map(|s| (s.0, s.2)).collect();
    report.mutual_information_bits = mutual_information(&timed, opts.n_bins).ok();
    let rows: Vec<HistRow> = histogram(&timed, opts.n_bins).unwrap_or_default();
    let csv = histogram_csv(&rows);
    report.histogram = rows;
    Ok(DemoReport {
        demo: name,
        protect,
        policy,
        priming_schedule,
        probe_schedule: runs.first().map(|r| r.2.clone()).unwrap_or_else(Schedule::empty),
        samples,
        classes: rc.classes.iter().map(|s| s.to_string()).collect(),
        deopts_per_class: deopts,
        report,
        csv,
    })
}
