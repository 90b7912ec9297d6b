use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use jitct::bytecode::{ident, parse_program, serialize_method, validate, Inputs, Program};
use jitct::infoflow::{check_program, infer_policy, report};
use jitct::interp::{run_with, trace_csv, CostModel, RunError, RunOptions, StuckReason};
use jitct::jit::{apply_directive, parse_directive, CodeHeap};
use jitct::leakage::{
    check_constant_time, check_jit_constant_time, run_demo, DemoName, DemoOptions, DemoReport, IoSpec,
    JitCheckOptions, LeakReport, Protect,
};
use jitct::profile::{adversarial_search, Mode, Policy, Schedule};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "jitct", version, about = "Timing-leak laboratory for a JIT-compiled stack bytecode")]
struct Cli {
    /// Emit exactly one JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a program.
    Validate { file: PathBuf },
    /// Execute a program under an explicit schedule.
    Run {
        file: PathBuf,
        /// Input binding `name=value`; repeatable.
        #[arg(long = "input", short = 'i', value_parser = parse_binding)]
        inputs: Vec<(String, i64)>,
        /// Schedule file, one `@start|@invoke n|@call m k <directive>` per line.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[command(flatten)]
        cost: CostArgs,
        /// Write the trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        step_budget: u64,
    },
    /// Compile one method with a directive and print the result.
    Transform {
        file: PathBuf,
        /// Directive literal, e.g. `compile m { inline: []; opt: [bp@3:else] }`.
        #[arg(long, short = 'd')]
        directive: String,
    },
    /// Infer signatures and the protection policy.
    Infer {
        file: PathBuf,
        /// Write the policy as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<PolicyMode>,
        #[command(flatten)]
        hotspot: HotspotArgs,
    },
    /// Type-check a program against a policy (inferred when omitted).
    Typecheck {
        file: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Decide constant time (`ct`) or JIT constant time (`jitct`).
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = CheckMode::Jitct)]
        mode: CheckMode,
        /// Policy JSON restricting the schedules; none means any schedule.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        cost: CostArgs,
        /// Write the witness as JSON when leaky.
        #[arg(long)]
        witness: Option<PathBuf>,
        /// Schedules run in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Search for the schedule that separates two inputs the most.
    Attack {
        file: PathBuf,
        /// First input, `a=1,b=2`.
        #[arg(long, value_delimiter = ',', value_parser = parse_binding)]
        a: Vec<(String, i64)>,
        /// Second input, `a=1,b=3`.
        #[arg(long, value_delimiter = ',', value_parser = parse_binding)]
        b: Vec<(String, i64)>,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        cost: CostArgs,
    },
    /// Infer a policy, type-check with it, and check JIT constant time under it.
    Protect {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyMode::Full)]
        mode: PolicyMode,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hotspot: HotspotArgs,
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        cost: CostArgs,
        /// Schedules run in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a bundled attack demo and measure its leakage.
    Demo {
        /// pwdEq, verifyPin, checkSecret, or all.
        name: DemoChoice,
        #[arg(long, default_value = "none")]
        protect: ProtectChoice,
        /// Probes per secret class.
        #[arg(long, default_value_t = 8)]
        probes: usize,
        /// Standard deviation of Gaussian noise on plotted times.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Histogram CSV path; with several demos, one file per demo next to it.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Demos run in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        cost: CostArgs,
    },
}

#[derive(Args)]
struct CostArgs {
    /// Cost model JSON: `{"cf_bc": 10, "cf_nc": 1, "deopt_penalty": 50}` or per-opcode tables.
    #[arg(long)]
    cost: Option<PathBuf>,
}

#[derive(Args)]
struct HotspotArgs {
    /// Write `exclude/dontinline/dontprune` lines.
    #[arg(long)]
    emit_hotspot: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    /// Public input `name=value`; unlisted public inputs are 0.
    #[arg(long = "input", short = 'i', value_parser = parse_binding)]
    inputs: Vec<(String, i64)>,
    /// Values each secret input ranges over.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0i64, 1, 5, 9])]
    domain: Vec<i64>,
    /// Largest number of secret assignments; larger products are sampled.
    #[arg(long, default_value_t = 64)]
    max_cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Ct,
    Jitct,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyMode {
    Full,
    Light,
}

impl From<PolicyMode> for Mode {
    fn from(m: PolicyMode) -> Mode {
        match m {
            PolicyMode::Full => Mode::Full,
            PolicyMode::Light => Mode::Light,
        }
    }
}

#[derive(Clone)]
enum DemoChoice {
    One(DemoName),
    All,
}

impl std::str::FromStr for DemoChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(DemoChoice::All);
        }
        s.parse().map(DemoChoice::One)
    }
}

#[derive(Clone)]
enum ProtectChoice {
    One(Protect),
    All,
}

impl std::str::FromStr for ProtectChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(ProtectChoice::All);
        }
        s.parse().map(ProtectChoice::One)
    }
}

fn parse_binding(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v = v.trim().parse().map_err(|_| format!("`{v}` is not an integer"))?;
    Ok((k.trim().to_string(), v))
}

/// Exit status with the message to report.
enum Failure {
    Usage(anyhow::Error),
    Violation(Value, String),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

/// Output of a successful command: JSON form and text form.
struct Output {
    json: Value,
    text: String,
}

type Outcome = Result<Output, Failure>;

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Internal)
}

fn load_program(path: &Path) -> anyhow::Result<Program> {
    let p = parse_program(&read(path)?).with_context(|| format!("{}", path.display()))?;
    let v = validate(&p);
    if !v.is_empty() {
        let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(anyhow!("{}: invalid program\n{}", path.display(), msgs.join("\n")));
    }
    Ok(p)
}

fn load_cost(c: &CostArgs) -> anyhow::Result<CostModel> {
    match &c.cost {
        None => Ok(CostModel::default()),
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("{}: bad cost model", p.display())),
    }
}

fn load_policy(path: &Path) -> anyhow::Result<Policy> {
    let pol = Policy::from_json(&read(path)?).with_context(|| format!("{}: bad policy", path.display()))?;
    if !pol.well_formed() {
        return Err(anyhow!("{}: a method is in both prot1 and prot2", path.display()));
    }
    Ok(pol)
}

fn to_inputs(pairs: &[(String, i64)]) -> Inputs {
    pairs.iter().map(|(k, v)| (ident(k), *v)).collect()
}

fn inputs_json(i: &Inputs) -> Value {
    json!(i.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>())
}

fn schedule_lines(s: &Schedule) -> Vec<String> {
    s.to_string().lines().map(str::to_string).collect()
}

/// Public inputs from the flags, and every (or a seeded sample of) secret
/// assignment over the domain.
fn build_io(p: &Program, io: &IoArgs) -> anyhow::Result<IoSpec> {
    let mut public = Inputs::new();
    for x in p.input_vars() {
        if p.is_public(&x) {
            public.insert(x, 0);
        }
    }
    for (k, v) in &io.inputs {
        if !p.is_public(k) {
            return Err(anyhow!("`{k}` is not a public input"));
        }
        public.insert(ident(k), *v);
    }
    if io.domain.is_empty() {
        return Err(anyhow!("empty secret domain"));
    }
    let secrets = p.secret_inputs();
    let d = io.domain.len();
    let total = (d as f64).powi(secrets.len() as i32);
    let pick = |mut k: usize| -> Inputs {
        let mut m = Inputs::new();
        for x in &secrets {
            m.insert(x.clone(), io.domain[k % d]);
            k /= d;
        }
        m
    };
    let cases: Vec<Inputs> = if total <= io.max_cases as f64 {
        (0..total as usize).map(pick).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(io.seed);
        let mut cases = Vec::new();
        if total < usize::MAX as f64 {
            for k in sample(&mut rng, total as usize, io.max_cases.max(1)).iter() {
                cases.push(pick(k));
            }
        } else {
            use rand::seq::IndexedRandom;
            for _ in 0..io.max_cases.max(1) {
                cases.push(
                    secrets
                        .iter()
                        .map(|x| (x.clone(), *io.domain.choose(&mut rng).expect("non-empty domain")))
                        .collect(),
                );
            }
        }
        cases
    };
    Ok(IoSpec::new(public, cases))
}

fn run_error(e: RunError) -> Failure {
    match e {
        RunError::MissingInput(_) | RunError::UnknownInput(_) => Failure::Usage(e.into()),
        RunError::Stuck(s) if matches!(s.reason, StuckReason::Oracle(_) | StuckReason::PcOutOfRange) => {
            Failure::Internal(RunError::Stuck(s).into())
        }
        other => Failure::Violation(json!({ "error": other.to_string(), "exit": 1 }), other.to_string()),
    }
}

fn cmd_validate(file: &Path) -> Outcome {
    let p = parse_program(&read(file)?).with_context(|| format!("{}", file.display()))?;
    let v: Vec<String> = validate(&p).iter().map(|x| x.to_string()).collect();
    let json = json!({ "command": "validate", "ok": v.is_empty(), "violations": v });
    if v.is_empty() {
        Ok(Output {
            json,
            text: format!("ok: {} methods, entry {}\n", p.methods.len(), p.entry),
        })
    } else {
        Err(Failure::Violation(json, v.join("\n")))
    }
}

fn cmd_run(
    file: &Path,
    inputs: &[(String, i64)],
    schedule: Option<&Path>,
    cost: &CostArgs,
    trace: Option<&Path>,
    step_budget: u64,
) -> Outcome {
    let p = load_program(file)?;
    let cm = load_cost(cost)?;
    let sched = match schedule {
        None => Schedule::empty(),
        Some(f) => Schedule::parse(&read(f)?).map_err(|e| anyhow!("{}:{}: {}", f.display(), e.line, e.msg))?,
    };
    let opts = RunOptions {
        step_budget,
        record_trace: trace.is_some(),
        ..RunOptions::default()
    };
    let r = run_with(&p, &to_inputs(inputs), &sched, &cm, &opts).map_err(run_error)?;
    if let Some(t) = trace {
        write(t, &trace_csv(&r.trace))?;
    }
    let heap: serde_json::Map<String, Value> = r.final_heap.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let mut text = format!("value {}\ncost {}\nsteps {}\n", r.return_value, r.total_cost, r.steps);
    for (k, v) in &heap {
        text.push_str(&format!("heap {k} = {v}\n"));
    }
    Ok(Output {
        json: json!({
            "command": "run",
            "return_value": r.return_value,
            "total_cost": r.total_cost,
            "steps": r.steps,
            "final_heap": heap,
            "schedule_consumed": schedule_lines(&r.schedule_consumed),
        }),
        text,
    })
}

fn cmd_transform(file: &Path, directive: &str) -> Outcome {
    let p = load_program(file)?;
    let d = parse_directive(directive).map_err(|e| anyhow!("directive: {e}"))?;
    let Some(m) = d.target().cloned() else {
        return Err(Failure::Usage(anyhow!("the empty directive compiles nothing")));
    };
    let ch = apply_directive(&CodeHeap::new(&p), &m, &d, RunOptions::default().v_max)
        .map_err(|e| Failure::Violation(json!({ "error": e.to_string(), "exit": 1 }), e.to_string()))?;
    let out = ch.current(&m).expect("compiled method installed");
    let listing: Vec<String> = out.instrs.iter().enumerate().map(|(i, x)| format!("{i}: {x}")).collect();
    Ok(Output {
        json: json!({
            "command": "transform",
            "method": m.to_string(),
            "directive": d.to_string(),
            "version": out.version,
            "listing": listing,
        }),
        text: serialize_method(out),
    })
}

fn emit_hotspot(h: &HotspotArgs, pol: &Policy) -> Result<(), Failure> {
    if let Some(f) = &h.emit_hotspot {
        write(f, &pol.hotspot_lines())?;
    }
    Ok(())
}

fn cmd_infer(file: &Path, out: Option<&Path>, mode: Option<PolicyMode>, hotspot: &HotspotArgs) -> Outcome {
    let p = load_program(file)?;
    let inf = infer_policy(&p).map_err(|e| Failure::Violation(json!({ "error": e.to_string(), "exit": 1 }), e.to_string()))?;
    let pol = inf.policy.with_mode(mode.unwrap_or(PolicyMode::Full).into());
    if let Some(f) = out {
        write(f, &pol.to_json())?;
    }
    emit_hotspot(hotspot, &pol)?;
    let rep = report(&p, &inf);
    Ok(Output {
        json: json!({
            "command": "infer",
            "policy": serde_json::to_value(&pol).map_err(|e| Failure::Internal(e.into()))?,
            "hotspot": pol.hotspot_lines(),
            "rounds": inf.rounds,
            "report": rep,
        }),
        text: format!("{rep}\npolicy\n{}\n", pol.to_json()),
    })
}

fn cmd_typecheck(file: &Path, policy: Option<&Path>) -> Outcome {
    let p = load_program(file)?;
    let inf = infer_policy(&p).map_err(|e| Failure::Violation(json!({ "error": e.to_string(), "exit": 1 }), e.to_string()))?;
    let pol = match policy {
        Some(f) => load_policy(f)?,
        None => inf.policy.clone(),
    };
    let r = check_program(&p, &inf.sigs, &pol);
    let errors: Vec<String> = r.errors.iter().map(|e| e.to_string()).collect();
    let json = json!({ "command": "typecheck", "typable": r.typable, "errors": errors });
    if r.typable {
        Ok(Output {
            json,
            text: "typable\n".into(),
        })
    } else {
        Err(Failure::Violation(json, format!("not typable\n{}", errors.join("\n"))))
    }
}

fn report_json(r: &LeakReport) -> Result<Value, Failure> {
    serde_json::to_value(r).map_err(|e| Failure::Internal(e.into()))
}

fn verdict_text(r: &LeakReport) -> String {
    let v = serde_json::to_value(r.verdict).unwrap_or(Value::Null);
    let name = v.get("verdict").and_then(Value::as_str).unwrap_or("?").to_string();
    match v.get("depth") {
        Some(d) => format!("{name}({d})"),
        None => name,
    }
}

fn leak_text(r: &LeakReport) -> String {
    let mut s = format!(
        "verdict {}\nmax_delta {}\nschedules {}\nruns {}\n",
        verdict_text(r),
        r.max_delta,
        r.schedules_checked,
        r.runs
    );
    if let Some(mi) = r.mutual_information_bits {
        s.push_str(&format!("mutual_information_bits {mi}\n"));
    }
    if let Some(w) = &r.witness {
        s.push_str(&format!(
            "witness {} vs {}: cost {} vs {} (delta {})\n",
            inputs_json(&w.inputs_a),
            inputs_json(&w.inputs_b),
            w.cost_a,
            w.cost_b,
            w.delta
        ));
        for l in schedule_lines(&w.consumed_a) {
            s.push_str(&format!("  a: {l}\n"));
        }
        for l in schedule_lines(&w.consumed_b) {
            s.push_str(&format!("  b: {l}\n"));
        }
    }
    s
}

fn leak_outcome(command: &str, extra: Value, r: &LeakReport, witness: Option<&Path>) -> Outcome {
    let mut json = json!({ "command": command });
    if let (Value::Object(m), Value::Object(x)) = (&mut json, extra) {
        m.extend(x);
    }
    if let (Value::Object(m), Value::Object(x)) = (&mut json, report_json(r)?) {
        m.extend(x);
    }
    let text = leak_text(r);
    match r.verdict {
        jitct::leakage::Verdict::Secure => Ok(Output { json, text }),
        jitct::leakage::Verdict::Leaky => {
            if let (Some(f), Some(w)) = (witness, &r.witness) {
                let body = serde_json::to_string_pretty(w).map_err(|e| Failure::Internal(e.into()))?;
                write(f, &body)?;
            }
            Err(Failure::Violation(json, text))
        }
        jitct::leakage::Verdict::Inconclusive(_) => Err(Failure::Violation(json, text)),
    }
}

fn leak_error(e: jitct::leakage::LeakError) -> Failure {
    match e {
        jitct::leakage::LeakError::Run(r) => run_error(r),
        other => Failure::Usage(other.into()),
    }
}

fn jit_opts(jobs: usize) -> JitCheckOptions {
    JitCheckOptions {
        jobs: jobs.max(1),
        ..JitCheckOptions::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    file: &Path,
    mode: CheckMode,
    policy: Option<&Path>,
    depth: usize,
    io: &IoArgs,
    cost: &CostArgs,
    witness: Option<&Path>,
    jobs: usize,
) -> Outcome {
    let p = load_program(file)?;
    let cm = load_cost(cost)?;
    let spec = build_io(&p, io)?;
    let pol = policy.map(load_policy).transpose()?;
    let (name, r) = match mode {
        CheckMode::Ct => ("ct", check_constant_time(&p, &spec, &cm).map_err(leak_error)?),
        CheckMode::Jitct => (
            "jitct",
            check_jit_constant_time(&p, &spec, pol.as_ref(), depth, &cm, &jit_opts(jobs))
                .map_err(leak_error)?,
        ),
    };
    leak_outcome("check", json!({ "mode": name, "depth": depth }), &r, witness)
}

fn cmd_attack(
    file: &Path,
    a: &[(String, i64)],
    b: &[(String, i64)],
    budget: usize,
    policy: Option<&Path>,
    cost: &CostArgs,
) -> Outcome {
    let p = load_program(file)?;
    let cm = load_cost(cost)?;
    let (ia, ib) = (to_inputs(a), to_inputs(b));
    for x in p.input_vars() {
        if p.is_public(&x) && ia.get(&x) != ib.get(&x) {
            return Err(Failure::Usage(anyhow!("the inputs disagree on public input `{x}`")));
        }
    }
    let opts = RunOptions::quiet();
    for i in [&ia, &ib] {
        run_with(&p, i, &Schedule::empty(), &cm, &opts).map_err(run_error)?;
    }
    let pol = policy.map(load_policy).transpose()?;
    let r = adversarial_search(&p, (&ia, &ib), budget, &cm, pol.as_ref());
    let lines = schedule_lines(&r.schedule);
    let json = json!({
        "command": "attack",
        "delta": r.delta,
        "schedule": lines,
        "explored": r.explored,
    });
    let mut text = format!("delta {}\nexplored {}\n", r.delta, r.explored);
    for l in &lines {
        text.push_str(&format!("  {l}\n"));
    }
    if r.delta > 0 {
        Err(Failure::Violation(json, text))
    } else {
        Ok(Output { json, text })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_protect(
    file: &Path,
    mode: PolicyMode,
    depth: usize,
    out: Option<&Path>,
    hotspot: &HotspotArgs,
    io: &IoArgs,
    cost: &CostArgs,
    jobs: usize,
) -> Outcome {
    let p = load_program(file)?;
    let cm = load_cost(cost)?;
    let inf = infer_policy(&p).map_err(|e| Failure::Violation(json!({ "error": e.to_string(), "exit": 1 }), e.to_string()))?;
    let pol = inf.policy.with_mode(mode.into());
    if let Some(f) = out {
        write(f, &pol.to_json())?;
    }
    emit_hotspot(hotspot, &pol)?;
    let typ = check_program(&p, &inf.sigs, &pol);
    let spec = build_io(&p, io)?;
    let ct = check_constant_time(&p, &spec, &cm).map_err(leak_error)?;
    let r = check_jit_constant_time(&p, &spec, Some(&pol), depth, &cm, &jit_opts(jobs))
        .map_err(leak_error)?;
    let extra = json!({
        "policy": serde_json::to_value(&pol).map_err(|e| Failure::Internal(e.into()))?,
        "typable": typ.typable,
        "constant_time": ct.is_secure(),
        "light_assumption": jitct::infoflow::check_light_assumption(&p, &pol),
        "depth": depth,
    });
    let head = format!(
        "policy {}\ntypable {}\nconstant_time {}\n",
        serde_json::to_string(&pol).unwrap_or_default(),
        typ.typable,
        ct.is_secure()
    );
    match leak_outcome("protect", extra, &r, None) {
        Ok(o) => Ok(Output {
            text: head + &o.text,
            json: o.json,
        }),
        Err(Failure::Violation(j, t)) => Err(Failure::Violation(j, head + &t)),
        Err(e) => Err(e),
    }
}

fn demo_json(r: &DemoReport) -> Value {
    let ranges: Vec<Value> = (0..r.classes.len())
        .map(|k| match r.class_range(k) {
            Some((lo, hi)) => json!({ "class": r.classes[k], "min_cost": lo, "max_cost": hi, "deopts": r.deopts_per_class[k] }),
            None => Value::Null,
        })
        .collect();
    json!({
        "demo": r.demo.as_str(),
        "protect": r.protect,
        "mutual_information_bits": r.mi(),
        "max_delta": r.report.max_delta,
        "policy": r.policy,
        "priming_schedule": schedule_lines(&r.priming_schedule),
        "probe_schedule": schedule_lines(&r.probe_schedule),
        "classes": ranges,
    })
}

fn demo_text(r: &DemoReport) -> String {
    let protect = serde_json::to_value(r.protect).unwrap_or(Value::Null);
    let mut s = format!("demo {} protect {}\n", r.demo.as_str(), protect.as_str().unwrap_or("?"));
    s.push_str(&format!("  mutual information {} bits\n", r.mi()));
    for l in schedule_lines(&r.probe_schedule) {
        s.push_str(&format!("  probe compiled {l}\n"));
    }
    for (k, c) in r.classes.iter().enumerate() {
        if let Some((lo, hi)) = r.class_range(k) {
            s.push_str(&format!("  class {k} ({c}): cost {lo}..{hi}, deopts {}\n", r.deopts_per_class[k]));
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_demo(
    name: &DemoChoice,
    protect: &ProtectChoice,
    opts: DemoOptions,
    csv: Option<&Path>,
    jobs: usize,
    cost: &CostArgs,
) -> Outcome {
    let cm = load_cost(cost)?;
    if opts.probes_per_class == 0 || opts.n_bins == 0 {
        return Err(Failure::Usage(anyhow!("--probes and --bins must be positive")));
    }
    let names: Vec<DemoName> = match name {
        DemoChoice::One(d) => vec![*d],
        DemoChoice::All => DemoName::ALL.to_vec(),
    };
    let protects: Vec<Protect> = match protect {
        ProtectChoice::One(p) => vec![*p],
        ProtectChoice::All => vec![Protect::None, Protect::Light, Protect::Full],
    };
    let grid: Vec<(DemoName, Protect)> = names
        .iter()
        .flat_map(|n| protects.iter().map(move |p| (*n, *p)))
        .collect();
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<DemoReport, RunError>>> = vec![None; grid.len()];
    std::thread::scope(|s| {
        let chunks: Vec<_> = results.chunks_mut(grid.len().div_ceil(jobs)).collect();
        let mut start = 0;
        for chunk in chunks {
            let len = chunk.len();
            let part = &grid[start..start + len];
            let (cm, opts) = (&cm, &opts);
            s.spawn(move || {
                for (slot, (n, p)) in chunk.iter_mut().zip(part) {
                    *slot = Some(run_demo(*n, *p, cm, opts));
                }
            });
            start += len;
        }
    });
    let mut reports = Vec::new();
    for r in results {
        reports.push(r.expect("every demo ran").map_err(|e| Failure::Internal(e.into()))?);
    }
    if let Some(path) = csv {
        if reports.len() == 1 {
            write(path, &reports[0].csv)?;
        } else {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("demo");
            for r in &reports {
                let f = path.with_file_name(format!("{stem}-{}-{}.csv", r.demo.as_str(), json!(r.protect).as_str().unwrap_or("x")).to_lowercase());
                write(&f, &r.csv)?;
            }
        }
    }
    Ok(Output {
        json: json!({
            "command": "demo",
            "results": reports.iter().map(demo_json).collect::<Vec<_>>(),
        }),
        text: reports.iter().map(demo_text).collect(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Validate { file } => cmd_validate(file),
        Cmd::Run {
            file,
            inputs,
            schedule,
            cost,
            trace,
            step_budget,
        } => cmd_run(file, inputs, schedule.as_deref(), cost, trace.as_deref(), *step_budget),
        Cmd::Transform { file, directive } => cmd_transform(file, directive),
        Cmd::Infer {
            file,
            out,
            mode,
            hotspot,
        } => cmd_infer(file, out.as_deref(), *mode, hotspot),
        Cmd::Typecheck { file, policy } => cmd_typecheck(file, policy.as_deref()),
        Cmd::Check {
            file,
            mode,
            policy,
            depth,
            io,
            cost,
            witness,
            jobs,
        } => cmd_check(file, *mode, policy.as_deref(), *depth, io, cost, witness.as_deref(), *jobs),
        Cmd::Attack {
            file,
            a,
            b,
            budget,
            policy,
            cost,
        } => cmd_attack(file, a, b, *budget, policy.as_deref(), cost),
        Cmd::Protect {
            file,
            mode,
            depth,
            out,
            hotspot,
            io,
            cost,
            jobs,
        } => cmd_protect(file, *mode, *depth, out.as_deref(), hotspot, io, cost, *jobs),
        Cmd::Demo {
            name,
            protect,
            probes,
            jitter,
            seed,
            bins,
            csv,
            jobs,
            cost,
        } => cmd_demo(
            name,
            protect,
            DemoOptions {
                probes_per_class: *probes,
                jitter: *jitter,
                seed: *seed,
                n_bins: *bins,
            },
            csv.as_deref(),
            *jobs,
            cost,
        ),
    };
    let (code, json, text, err) = match outcome {
        Ok(o) => (0, o.json, o.text, None),
        Err(Failure::Violation(j, t)) => (1, j, t, None),
        Err(Failure::Usage(e)) => (2, json!({ "error": format!("{e:#}"), "exit": 2 }), String::new(), Some(e)),
        Err(Failure::Internal(e)) => (3, json!({ "error": format!("{e:#}"), "exit": 3 }), String::new(), Some(e)),
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&json).expect("json value serializes"));
    } else {
        print!("{text}");
        if !text.is_empty() && !text.ends_with('\n') {
            println!();
        }
    }
    if let Some(e) = err {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(code)
}
