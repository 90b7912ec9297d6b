//! Browser bindings for the demo page in `www/`. Every export returns a JSON
//! string; failures come back as `{"error": ...}`.

use jitct::bytecode::{parse_program, serialize_method, validate, Program};
use jitct::infoflow::{infer_policy, report};
use jitct::interp::{CostModel, RunOptions};
use jitct::jit::{apply_directive, parse_directive, CodeHeap};
use jitct::leakage::{run_demo, DemoName, DemoOptions};
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

fn respond(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn load(source: &str) -> Result<Program, String> {
    let p = parse_program(source).map_err(|e| e.to_string())?;
    let v = validate(&p);
    if !v.is_empty() {
        return Err(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\n"));
    }
    Ok(p)
}

/// Source text of a bundled demo program.
#[wasm_bindgen]
pub fn demo_source(name: &str) -> String {
    respond(
        name.parse::<DemoName>()
            .map(|d| json!({ "source": d.source() })),
    )
}

/// Primes the profiler, probes every secret class and returns the timing
/// histogram with the mutual information estimate.
#[wasm_bindgen]
pub fn demo(name: &str, protect: &str, jitter: f64, seed: u32) -> String {
    respond((|| {
        let d: DemoName = name.parse()?;
        let p = protect.parse()?;
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err("jitter must be a non-negative number".to_string());
        }
        let opts = DemoOptions {
            jitter,
            seed: seed as u64,
            ..DemoOptions::default()
        };
        let r = run_demo(d, p, &CostModel::default(), &opts).map_err(|e| e.to_string())?;
        let rows: Vec<Value> = r
            .report
            .histogram
            .iter()
            .map(|h| json!({ "class": h.class, "bin_lo": h.bin_lo, "bin_hi": h.bin_hi, "count": h.count }))
            .collect();
        Ok(json!({
            "demo": d.as_str(),
            "protect": p,
            "classes": r.classes,
            "deopts": r.deopts_per_class,
            "mutual_information_bits": r.mi(),
            "probe_schedule": r.probe_schedule.to_string(),
            "histogram": rows,
        }))
    })())
}

/// Applies one compilation directive and lists the resulting native method.
#[wasm_bindgen]
pub fn transform(source: &str, directive: &str) -> String {
    respond((|| {
        let p = load(source)?;
        let d = parse_directive(directive).map_err(|e| e.to_string())?;
        let m = d.target().cloned().ok_or("the empty directive compiles nothing")?;
        let ch = apply_directive(&CodeHeap::new(&p), &m, &d, RunOptions::default().v_max).map_err(|e| e.to_string())?;
        let out = ch.current(&m).ok_or("compiled method missing")?;
        Ok(json!({ "method": m.to_string(), "listing": serialize_method(out) }))
    })())
}

/// Infers the protection policy and the typing report.
#[wasm_bindgen]
pub fn infer(source: &str) -> String {
    respond((|| {
        let p = load(source)?;
        let inf = infer_policy(&p).map_err(|e| e.to_string())?;
        Ok(json!({
            "policy": inf.policy,
            "hotspot": inf.policy.hotspot_lines(),
            "report": report(&p, &inf),
        }))
    })())
}
