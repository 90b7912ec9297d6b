use crate::bytecode::Ident;
use crate::jit::{parse_directive, Directive};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// When a directive is consumed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    /// Compiled before the run starts, i.e. part of the starting code heap.
    Start,
    /// At the n-th invoke transition of the run (1-based).
    Invoke(u64),
    /// At the k-th invocation of the named method (1-based).
    Call(Ident, u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub at: Trigger,
    pub directive: Directive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleOrigin {
    #[default]
    Explicit,
    PfGenerated,
}

/// Non-empty directives keyed by trigger; every other invoke consumes the empty one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    #[serde(default)]
    pub origin: ScheduleOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schedule line {line}: {msg}")]
pub struct ScheduleParseError {
    pub line: usize,
    pub msg: String,
}

impl Schedule {
    pub fn empty() -> Self {
        Schedule::default()
    }

    pub fn explicit(entries: Vec<ScheduleEntry>) -> Self {
        Schedule {
            entries,
            origin: ScheduleOrigin::Explicit,
        }
    }

    pub fn start(d: Directive) -> Self {
        Schedule::explicit(vec![ScheduleEntry {
            at: Trigger::Start,
            directive: d,
        }])
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.directive.is_empty())
    }

    /// Number of non-empty directives.
    pub fn depth(&self) -> usize {
        self.entries.iter().filter(|e| !e.directive.is_empty()).count()
    }

    /// Parses one directive per line, each prefixed by `@start`,
    /// `@invoke N` or `@call METHOD K`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Schedule, ScheduleParseError> {
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fail = |msg: String| ScheduleParseError { line, msg };
            let mut words = body.splitn(2, char::is_whitespace);
            let tag = words.next().unwrap_or("");
            let rest = words.next().unwrap_or("").trim();
            let num = |w: Option<&str>| -> Result<u64, ScheduleParseError> {
                w.and_then(|w| w.parse().ok())
                    .filter(|n: &u64| *n >= 1)
                    .ok_or_else(|| fail("expected a positive ordinal".into()))
            };
            let (at, lit) = match tag {
                "@start" => (Trigger::Start, rest),
                "@invoke" => {
                    let mut w = rest.splitn(2, char::is_whitespace);
                    let n = num(w.next())?;
                    (Trigger::Invoke(n), w.next().unwrap_or("").trim())
                }
                "@call" => {
                    let mut w = rest.splitn(3, char::is_whitespace);
                    let m: Ident = Arc::from(w.next().unwrap_or(""));
                    let n = num(w.next())?;
                    (Trigger::Call(m, n), w.next().unwrap_or("").trim())
                }
                other => return Err(fail(format!("expected @start, @invoke or @call, found `{other}`"))),
            };
            let directive = parse_directive(lit).map_err(|e| fail(e.to_string()))?;
            entries.push(ScheduleEntry { at, directive });
        }
        Ok(Schedule::explicit(entries))
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Start => f.write_str("@start"),
            Trigger::Invoke(n) => write!(f, "@invoke {n}"),
            Trigger::Call(m, k) => write!(f, "@call {m} {k}"),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} {}", e.at, e.directive)?;
        }
        Ok(())
    }
}
