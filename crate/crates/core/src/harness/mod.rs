//! Scenario-driven simulation: wires agents to the simulated network, runs
//! scripted commands and adversaries, and checks the outcome against oracles.

pub mod adversary;
pub mod node;
pub mod oracle;
pub mod run;
pub mod scenario;

use std::fmt::Write as _;

pub use node::Node;
pub use oracle::{Status, Verdict};
pub use run::{run, verify, HarnessError, Outcome, RunOptions, StopReason};
pub use scenario::{Protocol, Role, Scenario};

use crate::simnet::TraceEvent;

/// Human-readable run report.
pub fn report(outcome: &Outcome) -> String {
    let s = &outcome.plan.scenario;
    let mut out = String::new();
    let name = if s.name.is_empty() { "(unnamed)" } else { s.name.as_str() };
    writeln!(out, "scenario: {name}").unwrap();
    writeln!(out, "protocol: {:?}, seed {}, budget {} ticks", s.protocol, s.seed, s.ticks).unwrap();
    writeln!(
        out,
        "net: loss {}, dup {}, delay {}..{}, tick interval {}",
        s.net.loss, s.net.dup, s.net.delay_min, s.net.delay_max, s.net.tick_interval
    )
    .unwrap();
    writeln!(out, "stopped: {} at tick {}", outcome.stop.as_str(), outcome.last_tick).unwrap();
    let datagrams = outcome.trace.iter().filter(|e| matches!(e, TraceEvent::Submit { .. })).count();
    writeln!(out, "datagrams: {datagrams} submitted").unwrap();
    for e in &outcome.trace {
        if let TraceEvent::Error { tick, event, reason } = e {
            writeln!(out, "script error: events[{event}] at tick {tick}: {reason}").unwrap();
        }
    }
    out.push_str(&verdicts(&outcome.verdicts));
    out
}

/// One line per verdict plus a summary.
pub fn verdicts(vs: &[Verdict]) -> String {
    let mut out = String::new();
    for v in vs {
        writeln!(out, "{v}").unwrap();
    }
    let failed = vs.iter().filter(|v| !v.passed()).count();
    writeln!(out, "{} oracles, {failed} failed", vs.len()).unwrap();
    out
}
