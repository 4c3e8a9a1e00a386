//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use grassroots::harness::{self, Outcome, RunOptions, Scenario, Status, StopReason};
use grassroots::harness::scenario::OracleKind;
use grassroots::simnet::TraceEvent;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Check {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Check {
    Check { passed, detail: detail.into() }
}

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.toml")].iter().collect();
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run(s: &Scenario, seed: u64) -> Outcome {
    harness::run(s, &RunOptions { seed: Some(seed), ticks: None }).unwrap_or_else(|e| panic!("{}: {e}", s.name))
}

fn failures(o: &Outcome) -> Vec<String> {
    o.verdicts.iter().filter(|v| v.status != Status::Pass).map(|v| v.to_string()).collect()
}

fn over_seeds(s: &Scenario, seeds: impl IntoIterator<Item = u64>, ok: impl Fn(&Outcome) -> Result<(), String>) -> (usize, usize, Vec<String>) {
    let (mut passed, mut total, mut notes) = (0, 0, Vec::new());
    for seed in seeds {
        total += 1;
        let o = run(s, seed);
        match ok(&o) {
            Ok(()) => passed += 1,
            Err(why) => notes.push(format!("seed {seed}: {why}")),
        }
    }
    (passed, total, notes)
}

fn all_pass(o: &Outcome) -> Result<(), String> {
    let f = failures(o);
    if f.is_empty() {
        Ok(())
    } else {
        Err(f.join("; "))
    }
}

fn at_quiescence(o: &Outcome) -> Result<(), String> {
    if o.stop != StopReason::Quiescence {
        return Err(format!("stopped on {} at tick {}", o.stop.as_str(), o.last_tick));
    }
    all_pass(o)
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn blocklace_reference() -> Check {
    let start = Instant::now();
    let keys = common::keys(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    let mut first = String::new();
    for i in 0..1000 {
        let keep = if i % 2 == 0 { 1.0 } else { 0.8 };
        let r = common::random_lace(&mut rng, &keys, 20, keep);
        let diffs = common::compare(&r);
        if !diffs.is_empty() {
            bad += 1;
            if first.is_empty() {
                first = format!(", first: lace {i} {}", diffs[0]);
            }
        }
    }
    let t = start.elapsed();
    check(bad == 0 && within(t, 30), format!("1000 laces of <= 20 blocks, {bad} mismatched{first}, {:.1}s (limit 30s)", t.as_secs_f64()))
}

fn tl_liveness() -> Check {
    let start = Instant::now();
    let s = scenario("tl-line");
    let (p, n, notes) = over_seeds(&s, 1..=20, |o| {
        let v = o.verdict(OracleKind::TlLiveness).ok_or("no tl_liveness verdict")?;
        if v.status != Status::Pass {
            return Err(v.to_string());
        }
        if o.last_tick > 2000 {
            return Err(format!("took {} ticks", o.last_tick));
        }
        all_pass(o)
    });
    let t = start.elapsed();
    check(p == n && within(t, 60), format!("{p}/{n} seeds within 2000 ticks, {:.1}s (limit 60s){}", t.as_secs_f64(), notes_str(&notes)))
}

fn wl_consistency() -> Check {
    let start = Instant::now();
    let s = scenario("wl-group");
    let (p, n, notes) = over_seeds(&s, 1..=20, at_quiescence);
    let t = start.elapsed();
    check(p == n && within(t, 60), format!("{p}/{n} seeds with equal partitions at quiescence, {:.1}s (limit 60s){}", t.as_secs_f64(), notes_str(&notes)))
}

fn injected(o: &Outcome, mode: &str) -> usize {
    o.trace.iter().filter(|e| matches!(e, TraceEvent::Inject { mode: m, .. } if m == mode)).count()
}

/// Injected datagrams that were neither delivered nor lost by the end.
fn unsettled_injections(o: &Outcome) -> usize {
    let injected: BTreeSet<u64> = o.trace.iter().filter_map(|e| if let TraceEvent::Inject { dg, .. } = e { Some(*dg) } else { None }).collect();
    let settled: BTreeSet<u64> = o
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Deliver { dg, .. } | TraceEvent::DropLoss { dg, .. } | TraceEvent::DropStale { dg, .. } => Some(*dg),
            _ => None,
        })
        .collect();
    injected.difference(&settled).count()
}

fn attribution() -> Check {
    let mut notes = Vec::new();
    let (mut passed, mut total) = (0, 0);
    for name in ["tl-forger", "wl-forger"] {
        let s = scenario(name);
        for seed in 1..=5 {
            total += 1;
            let o = run(&s, seed);
            let (bad, tampered) = (injected(&o, "bad_signature"), injected(&o, "tampered"));
            let attribution = o.verdict(OracleKind::Attribution).map(|v| v.status);
            let unsettled = unsettled_injections(&o);
            if bad == 100 && tampered == 100 && unsettled == 0 && attribution == Some(Status::Pass) && failures(&o).is_empty() {
                passed += 1;
            } else {
                notes.push(format!("{name} seed {seed}: {bad} bad-signature, {tampered} tampered, {unsettled} unsettled, {}", failures(&o).join("; ")));
            }
        }
    }
    check(passed == total, format!("{passed}/{total} runs with 100+100 forged blocks, all delivered or lost, none inserted{}", notes_str(&notes)))
}

fn equivocation() -> Check {
    let s = scenario("wl-equivocation");
    let (p, n, notes) = over_seeds(&s, 1..=10, at_quiescence);
    check(p == n, format!("{p}/{n} seeds where all 5 correct members report the same single fork pair{}", notes_str(&notes)))
}

fn privacy() -> Check {
    let s = scenario("wl-group");
    let sealed = run(&s, 1);
    let sealed_ok = sealed.verdict(OracleKind::Privacy).map(|v| v.status) == Some(Status::Pass);
    let mut plain = s.clone();
    plain.encryption = false;
    let leaked = run(&plain, 1);
    let control_fails = leaked.verdict(OracleKind::Privacy).map(|v| v.status) == Some(Status::Fail);
    let listener = run(&scenario("wl-plaintext"), 1);
    let listener_fails = listener.verdict(OracleKind::Privacy).map(|v| v.status) == Some(Status::Fail);
    check(
        sealed_ok && control_fails && listener_fails,
        format!(
            "encrypted: {}, encryption off: {}, encryption off with eavesdropper: {}",
            if sealed_ok { "no text found" } else { "TEXT FOUND" },
            if control_fails { "oracle fails as expected" } else { "ORACLE PASSED" },
            if listener_fails { "oracle fails as expected" } else { "ORACLE PASSED" },
        ),
    )
}

fn churn() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["tl-churn", "wl-churn"] {
        let s = scenario(name);
        let (p, n, notes) = over_seeds(&s, 1..=5, all_pass);
        ok &= p == n;
        parts.push(format!("{name} {p}/{n}{}", notes_str(&notes)));
    }
    check(ok, format!("delivery resumes after rebind and liveness holds: {}", parts.join(", ")))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().expect("tempdir");
    let names = ["tl-line", "wl-group", "tl-forger", "wl-forger", "wl-equivocation", "wl-plaintext", "tl-churn", "wl-churn", "wl-three-groups"];
    let mut differ = Vec::new();
    for name in names {
        let s = scenario(name);
        let a = dir.path().join(format!("{name}-a.trace"));
        let b = dir.path().join(format!("{name}-b.trace"));
        fs::write(&a, run(&s, 7).trace_text()).expect("write trace");
        fs::write(&b, run(&s, 7).trace_text()).expect("write trace");
        if fs::read(&a).expect("read") != fs::read(&b).expect("read") {
            differ.push(name);
        }
    }
    check(differ.is_empty(), format!("{} scenarios run twice with seed 7, {} differing{}", names.len(), differ.len(), if differ.is_empty() { String::new() } else { format!(": {}", differ.join(", ")) }))
}

fn partition_integrity() -> Check {
    let s = scenario("wl-three-groups");
    let (p, n, notes) = over_seeds(&s, 1..=5, |o| {
        match o.verdict(OracleKind::PartitionIntegrity).map(|v| v.status) {
            Some(Status::Pass) => all_pass(o),
            _ => Err("partition integrity failed".into()),
        }
    });
    check(p == n, format!("{p}/{n} seeds with disjoint closed partitions at every insert and no cross-group datagrams{}", notes_str(&notes)))
}

fn notes_str(notes: &[String]) -> String {
    if notes.is_empty() {
        String::new()
    } else {
        format!(" [{}]", notes.join(" | "))
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("blocklace matches brute-force reference", blocklace_reference),
        ("TL liveness on a line of friends", tl_liveness),
        ("WL liveness and eventual consistency", wl_consistency),
        ("attribution under forgery", attribution),
        ("equivocation visibility", equivocation),
        ("privacy with negative control", privacy),
        ("address churn recovery", churn),
        ("determinism", determinism),
        ("partition integrity with 3 groups", partition_integrity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let c = f();
        if !c.passed {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {} ({:.1}s)",
            i + 1,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
