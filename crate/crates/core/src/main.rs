use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use grassroots::harness::{self, Node, Outcome, RunOptions, Scenario};

const DEMO_TL: &str = include_str!("../../../scenarios/demo-tl.toml");
const DEMO_WL: &str = include_str!("../../../scenarios/demo-wl.toml");

#[derive(Parser)]
#[command(name = "grassroots", about = "Grassroots social networking protocols in a simulated network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and check its oracles.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Tick budget, overriding the scenario's.
        #[arg(long)]
        ticks: Option<u64>,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-check a scenario's oracles against a saved trace.
    Verify { trace: PathBuf, scenario: PathBuf },
    /// Run a canned scenario and print every agent's feeds.
    Demo {
        which: Demo,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Tl,
    Wl,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load(path: &Path) -> Result<Scenario, String> {
    Scenario::from_toml(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn exit(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn print_feeds(o: &Outcome) {
    let plan = &o.plan;
    let name_of = |id: &grassroots::crypto::AgentId| -> String { plan.index_by_id(id).map(|i| plan.name(i).to_owned()).unwrap_or_else(|| id.short()) };
    for (i, node) in o.nodes.iter().enumerate() {
        println!("== {} ({:?}) ==", plan.name(i), plan.role(i));
        match node {
            Node::Tl(a) => {
                for j in 0..o.nodes.len() {
                    for b in a.feed(&plan.id(j)) {
                        match b.payload() {
                            grassroots::blocklace::Payload::Say(t) => println!("  {}: {}", plan.name(j), text(t)),
                            grassroots::blocklace::Payload::Respond { text: t, re } => {
                                println!("  {} (re {}): {}", plan.name(j), name_of(&re.creator), text(t))
                            }
                            _ => {}
                        }
                    }
                }
            }
            Node::Wl(a) => {
                for gid in a.groups() {
                    let group = text(a.group_name(gid).unwrap_or_default());
                    let role = if a.is_member(gid) { "member" } else { "outsider" };
                    println!("  [{group}] as {role}, {} blocks", a.partition(gid).len());
                    for m in a.group_feed(gid) {
                        let body = m.text.as_deref().map(text).unwrap_or_else(|| "<encrypted>".into());
                        println!("    {}: {body}", name_of(&m.author));
                    }
                }
            }
        }
    }
}

fn main_inner(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { scenario, seed, ticks, trace, report } => {
            let s = load(&scenario)?;
            let o = harness::run(&s, &RunOptions { seed, ticks }).map_err(|e| e.to_string())?;
            let r = harness::report(&o);
            print!("{r}");
            if let Some(p) = trace {
                write(&p, &o.trace_text())?;
            }
            if let Some(p) = report {
                write(&p, &r)?;
            }
            Ok(o.passed())
        }
        Command::Verify { trace, scenario } => {
            let s = load(&scenario)?;
            let vs = harness::verify(&read(&trace)?, &s).map_err(|e| e.to_string())?;
            print!("{}", harness::verdicts(&vs));
            Ok(vs.iter().all(|v| v.passed()))
        }
        Command::Demo { which, seed } => {
            let src = match which {
                Demo::Tl => DEMO_TL,
                Demo::Wl => DEMO_WL,
            };
            let s = Scenario::from_toml(src).map_err(|e| e.to_string())?;
            let o = harness::run(&s, &RunOptions { seed, ticks: None }).map_err(|e| e.to_string())?;
            print_feeds(&o);
            println!();
            print!("{}", harness::report(&o));
            Ok(o.passed())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(passed) => exit(passed),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
