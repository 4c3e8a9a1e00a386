//! The simulation driver.
//!
//! Each tick: apply the scripted events that are due (retrying those whose
//! precondition does not hold yet), deliver the datagrams that are due, then
//! let every protocol agent, in agent-id order, either run its periodic
//! Tick (every `tick_interval` ticks) or flush pending dissemination.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{ReceiveOutcome, RejectReason, Transition};
use crate::blocklace::{BlockId, NetAddress};
use crate::crypto::AgentId;
use crate::simnet::trace::TraceParseError;
use crate::simnet::{trace, NetError, Simnet, TraceEvent};
use crate::tl::TlError;
use crate::wl::{self, GroupId, WlError};

use super::adversary;
use super::node::Node;
use super::oracle::{self, tl_precondition, Verdict};
use super::scenario::{Action, Event, ForgeMode, OracleKind, Plan, Role, Scenario, ScenarioError};

/// First address handed out on rebind.
pub const REBIND_BASE: u32 = 10_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Trace(#[from] TraceParseError),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub ticks: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Quiescence,
    /// TL: every liveness target reached and the script is done.
    Liveness,
    Budget,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Quiescence => "quiescence",
            StopReason::Liveness => "liveness",
            StopReason::Budget => "budget",
        }
    }
}

pub struct Outcome {
    pub plan: Plan,
    pub trace: Vec<TraceEvent>,
    /// One per rostered agent, indexed like the roster.
    pub nodes: Vec<Node>,
    pub stop: StopReason,
    pub last_tick: u64,
    pub verdicts: Vec<Verdict>,
}

impl Outcome {
    pub fn trace_text(&self) -> String {
        trace::render(&self.trace)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn verdict(&self, kind: OracleKind) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.kind == kind)
    }
}

pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<Outcome, HarnessError> {
    let mut scenario = scenario.clone();
    if let Some(s) = opts.seed {
        scenario.seed = s;
    }
    if let Some(t) = opts.ticks {
        scenario.ticks = t;
    }
    let plan = scenario.plan()?;
    let mut driver = Driver::new(plan)?;
    let (stop, last_tick) = driver.run();
    let trace = driver.net.into_trace();
    let verdicts = oracle::evaluate(&driver.plan, &trace);
    Ok(Outcome { plan: driver.plan, trace, nodes: driver.nodes, stop, last_tick, verdicts })
}

/// Re-evaluates the scenario's oracles over a saved trace.
pub fn verify(trace_text: &str, scenario: &Scenario) -> Result<Vec<Verdict>, HarnessError> {
    let plan = scenario.plan()?;
    let events = trace::parse(trace_text)?;
    Ok(oracle::evaluate(&plan, &events))
}

enum Applied {
    Done,
    Retry,
    Fail(String),
}

fn tl_err(e: TlError) -> Applied {
    match e {
        TlError::UnknownReferent(_) => Applied::Retry,
        other => Applied::Fail(other.to_string()),
    }
}

fn wl_err(e: WlError) -> Applied {
    match e {
        WlError::UnknownGroup(_) | WlError::NoInvite(_) | WlError::NotMember(_) | WlError::UnknownReferent(_) => {
            Applied::Retry
        }
        other => Applied::Fail(other.to_string()),
    }
}

fn reason(r: RejectReason) -> &'static str {
    match r {
        RejectReason::Malformed => "malformed",
        RejectReason::Forged => "forged",
        RejectReason::GroupStructure => "group_structure",
    }
}

/// No-whitespace rendering of an error message for the trace.
fn token(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("_")
}

struct Driver {
    plan: Plan,
    net: Simnet,
    nodes: Vec<Node>,
    order: Vec<usize>,
    labels: BTreeMap<String, BlockId>,
    groups: BTreeMap<String, GroupId>,
    cursor: usize,
    deferred: Vec<Event>,
    // tick by which every datagram sent by the script so far has landed
    settled_at: u64,
    next_address: u32,
    rng: ChaCha8Rng,
    check_partitions: bool,
    reported: HashSet<(usize, BlockId)>,
    liveness_targets: Vec<(usize, usize)>,
    utterances: Vec<BTreeSet<BlockId>>,
    now: u64,
}

impl Driver {
    fn new(plan: Plan) -> Result<Self, HarnessError> {
        let mut net = Simnet::new(plan.net_config())?;
        let n = plan.scenario.agents.len();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            net.bind(plan.id(i), plan.addresses[i], 0)?;
            let mut node = Node::new(plan.scenario.protocol, plan.keys[i].clone(), plan.addresses[i]);
            if let Node::Wl(a) = &mut node {
                a.set_encryption(plan.scenario.encryption);
            }
            for j in (0..n).filter(|j| *j != i) {
                node.introduce(plan.id(j), plan.addresses[j]);
            }
            nodes.push(node);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|i| plan.id(*i));
        let check_partitions = plan.scenario.oracles.iter().any(|o| o.kind == OracleKind::PartitionIntegrity);
        let liveness_targets = plan
            .scenario
            .oracles
            .iter()
            .filter(|o| o.kind == OracleKind::TlLiveness)
            .filter_map(|o| {
                let a = plan.index_of(o.author.as_deref()?)?;
                let f = plan.index_of(o.follower.as_deref()?)?;
                tl_precondition(&plan, a, f).then_some((a, f))
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(plan.scenario.seed ^ 0x5eed_f0e5);
        Ok(Driver {
            net,
            nodes,
            order,
            labels: BTreeMap::new(),
            groups: BTreeMap::new(),
            cursor: 0,
            deferred: Vec::new(),
            settled_at: 0,
            next_address: REBIND_BASE,
            rng,
            check_partitions,
            reported: HashSet::new(),
            liveness_targets,
            utterances: vec![BTreeSet::new(); n],
            now: 0,
            plan,
        })
    }

    fn role(&self, i: usize) -> Role {
        self.plan.role(i)
    }

    fn script_done(&self) -> bool {
        self.cursor == self.plan.events.len() && self.deferred.is_empty()
    }

    fn run(&mut self) -> (StopReason, u64) {
        let budget = self.plan.scenario.ticks;
        let interval = self.plan.scenario.net.tick_interval;
        let mut quiet_rounds = 0;
        let mut stop = StopReason::Budget;
        let mut now = 0;
        while now <= budget {
            self.now = now;
            self.net.record(TraceEvent::Tick { tick: now });
            self.run_script();
            let deliveries = self.net.step(now);
            for (agent, dg) in deliveries {
                let Some(i) = self.plan.index_by_id(&agent) else { continue };
                for e in 0..self.nodes.len() {
                    if e != i && self.role(e) == Role::Eavesdropper {
                        let mut t = self.nodes[e].receive(&dg.payload, Some(dg.src));
                        t.sends.clear();
                        self.absorb(e, t, None, None);
                    }
                }
                match self.role(i) {
                    Role::Correct | Role::Equivocator => {
                        let t = self.nodes[i].receive(&dg.payload, Some(dg.src));
                        self.absorb(i, t, None, Some(dg.id));
                    }
                    Role::Eavesdropper => {
                        let mut t = self.nodes[i].receive(&dg.payload, Some(dg.src));
                        t.sends.clear();
                        self.absorb(i, t, None, Some(dg.id));
                    }
                    Role::Forger | Role::Silent => {}
                }
            }
            let tick_round = now % interval == 0;
            let mut sent = 0;
            for k in 0..self.order.len() {
                let i = self.order[k];
                if !self.role(i).runs_protocol() {
                    continue;
                }
                let t = if tick_round { self.nodes[i].tick() } else { self.nodes[i].flush() };
                sent += t.sends.len();
                self.absorb(i, t, None, None);
            }
            if tick_round {
                if sent == 0 && self.net.in_flight() == 0 && self.script_done() {
                    quiet_rounds += 1;
                } else {
                    quiet_rounds = 0;
                }
            }
            if quiet_rounds >= 2 {
                stop = StopReason::Quiescence;
                break;
            }
            if self.liveness_reached() {
                stop = StopReason::Liveness;
                break;
            }
            now += 1;
        }
        let last = now.min(budget);
        self.now = last;
        for e in self.deferred.clone() {
            self.net.record(TraceEvent::Error { tick: last, event: e.source, reason: "never_applicable".into() });
        }
        for i in 0..self.nodes.len() {
            if self.role(i).runs_protocol() || self.role(i) == Role::Eavesdropper {
                let blocks = self.nodes[i].blocklace().len();
                self.net.record(TraceEvent::Final { tick: last, agent: self.plan.id(i), blocks });
            }
        }
        self.net.record(TraceEvent::End { tick: last, reason: stop.as_str().into() });
        (stop, last)
    }

    fn liveness_reached(&self) -> bool {
        if self.liveness_targets.is_empty() || !self.script_done() || self.now < self.settled_at {
            return false;
        }
        self.liveness_targets.iter().all(|(a, f)| {
            let lace = self.nodes[*f].blocklace();
            self.utterances[*a].iter().all(|id| lace.contains(id))
        })
    }

    fn run_script(&mut self) {
        let waiting = std::mem::take(&mut self.deferred);
        let mut due = waiting;
        while self.cursor < self.plan.events.len() && self.plan.events[self.cursor].tick <= self.now {
            due.push(self.plan.events[self.cursor].clone());
            self.cursor += 1;
        }
        for e in due {
            match self.apply(&e) {
                Applied::Done => self.settled_at = self.now + self.plan.scenario.net.delay_max,
                Applied::Retry => self.deferred.push(e),
                Applied::Fail(why) => {
                    self.net.record(TraceEvent::Error { tick: self.now, event: e.source, reason: token(&why) })
                }
            }
        }
    }

    fn group(&self, name: &str) -> Option<GroupId> {
        self.groups.get(name).copied()
    }

    fn apply(&mut self, e: &Event) -> Applied {
        let i = e.agent;
        let protocol_action = !matches!(e.action, Action::Forge { .. });
        if protocol_action && !self.role(i).runs_protocol() {
            return Applied::Fail(format!("{} does not run the protocol", self.plan.name(i)));
        }
        let result: Result<Transition, Applied> = match &e.action {
            Action::Follow { target } => {
                let q = self.plan.id(*target);
                match &mut self.nodes[i] {
                    Node::Tl(a) => a.follow(q).map_err(tl_err),
                    Node::Wl(_) => Err(Applied::Fail("follow is a tl action".into())),
                }
            }
            Action::Say { group, text } => match (group, &mut self.nodes[i]) {
                (None, Node::Tl(a)) => a.say(text.as_bytes()).map_err(tl_err),
                (Some(g), Node::Wl(_)) => {
                    let Some(gid) = self.group(g) else { return Applied::Retry };
                    let Node::Wl(a) = &mut self.nodes[i] else { unreachable!() };
                    a.say_group(gid, text.as_bytes()).map_err(wl_err)
                }
                _ => Err(Applied::Fail("say does not match protocol".into())),
            },
            Action::Respond { group, re, text } => {
                let Some(re) = self.labels.get(re).copied() else { return Applied::Retry };
                match group {
                    None => match &mut self.nodes[i] {
                        Node::Tl(a) => a.respond(text.as_bytes(), re).map_err(tl_err),
                        Node::Wl(_) => Err(Applied::Fail("respond needs a group".into())),
                    },
                    Some(g) => {
                        let Some(gid) = self.group(g) else { return Applied::Retry };
                        match &mut self.nodes[i] {
                            Node::Wl(a) => a.respond_group(gid, re, text.as_bytes()).map_err(wl_err),
                            Node::Tl(_) => Err(Applied::Fail("tl has no groups".into())),
                        }
                    }
                }
            }
            Action::CreateGroup { group } => match &mut self.nodes[i] {
                Node::Wl(a) => a.create_group(group.as_bytes()).map_err(wl_err).inspect(|t| {
                    self.groups.insert(group.clone(), t.created[0].id());
                }),
                Node::Tl(_) => Err(Applied::Fail("create_group is a wl action".into())),
            },
            Action::Invite { target, group } => {
                let Some(gid) = self.group(group) else { return Applied::Retry };
                let q = self.plan.id(*target);
                match &mut self.nodes[i] {
                    Node::Wl(a) => a.invite(q, gid).map_err(wl_err),
                    Node::Tl(_) => Err(Applied::Fail("invite is a wl action".into())),
                }
            }
            Action::Accept { group } => {
                let Some(gid) = self.group(group) else { return Applied::Retry };
                match &mut self.nodes[i] {
                    Node::Wl(a) => a.accept(gid).map_err(wl_err),
                    Node::Tl(_) => Err(Applied::Fail("accept is a wl action".into())),
                }
            }
            Action::Rebind => {
                let to = NetAddress(self.next_address);
                self.next_address += 1;
                match self.net.rebind(self.plan.id(i), to, self.now) {
                    Ok(_) => Ok(self.nodes[i].change_address(to)),
                    Err(err) => Err(Applied::Fail(err.to_string())),
                }
            }
            Action::Equivocate { group, forks } => return self.equivocate(e, group.as_deref(), forks),
            Action::Forge { victim, count, mode, to } => return self.forge(i, *victim, *count, *mode, to),
        };
        match result {
            Ok(t) => {
                if let (Some(l), Some(b)) = (&e.label, t.created.first()) {
                    self.labels.insert(l.clone(), b.id());
                }
                self.absorb(i, t, e.label.as_deref(), None);
                Applied::Done
            }
            Err(a) => a,
        }
    }

    fn equivocate(&mut self, e: &Event, group: Option<&str>, forks: &[(String, Vec<usize>)]) -> Applied {
        let i = e.agent;
        let forks: Vec<(&[u8], BTreeSet<AgentId>)> =
            forks.iter().map(|(t, to)| (t.as_bytes(), to.iter().map(|r| self.plan.id(*r)).collect())).collect();
        let t = match (group, &mut self.nodes[i]) {
            (None, Node::Tl(a)) => a.fork(&forks),
            (Some(g), Node::Wl(_)) => {
                let Some(gid) = self.group(g) else { return Applied::Retry };
                let Node::Wl(a) = &mut self.nodes[i] else { unreachable!() };
                match a.fork(gid, &forks) {
                    Ok(t) => t,
                    Err(err) => return wl_err(err),
                }
            }
            _ => return Applied::Fail("equivocate does not match protocol".into()),
        };
        for (k, b) in t.created.into_iter().enumerate() {
            let label = e.label.as_ref().map(|l| format!("{l}.{}", k + 1));
            if let Some(l) = &label {
                self.labels.insert(l.clone(), b.id());
            }
            self.absorb(i, Transition { created: vec![b], ..Default::default() }, label.as_deref(), None);
        }
        self.absorb(i, Transition { sends: t.sends, ..Default::default() }, None, None);
        Applied::Done
    }

    fn forge(&mut self, i: usize, victim: usize, count: usize, mode: ForgeMode, to: &[usize]) -> Applied {
        let victim_id = self.plan.id(victim);
        let blocks = match mode {
            ForgeMode::BadSignature => adversary::bad_signature_blocks(victim_id, count, &mut self.rng),
            ForgeMode::Tampered => {
                let seen = adversary::captured(self.net.trace(), &victim_id);
                if seen.is_empty() {
                    return Applied::Retry;
                }
                adversary::tampered_blocks(&seen, count)
            }
        };
        let src = self.nodes[i].address();
        let me = self.plan.id(i);
        for (k, b) in blocks.iter().enumerate() {
            let Some(dst) = self.net.table().address(&self.plan.id(to[k % to.len()])) else { continue };
            let dg = self.net.submit(src, dst, b.encode(), self.now);
            self.net.record(TraceEvent::Inject { tick: self.now, agent: me, dg, mode: mode.as_str().into() });
        }
        Applied::Done
    }

    /// Logs what agent `i` made, stored and rejected, then puts its sends on
    /// the wire.
    fn absorb(&mut self, i: usize, t: Transition, label: Option<&str>, dg: Option<u64>) {
        let now = self.now;
        let me = self.plan.id(i);
        let mut label = label.map(str::to_owned);
        for b in t.created.iter().filter(|b| !b.payload().is_ack()) {
            let payload = self.net.record_payload(now, &b.encode());
            self.net.record(TraceEvent::Create { tick: now, agent: me, block: b.id().into(), payload, label: label.take() });
            if b.payload().is_utterance() {
                self.utterances[i].insert(b.id());
            }
        }
        match t.outcome {
            Some(ReceiveOutcome::Inserted(ids)) => {
                for id in ids {
                    let bytes = self.nodes[i].blocklace().get(&id).expect("just inserted").encode();
                    let payload = self.net.record_payload(now, &bytes);
                    self.net.record(TraceEvent::Insert { tick: now, agent: me, block: id.into(), payload });
                }
                if self.check_partitions {
                    self.check_partition(i);
                }
            }
            Some(ReceiveOutcome::Rejected(r)) => {
                if let Some(dg) = dg {
                    self.net.record(TraceEvent::Reject { tick: now, agent: me, dg, reason: reason(r).into() });
                }
            }
            _ => {}
        }
        let src = self.nodes[i].address();
        for s in t.sends {
            self.net.submit(src, s.dst, s.block.encode(), now);
        }
    }

    fn check_partition(&mut self, i: usize) {
        let Node::Wl(a) = &self.nodes[i] else { return };
        let faults = wl::partition_violations(a.blocklace());
        let me = self.plan.id(i);
        for (id, fault) in faults {
            if self.reported.insert((i, id)) {
                let what = match fault {
                    wl::PartitionFault::Dangling => "dangling".to_string(),
                    wl::PartitionFault::GenesisCount(n) => format!("geneses_{n}"),
                };
                self.net.record(TraceEvent::Violation { tick: self.now, agent: me, block: id.into(), what });
            }
        }
    }
}
