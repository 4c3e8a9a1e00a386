//! Oracles: verdicts computed from a scenario and its trace alone.
//!
//! Agent states are rebuilt from the trace: an agent holds the blocks it
//! created (`CREATE`) and the blocks it stored (`INSERT`), whose bytes come
//! from `PAYLOAD` records.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::blocklace::{decode_block, verify_block, Block, BlockId, Blocklace, NetAddress, Payload};
use crate::crypto::{AgentId, Digest};
use crate::simnet::{BlockKey, TraceEvent};
use crate::wl;

use super::scenario::{Action, OracleKind, OracleSpec, Plan, Protocol, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// The scenario does not meet the oracle's precondition.
    PreconditionUnsatisfied,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::PreconditionUnsatisfied => "PRECONDITION-UNSATISFIED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub kind: OracleKind,
    /// Oracle name with its parameters.
    pub name: String,
    pub status: Status,
    pub detail: String,
    /// Offending blocks, agents or missing deliveries. Nonempty on failure.
    pub witness: Vec<String>,
}

impl Verdict {
    /// Pass, or an explicit precondition-unsatisfied verdict.
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<5} {}: {}", self.status.as_str(), self.name, self.detail)?;
        for w in self.witness.iter().take(10) {
            write!(f, "\n      {w}")?;
        }
        if self.witness.len() > 10 {
            write!(f, "\n      ... {} more", self.witness.len() - 10)?;
        }
        Ok(())
    }
}

/// What a trace says, indexed for the oracles.
pub struct TraceIndex {
    payloads: HashMap<Digest, Vec<u8>>,
    decoded: HashMap<Digest, Option<Block>>,
    dg_payload: HashMap<u64, Digest>,
    /// Per agent, `(block, payload)` in the order it came to hold them.
    held: BTreeMap<AgentId, Vec<(BlockKey, Digest)>>,
    creates: Vec<(AgentId, BlockKey, Digest, Option<String>)>,
    submits: Vec<(u64, NetAddress, NetAddress, Digest)>,
    delivers: Vec<(u64, u64, NetAddress, AgentId)>,
    injects: Vec<u64>,
    rejects: Vec<(AgentId, u64)>,
    violations: Vec<(AgentId, BlockKey, String)>,
    binds: Vec<(u64, AgentId, NetAddress)>,
    rebinds: Vec<(u64, AgentId, NetAddress)>,
}

impl TraceIndex {
    pub fn new(trace: &[TraceEvent]) -> Self {
        let mut ix = TraceIndex {
            payloads: HashMap::new(),
            decoded: HashMap::new(),
            dg_payload: HashMap::new(),
            held: BTreeMap::new(),
            creates: Vec::new(),
            submits: Vec::new(),
            delivers: Vec::new(),
            injects: Vec::new(),
            rejects: Vec::new(),
            violations: Vec::new(),
            binds: Vec::new(),
            rebinds: Vec::new(),
        };
        for e in trace {
            match e {
                TraceEvent::Payload { digest, bytes, .. } => {
                    ix.payloads.insert(*digest, bytes.clone());
                }
                TraceEvent::Submit { tick, dg, src, dst, payload } => {
                    ix.dg_payload.insert(*dg, *payload);
                    ix.submits.push((*tick, *src, *dst, *payload));
                }
                TraceEvent::Deliver { tick, dg, dst, agent } => ix.delivers.push((*tick, *dg, *dst, *agent)),
                TraceEvent::Create { agent, block, payload, label, .. } => {
                    ix.held.entry(*agent).or_default().push((*block, *payload));
                    ix.creates.push((*agent, *block, *payload, label.clone()));
                }
                TraceEvent::Insert { agent, block, payload, .. } => {
                    ix.held.entry(*agent).or_default().push((*block, *payload));
                }
                TraceEvent::Inject { dg, .. } => ix.injects.push(*dg),
                TraceEvent::Reject { agent, dg, .. } => ix.rejects.push((*agent, *dg)),
                TraceEvent::Violation { agent, block, what, .. } => ix.violations.push((*agent, *block, what.clone())),
                TraceEvent::Bind { tick, agent, address } => ix.binds.push((*tick, *agent, *address)),
                TraceEvent::Rebind { tick, agent, new, .. } => {
                    ix.binds.push((*tick, *agent, *new));
                    ix.rebinds.push((*tick, *agent, *new));
                }
                _ => {}
            }
        }
        ix
    }

    pub fn block(&mut self, payload: &Digest) -> Option<Block> {
        if let Some(b) = self.decoded.get(payload) {
            return b.clone();
        }
        let b = self.payloads.get(payload).and_then(|bytes| decode_block(bytes).ok());
        self.decoded.insert(*payload, b.clone());
        b
    }

    /// Blocks agent `q` holds at the end of the trace.
    pub fn state(&mut self, q: &AgentId) -> Vec<Block> {
        let held = self.held.get(q).cloned().unwrap_or_default();
        held.iter().filter_map(|(_, p)| self.block(p)).collect()
    }

    pub fn lace(&mut self, q: &AgentId) -> Blocklace {
        Blocklace::from_blocks(self.state(q).iter())
    }

    /// Owner of `a` at tick `t`.
    fn owner_at(&self, a: NetAddress, t: u64) -> Option<AgentId> {
        let mut current: BTreeMap<AgentId, NetAddress> = BTreeMap::new();
        for (tick, agent, addr) in &self.binds {
            if *tick > t {
                break;
            }
            current.insert(*agent, *addr);
        }
        current.into_iter().find(|(_, addr)| *addr == a).map(|(q, _)| q)
    }
}

pub fn evaluate(plan: &Plan, trace: &[TraceEvent]) -> Vec<Verdict> {
    let mut ix = TraceIndex::new(trace);
    plan.scenario.oracles.iter().map(|o| evaluate_one(plan, &mut ix, o)).collect()
}

fn name_of(o: &OracleSpec) -> String {
    let mut params = Vec::new();
    for (k, v) in [
        ("author", &o.author),
        ("follower", &o.follower),
        ("group", &o.group),
        ("culprit", &o.culprit),
        ("agent", &o.agent),
    ] {
        if let Some(v) = v {
            params.push(format!("{k}={v}"));
        }
    }
    if let Some(n) = o.expect_pairs {
        params.push(format!("expect_pairs={n}"));
    }
    format!("{}({})", o.kind.as_str(), params.join(", "))
}

fn evaluate_one(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Verdict {
    let (status, detail, mut witness) = match o.kind {
        OracleKind::TlLiveness => tl_liveness(plan, ix, o),
        OracleKind::WlLiveness => wl_liveness(plan, ix, o),
        OracleKind::Attribution => attribution(plan, ix),
        OracleKind::EquivocationVisibility => equivocation(plan, ix, o),
        OracleKind::Privacy => privacy(plan, ix, o),
        OracleKind::PartitionIntegrity => partition_integrity(plan, ix),
        OracleKind::Churn => churn(plan, ix, o),
    };
    if status == Status::Fail && witness.is_empty() {
        witness.push(detail.clone());
    }
    Verdict { kind: o.kind, name: name_of(o), status, detail, witness }
}

type Outcome = (Status, String, Vec<String>);

fn unsatisfied(why: impl Into<String>) -> Outcome {
    (Status::PreconditionUnsatisfied, why.into(), Vec::new())
}

fn verdict(ok: bool, detail: String, witness: Vec<String>) -> Outcome {
    (if ok { Status::Pass } else { Status::Fail }, detail, witness)
}

fn correct(plan: &Plan, i: usize) -> bool {
    plan.role(i) == Role::Correct
}

/// Scripted follow edges.
fn follow_edges(plan: &Plan) -> BTreeSet<(usize, usize)> {
    plan.events
        .iter()
        .filter_map(|e| match e.action {
            Action::Follow { target } => Some((e.agent, target)),
            _ => None,
        })
        .collect()
}

/// A path of correct agents from `author` to `follower`, consecutive ones
/// friends (mutual follow), all following the author.
pub fn tl_precondition(plan: &Plan, author: usize, follower: usize) -> bool {
    if plan.scenario.protocol != Protocol::Tl || !correct(plan, author) || !correct(plan, follower) {
        return false;
    }
    let edges = follow_edges(plan);
    let follows = |x: usize, y: usize| x == y || edges.contains(&(x, y));
    let eligible = |x: usize| correct(plan, x) && follows(x, author);
    let mut seen = BTreeSet::from([author]);
    let mut stack = vec![author];
    while let Some(x) = stack.pop() {
        if x == follower {
            return true;
        }
        for y in 0..plan.scenario.agents.len() {
            if eligible(y) && follows(x, y) && follows(y, x) && seen.insert(y) {
                stack.push(y);
            }
        }
    }
    false
}

fn tl_liveness(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Outcome {
    let author = plan.index_of(o.author.as_deref().unwrap_or_default()).expect("validated");
    let follower = plan.index_of(o.follower.as_deref().unwrap_or_default()).expect("validated");
    if !tl_precondition(plan, author, follower) {
        return unsatisfied("no path of correct friends following the author");
    }
    let aid = plan.id(author);
    let creates: Vec<(BlockKey, Digest)> =
        ix.creates.iter().filter(|c| c.0 == aid).map(|c| (c.1, c.2)).collect();
    let utterances: Vec<BlockKey> = creates
        .into_iter()
        .filter(|(_, p)| ix.block(p).is_some_and(|b| b.payload().is_utterance()))
        .map(|(k, _)| k)
        .collect();
    let have: BTreeSet<BlockKey> =
        ix.held.get(&plan.id(follower)).map(|h| h.iter().map(|(k, _)| *k).collect()).unwrap_or_default();
    let missing: Vec<String> = utterances.iter().filter(|k| !have.contains(k)).map(|k| format!("missing {k}")).collect();
    let n = utterances.len();
    verdict(missing.is_empty(), format!("{}/{n} author utterances held by follower", n - missing.len()), missing)
}

/// The genesis of scripted group `name`.
fn genesis(plan: &Plan, ix: &mut TraceIndex, name: &str) -> Option<BlockKey> {
    let founder = plan.id(*plan.founders().get(name)?);
    let candidates: Vec<(BlockKey, Digest)> =
        ix.creates.iter().filter(|c| c.0 == founder).map(|c| (c.1, c.2)).collect();
    candidates.into_iter().find_map(|(k, p)| {
        let b = ix.block(&p)?;
        (wl::is_genesis(&b) && b.payload() == &Payload::Group(name.as_bytes().to_vec())).then_some(k)
    })
}

/// Correct agents meant to be in `group`: its founder and every scripted
/// acceptor.
fn expected_members(plan: &Plan, group: &str) -> BTreeSet<usize> {
    let mut out: BTreeSet<usize> = plan.founders().get(group).copied().into_iter().collect();
    out.extend(plan.events.iter().filter_map(|e| match &e.action {
        Action::Accept { group: g } if g == group => Some(e.agent),
        _ => None,
    }));
    out
}

struct GroupView {
    /// Per member agent index, its partition of the group.
    partitions: BTreeMap<usize, Blocklace>,
    not_joined: Vec<usize>,
}

fn group_view(plan: &Plan, ix: &mut TraceIndex, group: &str, roles: &[Role]) -> Option<GroupView> {
    let key = genesis(plan, ix, group)?;
    let mut view = GroupView { partitions: BTreeMap::new(), not_joined: Vec::new() };
    for i in expected_members(plan, group) {
        if !roles.contains(&plan.role(i)) {
            continue;
        }
        let lace = ix.lace(&plan.id(i));
        let Some(gid) = lace.ids().into_iter().find(|id| BlockKey::from(id) == key) else {
            view.not_joined.push(i);
            continue;
        };
        if !wl::member(&plan.id(i), &gid, &lace) {
            view.not_joined.push(i);
            continue;
        }
        let part = wl::group_partition(&lace, &gid);
        let blocks: Vec<&Block> = part.iter().filter_map(|id| lace.get(id)).collect();
        view.partitions.insert(i, Blocklace::from_blocks(blocks));
    }
    Some(view)
}

fn wl_liveness(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Outcome {
    let group = o.group.as_deref().expect("validated");
    let Some(view) = group_view(plan, ix, group, &[Role::Correct]) else {
        return verdict(false, format!("group {group} was never created"), Vec::new());
    };
    let mut witness: Vec<String> =
        view.not_joined.iter().map(|i| format!("{} never became a member", plan.name(*i))).collect();
    let sets: Vec<(usize, BTreeSet<BlockKey>)> =
        view.partitions.iter().map(|(i, l)| (*i, l.ids().iter().map(BlockKey::from).collect())).collect();
    let union: BTreeSet<BlockKey> = sets.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    for (i, s) in &sets {
        let missing = union.difference(s).count();
        if missing > 0 {
            witness.push(format!("{} lacks {missing} of {} group blocks", plan.name(*i), union.len()));
        }
    }
    let detail = format!("{} correct members, partitions of {} blocks", sets.len(), union.len());
    verdict(witness.is_empty(), detail, witness)
}

fn attribution(plan: &Plan, ix: &mut TraceIndex) -> Outcome {
    let injected: BTreeSet<Digest> = ix.injects.iter().filter_map(|dg| ix.dg_payload.get(dg).copied()).collect();
    let injected_dgs: BTreeSet<u64> = ix.injects.iter().copied().collect();
    let delivered = ix.delivers.iter().filter(|d| injected_dgs.contains(&d.1)).count();
    let rejected = ix.rejects.iter().filter(|r| injected_dgs.contains(&r.1)).count();
    let mut witness = Vec::new();
    let mut checked: HashMap<Digest, bool> = HashMap::new();
    let held: Vec<(AgentId, BlockKey, Digest)> = ix
        .held
        .iter()
        .filter(|(q, _)| plan.index_by_id(q).is_some_and(|i| plan.role(i).runs_protocol()))
        .flat_map(|(q, h)| h.iter().map(move |(k, p)| (*q, *k, *p)))
        .collect();
    for (q, key, p) in held {
        if injected.contains(&p) {
            witness.push(format!("{} holds injected block {key}", q.short()));
            continue;
        }
        let ok = match checked.get(&p) {
            Some(ok) => *ok,
            None => {
                let ok = ix.block(&p).is_some_and(|b| BlockKey::from(b.id()) == key && verify_block(&b));
                checked.insert(p, ok);
                ok
            }
        };
        if !ok {
            witness.push(format!("{} holds unverifiable block {key}", q.short()));
        }
    }
    let detail = format!(
        "{} injected, {delivered} delivered, {rejected} rejected, {} bad blocks held",
        ix.injects.len(),
        witness.len()
    );
    verdict(witness.is_empty(), detail, witness)
}

fn equivocation(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Outcome {
    let culprit = plan.index_of(o.culprit.as_deref().expect("validated")).expect("validated");
    let cid = plan.id(culprit);
    let mut observers: Vec<(usize, Blocklace)> = Vec::new();
    match &o.group {
        Some(g) => {
            let Some(view) = group_view(plan, ix, g, &[Role::Correct]) else {
                return verdict(false, format!("group {g} was never created"), Vec::new());
            };
            observers.extend(view.partitions);
        }
        None => {
            let edges = follow_edges(plan);
            for i in 0..plan.scenario.agents.len() {
                if correct(plan, i) && edges.contains(&(i, culprit)) {
                    observers.push((i, ix.lace(&plan.id(i))));
                }
            }
        }
    }
    if observers.is_empty() {
        return unsatisfied("no correct observers");
    }
    let reports: Vec<(usize, BTreeSet<(BlockKey, BlockKey)>)> = observers
        .iter()
        .map(|(i, lace)| {
            let content = |id: &BlockId| lace.get(id).is_some_and(|b| !b.payload().is_ack());
            let pairs = lace
                .detect_equivocations(&cid)
                .into_iter()
                .filter(|(a, b)| content(a) && content(b))
                .map(|(a, b)| (a.into(), b.into()))
                .collect();
            (*i, pairs)
        })
        .collect();
    let first = &reports[0].1;
    let mut witness = Vec::new();
    for (i, r) in &reports {
        if r != first {
            witness.push(format!("{} reports {} pairs, {} reports {}", plan.name(*i), r.len(), plan.name(reports[0].0), first.len()));
        }
        match o.expect_pairs {
            Some(n) if r.len() != n => witness.push(format!("{} reports {} pairs, expected {n}", plan.name(*i), r.len())),
            None if r.is_empty() => witness.push(format!("{} reports no fork", plan.name(*i))),
            _ => {}
        }
    }
    let detail = format!("{} correct observers, {} fork pairs each", reports.len(), first.len());
    verdict(witness.is_empty(), detail, witness)
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn privacy(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Outcome {
    let group = o.group.as_deref().expect("validated");
    let texts = plan.group_texts(group);
    let roles = [Role::Correct, Role::Equivocator];
    let members: BTreeSet<usize> = group_view(plan, ix, group, &roles)
        .map(|v| v.partitions.keys().copied().collect())
        .unwrap_or_default();
    let mut witness = Vec::new();
    let mut digests: Vec<&Digest> = ix.payloads.keys().collect();
    digests.sort();
    for d in digests {
        let bytes = &ix.payloads[d];
        for t in &texts {
            if contains(bytes, t.as_bytes()) {
                witness.push(format!("text {t:?} in datagram payload {}", d.to_hex()));
            }
        }
    }
    for i in (0..plan.scenario.agents.len()).filter(|i| !members.contains(i)) {
        for b in ix.state(&plan.id(i)) {
            let bytes = b.encode();
            for t in &texts {
                if contains(&bytes, t.as_bytes()) {
                    witness.push(format!("text {t:?} in state of non-member {}", plan.name(i)));
                }
            }
        }
    }
    let detail = format!("{} texts scanned over {} payloads", texts.len(), ix.payloads.len());
    verdict(witness.is_empty(), detail, witness)
}

fn partition_integrity(plan: &Plan, ix: &mut TraceIndex) -> Outcome {
    if plan.scenario.protocol != Protocol::Wl {
        return unsatisfied("partitions exist only in wl");
    }
    let mut witness: Vec<String> =
        ix.violations.iter().map(|(q, k, what)| format!("{} reported {what} at {k}", q.short())).collect();
    // replay each correct agent's insertions, checking every step
    let mut group_of: HashMap<BlockKey, BlockKey> = HashMap::new();
    let correct_ids: Vec<AgentId> =
        (0..plan.scenario.agents.len()).filter(|i| correct(plan, *i)).map(|i| plan.id(i)).collect();
    for q in &correct_ids {
        let held = ix.held.get(q).cloned().unwrap_or_default();
        let mut geneses: HashMap<BlockKey, BTreeSet<BlockKey>> = HashMap::new();
        for (key, p) in held {
            let Some(b) = ix.block(&p) else {
                witness.push(format!("{} holds undecodable {key}", q.short()));
                continue;
            };
            let mut gs = BTreeSet::new();
            if wl::is_genesis(&b) {
                gs.insert(key);
            }
            for ptr in b.pointers() {
                match geneses.get(&ptr.into()) {
                    Some(s) => gs.extend(s.iter().copied()),
                    None => witness.push(format!("{} stored {key} before its parent", q.short())),
                }
            }
            if gs.len() != 1 {
                witness.push(format!("{} stored {key} observing {} geneses", q.short(), gs.len()));
            } else {
                group_of.insert(key, *gs.first().expect("len 1"));
            }
            geneses.insert(key, gs);
        }
    }
    // who may receive what
    let mut members: HashMap<BlockKey, BTreeSet<AgentId>> = HashMap::new();
    let mut invitees: HashMap<BlockKey, BTreeSet<AgentId>> = HashMap::new();
    for q in &correct_ids {
        let lace = ix.lace(q);
        for g in lace.iter().filter(|b| wl::is_genesis(b)) {
            let key = BlockKey::from(g.id());
            let entry = members.entry(key).or_default();
            entry.insert(g.creator());
            for b in lace.iter() {
                if let Payload::Invite { target, .. } = b.payload() {
                    if b.creator() == g.creator() && group_of.get(&b.id().into()) == Some(&key) {
                        invitees.entry(key).or_default().insert(*target);
                    }
                }
                if b.payload() == &Payload::Accept && group_of.get(&b.id().into()) == Some(&key) && wl::member(&b.creator(), &g.id(), &lace) {
                    members.entry(key).or_default().insert(b.creator());
                }
            }
        }
    }
    let mut leaks = 0;
    let submits = ix.submits.clone();
    for (tick, src, dst, p) in submits {
        let Some(sender) = ix.owner_at(src, tick) else { continue };
        if !correct_ids.contains(&sender) {
            continue;
        }
        let Some(receiver) = ix.owner_at(dst, tick) else { continue };
        let Some(b) = ix.block(&p) else { continue };
        let key = BlockKey::from(b.id());
        let touched: BTreeSet<BlockKey> = if b.payload().is_ack() {
            b.pointers().iter().filter_map(|ptr| group_of.get(&ptr.into()).copied()).collect()
        } else {
            group_of.get(&key).copied().into_iter().collect()
        };
        let structural = wl::is_genesis(&b) || matches!(b.payload(), Payload::Invite { .. });
        for g in touched {
            let member = members.get(&g).is_some_and(|m| m.contains(&receiver));
            let invited = structural && invitees.get(&g).is_some_and(|m| m.contains(&receiver));
            if !member && !invited {
                leaks += 1;
                witness.push(format!("tick {tick}: {} sent {} of group {g} to non-member {}", sender.short(), b.payload().kind(), receiver.short()));
            }
        }
    }
    let detail = format!(
        "{} groups, {} recorded violations, {leaks} cross-group datagrams",
        members.len(),
        ix.violations.len()
    );
    verdict(witness.is_empty(), detail, witness)
}

fn churn(plan: &Plan, ix: &mut TraceIndex, o: &OracleSpec) -> Outcome {
    let i = plan.index_of(o.agent.as_deref().expect("validated")).expect("validated");
    let q = plan.id(i);
    let Some((t, _, addr)) = ix.rebinds.iter().rev().find(|r| r.1 == q).copied() else {
        return unsatisfied("agent never rebinds");
    };
    let delivers: Vec<(u64, u64)> = ix
        .delivers
        .iter()
        .filter(|d| d.0 > t && d.2 == addr && d.3 == q)
        .map(|d| (d.0, d.1))
        .collect();
    for (tick, dg) in delivers {
        let Some(p) = ix.dg_payload.get(&dg).copied() else { continue };
        if ix.block(&p).is_some_and(|b| b.creator() != q && !b.payload().is_ack()) {
            return verdict(true, format!("rebind at tick {t}, delivery to new address {} resumed at tick {tick}", addr.0), Vec::new());
        }
    }
    verdict(false, format!("no foreign block delivered to new address {} after rebind at tick {t}", addr.0), Vec::new())
}
