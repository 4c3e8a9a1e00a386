//! Twitter-like protocol: follow, say, respond, and grassroots dissemination
//! to friends (agents that follow each other).
//!
//! [`TlAgent`] is a single-threaded state machine. Every command goes through
//! [`TlAgent::handle`], which returns the datagrams to send; agents share no
//! state and interact only through those datagrams.
//!
//! Dissemination rule, for every stored block `b` and every known agent `q`:
//! send `b` to `q` unless some `q`-block already observes it, when either
//! `b` is not an ack, `q` is a friend and `q` follows `b`'s creator, or `b` is
//! this agent's own pending `Follow(q)` offer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::agent::{
    BlockMaker, Contacts, Metrics, Outbound, ReceiveOutcome, RejectReason, Transition,
};
use crate::blocklace::{decode_block, verify_block, Block, BlockId, Blocklace, KnowledgeIndex, NetAddress, Payload};
use crate::crypto::{AgentId, Keypair};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TlCommand {
    Follow(AgentId),
    Say(Vec<u8>),
    Respond { text: Vec<u8>, re: BlockId },
    ChangeAddress(NetAddress),
    /// A datagram arrived; `from` is its source address when known.
    Receive { bytes: Vec<u8>, from: Option<NetAddress> },
    /// Periodic retry.
    Tick,
    /// Runs the dissemination pass if anything was inserted since the last one.
    Flush,
    /// Out-of-band address hint.
    Introduce { agent: AgentId, address: NetAddress },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlError {
    #[error("respond refers to unknown block {0}")]
    UnknownReferent(BlockId),
    #[error("block {0} is not an utterance")]
    NotAnUtterance(BlockId),
    #[error("payload {0} cannot be uttered")]
    NotUtterable(&'static str),
}

/// `q = q2`, or some `q`-block in `lace` has payload `Follow(q2)`.
pub fn follows(q: &AgentId, q2: &AgentId, lace: &Blocklace) -> bool {
    q == q2 || lace.blocks_by(q).any(|b| b.payload() == &Payload::Follow(*q2))
}

/// The stored blocks whose whole past is also stored, and the maximal
/// non-ack blocks among them.
///
/// A TL blocklace may have gaps, and acks are never relayed. Pointing only at
/// these tips means anything an observer sees below one of our blocks is
/// something we hold, and that others can fetch from us.
#[derive(Clone, Debug, Default)]
struct ClosedCore {
    members: HashSet<BlockId>,
    tips: BTreeSet<BlockId>,
    acks: HashMap<BlockId, Vec<BlockId>>,
    // missing pointer -> stored blocks waiting on it
    waiting: HashMap<BlockId, Vec<Block>>,
    unresolved: HashMap<BlockId, usize>,
}

impl ClosedCore {
    fn add(&mut self, b: &Block) {
        let missing: Vec<BlockId> = b.pointers().iter().filter(|p| !self.members.contains(p)).copied().collect();
        if missing.is_empty() {
            self.close(b.clone());
            return;
        }
        self.unresolved.insert(b.id(), missing.len());
        for p in missing {
            self.waiting.entry(p).or_default().push(b.clone());
        }
    }

    fn close(&mut self, b: Block) {
        let mut ready = vec![b];
        while let Some(b) = ready.pop() {
            let id = b.id();
            if b.payload().is_ack() {
                self.acks.insert(id, b.pointers().iter().copied().collect());
            } else {
                let mut below: Vec<BlockId> = b.pointers().iter().copied().collect();
                while let Some(p) = below.pop() {
                    match self.acks.get(&p) {
                        Some(ps) => below.extend(ps),
                        None => {
                            self.tips.remove(&p);
                        }
                    }
                }
                self.tips.insert(id);
            }
            self.members.insert(id);
            for w in self.waiting.remove(&id).unwrap_or_default() {
                let n = self.unresolved.get_mut(&w.id()).expect("waiting");
                *n -= 1;
                if *n == 0 {
                    self.unresolved.remove(&w.id());
                    ready.push(w);
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TlAgent {
    maker: BlockMaker,
    address: NetAddress,
    lace: Blocklace,
    knowledge: KnowledgeIndex,
    contacts: Contacts,
    // creator -> agents that creator follows, from stored Follow blocks
    following: BTreeMap<AgentId, BTreeSet<AgentId>>,
    known: BTreeSet<AgentId>,
    core: ClosedCore,
    last_own: Option<BlockId>,
    dirty: bool,
    /// Own blocks disseminated only to the listed agents.
    restricted: BTreeMap<BlockId, BTreeSet<AgentId>>,
    metrics: Metrics,
}

impl TlAgent {
    pub fn new(kp: Keypair, address: NetAddress) -> Self {
        TlAgent {
            maker: BlockMaker::new(kp),
            address,
            lace: Blocklace::new(),
            knowledge: KnowledgeIndex::new(),
            contacts: Contacts::default(),
            following: BTreeMap::new(),
            known: BTreeSet::new(),
            core: ClosedCore::default(),
            last_own: None,
            dirty: false,
            restricted: BTreeMap::new(),
            metrics: Metrics::default(),
        }
    }

    pub fn id(&self) -> AgentId {
        self.maker.id()
    }

    pub fn address(&self) -> NetAddress {
        self.address
    }

    pub fn blocklace(&self) -> &Blocklace {
        &self.lace
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn handle(&mut self, cmd: TlCommand) -> Result<Transition, TlError> {
        match cmd {
            TlCommand::Follow(q) => self.utter(Payload::Follow(q)),
            TlCommand::Say(text) => self.utter(Payload::Say(text)),
            TlCommand::Respond { text, re } => self.utter(Payload::Respond { text, re }),
            TlCommand::ChangeAddress(a) => Ok(self.on_address_change(a)),
            TlCommand::Receive { bytes, from } => Ok(self.on_receive(&bytes, from)),
            TlCommand::Tick => Ok(Transition { sends: self.tick(), ..Default::default() }),
            TlCommand::Flush => {
                let sends = if self.dirty { self.disseminate() } else { Vec::new() };
                Ok(Transition { sends, ..Default::default() })
            }
            TlCommand::Introduce { agent, address } => {
                self.contacts.insert(agent, address);
                Ok(Transition::default())
            }
        }
    }

    fn store(&mut self, block: Block) -> bool {
        match self.lace.insert(block.clone()) {
            Ok(true) => {}
            Ok(false) => return false,
            Err(_) => {
                self.metrics.dropped_forged += 1;
                return false;
            }
        }
        self.knowledge.register(&self.lace, &block);
        self.core.add(&block);
        self.known.insert(block.creator());
        if let Payload::Follow(target) = block.payload() {
            self.following.entry(block.creator()).or_default().insert(*target);
            self.known.insert(*target);
        }
        self.metrics.inserted += 1;
        self.dirty = true;
        true
    }

    /// Pointers for a new own block: the non-ack tips of the closed core, plus a
    /// self-pointer to the previous own block so own blocks form a chain.
    fn own_pointers(&self) -> BTreeSet<BlockId> {
        let mut pointers = self.core.tips.clone();
        pointers.extend(self.last_own);
        pointers
    }

    fn create(&mut self, payload: Payload) -> Block {
        let block = self.maker.make(self.address, payload, self.own_pointers());
        self.last_own = Some(block.id());
        self.store(block.clone());
        block
    }

    /// Creates a `Follow`, `Say` or `Respond` block on top of the current tips.
    pub fn utter(&mut self, payload: Payload) -> Result<Transition, TlError> {
        match &payload {
            Payload::Follow(_) | Payload::Say(_) => {}
            Payload::Respond { re, .. } => {
                let target = self.lace.get(re).ok_or(TlError::UnknownReferent(*re))?;
                if !target.payload().is_utterance() {
                    return Err(TlError::NotAnUtterance(*re));
                }
            }
            other => return Err(TlError::NotUtterable(other.kind())),
        }
        let block = self.create(payload);
        Ok(Transition { sends: self.disseminate(), created: vec![block], outcome: None })
    }

    /// `Say` blocks with identical pointers and different texts, each
    /// disseminated only to its own recipients. Building block for an
    /// equivocating agent.
    pub fn fork(&mut self, forks: &[(&[u8], BTreeSet<AgentId>)]) -> Transition {
        let pointers = self.own_pointers();
        let mut created = Vec::new();
        for (text, to) in forks {
            let b = self.maker.make(self.address, Payload::Say(text.to_vec()), pointers.clone());
            self.restricted.insert(b.id(), to.clone());
            self.store(b.clone());
            created.push(b);
        }
        Transition { sends: self.disseminate(), created, outcome: None }
    }

    pub fn follow(&mut self, q: AgentId) -> Result<Transition, TlError> {
        self.utter(Payload::Follow(q))
    }

    pub fn say(&mut self, text: impl Into<Vec<u8>>) -> Result<Transition, TlError> {
        self.utter(Payload::Say(text.into()))
    }

    pub fn respond(&mut self, text: impl Into<Vec<u8>>, re: BlockId) -> Result<Transition, TlError> {
        self.utter(Payload::Respond { text: text.into(), re })
    }

    /// Moves to `a` and announces it with an empty block.
    pub fn on_address_change(&mut self, a: NetAddress) -> Transition {
        self.address = a;
        let block = self.create(Payload::Empty);
        Transition { sends: self.disseminate(), created: vec![block], outcome: None }
    }

    /// Verifies, stores and acks a received block. Dissemination for the new
    /// block is deferred to the next [`TlCommand::Flush`] or [`TlCommand::Tick`].
    pub fn on_receive(&mut self, bytes: &[u8], from: Option<NetAddress>) -> Transition {
        let mut t = Transition::default();
        let block = match decode_block(bytes) {
            Ok(b) => b,
            Err(_) => {
                self.metrics.dropped_malformed += 1;
                t.outcome = Some(ReceiveOutcome::Rejected(RejectReason::Malformed));
                return t;
            }
        };
        let duplicate = self.lace.get(&block.id()) == Some(&block);
        if duplicate {
            self.metrics.duplicates += 1;
            t.outcome = Some(ReceiveOutcome::Duplicate(block.id()));
        } else {
            if !verify_block(&block) {
                self.metrics.dropped_forged += 1;
                t.outcome = Some(ReceiveOutcome::Rejected(RejectReason::Forged));
                return t;
            }
            if self.store(block.clone()) {
                t.outcome = Some(ReceiveOutcome::Inserted(vec![block.id()]));
            } else {
                t.outcome = Some(ReceiveOutcome::Duplicate(block.id()));
            }
        }
        if !block.payload().is_ack() {
            let ack = self.maker.ack(self.address, self.ack_pointers(&block));
            t.created.push(ack.clone());
            let to_creator = self.address_of(&block.creator());
            if let Some(dst) = to_creator {
                t.send(dst, ack.clone());
                self.metrics.acks_sent += 1;
            }
            // a friend relaying someone else's block learns we now have it
            if let Some(src) = from.filter(|s| Some(*s) != to_creator) {
                if self.friend_at(src) {
                    t.send(src, ack);
                    self.metrics.acks_sent += 1;
                }
            }
        }
        t
    }

    fn friend_at(&self, addr: NetAddress) -> bool {
        self.known
            .iter()
            .any(|q| *q != self.id() && self.friends(q) && self.address_of(q) == Some(addr))
    }

    /// Tips for a friend, `{b}` for a friendship offer to us, nothing otherwise.
    pub fn ack_pointers(&self, b: &Block) -> BTreeSet<BlockId> {
        if self.friends(&b.creator()) {
            self.core.tips.clone()
        } else if b.payload() == &Payload::Follow(self.id()) {
            [b.id()].into()
        } else {
            BTreeSet::new()
        }
    }

    pub fn follows(&self, q: &AgentId, q2: &AgentId) -> bool {
        q == q2 || self.following.get(q).is_some_and(|s| s.contains(q2))
    }

    pub fn friends(&self, q: &AgentId) -> bool {
        self.follows(&self.id(), q) && self.follows(q, &self.id())
    }

    /// Address of `q` from the blocklace, falling back to the contact book.
    pub fn address_of(&self, q: &AgentId) -> Option<NetAddress> {
        self.lace.ip_address(q).or_else(|| self.contacts.get(q))
    }

    /// Every block some known agent needs and has not yet acknowledged,
    /// parents first per destination.
    pub fn disseminate(&mut self) -> Vec<Outbound> {
        self.dirty = false;
        let me = self.id();
        let mut out = Vec::new();
        for q in self.known.iter().filter(|q| **q != me) {
            let Some(dst) = self.address_of(q) else { continue };
            let friend = self.friends(q);
            let needed: Vec<BlockId> = self
                .lace
                .iter()
                .filter(|b| !self.knowledge.observes(q, &b.id()))
                .filter(|b| self.restricted.get(&b.id()).is_none_or(|to| to.contains(q)))
                .filter(|b| {
                    let relay = !b.payload().is_ack() && friend && self.follows(q, &b.creator());
                    let offer = b.creator() == me && b.payload() == &Payload::Follow(*q);
                    relay || offer
                })
                .map(Block::id)
                .collect();
            for b in self.lace.topological(needed) {
                out.push(Outbound { dst, block: b.clone() });
            }
        }
        out
    }

    pub fn tick(&mut self) -> Vec<Outbound> {
        self.disseminate()
    }

    /// Utterances by `author`, in chain order. Empty unless this agent
    /// follows `author`.
    pub fn feed(&self, author: &AgentId) -> Vec<&Block> {
        if !self.follows(&self.id(), author) {
            return Vec::new();
        }
        let mut entries: Vec<(usize, &Block)> = self
            .lace
            .blocks_by(author)
            .filter(|b| b.payload().is_utterance())
            .map(|b| (self.lace.self_closure(b).len(), b))
            .collect();
        entries.sort_by_key(|(depth, b)| (*depth, b.id()));
        entries.into_iter().map(|(_, b)| b).collect()
    }
}
