//! WhatsApp-like protocol: groups founded by one agent, joined by invitation,
//! each living in its own partition of the blocklace.
//!
//! Every stored block other than a genesis observes exactly one genesis. A
//! group's partition is the set of stored blocks observing its genesis, and
//! it is disseminated only to the group's members. Message text is encrypted
//! under a per-group key that the founder seals to each invitee.
//!
//! Received acks are kept in a side table rather than in the blocklace, so
//! they never break the one-genesis rule; they still count as the sender's
//! knowledge when deciding what to resend.

mod pending;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

pub use pending::{PendingBuffer, DEFAULT_PENDING_CAPACITY};

use crate::agent::{BlockMaker, Contacts, Metrics, Outbound, ReceiveOutcome, RejectReason, Transition};
use crate::blocklace::block::put_field;
use crate::blocklace::{decode_block, verify_block, Block, BlockId, Blocklace, KnowledgeIndex, NetAddress, Payload};
use crate::constants::{LEN_PREFIX, NONCE_LEN, SIGNATURE_LEN};
use crate::crypto::{self, AgentId, CryptoError, GroupKey, Keypair, Signature};

/// The id of a group's genesis block.
pub type GroupId = BlockId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WlCommand {
    CreateGroup(Vec<u8>),
    Invite { agent: AgentId, group: GroupId },
    Accept(GroupId),
    Say { group: GroupId, text: Vec<u8> },
    Respond { group: GroupId, re: BlockId, text: Vec<u8> },
    ChangeAddress(NetAddress),
    Receive { bytes: Vec<u8>, from: Option<NetAddress> },
    Tick,
    Flush,
    Introduce { agent: AgentId, address: NetAddress },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WlError {
    #[error("a group named {0:?} was already founded by this agent")]
    DuplicateName(String),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("only the founder of {0} can invite")]
    NotFounder(GroupId),
    #[error("no invitation from the founder of {0}")]
    NoInvite(GroupId),
    #[error("already a member of {0}")]
    AlreadyMember(GroupId),
    #[error("not a member of {0}")]
    NotMember(GroupId),
    #[error("respond refers to unknown block {0}")]
    UnknownReferent(BlockId),
    #[error("block {0} belongs to another group")]
    CrossGroup(BlockId),
    #[error("block {0} is not an utterance")]
    NotAnUtterance(BlockId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// True iff `q` founded `gid`, or `lace` holds an invitation of `q` by the
/// founder within the group and a `q`-block accepting it.
pub fn member(q: &AgentId, gid: &GroupId, lace: &Blocklace) -> bool {
    let Some(genesis) = lace.get(gid) else { return false };
    if !is_genesis(genesis) {
        return false;
    }
    if genesis.creator() == *q {
        return true;
    }
    lace.blocks_by(q).filter(|b| b.payload() == &Payload::Accept).any(|accept| {
        accept.pointers().iter().any(|inv| {
            lace.get(inv).is_some_and(|i| {
                i.creator() == genesis.creator()
                    && matches!(i.payload(), Payload::Invite { target, .. } if target == q)
                    && lace.observes(i, gid)
            })
        })
    })
}

pub fn is_genesis(b: &Block) -> bool {
    matches!(b.payload(), Payload::Group(_)) && b.pointers().is_empty()
}

/// Blocks of `lace` observing the genesis that the block `id` observes.
/// Empty when `id` is unknown or does not observe exactly one genesis.
pub fn group_partition(lace: &Blocklace, id: &BlockId) -> BTreeSet<BlockId> {
    let Some(b) = lace.get(id) else { return BTreeSet::new() };
    let geneses: Vec<BlockId> = lace
        .observed_from([b])
        .into_iter()
        .filter(|g| lace.get(g).is_some_and(is_genesis))
        .collect();
    match geneses.as_slice() {
        [g] => lace.observers_of(g),
        _ => BTreeSet::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionFault {
    /// A pointer that does not resolve in the blocklace.
    Dangling,
    /// The block observes no genesis, or more than one.
    GenesisCount(usize),
}

/// Blocks of `lace` breaking partition structure. Empty for a well-formed
/// WL blocklace.
pub fn partition_violations(lace: &Blocklace) -> Vec<(BlockId, PartitionFault)> {
    let mut out = Vec::new();
    let mut geneses_of: HashMap<BlockId, BTreeSet<BlockId>> = HashMap::new();
    for b in lace.topological(lace.ids()) {
        let mut gs = BTreeSet::new();
        if is_genesis(b) {
            gs.insert(b.id());
        }
        for p in b.pointers() {
            match geneses_of.get(p) {
                Some(pg) => gs.extend(pg.iter().copied()),
                None => out.push((b.id(), PartitionFault::Dangling)),
            }
        }
        if gs.len() != 1 {
            out.push((b.id(), PartitionFault::GenesisCount(gs.len())));
        }
        geneses_of.insert(b.id(), gs);
    }
    out
}

#[derive(Clone, Debug)]
struct GroupState {
    founder: AgentId,
    name: Vec<u8>,
    members: BTreeSet<AgentId>,
    // founder-authored invitations
    invites: BTreeMap<BlockId, AgentId>,
    blocks: BTreeSet<BlockId>,
    referenced: HashSet<BlockId>,
}

impl GroupState {
    fn tips(&self) -> BTreeSet<BlockId> {
        self.blocks.iter().filter(|id| !self.referenced.contains(id)).copied().collect()
    }
}

/// A decoded group message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupMessage {
    pub id: BlockId,
    pub author: AgentId,
    pub re: Option<BlockId>,
    /// `None` when this agent cannot decrypt it.
    pub text: Option<Vec<u8>>,
    /// The author's inner signature over the plaintext checks out.
    pub authentic: bool,
}

const PLAIN_TAG: u8 = 0;
const SEALED_TAG: u8 = 1;

#[derive(Clone, Debug)]
pub struct WlAgent {
    maker: BlockMaker,
    address: NetAddress,
    lace: Blocklace,
    knowledge: KnowledgeIndex,
    contacts: Contacts,
    group_of: HashMap<BlockId, GroupId>,
    groups: BTreeMap<GroupId, GroupState>,
    keys: BTreeMap<GroupId, GroupKey>,
    founded: BTreeSet<Vec<u8>>,
    acks: HashMap<BlockId, Block>,
    ack_address: HashMap<AgentId, NetAddress>,
    pending: PendingBuffer,
    encrypt: bool,
    counter: u64,
    dirty: bool,
    /// Own blocks disseminated only to the listed agents.
    restricted: BTreeMap<BlockId, BTreeSet<AgentId>>,
    metrics: Metrics,
}

impl WlAgent {
    pub fn new(kp: Keypair, address: NetAddress) -> Self {
        Self::with_pending_capacity(kp, address, DEFAULT_PENDING_CAPACITY)
    }

    pub fn with_pending_capacity(kp: Keypair, address: NetAddress, capacity: usize) -> Self {
        WlAgent {
            maker: BlockMaker::new(kp),
            address,
            lace: Blocklace::new(),
            knowledge: KnowledgeIndex::new(),
            contacts: Contacts::default(),
            group_of: HashMap::new(),
            groups: BTreeMap::new(),
            keys: BTreeMap::new(),
            founded: BTreeSet::new(),
            acks: HashMap::new(),
            ack_address: HashMap::new(),
            pending: PendingBuffer::with_capacity(capacity),
            encrypt: true,
            counter: 0,
            dirty: false,
            restricted: BTreeMap::new(),
            metrics: Metrics::default(),
        }
    }

    /// Turns message encryption off. For negative-control experiments only.
    pub fn set_encryption(&mut self, on: bool) {
        self.encrypt = on;
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

    pub fn pending(&self) -> &PendingBuffer {
        &self.pending
    }

    pub fn stored_acks(&self) -> impl Iterator<Item = &Block> {
        self.acks.values()
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupId> {
        self.groups.keys()
    }

    pub fn group_name(&self, gid: &GroupId) -> Option<&[u8]> {
        self.groups.get(gid).map(|g| g.name.as_slice())
    }

    pub fn founder(&self, gid: &GroupId) -> Option<AgentId> {
        self.groups.get(gid).map(|g| g.founder)
    }

    pub fn members(&self, gid: &GroupId) -> BTreeSet<AgentId> {
        self.groups.get(gid).map(|g| g.members.clone()).unwrap_or_default()
    }

    pub fn is_member(&self, gid: &GroupId) -> bool {
        self.groups.get(gid).is_some_and(|g| g.members.contains(&self.id()))
    }

    /// Ids of the stored blocks in `gid`'s partition.
    pub fn partition(&self, gid: &GroupId) -> BTreeSet<BlockId> {
        self.groups.get(gid).map(|g| g.blocks.clone()).unwrap_or_default()
    }

    pub fn group_of(&self, id: &BlockId) -> Option<GroupId> {
        self.group_of.get(id).copied()
    }

    pub fn has_key(&self, gid: &GroupId) -> bool {
        self.keys.contains_key(gid)
    }

    pub fn handle(&mut self, cmd: WlCommand) -> Result<Transition, WlError> {
        match cmd {
            WlCommand::CreateGroup(name) => self.create_group(name),
            WlCommand::Invite { agent, group } => self.invite(agent, group),
            WlCommand::Accept(group) => self.accept(group),
            WlCommand::Say { group, text } => self.say_group(group, text),
            WlCommand::Respond { group, re, text } => self.respond_group(group, re, text),
            WlCommand::ChangeAddress(a) => Ok(self.on_address_change(a)),
            WlCommand::Receive { bytes, from } => Ok(self.on_receive(&bytes, from)),
            WlCommand::Tick => Ok(Transition { sends: self.tick(), ..Default::default() }),
            WlCommand::Flush => {
                let sends = if self.dirty { self.disseminate() } else { Vec::new() };
                Ok(Transition { sends, ..Default::default() })
            }
            WlCommand::Introduce { agent, address } => {
                self.contacts.insert(agent, address);
                Ok(Transition::default())
            }
        }
    }

    /// Stores a verified block whose pointers all resolve, updating group
    /// state. Fails if it does not observe exactly one genesis.
    fn admit(&mut self, block: Block) -> Result<GroupId, RejectReason> {
        let id = block.id();
        let gid = if is_genesis(&block) {
            id
        } else {
            if matches!(block.payload(), Payload::Group(_)) {
                return Err(RejectReason::GroupStructure);
            }
            let gs: BTreeSet<GroupId> = block.pointers().iter().filter_map(|p| self.group_of.get(p).copied()).collect();
            match (gs.len(), gs.first()) {
                (1, Some(g)) => *g,
                _ => return Err(RejectReason::GroupStructure),
            }
        };
        if !self.lace.insert_verified(block.clone()) {
            return Ok(gid);
        }
        self.group_of.insert(id, gid);
        let g = self.groups.entry(gid).or_insert_with(|| GroupState {
            founder: block.creator(),
            name: match block.payload() {
                Payload::Group(n) => n.clone(),
                _ => unreachable!("first block of a group is its genesis"),
            },
            members: [block.creator()].into(),
            invites: BTreeMap::new(),
            blocks: BTreeSet::new(),
            referenced: HashSet::new(),
        });
        g.blocks.insert(id);
        g.referenced.extend(block.pointers().iter().copied());
        match block.payload() {
            Payload::Invite { target, .. } if block.creator() == g.founder => {
                g.invites.insert(id, *target);
            }
            Payload::Accept => {
                let accepted = block.pointers().iter().any(|p| g.invites.get(p) == Some(&block.creator()));
                if accepted {
                    g.members.insert(block.creator());
                }
            }
            _ => {}
        }
        self.knowledge.register(&self.lace, &block);
        self.metrics.inserted += 1;
        self.dirty = true;
        Ok(gid)
    }

    fn put(&mut self, payload: Payload, pointers: BTreeSet<BlockId>) -> Block {
        let block = self.maker.make(self.address, payload, pointers);
        self.admit(block.clone()).expect("own blocks are well formed");
        block
    }

    fn emit(&mut self, block: Block) -> Transition {
        Transition { sends: self.disseminate(), created: vec![block], outcome: None }
    }

    pub fn create_group(&mut self, name: impl Into<Vec<u8>>) -> Result<Transition, WlError> {
        let name = name.into();
        if self.founded.contains(&name) {
            return Err(WlError::DuplicateName(String::from_utf8_lossy(&name).into_owned()));
        }
        self.founded.insert(name.clone());
        let genesis = self.put(Payload::Group(name), BTreeSet::new());
        let seed = self.maker.kp.secret_bytes();
        self.keys.insert(genesis.id(), crypto::group_keygen(&seed, genesis.id().digest));
        Ok(self.emit(genesis))
    }

    pub fn invite(&mut self, q: AgentId, gid: GroupId) -> Result<Transition, WlError> {
        let g = self.groups.get(&gid).ok_or(WlError::UnknownGroup(gid))?;
        if g.founder != self.id() {
            return Err(WlError::NotFounder(gid));
        }
        if g.members.contains(&q) {
            return Err(WlError::AlreadyMember(gid));
        }
        let key = self.keys.get(&gid).expect("founder holds the key");
        let sealed_key = crypto::seal(key, &q)?;
        let block = self.put(Payload::Invite { target: q, sealed_key }, [gid].into());
        Ok(self.emit(block))
    }

    pub fn accept(&mut self, gid: GroupId) -> Result<Transition, WlError> {
        let me = self.id();
        let g = self.groups.get(&gid).ok_or(WlError::UnknownGroup(gid))?;
        if g.members.contains(&me) {
            return Err(WlError::AlreadyMember(gid));
        }
        let (inv, _) = g.invites.iter().find(|(_, t)| **t == me).ok_or(WlError::NoInvite(gid))?;
        let inv = *inv;
        let Payload::Invite { sealed_key, .. } = self.lace.get(&inv).expect("stored").payload() else {
            unreachable!("indexed as an invite")
        };
        let key = crypto::open(&self.maker.kp, sealed_key)?;
        self.keys.insert(gid, key);
        let block = self.put(Payload::Accept, [inv].into());
        Ok(self.emit(block))
    }

    fn member_tips(&self, gid: &GroupId) -> Result<BTreeSet<BlockId>, WlError> {
        let g = self.groups.get(gid).ok_or(WlError::UnknownGroup(*gid))?;
        if !g.members.contains(&self.id()) || !self.keys.contains_key(gid) {
            return Err(WlError::NotMember(*gid));
        }
        Ok(g.tips())
    }

    fn seal_text(&mut self, gid: &GroupId, text: &[u8]) -> Vec<u8> {
        let inner = crypto::sign(&self.maker.kp, message_digest(gid, text).as_bytes());
        let mut envelope = Vec::new();
        put_field(&mut envelope, text);
        put_field(&mut envelope, &inner.0);
        if !self.encrypt {
            let mut out = vec![PLAIN_TAG];
            out.extend_from_slice(&envelope);
            return out;
        }
        self.counter += 1;
        let nonce_src = crypto::hash_parts(&[b"grassroots/nonce", self.id().as_bytes(), &self.counter.to_be_bytes()]);
        let nonce: [u8; NONCE_LEN] = nonce_src.0[..NONCE_LEN].try_into().expect("digest is longer");
        let mut out = vec![SEALED_TAG];
        out.extend_from_slice(&crypto::encrypt(&self.keys[gid], nonce, &envelope));
        out
    }

    pub fn say_group(&mut self, gid: GroupId, text: impl Into<Vec<u8>>) -> Result<Transition, WlError> {
        let tips = self.member_tips(&gid)?;
        let text = self.seal_text(&gid, &text.into());
        let block = self.put(Payload::Say(text), tips);
        Ok(self.emit(block))
    }

    pub fn respond_group(&mut self, gid: GroupId, re: BlockId, text: impl Into<Vec<u8>>) -> Result<Transition, WlError> {
        let tips = self.member_tips(&gid)?;
        let target = self.lace.get(&re).ok_or(WlError::UnknownReferent(re))?;
        if self.group_of.get(&re) != Some(&gid) {
            return Err(WlError::CrossGroup(re));
        }
        if !target.payload().is_utterance() {
            return Err(WlError::NotAnUtterance(re));
        }
        let text = self.seal_text(&gid, &text.into());
        let block = self.put(Payload::Respond { text, re }, tips);
        Ok(self.emit(block))
    }

    /// Utterances with identical pointers and different texts, each
    /// disseminated only to its own recipients. Building block for an
    /// equivocating agent.
    pub fn fork(&mut self, gid: GroupId, forks: &[(&[u8], BTreeSet<AgentId>)]) -> Result<Transition, WlError> {
        let tips = self.member_tips(&gid)?;
        let mut created = Vec::new();
        for (text, to) in forks {
            let text = self.seal_text(&gid, text);
            let b = self.maker.make(self.address, Payload::Say(text), tips.clone());
            self.restricted.insert(b.id(), to.clone());
            self.admit(b.clone()).expect("own blocks are well formed");
            created.push(b);
        }
        Ok(Transition { sends: self.disseminate(), created, outcome: None })
    }

    /// Moves to `a` and announces it with one empty block per group this
    /// agent belongs to.
    pub fn on_address_change(&mut self, a: NetAddress) -> Transition {
        self.address = a;
        let me = self.id();
        let mine: Vec<GroupId> = self.groups.iter().filter(|(_, g)| g.members.contains(&me)).map(|(id, _)| *id).collect();
        let created = mine
            .into_iter()
            .map(|gid| {
                let tips = self.groups[&gid].tips();
                self.put(Payload::Empty, tips)
            })
            .collect();
        Transition { sends: self.disseminate(), created, outcome: None }
    }

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
        let id = block.id();
        if block.payload().is_ack() {
            if self.acks.get(&id) == Some(&block) {
                self.metrics.duplicates += 1;
                t.outcome = Some(ReceiveOutcome::Duplicate(id));
                return t;
            }
            if !verify_block(&block) {
                self.metrics.dropped_forged += 1;
                t.outcome = Some(ReceiveOutcome::Rejected(RejectReason::Forged));
                return t;
            }
            self.ack_address.insert(block.creator(), block.address());
            self.knowledge.register(&self.lace, &block);
            self.acks.insert(id, block);
            t.outcome = Some(ReceiveOutcome::AckStored(id));
            return t;
        }
        if self.lace.get(&id) == Some(&block) {
            self.metrics.duplicates += 1;
            t.outcome = Some(ReceiveOutcome::Duplicate(id));
            self.ack(&block, from, &mut t);
            return t;
        }
        if self.pending.contains(&id) {
            self.metrics.duplicates += 1;
            t.outcome = Some(ReceiveOutcome::Buffered(id));
            return t;
        }
        if !verify_block(&block) {
            self.metrics.dropped_forged += 1;
            t.outcome = Some(ReceiveOutcome::Rejected(RejectReason::Forged));
            return t;
        }
        let missing: Vec<BlockId> = block.pointers().iter().filter(|p| !self.lace.contains(p)).copied().collect();
        if !missing.is_empty() {
            self.metrics.buffered += 1;
            if self.pending.insert(block, missing).is_some() {
                self.metrics.evicted += 1;
            }
            t.outcome = Some(ReceiveOutcome::Buffered(id));
            return t;
        }
        if self.admit(block.clone()).is_err() {
            self.metrics.dropped_structure += 1;
            t.outcome = Some(ReceiveOutcome::Rejected(RejectReason::GroupStructure));
            return t;
        }
        self.ack(&block, from, &mut t);
        let mut inserted = vec![id];
        let mut frontier = vec![id];
        while let Some(next) = frontier.pop() {
            let lace = &self.lace;
            for released in self.pending.release(&next, |p| lace.contains(p)) {
                let rid = released.id();
                if self.admit(released.clone()).is_err() {
                    self.metrics.dropped_structure += 1;
                    continue;
                }
                self.ack(&released, None, &mut t);
                inserted.push(rid);
                frontier.push(rid);
            }
        }
        t.outcome = Some(ReceiveOutcome::Inserted(inserted));
        t
    }

    /// Acks a stored block to its creator, and to the relaying member at
    /// `from` if there is one.
    fn ack(&mut self, b: &Block, from: Option<NetAddress>, t: &mut Transition) {
        let ack = self.maker.ack(self.address, self.ack_pointers(b));
        t.created.push(ack.clone());
        let to_creator = self.address_of(&b.creator());
        if let Some(dst) = to_creator {
            t.send(dst, ack.clone());
            self.metrics.acks_sent += 1;
        }
        let Some(src) = from.filter(|s| Some(*s) != to_creator) else { return };
        let relay_is_member = self.group_of.get(&b.id()).and_then(|g| self.groups.get(g)).is_some_and(|g| {
            g.members.iter().any(|q| *q != self.id() && self.address_of(q) == Some(src))
        });
        if relay_is_member {
            t.send(src, ack);
            self.metrics.acks_sent += 1;
        }
    }

    /// Tips of `b`'s group partition if this agent is a member, `{b}` for an
    /// invitation of this agent, nothing otherwise.
    pub fn ack_pointers(&self, b: &Block) -> BTreeSet<BlockId> {
        let me = self.id();
        if let Some(g) = self.group_of.get(&b.id()).and_then(|g| self.groups.get(g)) {
            if g.members.contains(&me) {
                return g.tips();
            }
        }
        match b.payload() {
            Payload::Invite { target, .. } if *target == me => [b.id()].into(),
            _ => BTreeSet::new(),
        }
    }

    /// Address of `q`: its latest stored block, else its latest ack, else the
    /// contact book.
    pub fn address_of(&self, q: &AgentId) -> Option<NetAddress> {
        self.lace
            .ip_address(q)
            .or_else(|| self.ack_address.get(q).copied())
            .or_else(|| self.contacts.get(q))
    }

    /// For every group this agent belongs to, each partition block some other
    /// member has not acknowledged; plus pending invitations (with their
    /// genesis) to invitees.
    pub fn disseminate(&mut self) -> Vec<Outbound> {
        self.dirty = false;
        let me = self.id();
        let mut out = Vec::new();
        let mut addresses: HashMap<AgentId, Option<NetAddress>> = HashMap::new();
        let mut address_of = |q: &AgentId| *addresses.entry(*q).or_insert_with(|| self.address_of(q));
        for (gid, g) in &self.groups {
            if g.members.contains(&me) {
                let order = self.lace.topological(g.blocks.iter().copied());
                for q in g.members.iter().filter(|q| **q != me) {
                    let Some(dst) = address_of(q) else { continue };
                    let visible = |b: &&&Block| {
                        !self.knowledge.observes(q, &b.id())
                            && self.restricted.get(&b.id()).is_none_or(|to| to.contains(q))
                    };
                    for b in order.iter().filter(visible) {
                        out.push(Outbound { dst, block: (*b).clone() });
                    }
                }
            }
            if g.founder != me {
                continue;
            }
            for (inv, q) in &g.invites {
                if g.members.contains(q) || self.knowledge.observes(q, inv) {
                    continue;
                }
                let Some(dst) = address_of(q) else { continue };
                if !self.knowledge.observes(q, gid) {
                    out.push(Outbound { dst, block: self.lace.get(gid).expect("stored").clone() });
                }
                out.push(Outbound { dst, block: self.lace.get(inv).expect("stored").clone() });
            }
        }
        out
    }

    pub fn tick(&mut self) -> Vec<Outbound> {
        self.disseminate()
    }

    /// The group's messages in causal order, decrypted where possible.
    pub fn group_feed(&self, gid: &GroupId) -> Vec<GroupMessage> {
        let Some(g) = self.groups.get(gid) else { return Vec::new() };
        let key = self.keys.get(gid);
        self.lace
            .topological(g.blocks.iter().copied())
            .into_iter()
            .filter_map(|b| {
                let (body, re) = match b.payload() {
                    Payload::Say(t) => (t, None),
                    Payload::Respond { text, re } => (text, Some(*re)),
                    _ => return None,
                };
                let (text, authentic) = match open_text(key, body) {
                    Some((text, sig)) => {
                        let ok = crypto::verify(&b.creator(), message_digest(gid, &text).as_bytes(), &sig);
                        (Some(text), ok)
                    }
                    None => (None, false),
                };
                Some(GroupMessage { id: b.id(), author: b.creator(), re, text, authentic })
            })
            .collect()
    }
}

fn message_digest(gid: &GroupId, text: &[u8]) -> crypto::Digest {
    crypto::hash_parts(&[b"grassroots/group-msg", gid.digest.as_bytes(), text])
}

fn split_field(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = u32::from_be_bytes(buf.get(..LEN_PREFIX)?.try_into().ok()?) as usize;
    let rest = &buf[LEN_PREFIX..];
    (rest.len() >= len).then(|| rest.split_at(len))
}

fn open_text(key: Option<&GroupKey>, body: &[u8]) -> Option<(Vec<u8>, Signature)> {
    let (tag, rest) = body.split_first()?;
    let envelope = match *tag {
        PLAIN_TAG => rest.to_vec(),
        SEALED_TAG => crypto::decrypt(key?, rest).ok()?,
        _ => return None,
    };
    let (text, rest) = split_field(&envelope)?;
    let (sig, rest) = split_field(rest)?;
    if !rest.is_empty() || sig.len() != SIGNATURE_LEN {
        return None;
    }
    Some((text.to_vec(), Signature(sig.try_into().ok()?)))
}
