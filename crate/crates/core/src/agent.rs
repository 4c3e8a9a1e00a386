//! Pieces shared by the TL and WL state machines.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::blocklace::{canonical_encode, new_block, Block, BlockId, NetAddress, Payload};
use crate::crypto::{self, AgentId, Digest, Keypair};

/// A block to be sent as one datagram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub dst: NetAddress,
    pub block: Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Malformed,
    Forged,
    /// WL: block observes zero or several group genesis blocks.
    GroupStructure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReceiveOutcome {
    /// Inserted into the blocklace, together with any buffered blocks it released.
    Inserted(Vec<BlockId>),
    Duplicate(BlockId),
    /// WL: verified but waiting for ancestors.
    Buffered(BlockId),
    /// WL: a foreign ack kept in the side table.
    AckStored(BlockId),
    Rejected(RejectReason),
}

/// Result of applying one command.
#[derive(Clone, Debug, Default)]
pub struct Transition {
    pub sends: Vec<Outbound>,
    /// Blocks this agent created, stored or not (acks are not stored).
    pub created: Vec<Block>,
    pub outcome: Option<ReceiveOutcome>,
}

impl Transition {
    pub(crate) fn send(&mut self, dst: NetAddress, block: Block) {
        self.sends.push(Outbound { dst, block });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub inserted: u64,
    pub duplicates: u64,
    pub dropped_malformed: u64,
    pub dropped_forged: u64,
    pub dropped_structure: u64,
    pub buffered: u64,
    pub evicted: u64,
    pub acks_sent: u64,
}

impl Metrics {
    pub fn dropped(&self) -> u64 {
        self.dropped_malformed + self.dropped_forged + self.dropped_structure
    }
}

const ACK_CACHE_LIMIT: usize = 4096;

/// Keypair plus a cache of signed acks. Signing is deterministic, so an ack
/// with the same body is the same block and need not be signed twice.
#[derive(Clone, Debug)]
pub(crate) struct BlockMaker {
    pub(crate) kp: Keypair,
    ack_cache: HashMap<Digest, Block>,
}

impl BlockMaker {
    pub(crate) fn new(kp: Keypair) -> Self {
        BlockMaker { kp, ack_cache: HashMap::new() }
    }

    pub(crate) fn id(&self) -> AgentId {
        self.kp.agent_id()
    }

    pub(crate) fn make(&self, address: NetAddress, payload: Payload, pointers: BTreeSet<BlockId>) -> Block {
        new_block(&self.kp, address, payload, pointers)
    }

    pub(crate) fn ack(&mut self, address: NetAddress, pointers: BTreeSet<BlockId>) -> Block {
        let digest = crypto::hash(&canonical_encode(address, &Payload::Ack, &pointers));
        if let Some(b) = self.ack_cache.get(&digest) {
            return b.clone();
        }
        if self.ack_cache.len() >= ACK_CACHE_LIMIT {
            self.ack_cache.clear();
        }
        let b = new_block(&self.kp, address, Payload::Ack, pointers);
        self.ack_cache.insert(digest, b.clone());
        b
    }
}

/// Out-of-band address book used to bootstrap contact (think: a number
/// exchanged by SMS). Addresses learned from blocks take precedence.
#[derive(Clone, Debug, Default)]
pub(crate) struct Contacts(BTreeMap<AgentId, NetAddress>);

impl Contacts {
    pub(crate) fn insert(&mut self, q: AgentId, a: NetAddress) {
        self.0.insert(q, a);
    }

    pub(crate) fn get(&self, q: &AgentId) -> Option<NetAddress> {
        self.0.get(q).copied()
    }
}
