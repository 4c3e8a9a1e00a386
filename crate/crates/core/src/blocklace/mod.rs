//! The blocklace: a grow-only set of signed blocks linked by hash pointers.
//!
//! All queries resolve pointers *within* the blocklace they are asked about.
//! A pointer to a block that is not present simply ends that path, so a
//! blocklace need not be closed for the queries to be well defined.

pub(crate) mod block;
mod knowledge;

pub use block::{
    canonical_encode, decode_block, encode_block, new_block, verify_block, Block, BlockId,
    DecodeError, NetAddress, Payload,
};
pub use knowledge::KnowledgeIndex;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::crypto::AgentId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InsertError {
    #[error("block {0} fails verification")]
    Invalid(BlockId),
}

/// A set of verified blocks with a per-creator index.
#[derive(Clone, Debug, Default)]
pub struct Blocklace {
    blocks: BTreeMap<BlockId, Block>,
    by_creator: BTreeMap<AgentId, BTreeSet<BlockId>>,
    // ids pointed to by at least one stored block
    referenced: HashSet<BlockId>,
    // ip_address results, valid until the next insert
    addresses: RefCell<HashMap<AgentId, Option<NetAddress>>>,
}

impl Blocklace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a blocklace from blocks, skipping any that fail verification.
    pub fn from_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Self {
        let mut b = Blocklace::new();
        for block in blocks {
            let _ = b.insert(block.clone());
        }
        b
    }

    /// Inserts a block after verifying it. Returns `Ok(false)` for a block
    /// already present.
    pub fn insert(&mut self, block: Block) -> Result<bool, InsertError> {
        if self.blocks.contains_key(&block.id()) {
            return Ok(false);
        }
        if !verify_block(&block) {
            return Err(InsertError::Invalid(block.id()));
        }
        self.insert_verified(block);
        Ok(true)
    }

    /// Inserts a block the caller has already verified.
    pub(crate) fn insert_verified(&mut self, block: Block) -> bool {
        if self.blocks.contains_key(&block.id()) {
            return false;
        }
        let id = block.id();
        self.referenced.extend(block.pointers().iter().copied());
        self.by_creator.entry(id.creator).or_default().insert(id);
        self.blocks.insert(id, block);
        self.addresses.get_mut().clear();
        true
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn get(&self, id: &BlockId) -> Option<&Block> {
        self.blocks.get(id)
    }

    /// Blocks in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn ids(&self) -> BTreeSet<BlockId> {
        self.blocks.keys().copied().collect()
    }

    pub fn creators(&self) -> impl Iterator<Item = &AgentId> {
        self.by_creator.keys()
    }

    /// Blocks created by `q`, in id order.
    pub fn blocks_by(&self, q: &AgentId) -> impl Iterator<Item = &Block> {
        self.by_creator
            .get(q)
            .into_iter()
            .flat_map(|ids| ids.iter())
            .filter_map(|id| self.blocks.get(id))
    }

    /// True iff a (possibly empty) pointer path within this blocklace leads
    /// from `from` to `target`. `from` need not be stored.
    pub fn observes(&self, from: &Block, target: &BlockId) -> bool {
        if from.id() == *target {
            return true;
        }
        let mut seen = HashSet::new();
        let mut stack: Vec<BlockId> = from.pointers().iter().copied().collect();
        while let Some(id) = stack.pop() {
            if id == *target && self.contains(&id) {
                return true;
            }
            if !seen.insert(id) {
                continue;
            }
            if let Some(b) = self.blocks.get(&id) {
                stack.extend(b.pointers().iter().copied());
            }
        }
        false
    }

    /// Ids of every stored block observed by some root, plus the roots
    /// themselves.
    pub fn observed_from<'a>(&self, roots: impl IntoIterator<Item = &'a Block>) -> HashSet<BlockId> {
        let mut seen = HashSet::new();
        let mut stack = Vec::new();
        for root in roots {
            seen.insert(root.id());
            stack.extend(root.pointers().iter().copied());
        }
        self.walk(&mut seen, stack);
        seen
    }

    fn walk(&self, seen: &mut HashSet<BlockId>, mut stack: Vec<BlockId>) {
        while let Some(id) = stack.pop() {
            if let Some(b) = self.blocks.get(&id) {
                if seen.insert(id) {
                    stack.extend(b.pointers().iter().copied());
                }
            }
        }
    }

    /// Ids of stored blocks reachable by one or more pointer steps from some root.
    fn strictly_observed<'a>(&self, roots: impl IntoIterator<Item = &'a Block>) -> HashSet<BlockId> {
        let mut seen = HashSet::new();
        let stack = roots.into_iter().flat_map(|r| r.pointers().iter().copied()).collect();
        self.walk(&mut seen, stack);
        seen
    }

    /// Ids of stored blocks that observe `target` (itself included when stored).
    pub fn observers_of(&self, target: &BlockId) -> BTreeSet<BlockId> {
        let mut memo: HashMap<BlockId, bool> = HashMap::new();
        for b in self.topological(self.blocks.keys().copied()) {
            let hit = b.id() == *target
                || b.pointers().iter().any(|p| memo.get(p).copied().unwrap_or(false));
            memo.insert(b.id(), hit);
        }
        memo.into_iter().filter(|(_, hit)| *hit).map(|(id, _)| id).collect()
    }

    /// Blocks not observed by any other stored block, in id order.
    pub fn tips(&self) -> Vec<&Block> {
        // A block is strictly observed iff some stored block points at it
        // directly: the last step of any witnessing path is such a pointer.
        self.blocks
            .iter()
            .filter(|(id, _)| !self.referenced.contains(id))
            .map(|(_, b)| b)
            .collect()
    }

    pub fn tip_ids(&self) -> BTreeSet<BlockId> {
        self.tips().into_iter().map(Block::id).collect()
    }

    /// Every stored block `b` observes, including `b` itself.
    pub fn closure(&self, b: &Block) -> BTreeSet<BlockId> {
        let mut ids: BTreeSet<BlockId> = self.observed_from([b]).into_iter().collect();
        if !self.contains(&b.id()) {
            ids.remove(&b.id());
        }
        ids
    }

    /// Blocks reachable from `b` following only pointers to blocks by the
    /// same creator.
    pub fn self_closure(&self, b: &Block) -> BTreeSet<BlockId> {
        let creator = b.creator();
        let mut seen = BTreeSet::new();
        let mut stack = vec![b.id()];
        if !self.contains(&b.id()) {
            return seen;
        }
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(block) = self.blocks.get(&id) {
                stack.extend(
                    block
                        .pointers()
                        .iter()
                        .filter(|p| p.creator == creator && self.contains(p))
                        .copied(),
                );
            }
        }
        seen
    }

    /// True iff every pointer of every stored block resolves.
    pub fn is_closed(&self) -> bool {
        self.blocks
            .values()
            .all(|b| b.pointers().iter().all(|p| self.contains(p)))
    }

    /// True iff every block's self-closure is stored.
    pub fn is_self_closed(&self) -> bool {
        self.blocks.values().all(|b| {
            b.pointers()
                .iter()
                .filter(|p| p.creator == b.creator())
                .all(|p| self.contains(p))
        })
    }

    /// True iff some stored `q`-block observes `target`.
    pub fn agent_observes(&self, q: &AgentId, target: &BlockId) -> bool {
        self.blocks_by(q).any(|b| self.observes(b, target))
    }

    /// Current address of `q` as recorded in this blocklace.
    pub fn ip_address(&self, q: &AgentId) -> Option<NetAddress> {
        if let Some(a) = self.addresses.borrow().get(q) {
            return *a;
        }
        let a = self.ip_address_with(q, std::iter::empty());
        self.addresses.borrow_mut().insert(*q, a);
        a
    }

    /// Like [`ip_address`](Self::ip_address), additionally considering
    /// `extra` blocks that are not stored (e.g. acks kept aside).
    ///
    /// The latest `q`-block is the one observing every other `q`-block. When
    /// none exists (unstored acks, or a fork) the unique latest non-ack
    /// `q`-block is used; failing that, the maximal candidate with the
    /// smallest digest. `IpAnnounce` payloads are consulted only when there
    /// are no `q`-blocks at all.
    pub fn ip_address_with<'a>(
        &'a self,
        q: &AgentId,
        extra: impl IntoIterator<Item = &'a Block>,
    ) -> Option<NetAddress> {
        let mut candidates: Vec<&Block> = self.blocks_by(q).collect();
        candidates.extend(extra.into_iter().filter(|b| b.creator() == *q && !self.contains(&b.id())));
        if !candidates.is_empty() {
            let maxima = self.maxima(&candidates);
            if let [only] = maxima.as_slice() {
                return Some(only.address());
            }
            let non_ack: Vec<&Block> = candidates.iter().copied().filter(|b| !b.payload().is_ack()).collect();
            let pool = if non_ack.is_empty() { maxima } else { self.maxima(&non_ack) };
            return pool.iter().min_by_key(|b| b.id().digest).map(|b| b.address());
        }
        let announcements: Vec<&Block> = self
            .blocks
            .values()
            .filter(|b| matches!(b.payload(), Payload::IpAnnounce { agent, .. } if agent == q))
            .collect();
        self.maxima(&announcements)
            .iter()
            .min_by_key(|b| b.id().digest)
            .map(|b| match b.payload() {
                Payload::IpAnnounce { address, .. } => *address,
                _ => unreachable!("filtered to announcements"),
            })
    }

    /// Candidates not strictly observed by another candidate.
    fn maxima<'a>(&self, candidates: &[&'a Block]) -> Vec<&'a Block> {
        let below = self.strictly_observed(candidates.iter().copied());
        candidates.iter().copied().filter(|b| !below.contains(&b.id())).collect()
    }

    /// All unordered pairs of `q`-blocks neither of which observes the other.
    /// Each pair is reported as `(smaller, larger)`.
    pub fn detect_equivocations(&self, q: &AgentId) -> BTreeSet<(BlockId, BlockId)> {
        let own: Vec<&Block> = self.blocks_by(q).collect();
        let reach: Vec<HashSet<BlockId>> = own.iter().map(|b| self.observed_from([*b])).collect();
        let mut pairs = BTreeSet::new();
        for i in 0..own.len() {
            for j in i + 1..own.len() {
                let (a, b) = (own[i].id(), own[j].id());
                if !reach[i].contains(&b) && !reach[j].contains(&a) {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        pairs
    }

    /// Stored blocks ordered so that every block comes after the stored
    /// blocks it points to. Ties break by id.
    pub fn topological<'a>(&'a self, ids: impl IntoIterator<Item = BlockId>) -> Vec<&'a Block> {
        let wanted: BTreeSet<BlockId> = ids.into_iter().filter(|id| self.contains(id)).collect();
        let mut out = Vec::with_capacity(wanted.len());
        let mut done = HashSet::new();
        for root in &wanted {
            // iterative post-order DFS restricted to `wanted`
            let mut stack = vec![(*root, false)];
            while let Some((id, expanded)) = stack.pop() {
                if done.contains(&id) {
                    continue;
                }
                if expanded {
                    done.insert(id);
                    out.push(&self.blocks[&id]);
                    continue;
                }
                stack.push((id, true));
                for p in self.blocks[&id].pointers().iter().rev() {
                    if wanted.contains(p) && !done.contains(p) {
                        stack.push((*p, false));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Keypair};

    fn blk(kp: &Keypair, text: &str, parents: &[&Block]) -> Block {
        new_block(
            kp,
            NetAddress(1),
            Payload::Say(text.as_bytes().to_vec()),
            parents.iter().map(|b| b.id()).collect(),
        )
    }

    fn lace(blocks: &[&Block]) -> Blocklace {
        Blocklace::from_blocks(blocks.iter().copied())
    }

    #[test]
    fn observes_chain() {
        let p = keygen(1);
        let a = blk(&p, "a", &[]);
        let b = blk(&p, "b", &[&a]);
        let c = blk(&p, "c", &[&b]);
        let bl = lace(&[&a, &b, &c]);
        assert!(bl.observes(&c, &c.id()));
        assert!(bl.observes(&c, &a.id()));
        assert!(!bl.observes(&a, &c.id()));
        // path broken when the middle block is missing
        let partial = lace(&[&a, &c]);
        assert!(!partial.observes(&c, &a.id()));
    }

    #[test]
    fn parallel_initial_blocks_unrelated() {
        let p = keygen(1);
        let a = blk(&p, "a", &[]);
        let b = blk(&p, "b", &[]);
        let bl = lace(&[&a, &b]);
        assert!(!bl.observes(&a, &b.id()));
        assert!(!bl.observes(&b, &a.id()));
    }

    #[test]
    fn tips_diamond() {
        let p = keygen(1);
        let q = keygen(2);
        assert!(Blocklace::new().tips().is_empty());
        let a = blk(&p, "a", &[]);
        assert_eq!(lace(&[&a]).tip_ids(), [a.id()].into());
        let b = blk(&p, "b", &[&a]);
        let c = blk(&q, "c", &[&a]);
        let d = blk(&p, "d", &[&b, &c]);
        let bl = lace(&[&a, &b, &c, &d]);
        assert_eq!(bl.tip_ids(), [d.id()].into());
        assert_eq!(lace(&[&a, &b, &c]).tip_ids(), [b.id(), c.id()].into());
    }

    #[test]
    fn closure_and_self_closure() {
        let p = keygen(1);
        let q = keygen(2);
        let p1 = blk(&p, "p1", &[]);
        let q1 = blk(&q, "q1", &[&p1]);
        let p2 = blk(&p, "p2", &[&q1, &p1]);
        let q2 = blk(&q, "q2", &[&p2]);
        let p3 = blk(&p, "p3", &[&q2]);
        let bl = lace(&[&p1, &q1, &p2, &q2, &p3]);
        assert_eq!(bl.closure(&p1), [p1.id()].into());
        assert_eq!(bl.closure(&p3).len(), 5);
        // p3 reaches p2 only through q2, so self-closure stops at p3
        assert_eq!(bl.self_closure(&p3), [p3.id()].into());
        assert_eq!(bl.self_closure(&p2), [p2.id(), p1.id()].into());
        assert!(bl.is_closed());
        assert!(!lace(&[&p3, &q2]).is_closed());
    }

    #[test]
    fn agent_observes_definition() {
        let p = keygen(1);
        let q = keygen(2);
        let a = blk(&p, "a", &[]);
        let b = blk(&p, "b", &[&a]);
        let c = blk(&p, "c", &[&b]);
        let ack = new_block(&q, NetAddress(2), Payload::Ack, [c.id()].into());
        let bl = lace(&[&a, &b, &c, &ack]);
        assert!(bl.agent_observes(&q.agent_id(), &c.id()));
        assert!(bl.agent_observes(&q.agent_id(), &a.id()));
        let mid = new_block(&q, NetAddress(2), Payload::Ack, [b.id()].into());
        let bl2 = lace(&[&a, &b, &c, &mid]);
        assert!(!bl2.agent_observes(&q.agent_id(), &c.id()));
        assert!(!lace(&[&a]).agent_observes(&q.agent_id(), &a.id()));
    }

    #[test]
    fn ip_address_sources() {
        let p = keygen(1);
        let q = keygen(2);
        let q1 = new_block(&q, NetAddress(10), Payload::Empty, BTreeSet::new());
        assert_eq!(lace(&[&q1]).ip_address(&q.agent_id()), Some(NetAddress(10)));
        let q2 = new_block(&q, NetAddress(11), Payload::Empty, [q1.id()].into());
        assert_eq!(lace(&[&q1, &q2]).ip_address(&q.agent_id()), Some(NetAddress(11)));
        let ann = new_block(
            &p,
            NetAddress(1),
            Payload::IpAnnounce { agent: q.agent_id(), address: NetAddress(99) },
            BTreeSet::new(),
        );
        assert_eq!(lace(&[&ann]).ip_address(&q.agent_id()), Some(NetAddress(99)));
        // q's own block wins over a third-party announcement
        assert_eq!(lace(&[&ann, &q1]).ip_address(&q.agent_id()), Some(NetAddress(10)));
        assert_eq!(lace(&[&ann]).ip_address(&p.agent_id()), Some(NetAddress(1)));
        assert_eq!(Blocklace::new().ip_address(&q.agent_id()), None);
    }

    #[test]
    fn ip_address_prefers_latest_non_ack_over_stale_acks() {
        let p = keygen(1);
        let q = keygen(2);
        let base = blk(&p, "base", &[]);
        let q1 = new_block(&q, NetAddress(10), Payload::Empty, [base.id()].into());
        let stale_ack = new_block(&q, NetAddress(10), Payload::Ack, [base.id()].into());
        let moved = new_block(&q, NetAddress(20), Payload::Empty, [q1.id()].into());
        let bl = lace(&[&base, &q1, &stale_ack, &moved]);
        assert_eq!(bl.ip_address(&q.agent_id()), Some(NetAddress(20)));
    }

    #[test]
    fn equivocation_pairs() {
        let q = keygen(2);
        let a = blk(&q, "a", &[]);
        let b = blk(&q, "b", &[&a]);
        let c = blk(&q, "c", &[&b]);
        assert!(lace(&[&a, &b, &c]).detect_equivocations(&q.agent_id()).is_empty());
        let f1 = blk(&q, "f1", &[&a]);
        let f2 = blk(&q, "f2", &[&a]);
        assert_eq!(lace(&[&a, &f1, &f2]).detect_equivocations(&q.agent_id()).len(), 1);
        let f3 = blk(&q, "f3", &[&a]);
        assert_eq!(lace(&[&a, &f1, &f2, &f3]).detect_equivocations(&q.agent_id()).len(), 3);
    }

    #[test]
    fn insert_rejects_forgery_and_dedupes() {
        let p = keygen(1);
        let a = blk(&p, "a", &[]);
        let mut bl = Blocklace::new();
        assert_eq!(bl.insert(a.clone()), Ok(true));
        assert_eq!(bl.insert(a.clone()), Ok(false));
        let forged = Block::from_parts_unchecked(a.id(), a.address(), Payload::Say(b"z".to_vec()), BTreeSet::new());
        let b2 = Blocklace::new().insert(forged);
        assert!(matches!(b2, Err(InsertError::Invalid(_))));
        assert_eq!(bl.len(), 1);
    }

    #[test]
    fn topological_puts_parents_first() {
        let p = keygen(1);
        let a = blk(&p, "a", &[]);
        let b = blk(&p, "b", &[&a]);
        let c = blk(&p, "c", &[&b, &a]);
        let bl = lace(&[&c, &b, &a]);
        let order: Vec<BlockId> = bl.topological(bl.ids()).into_iter().map(Block::id).collect();
        assert_eq!(order, vec![a.id(), b.id(), c.id()]);
    }
}
