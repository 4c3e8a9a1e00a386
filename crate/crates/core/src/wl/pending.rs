use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::blocklace::{Block, BlockId};

/// Verified blocks waiting for missing ancestors, bounded in size.
///
/// When full, the oldest buffered block is evicted; its sender will resend it
/// because it is still unacknowledged.
#[derive(Clone, Debug)]
pub struct PendingBuffer {
    capacity: usize,
    seq: u64,
    blocks: BTreeMap<BlockId, (u64, Block)>,
    age: BTreeMap<u64, BlockId>,
    // missing id -> buffered blocks that point at it
    waiting: HashMap<BlockId, BTreeSet<BlockId>>,
}

pub const DEFAULT_PENDING_CAPACITY: usize = 1024;

impl Default for PendingBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_PENDING_CAPACITY)
    }
}

impl PendingBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        PendingBuffer {
            capacity: capacity.max(1),
            seq: 0,
            blocks: BTreeMap::new(),
            age: BTreeMap::new(),
            waiting: HashMap::new(),
        }
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

    /// Buffers `block` until every id in `missing` is present. Returns the id
    /// of an evicted block, if any.
    pub fn insert(&mut self, block: Block, missing: impl IntoIterator<Item = BlockId>) -> Option<BlockId> {
        let id = block.id();
        if self.blocks.contains_key(&id) {
            return None;
        }
        let mut evicted = None;
        if self.blocks.len() >= self.capacity {
            if let Some((_, oldest)) = self.age.pop_first() {
                self.blocks.remove(&oldest);
                evicted = Some(oldest);
            }
        }
        for m in missing {
            self.waiting.entry(m).or_default().insert(id);
        }
        self.seq += 1;
        self.age.insert(self.seq, id);
        self.blocks.insert(id, (self.seq, block));
        evicted
    }

    /// Removes and returns the buffered blocks that were waiting on `arrived`
    /// and now have every pointer satisfied by `present`.
    pub fn release(&mut self, arrived: &BlockId, present: impl Fn(&BlockId) -> bool) -> Vec<Block> {
        let Some(waiters) = self.waiting.remove(arrived) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for w in waiters {
            let ready = match self.blocks.get(&w) {
                Some((_, b)) => b.pointers().iter().all(&present),
                None => false,
            };
            if ready {
                let (seq, b) = self.blocks.remove(&w).expect("checked above");
                self.age.remove(&seq);
                out.push(b);
            }
        }
        out
    }
}
