//! Incremental `agent_observes` index.
//!
//! For every tracked agent `q`, keeps the set of blocks observed by some
//! `q`-block, where paths run through a [`Blocklace`]. Blocks that are not in
//! the blocklace (acks kept aside) can be registered as additional roots.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Block, BlockId, Blocklace};
use crate::crypto::AgentId;

#[derive(Clone, Debug, Default)]
pub struct KnowledgeIndex {
    known: BTreeMap<AgentId, HashSet<BlockId>>,
    // reverse pointers over every registered block, stored or not
    referrers: HashMap<BlockId, Vec<BlockId>>,
}

impl KnowledgeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Must be called after `block` was inserted into `lace`, or, for a block
    /// kept outside it, when it is first seen.
    pub fn register(&mut self, lace: &Blocklace, block: &Block) {
        let id = block.id();
        for p in block.pointers() {
            self.referrers.entry(*p).or_default().push(id);
        }
        let creator = block.creator();
        let in_lace = lace.contains(&id);
        let mut reached: Vec<AgentId> = vec![creator];
        if in_lace {
            if let Some(refs) = self.referrers.get(&id) {
                for (q, set) in &self.known {
                    if *q != creator && refs.iter().any(|r| set.contains(r)) {
                        reached.push(*q);
                    }
                }
            }
        }
        for q in reached {
            let set = self.known.entry(q).or_default();
            if !set.insert(id) {
                continue;
            }
            let mut stack: Vec<BlockId> = block.pointers().iter().copied().collect();
            while let Some(next) = stack.pop() {
                if let Some(b) = lace.get(&next) {
                    if set.insert(next) {
                        stack.extend(b.pointers().iter().copied());
                    }
                }
            }
        }
    }

    pub fn observes(&self, q: &AgentId, target: &BlockId) -> bool {
        self.known.get(q).is_some_and(|s| s.contains(target))
    }

    pub fn known_by(&self, q: &AgentId) -> Option<&HashSet<BlockId>> {
        self.known.get(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocklace::{new_block, NetAddress, Payload};
    use crate::crypto::keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_definition_under_out_of_order_insertion() {
        let agents: Vec<_> = (0..4).map(keygen).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let mut blocks: Vec<Block> = Vec::new();
            for i in 0..25 {
                let kp = &agents[rng.gen_range(0..agents.len())];
                let pointers = blocks
                    .iter()
                    .filter(|_| rng.gen_bool(0.2))
                    .map(|b| b.id())
                    .collect();
                blocks.push(new_block(kp, NetAddress(i), Payload::Empty, pointers));
            }
            // arrive in random order, some held aside
            let mut order: Vec<usize> = (0..blocks.len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut lace = Blocklace::new();
            let mut index = KnowledgeIndex::new();
            let mut aside: Vec<&Block> = Vec::new();
            for &i in &order {
                let b = &blocks[i];
                if rng.gen_bool(0.15) {
                    aside.push(b);
                } else {
                    lace.insert(b.clone()).unwrap();
                }
                index.register(&lace, b);
            }
            for kp in &agents {
                let q = kp.agent_id();
                let roots = lace.blocks_by(&q).chain(aside.iter().copied().filter(|b| b.creator() == q));
                let expected = lace.observed_from(roots);
                for b in lace.iter() {
                    assert_eq!(index.observes(&q, &b.id()), expected.contains(&b.id()));
                }
            }
        }
    }
}
