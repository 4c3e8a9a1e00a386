//! Brute-force reference implementations and generators shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use grassroots::blocklace::{new_block, Block, BlockId, Blocklace, NetAddress, Payload};
use grassroots::crypto::{keygen, AgentId, Keypair};
use rand::seq::SliceRandom;
use rand::Rng;

/// A randomly built DAG of blocks and the subset of it that is stored.
pub struct RandomLace {
    pub all: Vec<Block>,
    pub stored: Vec<Block>,
    pub creators: Vec<AgentId>,
}

impl RandomLace {
    pub fn lace(&self) -> Blocklace {
        Blocklace::from_blocks(&self.stored)
    }

    /// Blocks that were built but left out of the lace.
    pub fn missing(&self) -> Vec<&Block> {
        let kept: BTreeSet<BlockId> = self.stored.iter().map(Block::id).collect();
        self.all.iter().filter(|b| !kept.contains(&b.id())).collect()
    }
}

pub fn keys(n: u64) -> Vec<Keypair> {
    (1..=n).map(keygen).collect()
}

/// Up to `max_blocks` blocks by a few creators, each pointing at a random
/// handful of earlier blocks. With `keep < 1.0` some blocks are left out, so
/// the lace need not be closed.
pub fn random_lace(rng: &mut impl Rng, keys: &[Keypair], max_blocks: usize, keep: f64) -> RandomLace {
    let n = rng.gen_range(0..=max_blocks);
    let mut all: Vec<Block> = Vec::with_capacity(n);
    for i in 0..n {
        let kp = keys.choose(rng).expect("keys");
        let fanout = rng.gen_range(0..=3.min(all.len()));
        let pointers: BTreeSet<BlockId> = all.choose_multiple(rng, fanout).map(Block::id).collect();
        let payload = if rng.gen_bool(0.2) { Payload::Ack } else { Payload::Say(format!("b{i}").into_bytes()) };
        all.push(new_block(kp, NetAddress(rng.gen_range(1..4)), payload, pointers));
    }
    let stored = all.iter().filter(|_| rng.gen_bool(keep)).cloned().collect();
    RandomLace { all, stored, creators: keys.iter().map(Keypair::agent_id).collect() }
}

/// Reachability matrix over the stored blocks, by Floyd-Warshall on the
/// pointer edges whose targets are stored.
pub struct Reference {
    pub blocks: Vec<Block>,
    reach: Vec<Vec<bool>>,
    self_reach: Vec<Vec<bool>>,
}

impl Reference {
    pub fn new(stored: &[Block]) -> Self {
        let mut blocks = stored.to_vec();
        blocks.sort_by_key(Block::id);
        blocks.dedup_by_key(|b| b.id());
        let n = blocks.len();
        let index = |id: &BlockId| blocks.iter().position(|b| b.id() == *id);
        let mut reach = vec![vec![false; n]; n];
        let mut self_reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
            self_reach[i][i] = true;
            for p in blocks[i].pointers() {
                if let Some(j) = index(p) {
                    reach[i][j] = true;
                    if p.creator == blocks[i].creator() {
                        self_reach[i][j] = true;
                    }
                }
            }
        }
        for m in [&mut reach, &mut self_reach] {
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if m[i][k] && m[k][j] {
                            m[i][j] = true;
                        }
                    }
                }
            }
        }
        Reference { blocks, reach, self_reach }
    }

    fn index(&self, id: &BlockId) -> Option<usize> {
        self.blocks.iter().position(|b| b.id() == *id)
    }

    /// `from` must be stored; `target` need not be.
    pub fn observes(&self, from: &BlockId, target: &BlockId) -> bool {
        let i = self.index(from).expect("stored");
        from == target || self.index(target).is_some_and(|j| self.reach[i][j])
    }

    pub fn tips(&self) -> BTreeSet<BlockId> {
        let n = self.blocks.len();
        (0..n)
            .filter(|&j| !(0..n).any(|i| i != j && self.reach[i][j]))
            .map(|j| self.blocks[j].id())
            .collect()
    }

    pub fn closure(&self, b: &BlockId) -> BTreeSet<BlockId> {
        let i = self.index(b).expect("stored");
        (0..self.blocks.len()).filter(|&j| self.reach[i][j]).map(|j| self.blocks[j].id()).collect()
    }

    pub fn self_closure(&self, b: &BlockId) -> BTreeSet<BlockId> {
        let i = self.index(b).expect("stored");
        (0..self.blocks.len()).filter(|&j| self.self_reach[i][j]).map(|j| self.blocks[j].id()).collect()
    }

    pub fn equivocations(&self, q: &AgentId) -> BTreeSet<(BlockId, BlockId)> {
        let own: Vec<usize> = (0..self.blocks.len()).filter(|&i| self.blocks[i].creator() == *q).collect();
        let mut out = BTreeSet::new();
        for (x, &i) in own.iter().enumerate() {
            for &j in &own[x + 1..] {
                if !self.reach[i][j] && !self.reach[j][i] {
                    let (a, b) = (self.blocks[i].id(), self.blocks[j].id());
                    out.insert((a.min(b), a.max(b)));
                }
            }
        }
        out
    }

    /// True iff the `q`-blocks are totally ordered by observes.
    pub fn totally_ordered(&self, q: &AgentId) -> bool {
        let own: Vec<usize> = (0..self.blocks.len()).filter(|&i| self.blocks[i].creator() == *q).collect();
        own.iter().all(|&i| own.iter().all(|&j| self.reach[i][j] || self.reach[j][i]))
    }
}

/// Every disagreement between `lace` and the reference, as descriptions.
pub fn compare(r: &RandomLace) -> Vec<String> {
    let lace = r.lace();
    let reference = Reference::new(&r.stored);
    let mut diffs = Vec::new();
    if lace.tip_ids() != reference.tips() {
        diffs.push("tips".to_owned());
    }
    let targets: Vec<BlockId> = r.all.iter().map(Block::id).collect();
    for b in &reference.blocks {
        for t in &targets {
            if lace.observes(b, t) != reference.observes(&b.id(), t) {
                diffs.push(format!("observes({}, {})", b.id().digest.to_hex(), t.digest.to_hex()));
            }
        }
        if lace.closure(b) != reference.closure(&b.id()) {
            diffs.push(format!("closure({})", b.id().digest.to_hex()));
        }
        if lace.self_closure(b) != reference.self_closure(&b.id()) {
            diffs.push(format!("self_closure({})", b.id().digest.to_hex()));
        }
    }
    for q in &r.creators {
        if lace.detect_equivocations(q) != reference.equivocations(q) {
            diffs.push(format!("detect_equivocations({})", q.short()));
        }
    }
    diffs
}
