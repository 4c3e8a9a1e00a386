//! Seeded simulation of an unreliable datagram network.
//!
//! Datagrams may be lost, duplicated and delayed; those due on the same tick
//! are delivered in a seeded random order. Agents own addresses that can be
//! rebound mid-run, and datagrams still addressed to an abandoned address
//! are dropped. Every decision is logged to the trace.

pub mod trace;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocklace::NetAddress;
use crate::crypto::{self, AgentId};
pub use trace::{BlockKey, TraceEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub loss: f64,
    pub dup: f64,
    pub delay_min: u64,
    pub delay_max: u64,
    pub seed: u64,
    pub tick_interval: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { loss: 0.3, dup: 0.0, delay_min: 1, delay_max: 5, seed: 0, tick_interval: 1 }
    }
}

impl NetConfig {
    pub fn reliable() -> Self {
        NetConfig { loss: 0.0, dup: 0.0, delay_min: 1, delay_max: 1, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.loss) || !prob(self.dup) {
            return Err(NetError::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.delay_min == 0 || self.delay_min > self.delay_max {
            return Err(NetError::Config("need 1 <= delay_min <= delay_max".into()));
        }
        if self.tick_interval == 0 {
            return Err(NetError::Config("tick_interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("address {0:?} is already owned")]
    Collision(NetAddress),
    #[error("agent {0} has no address")]
    Unbound(AgentId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datagram {
    pub id: u64,
    pub src: NetAddress,
    pub dst: NetAddress,
    pub payload: Vec<u8>,
    pub inject_time: u64,
}

/// Which agent owns which address, with the full binding history.
#[derive(Clone, Debug, Default)]
pub struct AddressTable {
    owner: BTreeMap<NetAddress, AgentId>,
    current: BTreeMap<AgentId, NetAddress>,
    history: Vec<(AgentId, NetAddress, u64)>,
}

impl AddressTable {
    pub fn owner(&self, a: NetAddress) -> Option<AgentId> {
        self.owner.get(&a).copied()
    }

    pub fn address(&self, q: &AgentId) -> Option<NetAddress> {
        self.current.get(q).copied()
    }

    /// `(agent, address, from_tick)` in binding order.
    pub fn history(&self) -> &[(AgentId, NetAddress, u64)] {
        &self.history
    }

    /// Binds `q` to `a`, releasing `q`'s previous address. Returns false if
    /// `q` already owned `a`.
    pub fn bind(&mut self, q: AgentId, a: NetAddress, now: u64) -> Result<bool, NetError> {
        match self.owner.get(&a) {
            Some(o) if *o == q => return Ok(false),
            Some(_) => return Err(NetError::Collision(a)),
            None => {}
        }
        if let Some(old) = self.current.insert(q, a) {
            self.owner.remove(&old);
        }
        self.owner.insert(a, q);
        self.history.push((q, a, now));
        Ok(true)
    }
}

pub struct Simnet {
    config: NetConfig,
    rng: ChaCha8Rng,
    next_dg: u64,
    queue: BTreeMap<u64, Vec<Datagram>>,
    table: AddressTable,
    seen_payloads: HashSet<crypto::Digest>,
    trace: Vec<TraceEvent>,
}

impl Simnet {
    pub fn new(config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        Ok(Simnet {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            next_dg: 0,
            queue: BTreeMap::new(),
            table: AddressTable::default(),
            seen_payloads: HashSet::new(),
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn table(&self) -> &AddressTable {
        &self.table
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceEvent> {
        self.trace
    }

    pub fn record(&mut self, e: TraceEvent) {
        self.trace.push(e);
    }

    /// Logs `bytes` under its digest the first time it is seen.
    pub fn record_payload(&mut self, now: u64, bytes: &[u8]) -> crypto::Digest {
        let digest = crypto::hash(bytes);
        if self.seen_payloads.insert(digest) {
            self.trace.push(TraceEvent::Payload { tick: now, digest, bytes: bytes.to_vec() });
        }
        digest
    }

    /// Datagrams scheduled but not yet due.
    pub fn in_flight(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }

    pub fn bind(&mut self, q: AgentId, a: NetAddress, now: u64) -> Result<(), NetError> {
        if self.table.bind(q, a, now)? {
            self.trace.push(TraceEvent::Bind { tick: now, agent: q, address: a });
        }
        Ok(())
    }

    /// Moves `q` to `new`. Returns false when `q` already owned it.
    pub fn rebind(&mut self, q: AgentId, new: NetAddress, now: u64) -> Result<bool, NetError> {
        let old = self.table.address(&q).ok_or(NetError::Unbound(q))?;
        let changed = self.table.bind(q, new, now)?;
        if changed {
            self.trace.push(TraceEvent::Rebind { tick: now, agent: q, old, new });
        }
        Ok(changed)
    }

    /// Submits a datagram at `now` and returns its id.
    pub fn submit(&mut self, src: NetAddress, dst: NetAddress, payload: Vec<u8>, now: u64) -> u64 {
        let dg = self.next_dg;
        self.next_dg += 1;
        let digest = self.record_payload(now, &payload);
        self.trace.push(TraceEvent::Submit { tick: now, dg, src, dst, payload: digest });
        if self.rng.gen_bool(self.config.loss) {
            self.trace.push(TraceEvent::DropLoss { tick: now, dg });
            return dg;
        }
        let copies = if self.rng.gen_bool(self.config.dup) {
            self.trace.push(TraceEvent::Dup { tick: now, dg });
            2
        } else {
            1
        };
        for _ in 0..copies {
            let due = now + self.rng.gen_range(self.config.delay_min..=self.config.delay_max);
            let d = Datagram { id: dg, src, dst, payload: payload.clone(), inject_time: now };
            self.queue.entry(due).or_default().push(d);
        }
        dg
    }

    /// Everything due at or before `now`, in seeded random order, paired with
    /// the agent currently owning the destination. Datagrams to addresses no
    /// one owns are dropped.
    pub fn step(&mut self, now: u64) -> Vec<(AgentId, Datagram)> {
        let mut due = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if *entry.key() > now {
                break;
            }
            due.extend(entry.remove());
        }
        due.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(due.len());
        for d in due {
            match self.table.owner(d.dst) {
                Some(agent) => {
                    self.trace.push(TraceEvent::Deliver { tick: now, dg: d.id, dst: d.dst, agent });
                    out.push((agent, d));
                }
                None => self.trace.push(TraceEvent::DropStale { tick: now, dg: d.id, dst: d.dst }),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;

    fn two_agents(net: &mut Simnet) -> (AgentId, AgentId) {
        let (a, b) = (keygen(1).agent_id(), keygen(2).agent_id());
        net.bind(a, NetAddress(1), 0).unwrap();
        net.bind(b, NetAddress(2), 0).unwrap();
        (a, b)
    }

    #[test]
    fn reliable_is_exactly_once_next_tick() {
        let mut net = Simnet::new(NetConfig::reliable()).unwrap();
        let (_, b) = two_agents(&mut net);
        net.submit(NetAddress(1), NetAddress(2), vec![9], 0);
        assert!(net.step(0).is_empty());
        let got = net.step(1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, b);
        assert_eq!(got[0].1.payload, vec![9]);
        assert!(net.step(2).is_empty());
        assert_eq!(net.in_flight(), 0);
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let cfg = NetConfig { loss: 1.0, ..NetConfig::reliable() };
        let mut net = Simnet::new(cfg).unwrap();
        two_agents(&mut net);
        for t in 0..100 {
            net.submit(NetAddress(1), NetAddress(2), vec![1], t);
            assert!(net.step(t).is_empty());
        }
    }

    #[test]
    fn fair_lossy_eventually_delivers() {
        let cfg = NetConfig { loss: 0.9, seed: 11, ..NetConfig::reliable() };
        let mut net = Simnet::new(cfg).unwrap();
        two_agents(&mut net);
        let mut delivered = 0;
        for t in 0..10_000 {
            net.submit(NetAddress(1), NetAddress(2), vec![1], t);
            delivered += net.step(t + 1).len();
        }
        assert!(delivered >= 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let cfg = NetConfig { loss: 0.3, dup: 0.2, delay_min: 1, delay_max: 4, seed, tick_interval: 1 };
            let mut net = Simnet::new(cfg).unwrap();
            two_agents(&mut net);
            for t in 0..200 {
                net.submit(NetAddress(1), NetAddress(2), vec![t as u8], t);
                net.submit(NetAddress(2), NetAddress(1), vec![t as u8, 1], t);
                net.step(t);
            }
            trace::render(net.trace())
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn same_tick_order_is_seeded_shuffle() {
        let order = |seed| {
            let mut net = Simnet::new(NetConfig { seed, ..NetConfig::reliable() }).unwrap();
            two_agents(&mut net);
            for i in 0..8u8 {
                net.submit(NetAddress(1), NetAddress(2), vec![i], 0);
            }
            net.step(1).into_iter().map(|(_, d)| d.payload[0]).collect::<Vec<_>>()
        };
        assert_eq!(order(3), order(3));
        let mut sorted = order(3);
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert!((0..20).any(|s| order(s) != sorted));
    }

    #[test]
    fn stale_address_drops_in_flight() {
        let mut net = Simnet::new(NetConfig::reliable()).unwrap();
        let (_, b) = two_agents(&mut net);
        net.submit(NetAddress(1), NetAddress(2), vec![1], 0);
        assert!(net.rebind(b, NetAddress(7), 0).unwrap());
        assert!(net.step(1).is_empty());
        assert!(matches!(net.trace().last(), Some(TraceEvent::DropStale { .. })));
        net.submit(NetAddress(1), NetAddress(7), vec![2], 1);
        assert_eq!(net.step(2)[0].0, b);
    }

    #[test]
    fn rebind_rules() {
        let mut net = Simnet::new(NetConfig::reliable()).unwrap();
        let (a, b) = two_agents(&mut net);
        assert!(!net.rebind(b, NetAddress(2), 1).unwrap());
        assert_eq!(net.rebind(b, NetAddress(1), 1), Err(NetError::Collision(NetAddress(1))));
        assert!(net.rebind(a, NetAddress(3), 2).unwrap());
        // a's old address is free again
        assert!(net.rebind(b, NetAddress(1), 3).unwrap());
        assert_eq!(net.table().owner(NetAddress(2)), None);
        assert_eq!(net.table().history().len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig { loss: 1.5, ..Default::default() }.validate().is_err());
        assert!(NetConfig { delay_min: 3, delay_max: 2, ..Default::default() }.validate().is_err());
        assert!(NetConfig::default().validate().is_ok());
    }
}
