//! Bad blocks for the forger role.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};

use crate::blocklace::{canonical_encode, decode_block, Block, BlockId, NetAddress, Payload};
use crate::crypto::{self, AgentId, Signature};
use crate::simnet::TraceEvent;

/// Fresh `Say` blocks claiming `victim` as creator. The digest matches the
/// body; the signature is random.
pub fn bad_signature_blocks(victim: AgentId, count: usize, rng: &mut impl RngCore) -> Vec<Block> {
    (0..count)
        .map(|i| {
            let payload = Payload::Say(format!("forged {i}").into_bytes());
            let address = NetAddress(rng.gen());
            let pointers = BTreeSet::new();
            let digest = crypto::hash(&canonical_encode(address, &payload, &pointers));
            let mut sig = [0u8; 64];
            rng.fill_bytes(&mut sig);
            let id = BlockId { creator: victim, digest, signature: Signature(sig) };
            Block::from_parts_unchecked(id, address, payload, pointers)
        })
        .collect()
}

/// Non-ack `victim` blocks seen on the wire so far, oldest first.
pub fn captured(trace: &[TraceEvent], victim: &AgentId) -> Vec<Block> {
    let mut seen = BTreeSet::new();
    trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Payload { bytes, .. } => decode_block(bytes).ok(),
            _ => None,
        })
        .filter(|b| b.creator() == *victim && !b.payload().is_ack() && seen.insert(b.id()))
        .collect()
}

/// `count` altered copies of `originals`, cycling through them. Each keeps
/// its original id and signature, so it no longer verifies.
pub fn tampered_blocks(originals: &[Block], count: usize) -> Vec<Block> {
    if originals.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let b = &originals[i % originals.len()];
            let round = (i / originals.len()) as u32 + 1;
            let payload = match b.payload() {
                Payload::Say(t) => Payload::Say(flip(t, round)),
                Payload::Respond { text, re } => Payload::Respond { text: flip(text, round), re: *re },
                Payload::Group(n) => Payload::Group(flip(n, round)),
                other => other.clone(),
            };
            let address = NetAddress(b.address().0.wrapping_add(round));
            Block::from_parts_unchecked(b.id(), address, payload, b.pointers().clone())
        })
        .collect()
}

fn flip(bytes: &[u8], round: u32) -> Vec<u8> {
    let mut out = bytes.to_vec();
    match out.first_mut() {
        Some(first) => *first ^= round as u8 | 1,
        None => out.push(round as u8),
    }
    out
}
