use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::constants::{AGENT_ID_LEN, DIGEST_LEN, LEN_PREFIX, NET_ADDRESS_LEN, SIGNATURE_LEN};
use crate::crypto::{self, AgentId, Digest, Keypair, Signature};

/// Opaque simulated network address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetAddress(pub u32);

impl fmt::Display for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Signed hash pointer naming a block.
///
/// Identity is `(creator, digest)`; the signature rides along but is not part
/// of equality, hashing or ordering.
#[derive(Clone, Copy)]
pub struct BlockId {
    pub creator: AgentId,
    pub digest: Digest,
    pub signature: Signature,
}

impl BlockId {
    fn key(&self) -> (&AgentId, &Digest) {
        (&self.creator, &self.digest)
    }

    /// `creator:digest` in full hex; the form used in traces.
    pub fn to_hex(&self) -> String {
        format!("{}:{}", self.creator.to_hex(), self.digest.to_hex())
    }
}

impl PartialEq for BlockId {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for BlockId {}

impl Hash for BlockId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for BlockId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BlockId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.creator.short(), &self.digest.to_hex()[..8])
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Protocol utterances carried by a block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    Empty,
    Follow(AgentId),
    Say(Vec<u8>),
    Respond { text: Vec<u8>, re: BlockId },
    Ack,
    Group(Vec<u8>),
    Invite { target: AgentId, sealed_key: Vec<u8> },
    Accept,
    IpAnnounce { agent: AgentId, address: NetAddress },
}

impl Payload {
    pub fn is_ack(&self) -> bool {
        matches!(self, Payload::Ack)
    }

    pub fn is_utterance(&self) -> bool {
        matches!(self, Payload::Say(_) | Payload::Respond { .. })
    }

    /// Short uppercase tag, used in traces and pretty printing.
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Empty => "EMPTY",
            Payload::Follow(_) => "FOLLOW",
            Payload::Say(_) => "SAY",
            Payload::Respond { .. } => "RESPOND",
            Payload::Ack => "ACK",
            Payload::Group(_) => "GROUP",
            Payload::Invite { .. } => "INVITE",
            Payload::Accept => "ACCEPT",
            Payload::IpAnnounce { .. } => "IP",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Payload::Empty => 0,
            Payload::Follow(_) => 1,
            Payload::Say(_) => 2,
            Payload::Respond { .. } => 3,
            Payload::Ack => 4,
            Payload::Group(_) => 5,
            Payload::Invite { .. } => 6,
            Payload::Accept => 7,
            Payload::IpAnnounce { .. } => 8,
        }
    }
}

/// An immutable signed block `(id, address, payload, pointers)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    id: BlockId,
    address: NetAddress,
    payload: Payload,
    pointers: BTreeSet<BlockId>,
}

impl Block {
    /// Assembles a block without checking anything. Only adversaries and tests
    /// need this; honest code goes through [`new_block`].
    pub fn from_parts_unchecked(
        id: BlockId,
        address: NetAddress,
        payload: Payload,
        pointers: BTreeSet<BlockId>,
    ) -> Self {
        Block { id, address, payload, pointers }
    }

    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn creator(&self) -> AgentId {
        self.id.creator
    }

    pub fn address(&self) -> NetAddress {
        self.address
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn pointers(&self) -> &BTreeSet<BlockId> {
        &self.pointers
    }

    pub fn is_initial(&self) -> bool {
        self.pointers.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_block(self)
    }
}

pub(crate) fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn encode_id(out: &mut Vec<u8>, id: &BlockId) {
    put_field(out, id.creator.as_bytes());
    put_field(out, id.digest.as_bytes());
    put_field(out, &id.signature.0);
}

fn encode_payload(payload: &Payload) -> Vec<u8> {
    let mut out = vec![payload.tag()];
    match payload {
        Payload::Empty | Payload::Ack | Payload::Accept => {}
        Payload::Follow(target) => put_field(&mut out, target.as_bytes()),
        Payload::Say(text) | Payload::Group(text) => put_field(&mut out, text),
        Payload::Respond { text, re } => {
            put_field(&mut out, text);
            let mut id = Vec::new();
            encode_id(&mut id, re);
            put_field(&mut out, &id);
        }
        Payload::Invite { target, sealed_key } => {
            put_field(&mut out, target.as_bytes());
            put_field(&mut out, sealed_key);
        }
        Payload::IpAnnounce { agent, address } => {
            put_field(&mut out, agent.as_bytes());
            put_field(&mut out, &address.0.to_be_bytes());
        }
    }
    out
}

/// Injective, deterministic encoding of a block body.
///
/// Layout: `field(address) ‖ field(payload) ‖ field(pointers)` where every
/// `field` is a big-endian `u32` length followed by the bytes, and pointers
/// are emitted in `(creator, digest)` order.
pub fn canonical_encode(address: NetAddress, payload: &Payload, pointers: &BTreeSet<BlockId>) -> Vec<u8> {
    let mut out = Vec::new();
    put_field(&mut out, &address.0.to_be_bytes());
    put_field(&mut out, &encode_payload(payload));
    let mut ptrs = (pointers.len() as u32).to_be_bytes().to_vec();
    for id in pointers {
        encode_id(&mut ptrs, id);
    }
    put_field(&mut out, &ptrs);
    out
}

/// Creates and signs a block. The digest covers the canonical body and the
/// signature covers the digest.
pub fn new_block(kp: &Keypair, address: NetAddress, payload: Payload, pointers: BTreeSet<BlockId>) -> Block {
    let digest = crypto::hash(&canonical_encode(address, &payload, &pointers));
    let signature = crypto::sign(kp, digest.as_bytes());
    let id = BlockId { creator: kp.agent_id(), digest, signature };
    Block { id, address, payload, pointers }
}

pub fn verify_block(b: &Block) -> bool {
    if b.pointers.contains(&b.id) {
        return false;
    }
    let digest = crypto::hash(&canonical_encode(b.address, &b.payload, &b.pointers));
    digest == b.id.digest && crypto::verify(&b.id.creator, digest.as_bytes(), &b.id.signature)
}

/// Wire format: `field(creator) ‖ field(digest) ‖ field(signature) ‖ body`.
pub fn encode_block(b: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    encode_id(&mut out, &b.id);
    out.extend_from_slice(&canonical_encode(b.address, &b.payload, &b.pointers));
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input truncated")]
    Truncated,
    #[error("field has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("unknown payload tag {0}")]
    UnknownTag(u8),
    #[error("pointers not in canonical order")]
    NonCanonicalPointers,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn field(&mut self) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < LEN_PREFIX {
            return Err(DecodeError::Truncated);
        }
        let (len, rest) = self.buf.split_at(LEN_PREFIX);
        let len = u32::from_be_bytes(len.try_into().expect("prefix width")) as usize;
        if rest.len() < len {
            return Err(DecodeError::Truncated);
        }
        let (field, rest) = rest.split_at(len);
        self.buf = rest;
        Ok(field)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let f = self.field()?;
        f.try_into()
            .map_err(|_| DecodeError::BadLength { expected: N, got: f.len() })
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        if self.buf.len() < 4 {
            return Err(DecodeError::Truncated);
        }
        let (n, rest) = self.buf.split_at(4);
        self.buf = rest;
        Ok(u32::from_be_bytes(n.try_into().expect("4 bytes")))
    }

    fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

fn decode_id(r: &mut Reader<'_>) -> Result<BlockId, DecodeError> {
    let creator = AgentId(r.fixed::<AGENT_ID_LEN>()?);
    let digest = Digest(r.fixed::<DIGEST_LEN>()?);
    let signature = Signature(r.fixed::<SIGNATURE_LEN>()?);
    Ok(BlockId { creator, digest, signature })
}

fn decode_payload(bytes: &[u8]) -> Result<Payload, DecodeError> {
    let (&tag, rest) = bytes.split_first().ok_or(DecodeError::Truncated)?;
    let mut r = Reader { buf: rest };
    let payload = match tag {
        0 => Payload::Empty,
        1 => Payload::Follow(AgentId(r.fixed()?)),
        2 => Payload::Say(r.field()?.to_vec()),
        3 => {
            let text = r.field()?.to_vec();
            let mut inner = Reader { buf: r.field()? };
            let re = decode_id(&mut inner)?;
            inner.finish()?;
            Payload::Respond { text, re }
        }
        4 => Payload::Ack,
        5 => Payload::Group(r.field()?.to_vec()),
        6 => Payload::Invite {
            target: AgentId(r.fixed()?),
            sealed_key: r.field()?.to_vec(),
        },
        7 => Payload::Accept,
        8 => Payload::IpAnnounce {
            agent: AgentId(r.fixed()?),
            address: NetAddress(u32::from_be_bytes(r.fixed::<NET_ADDRESS_LEN>()?)),
        },
        t => return Err(DecodeError::UnknownTag(t)),
    };
    r.finish()?;
    Ok(payload)
}

/// Parses the wire format. Decoding does not verify; see [`verify_block`].
pub fn decode_block(bytes: &[u8]) -> Result<Block, DecodeError> {
    let mut r = Reader { buf: bytes };
    let id = decode_id(&mut r)?;
    let address = NetAddress(u32::from_be_bytes(r.fixed::<NET_ADDRESS_LEN>()?));
    let payload = decode_payload(r.field()?)?;
    let mut pr = Reader { buf: r.field()? };
    r.finish()?;
    let count = pr.u32()? as usize;
    let mut pointers = BTreeSet::new();
    let mut last: Option<BlockId> = None;
    for _ in 0..count {
        let id = decode_id(&mut pr)?;
        if last.is_some_and(|l| l >= id) {
            return Err(DecodeError::NonCanonicalPointers);
        }
        last = Some(id);
        pointers.insert(id);
    }
    pr.finish()?;
    Ok(Block { id, address, payload, pointers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;

    fn set(ids: &[BlockId]) -> BTreeSet<BlockId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn initial_block_verifies() {
        let kp = keygen(1);
        let b = new_block(&kp, NetAddress(1), Payload::Empty, BTreeSet::new());
        assert!(b.is_initial());
        assert!(verify_block(&b));
        assert_eq!(b.creator(), kp.agent_id());
    }

    #[test]
    fn identical_arguments_give_identical_ids() {
        let kp = keygen(1);
        let a = new_block(&kp, NetAddress(9), Payload::Say(b"x".to_vec()), BTreeSet::new());
        let b = new_block(&kp, NetAddress(9), Payload::Say(b"x".to_vec()), BTreeSet::new());
        assert_eq!(a, b);
        assert_eq!(a.id().signature, b.id().signature);
    }

    #[test]
    fn pointer_order_is_canonical() {
        let kp = keygen(2);
        let a = new_block(&kp, NetAddress(1), Payload::Say(b"a".to_vec()), BTreeSet::new()).id();
        let b = new_block(&kp, NetAddress(1), Payload::Say(b"b".to_vec()), BTreeSet::new()).id();
        let mut ab = BTreeSet::new();
        ab.insert(a);
        ab.insert(b);
        let mut ba = BTreeSet::new();
        ba.insert(b);
        ba.insert(a);
        assert_eq!(
            canonical_encode(NetAddress(3), &Payload::Ack, &ab),
            canonical_encode(NetAddress(3), &Payload::Ack, &ba)
        );
    }

    #[test]
    fn length_prefix_separates_fields() {
        let kp = keygen(3);
        let other = new_block(&kp, NetAddress(1), Payload::Empty, BTreeSet::new()).id();
        // "ab" with no pointers versus "a" followed by bytes that start with 'b'
        let one = canonical_encode(NetAddress(1), &Payload::Say(b"ab".to_vec()), &BTreeSet::new());
        let two = canonical_encode(NetAddress(1), &Payload::Say(b"a".to_vec()), &set(&[other]));
        assert_ne!(one, two);
        let three = canonical_encode(NetAddress(1), &Payload::Group(b"ab".to_vec()), &BTreeSet::new());
        assert_ne!(one, three);
    }

    #[test]
    fn tampering_is_detected() {
        let kp = keygen(4);
        let b = new_block(&kp, NetAddress(1), Payload::Say(b"hi".to_vec()), BTreeSet::new());
        let forged = Block::from_parts_unchecked(b.id(), b.address(), Payload::Say(b"ho".to_vec()), BTreeSet::new());
        assert!(!verify_block(&forged));

        let mallory = keygen(5);
        let resigned = new_block(&mallory, b.address(), b.payload().clone(), BTreeSet::new());
        let mut id = resigned.id();
        id.creator = kp.agent_id();
        let reattributed = Block::from_parts_unchecked(id, b.address(), b.payload().clone(), BTreeSet::new());
        assert!(!verify_block(&reattributed));
    }

    #[test]
    fn every_single_bit_flip_of_wire_bytes_is_rejected() {
        let kp = keygen(6);
        let parent = new_block(&kp, NetAddress(1), Payload::Empty, BTreeSet::new());
        let b = new_block(
            &kp,
            NetAddress(2),
            Payload::Respond { text: b"reply".to_vec(), re: parent.id() },
            set(&[parent.id()]),
        );
        let wire = b.encode();
        assert_eq!(decode_block(&wire).unwrap(), b);
        for bit in 0..wire.len() * 8 {
            let mut w = wire.clone();
            w[bit / 8] ^= 1 << (bit % 8);
            if let Ok(decoded) = decode_block(&w) {
                assert!(!verify_block(&decoded), "bit {bit} flip accepted");
            }
        }
    }

    #[test]
    fn decode_rejects_trailing_and_truncated() {
        let kp = keygen(7);
        let wire = new_block(&kp, NetAddress(1), Payload::Accept, BTreeSet::new()).encode();
        let mut long = wire.clone();
        long.push(0);
        assert_eq!(decode_block(&long), Err(DecodeError::Trailing(1)));
        assert_eq!(decode_block(&wire[..wire.len() - 1]), Err(DecodeError::Truncated));
    }

    #[test]
    fn wire_golden_digest() {
        // Pins the whole encode -> hash pipeline.
        let kp = keygen(42);
        let b = new_block(&kp, NetAddress(7), Payload::Say(b"hello".to_vec()), BTreeSet::new());
        assert_eq!(
            hex::encode(canonical_encode(b.address(), b.payload(), b.pointers())),
            "00000004000000070000000a02000000056865\
             6c6c6f0000000400000000"
        );
        assert_eq!(
            b.id().digest.to_hex(),
            "01565cb52a96775166e3b1f2f5f877f750b18fd129ff8ecd08635190c411f2fb"
        );
        assert_eq!(
            kp.agent_id().to_hex(),
            "ec29681476a4f19e5bfdeebb85b287be40c7f0de94fb09155e3dbb2ea64ed40e"
        );
    }
}
