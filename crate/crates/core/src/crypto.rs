//! Hashing, signing, key generation and the group-key layer.
//!
//! Everything here is deterministic given its inputs: keys are derived from
//! seeds, Ed25519 signing is deterministic, and the ephemeral key used to seal
//! a group key is derived from the sealed material itself. That keeps whole
//! simulation runs byte-reproducible.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload as AeadPayload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use curve25519_dalek::edwards::{CompressedEdwardsY, EdwardsPoint};
use curve25519_dalek::scalar::Scalar;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::constants::{AGENT_ID_LEN, DIGEST_LEN, GROUP_KEY_LEN, NONCE_LEN, SIGNATURE_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("recipient key is not a valid curve point")]
    InvalidRecipient,
    #[error("sealed group key is malformed")]
    MalformedSealed,
    #[error("decryption failed")]
    Decryption,
}

/// Public verification key identifying an agent.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub [u8; AGENT_ID_LEN]);

impl AgentId {
    pub fn as_bytes(&self) -> &[u8; AGENT_ID_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(AgentId(bytes.try_into().ok()?))
    }

    /// First four bytes in hex, for logs and pretty printing.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgentId({})", self.short())
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..4]))
    }
}

/// An agent's signing keypair.
#[derive(Clone)]
pub struct Keypair {
    agent_id: AgentId,
    signing: SigningKey,
}

impl Keypair {
    pub fn from_secret_bytes(secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let agent_id = AgentId(signing.verifying_key().to_bytes());
        Keypair { agent_id, signing }
    }

    pub fn agent_id(&self) -> AgentId {
        self.agent_id
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("agent_id", &self.agent_id)
            .finish_non_exhaustive()
    }
}

/// Derives a keypair from a seed. Equal seeds give equal keypairs.
pub fn keygen(seed: u64) -> Keypair {
    let secret = hash_parts(&[b"grassroots/keygen", &seed.to_be_bytes()]);
    Keypair::from_secret_bytes(secret.0)
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hash of the concatenation of `parts`, each prefixed with its length.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u32).to_be_bytes());
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

pub fn sign(kp: &Keypair, bytes: &[u8]) -> Signature {
    Signature(kp.signing.sign(bytes).to_bytes())
}

/// Returns false on any mismatch, including a malformed verification key.
pub fn verify(agent: &AgentId, bytes: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&agent.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(bytes, &sig).is_ok()
}

/// Symmetric key shared by the members of one group.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupKey {
    key: [u8; GROUP_KEY_LEN],
    genesis: Digest,
}

impl fmt::Debug for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupKey")
            .field("genesis", &self.genesis)
            .finish_non_exhaustive()
    }
}

impl GroupKey {
    /// Digest of the genesis block of the group this key belongs to.
    pub fn genesis(&self) -> Digest {
        self.genesis
    }
}

pub fn group_keygen(seed: &[u8], genesis: Digest) -> GroupKey {
    let key = hash_parts(&[b"grassroots/group-key", seed, &genesis.0]).0;
    GroupKey { key, genesis }
}

fn decompress(agent: &AgentId) -> Option<EdwardsPoint> {
    CompressedEdwardsY(agent.0).decompress()
}

fn seal_cipher(shared: &EdwardsPoint, ephemeral: &[u8; 32], recipient: &AgentId) -> ChaCha20Poly1305 {
    let kdf = hash_parts(&[
        b"grassroots/seal-kdf",
        shared.compress().as_bytes(),
        ephemeral,
        &recipient.0,
    ]);
    ChaCha20Poly1305::new(Key::from_slice(&kdf.0))
}

/// Encrypts `key` to `recipient`'s public key.
///
/// Output layout: ephemeral point (32) followed by the AEAD ciphertext of
/// `key ‖ genesis` (64 + 16 tag). The ephemeral scalar is derived from the key
/// and recipient, so every (key, recipient) pair has its own cipher key and a
/// fixed nonce is safe.
pub fn seal(key: &GroupKey, recipient: &AgentId) -> Result<Vec<u8>, CryptoError> {
    let point = decompress(recipient).ok_or(CryptoError::InvalidRecipient)?;
    let eph_seed = hash_parts(&[b"grassroots/seal-eph", &key.key, &key.genesis.0, &recipient.0]);
    let eph = Scalar::from_bytes_mod_order(eph_seed.0);
    let eph_pub = EdwardsPoint::mul_base(&eph).compress().to_bytes();
    let shared = eph * point;
    let cipher = seal_cipher(&shared, &eph_pub, recipient);
    let mut plain = Vec::with_capacity(GROUP_KEY_LEN + DIGEST_LEN);
    plain.extend_from_slice(&key.key);
    plain.extend_from_slice(&key.genesis.0);
    let ct = cipher
        .encrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), plain.as_slice())
        .expect("chacha20poly1305 encryption is infallible for small inputs");
    let mut out = eph_pub.to_vec();
    out.extend_from_slice(&ct);
    Ok(out)
}

/// Recovers a group key sealed to `kp`. Fails on the wrong recipient.
pub fn open(kp: &Keypair, sealed: &[u8]) -> Result<GroupKey, CryptoError> {
    if sealed.len() < 32 {
        return Err(CryptoError::MalformedSealed);
    }
    let (eph_bytes, ct) = sealed.split_at(32);
    let eph_bytes: [u8; 32] = eph_bytes.try_into().expect("split at 32");
    let eph = CompressedEdwardsY(eph_bytes)
        .decompress()
        .ok_or(CryptoError::MalformedSealed)?;
    let shared = kp.signing.to_scalar() * eph;
    let cipher = seal_cipher(&shared, &eph_bytes, &kp.agent_id);
    let plain = cipher
        .decrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), ct)
        .map_err(|_| CryptoError::Decryption)?;
    if plain.len() != GROUP_KEY_LEN + DIGEST_LEN {
        return Err(CryptoError::MalformedSealed);
    }
    let key: [u8; GROUP_KEY_LEN] = plain[..GROUP_KEY_LEN].try_into().expect("length checked");
    let genesis = Digest(plain[GROUP_KEY_LEN..].try_into().expect("length checked"));
    Ok(GroupKey { key, genesis })
}

/// Encrypts a group message. Output is `nonce ‖ ciphertext`; the genesis
/// digest is bound as associated data.
pub fn encrypt(key: &GroupKey, nonce: [u8; NONCE_LEN], plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key));
    let ct = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            AeadPayload { msg: plaintext, aad: &key.genesis.0 },
        )
        .expect("chacha20poly1305 encryption is infallible for small inputs");
    let mut out = nonce.to_vec();
    out.extend_from_slice(&ct);
    out
}

pub fn decrypt(key: &GroupKey, bytes: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if bytes.len() < NONCE_LEN {
        return Err(CryptoError::Decryption);
    }
    let (nonce, ct) = bytes.split_at(NONCE_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key));
    cipher
        .decrypt(Nonce::from_slice(nonce), AeadPayload { msg: ct, aad: &key.genesis.0 })
        .map_err(|_| CryptoError::Decryption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keygen_is_deterministic() {
        assert_eq!(keygen(7).agent_id(), keygen(7).agent_id());
        assert_eq!(keygen(7).secret_bytes(), keygen(7).secret_bytes());
        assert_ne!(keygen(7).agent_id(), keygen(8).agent_id());
    }

    #[test]
    fn sign_verify() {
        let p = keygen(1);
        let q = keygen(2);
        let sig = sign(&p, b"m");
        assert!(verify(&p.agent_id(), b"m", &sig));
        assert!(!verify(&p.agent_id(), b"m2", &sig));
        assert!(!verify(&q.agent_id(), b"m", &sig));
    }

    #[test]
    fn any_bit_flip_breaks_verification() {
        let p = keygen(3);
        let msg = b"grassroots".to_vec();
        let sig = sign(&p, &msg);
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&p.agent_id(), &m, &sig));
        }
        for bit in 0..SIGNATURE_LEN * 8 {
            let mut s = sig;
            s.0[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&p.agent_id(), &msg, &s));
        }
        for bit in 0..AGENT_ID_LEN * 8 {
            let mut id = p.agent_id();
            id.0[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&id, &msg, &sig));
        }
    }

    #[test]
    fn empty_hash_golden() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn no_collision_with_appended_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let len = rng.gen_range(0..64);
            let x: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut y = x.clone();
            y.push(0);
            assert_eq!(hash(&x), hash(&x));
            assert_ne!(hash(&x), hash(&y));
        }
    }

    #[test]
    fn seal_open_round_trip_and_wrong_recipient() {
        let q = keygen(20);
        let r = keygen(21);
        let key = group_keygen(b"seed", hash(b"genesis"));
        let sealed = seal(&key, &q.agent_id()).unwrap();
        assert_eq!(open(&q, &sealed).unwrap(), key);
        assert_eq!(open(&r, &sealed), Err(CryptoError::Decryption));
        assert_eq!(open(&q, &sealed[..10]), Err(CryptoError::MalformedSealed));
    }

    #[test]
    fn encrypt_decrypt() {
        let key = group_keygen(b"k", hash(b"g"));
        let ct = encrypt(&key, [0; NONCE_LEN], b"hello");
        assert_eq!(decrypt(&key, &ct).unwrap(), b"hello");
        let other = group_keygen(b"k", hash(b"other group"));
        assert!(decrypt(&other, &ct).is_err());
    }

    #[test]
    fn thousand_random_payloads_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let members: Vec<Keypair> = (100..110).map(keygen).collect();
        for i in 0..1000u32 {
            let seed: [u8; 8] = rng.gen();
            let key = group_keygen(&seed, hash(&i.to_be_bytes()));
            let who = &members[i as usize % members.len()];
            let sealed = seal(&key, &who.agent_id()).unwrap();
            assert_eq!(open(who, &sealed).unwrap(), key);

            let len = rng.gen_range(0..200);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let nonce: [u8; NONCE_LEN] = rng.gen();
            assert_eq!(decrypt(&key, &encrypt(&key, nonce, &msg)).unwrap(), msg);
        }
    }
}
