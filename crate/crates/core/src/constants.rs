//! Fixed sizes of every primitive that appears in the canonical block encoding.
//!
//! Changing any of these changes the wire format and every golden digest.

/// Length of an [`AgentId`](crate::crypto::AgentId): an Ed25519 verification key.
pub const AGENT_ID_LEN: usize = 32;

/// Length of a [`Digest`](crate::crypto::Digest): SHA-256 output.
pub const DIGEST_LEN: usize = 32;

/// Length of a [`Signature`](crate::crypto::Signature): an Ed25519 signature.
pub const SIGNATURE_LEN: usize = 64;

/// Length of a symmetric group key (ChaCha20-Poly1305).
pub const GROUP_KEY_LEN: usize = 32;

/// Nonce length of the group message cipher.
pub const NONCE_LEN: usize = 12;

/// Length of a [`NetAddress`](crate::blocklace::NetAddress) token.
pub const NET_ADDRESS_LEN: usize = 4;

/// Width of every length prefix in the canonical encoding (big-endian `u32`).
pub const LEN_PREFIX: usize = 4;
