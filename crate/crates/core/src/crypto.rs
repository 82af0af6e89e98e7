//! Digests and the node signature interface.
//!
//! Two signature backends sit behind [`Keypair`]/[`PublicKey`]: Ed25519 for
//! realistic runs, and a deterministic keyed-hash scheme for fast property
//! tests. The test scheme publishes its key as the verification key, so it
//! only models honest-but-identified signers; it is not unforgeable.

use std::fmt;

use ed25519_dalek::{Signer as _, Verifier as _};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Digest)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok().and_then(|b| Self::from_slice(&b))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Index of a node within its chain.
pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    Ed25519,
    Test,
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..self.0.len().min(6)]))
    }
}

#[derive(Clone)]
pub enum Keypair {
    Ed25519(ed25519_dalek::SigningKey),
    Test([u8; 32]),
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Keypair::Ed25519(_) => f.write_str("Keypair::Ed25519(..)"),
            Keypair::Test(_) => f.write_str("Keypair::Test(..)"),
        }
    }
}

impl Keypair {
    pub fn from_seed(kind: SchemeKind, seed: [u8; 32]) -> Self {
        match kind {
            SchemeKind::Ed25519 => Keypair::Ed25519(ed25519_dalek::SigningKey::from_bytes(&seed)),
            SchemeKind::Test => Keypair::Test(seed),
        }
    }

    /// Key for node `node` of `chain_id`, derived from the simulation seed.
    pub fn derive(kind: SchemeKind, sim_seed: u64, chain_id: &str, node: NodeId) -> Self {
        let seed = hash_parts(&[
            b"interchain/node-key",
            &sim_seed.to_be_bytes(),
            chain_id.as_bytes(),
            &[0],
            &node.to_be_bytes(),
        ]);
        Self::from_seed(kind, seed.0)
    }

    pub fn public(&self) -> PublicKey {
        match self {
            Keypair::Ed25519(k) => PublicKey::Ed25519(k.verifying_key()),
            Keypair::Test(seed) => PublicKey::Test(*seed),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match self {
            Keypair::Ed25519(k) => Signature(k.sign(msg).to_bytes().to_vec()),
            Keypair::Test(seed) => Signature(hash_parts(&[b"test-sig", seed, msg]).0.to_vec()),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub enum PublicKey {
    Ed25519(ed25519_dalek::VerifyingKey),
    Test([u8; 32]),
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PublicKey::Ed25519(k) => write!(f, "Ed25519({})", hex::encode(&k.as_bytes()[..6])),
            PublicKey::Test(k) => write!(f, "Test({})", hex::encode(&k[..6])),
        }
    }
}

impl PublicKey {
    /// Never panics: malformed signatures simply fail.
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        match self {
            PublicKey::Ed25519(k) => {
                let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
                    return false;
                };
                k.verify(msg, &ed25519_dalek::Signature::from_bytes(&bytes)).is_ok()
            }
            PublicKey::Test(seed) => sig.0 == hash_parts(&[b"test-sig", seed, msg]).0,
        }
    }
}

/// Public keys of one chain's nodes, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySet {
    pub chain_id: String,
    pub f: usize,
    pub keys: Vec<PublicKey>,
}

impl KeySet {
    pub fn get(&self, node: NodeId) -> Option<&PublicKey> {
        self.keys.get(node as usize)
    }

    /// Number of distinct members whose signature over `msg` verifies.
    pub fn count_valid<'a, I>(&self, msg: &[u8], sigs: I) -> usize
    where
        I: IntoIterator<Item = (&'a NodeId, &'a Signature)>,
    {
        let mut seen = std::collections::BTreeSet::new();
        for (node, sig) in sigs {
            if seen.contains(node) {
                continue;
            }
            if self.get(*node).is_some_and(|pk| pk.verify(msg, sig)) {
                seen.insert(*node);
            }
        }
        seen.len()
    }
}
