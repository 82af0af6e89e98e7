use std::collections::BTreeMap;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{hash, Digest, KeySet, NodeId, Signature};

pub const EVENT_VERSION: u8 = 1;

/// Cross-chain message kinds used by the transaction layer. Application
/// contracts use kinds from [`KIND_APP_BASE`] upward.
pub mod kind {
    pub const READ_REQ: u8 = 1;
    pub const READ_RESP: u8 = 2;
    pub const MT_PREPARE: u8 = 3;
    pub const MT_VOTE: u8 = 4;
    pub const MT_DECIDE: u8 = 5;
    pub const GT_PREPARE: u8 = 6;
    pub const GT_VOTE: u8 = 7;
    pub const GT_DECIDE: u8 = 8;
    pub const DECIDE_ACK: u8 = 9;
    pub const KIND_APP_BASE: u8 = 32;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub version: u8,
    pub source_chain: String,
    pub dest_chain: String,
    pub source_contract: String,
    pub dest_contract: String,
    pub nonce: u64,
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Event {
    pub fn encode_into(&self, enc: &mut Encoder) {
        enc.u8(self.version)
            .str(&self.source_chain)
            .str(&self.dest_chain)
            .str(&self.source_contract)
            .str(&self.dest_contract)
            .u64(self.nonce)
            .u8(self.kind)
            .bytes(&self.payload);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.position();
        let version = dec.u8()?;
        if version != EVENT_VERSION {
            return Err(DecodeError::BadTag { tag: version, offset: at });
        }
        Ok(Event {
            version,
            source_chain: dec.string()?,
            dest_chain: dec.string()?,
            source_contract: dec.string()?,
            dest_contract: dec.string()?,
            nonce: dec.u64()?,
            kind: dec.u8()?,
            payload: dec.bytes()?.to_vec(),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let e = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(e)
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }
}

/// An event plus the source-chain node signatures over its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEventBatch {
    pub event: Event,
    pub signatures: BTreeMap<NodeId, Signature>,
}

impl SignedEventBatch {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.event.encode_into(&mut enc);
        enc.u16(self.signatures.len() as u16);
        for (node, sig) in &self.signatures {
            enc.str(&node.to_string()).bytes(&sig.0);
        }
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let event = Event::decode_from(&mut dec)?;
        let count = dec.u16()?;
        let mut signatures = BTreeMap::new();
        for _ in 0..count {
            let id = dec.string()?;
            let node = parse_node_id(&id).ok_or_else(|| DecodeError::Invalid(format!("bad node id {id:?}")))?;
            let sig = Signature(dec.bytes()?.to_vec());
            if signatures.insert(node, sig).is_some() {
                return Err(DecodeError::Invalid(format!("duplicate signer {node}")));
            }
        }
        dec.finish()?;
        Ok(Self { event, signatures })
    }

    /// Number of distinct source-chain members whose signature verifies
    /// over this event's digest.
    pub fn valid_signers(&self, keys: &KeySet) -> usize {
        let digest = self.event.digest();
        keys.count_valid(digest.as_bytes(), self.signatures.iter())
    }

    /// At least f+1 valid source signatures from the chain named in the event.
    pub fn verify(&self, keys: &KeySet) -> bool {
        keys.chain_id == self.event.source_chain && self.valid_signers(keys) > keys.f
    }
}

/// Decimal without sign or leading zeros, so each node has one textual form.
fn parse_node_id(s: &str) -> Option<NodeId> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}
