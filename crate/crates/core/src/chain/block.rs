use std::collections::BTreeMap;
use std::fmt;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{hash, Digest, KeySet, NodeId, Signature};
use crate::merkle::node_hash;
use crate::value::Value;
use crate::xbus::Event;

/// Originator of a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Caller {
    /// An end user submitting directly to this chain.
    User(String),
    /// A contract, possibly on another chain.
    Contract { chain: String, contract: String },
    /// The chain itself: registrations, policy updates, timers.
    System,
    /// A user of another chain acting through a cross-chain transaction.
    RemoteUser { chain: String, user: String },
}

impl Caller {
    pub fn user(name: &str) -> Self {
        Caller::User(name.to_string())
    }

    pub fn contract(chain: &str, contract: &str) -> Self {
        Caller::Contract { chain: chain.to_string(), contract: contract.to_string() }
    }

    /// `caller.id` as seen by policies.
    pub fn id(&self) -> &str {
        match self {
            Caller::User(u) | Caller::RemoteUser { user: u, .. } => u,
            Caller::Contract { contract, .. } => contract,
            Caller::System => "sys",
        }
    }

    /// `caller.chain` as seen by policies; users belong to the local chain.
    pub fn chain<'a>(&'a self, local: &'a str) -> &'a str {
        match self {
            Caller::Contract { chain, .. } | Caller::RemoteUser { chain, .. } => chain,
            _ => local,
        }
    }

    /// The caller as other chains should see it: local users are tagged with
    /// `local` so that remote policies do not mistake them for their own.
    pub fn qualified(&self, local: &str) -> Self {
        match self {
            Caller::User(u) => Caller::RemoteUser { chain: local.to_string(), user: u.clone() },
            other => other.clone(),
        }
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Caller::User(u) => {
                enc.u8(0).str(u);
            }
            Caller::Contract { chain, contract } => {
                enc.u8(1).str(chain).str(contract);
            }
            Caller::System => {
                enc.u8(2);
            }
            Caller::RemoteUser { chain, user } => {
                enc.u8(3).str(chain).str(user);
            }
        }
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.position();
        match dec.u8()? {
            0 => Ok(Caller::User(dec.string()?)),
            1 => Ok(Caller::Contract { chain: dec.string()?, contract: dec.string()? }),
            2 => Ok(Caller::System),
            3 => Ok(Caller::RemoteUser { chain: dec.string()?, user: dec.string()? }),
            tag => Err(DecodeError::BadTag { tag, offset: at }),
        }
    }
}

impl fmt::Display for Caller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Caller::User(u) => write!(f, "user:{u}"),
            Caller::Contract { chain, contract } => write!(f, "{contract}@{chain}"),
            Caller::System => f.write_str("sys"),
            Caller::RemoteUser { chain, user } => write!(f, "user:{user}@{chain}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub caller: Caller,
    pub target_contract: String,
    pub method: String,
    pub args: Vec<Value>,
    pub nonce: u64,
}

impl Transaction {
    pub fn new(caller: Caller, target: &str, method: &str, args: Vec<Value>, nonce: u64) -> Self {
        Self { caller, target_contract: target.to_string(), method: method.to_string(), args, nonce }
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        self.caller.encode_into(enc);
        enc.str(&self.target_contract).str(&self.method).u32(self.args.len() as u32);
        for a in &self.args {
            a.encode_into(enc);
        }
        enc.u64(self.nonce);
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let caller = Caller::decode_from(dec)?;
        let target_contract = dec.string()?;
        let method = dec.string()?;
        let n = dec.u32()? as usize;
        let mut args = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            args.push(Value::decode_from(dec)?);
        }
        Ok(Self { caller, target_contract, method, args, nonce: dec.u64()? })
    }

    /// Digest over the canonical encoding of every field.
    pub fn id(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        hash(enc.as_slice())
    }
}

/// One ordered item of a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Txn(Transaction),
    /// Cross-chain event accepted from the bus for the destination contract.
    Inbound(Event),
}

impl Entry {
    pub fn id(&self) -> Digest {
        match self {
            Entry::Txn(t) => t.id(),
            Entry::Inbound(e) => e.digest(),
        }
    }

    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Entry::Txn(t) => {
                enc.u8(0);
                t.encode_into(enc);
            }
            Entry::Inbound(e) => {
                enc.u8(1);
                e.encode_into(enc);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.position();
        match dec.u8()? {
            0 => Ok(Entry::Txn(Transaction::decode_from(dec)?)),
            1 => Ok(Entry::Inbound(Event::decode_from(dec)?)),
            tag => Err(DecodeError::BadTag { tag, offset: at }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed(String),
}

/// Outcome of one entry. Failed entries are kept in the block with no writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub status: Status,
    /// Attribution label, e.g. the cross-chain transaction a write belongs to.
    pub tag: String,
    pub writes: Vec<(String, Value)>,
}

impl Receipt {
    pub fn failed(reason: impl Into<String>) -> Self {
        Self { status: Status::Failed(reason.into()), tag: String::new(), writes: Vec::new() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    fn encode_into(&self, enc: &mut Encoder) {
        match &self.status {
            Status::Ok => enc.u8(0).str(""),
            Status::Failed(r) => enc.u8(1).str(r),
        };
        enc.str(&self.tag).u32(self.writes.len() as u32);
        for (k, v) in &self.writes {
            enc.str(k);
            v.encode_into(enc);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.position();
        let status = match (dec.u8()?, dec.string()?) {
            (0, _) => Status::Ok,
            (1, r) => Status::Failed(r),
            (tag, _) => return Err(DecodeError::BadTag { tag, offset: at }),
        };
        let tag = dec.string()?;
        let n = dec.u32()? as usize;
        let mut writes = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            writes.push((dec.string()?, Value::decode_from(dec)?));
        }
        Ok(Self { status, tag, writes })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub chain_id: String,
    pub height: u64,
    pub prev_digest: Digest,
    pub txn_root: Digest,
    pub state_root: Digest,
    pub tick: u64,
}

impl BlockHeader {
    /// Fields in declaration order; strings length-prefixed, digests raw.
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.chain_id)
            .u64(self.height)
            .raw(self.prev_digest.as_bytes())
            .raw(self.txn_root.as_bytes())
            .raw(self.state_root.as_bytes())
            .u64(self.tick);
        enc.finish()
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let chain_id = dec.string()?;
        let height = dec.u64()?;
        let mut digest = || -> Result<Digest, DecodeError> { Ok(Digest::from_slice(dec.raw(32)?).unwrap()) };
        let prev_digest = digest()?;
        let txn_root = digest()?;
        let state_root = digest()?;
        Ok(Self { chain_id, height, prev_digest, txn_root, state_root, tick: dec.u64()? })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }
}

/// Signatures of chain members over a header digest.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuorumCert {
    pub header_digest: Digest,
    pub signatures: BTreeMap<NodeId, Signature>,
}

impl QuorumCert {
    /// At least 2f+1 distinct members with valid signatures over the digest.
    pub fn verify(&self, keys: &KeySet) -> bool {
        keys.count_valid(self.header_digest.as_bytes(), self.signatures.iter()) > 2 * keys.f
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub entries: Vec<Entry>,
    pub receipts: Vec<Receipt>,
    /// Events emitted by this block's entries, with nonces assigned.
    pub outbox: Vec<Event>,
    pub cert: QuorumCert,
}

impl Block {
    pub fn digest(&self) -> Digest {
        self.header.digest()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(&self.header.encode());
        enc.u32(self.entries.len() as u32);
        for (e, r) in self.entries.iter().zip(&self.receipts) {
            e.encode_into(&mut enc);
            r.encode_into(&mut enc);
        }
        enc.u32(self.outbox.len() as u32);
        for e in &self.outbox {
            e.encode_into(&mut enc);
        }
        enc.raw(self.cert.header_digest.as_bytes()).u16(self.cert.signatures.len() as u16);
        for (node, sig) in &self.cert.signatures {
            enc.u32(*node).bytes(&sig.0);
        }
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let header = {
            let raw = dec.bytes()?;
            let mut hd = Decoder::new(raw);
            let h = BlockHeader::decode_from(&mut hd)?;
            hd.finish()?;
            h
        };
        let n = dec.u32()? as usize;
        let (mut entries, mut receipts) = (Vec::new(), Vec::new());
        for _ in 0..n {
            entries.push(Entry::decode_from(&mut dec)?);
            receipts.push(Receipt::decode_from(&mut dec)?);
        }
        let m = dec.u32()? as usize;
        let mut outbox = Vec::new();
        for _ in 0..m {
            outbox.push(Event::decode_from(&mut dec)?);
        }
        let header_digest = Digest::from_slice(dec.raw(32)?).unwrap();
        let k = dec.u16()?;
        let mut signatures = BTreeMap::new();
        for _ in 0..k {
            let node = dec.u32()?;
            signatures.insert(node, Signature(dec.bytes()?.to_vec()));
        }
        dec.finish()?;
        Ok(Self { header, entries, receipts, outbox, cert: QuorumCert { header_digest, signatures } })
    }
}

/// Merkle root over an ordered list of digests (same padding rule as the state tree).
pub fn digest_list_root(items: &[Digest]) -> Digest {
    if items.is_empty() {
        return hash(&[]);
    }
    let mut level = items.to_vec();
    while level.len() > 1 {
        level = level.chunks(2).map(|p| node_hash(&p[0], p.get(1).unwrap_or(&p[0]))).collect();
    }
    level[0]
}
