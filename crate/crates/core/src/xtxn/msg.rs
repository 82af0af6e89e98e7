//! Payloads of transaction-layer events. Every payload starts with the
//! transaction id so the bus meter can attribute it.

use std::fmt;

use crate::chain::Caller;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::state::Version;
use crate::value::Value;

pub(crate) fn put_version(enc: &mut Encoder, v: Option<Version>) {
    match v {
        None => {
            enc.u8(0);
        }
        Some(v) => {
            enc.u8(1).u64(v.height).u32(v.index);
        }
    }
}

pub(crate) fn get_version(dec: &mut Decoder<'_>) -> Result<Option<Version>, DecodeError> {
    let at = dec.position();
    match dec.u8()? {
        0 => Ok(None),
        1 => Ok(Some(Version { height: dec.u64()?, index: dec.u32()? })),
        tag => Err(DecodeError::BadTag { tag, offset: at }),
    }
}

fn put_keys(enc: &mut Encoder, keys: &[String]) {
    enc.u32(keys.len() as u32);
    for k in keys {
        enc.str(k);
    }
}

fn get_keys(dec: &mut Decoder<'_>) -> Result<Vec<String>, DecodeError> {
    let n = dec.u32()? as usize;
    (0..n).map(|_| dec.string()).collect()
}

fn put_kvs(enc: &mut Encoder, kvs: &[(String, Value)]) {
    enc.u32(kvs.len() as u32);
    for (k, v) in kvs {
        enc.str(k);
        v.encode_into(enc);
    }
}

fn get_kvs(dec: &mut Decoder<'_>) -> Result<Vec<(String, Value)>, DecodeError> {
    let n = dec.u32()? as usize;
    (0..n).map(|_| Ok((dec.string()?, Value::decode_from(dec)?))).collect()
}

/// Why a participant voted no or a transaction was aborted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortReason {
    CompareFailed { chain: String, key: String },
    LockConflict { chain: String, key: String },
    VersionConflict { chain: String, key: String },
    PolicyDenied { chain: String, key: String },
    /// A participant never produced an authenticated vote within the retry budget.
    VoteQuorumFailure { chain: String },
    LockTimeout,
    /// Participant had already finished this transaction.
    AlreadyDecided { chain: String },
    Client(String),
}

impl AbortReason {
    pub fn label(&self) -> &'static str {
        match self {
            AbortReason::CompareFailed { .. } => "CompareFailed",
            AbortReason::LockConflict { .. } => "LockConflict",
            AbortReason::VersionConflict { .. } => "VersionConflict",
            AbortReason::PolicyDenied { .. } => "PolicyDenied",
            AbortReason::VoteQuorumFailure { .. } => "VoteQuorumFailure",
            AbortReason::LockTimeout => "LockTimeout",
            AbortReason::AlreadyDecided { .. } => "AlreadyDecided",
            AbortReason::Client(_) => "Client",
        }
    }

    pub fn encode(&self) -> String {
        match self {
            AbortReason::CompareFailed { chain, key }
            | AbortReason::LockConflict { chain, key }
            | AbortReason::VersionConflict { chain, key }
            | AbortReason::PolicyDenied { chain, key } => format!("{}|{chain}|{key}", self.label()),
            AbortReason::VoteQuorumFailure { chain } | AbortReason::AlreadyDecided { chain } => {
                format!("{}|{chain}", self.label())
            }
            AbortReason::LockTimeout => self.label().to_string(),
            AbortReason::Client(msg) => format!("Client|{msg}"),
        }
    }

    pub fn decode(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.splitn(3, '|').collect();
        let ck = |f: fn(String, String) -> AbortReason| match parts.as_slice() {
            [_, c, k] => Some(f(c.to_string(), k.to_string())),
            _ => None,
        };
        match parts[0] {
            "CompareFailed" => ck(|chain, key| AbortReason::CompareFailed { chain, key }),
            "LockConflict" => ck(|chain, key| AbortReason::LockConflict { chain, key }),
            "VersionConflict" => ck(|chain, key| AbortReason::VersionConflict { chain, key }),
            "PolicyDenied" => ck(|chain, key| AbortReason::PolicyDenied { chain, key }),
            "VoteQuorumFailure" => parts.get(1).map(|c| AbortReason::VoteQuorumFailure { chain: c.to_string() }),
            "AlreadyDecided" => parts.get(1).map(|c| AbortReason::AlreadyDecided { chain: c.to_string() }),
            "LockTimeout" => Some(AbortReason::LockTimeout),
            "Client" => Some(AbortReason::Client(s.get(7..).unwrap_or_default().to_string())),
            _ => None,
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::CompareFailed { chain, key }
            | AbortReason::LockConflict { chain, key }
            | AbortReason::VersionConflict { chain, key }
            | AbortReason::PolicyDenied { chain, key } => write!(f, "{}({chain}, {key})", self.label()),
            AbortReason::VoteQuorumFailure { chain } | AbortReason::AlreadyDecided { chain } => {
                write!(f, "{}({chain})", self.label())
            }
            AbortReason::LockTimeout => f.write_str("LockTimeout"),
            AbortReason::Client(m) => write!(f, "Client({m})"),
        }
    }
}

/// What one participant chain must check, lock and stage for a transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepareBody {
    pub txn_id: String,
    pub origin: Option<Caller>,
    /// Keys the transaction must already hold locks on (lock mode).
    pub held: Vec<String>,
    /// Read versions to validate (optimistic mode).
    pub versions: Vec<(String, Option<Version>)>,
    pub compares: Vec<(String, Value)>,
    pub reads: Vec<String>,
    pub writes: Vec<(String, Value)>,
}

impl PrepareBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.txn_id);
        match &self.origin {
            None => {
                enc.u8(0);
            }
            Some(c) => {
                enc.u8(1);
                c.encode_into(&mut enc);
            }
        }
        put_keys(&mut enc, &self.held);
        enc.u32(self.versions.len() as u32);
        for (k, v) in &self.versions {
            enc.str(k);
            put_version(&mut enc, *v);
        }
        put_kvs(&mut enc, &self.compares);
        put_keys(&mut enc, &self.reads);
        put_kvs(&mut enc, &self.writes);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let txn_id = dec.string()?;
        let origin = match dec.u8()? {
            0 => None,
            _ => Some(Caller::decode_from(&mut dec)?),
        };
        let held = get_keys(&mut dec)?;
        let n = dec.u32()? as usize;
        let versions = (0..n).map(|_| Ok((dec.string()?, get_version(&mut dec)?))).collect::<Result<_, DecodeError>>()?;
        let compares = get_kvs(&mut dec)?;
        let reads = get_keys(&mut dec)?;
        let writes = get_kvs(&mut dec)?;
        dec.finish()?;
        Ok(Self { txn_id, origin, held, versions, compares, reads, writes })
    }

    /// Every key the transaction touches on this chain, deduplicated, in order.
    pub fn all_keys(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let keys = self
            .held
            .iter()
            .chain(self.versions.iter().map(|(k, _)| k))
            .chain(self.compares.iter().map(|(k, _)| k))
            .chain(self.reads.iter())
            .chain(self.writes.iter().map(|(k, _)| k));
        for k in keys {
            if !out.contains(k) {
                out.push(k.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteBody {
    pub txn_id: String,
    pub vote: Result<(), AbortReason>,
    pub reads: Vec<(String, Value)>,
}

impl VoteBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.txn_id);
        match &self.vote {
            Ok(()) => enc.str(""),
            Err(r) => enc.str(&r.encode()),
        };
        put_kvs(&mut enc, &self.reads);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let txn_id = dec.string()?;
        let v = dec.string()?;
        let vote = if v.is_empty() {
            Ok(())
        } else {
            Err(AbortReason::decode(&v).ok_or_else(|| DecodeError::Invalid(format!("abort reason {v:?}")))?)
        };
        let reads = get_kvs(&mut dec)?;
        dec.finish()?;
        Ok(Self { txn_id, vote, reads })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecideBody {
    pub txn_id: String,
    pub commit: bool,
}

impl DecideBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.txn_id).u8(self.commit as u8);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let txn_id = dec.string()?;
        let commit = dec.u8()? != 0;
        dec.finish()?;
        Ok(Self { txn_id, commit })
    }
}

/// Acknowledgment of a decision, or any message carrying only the id.
pub fn encode_id(txn_id: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(txn_id);
    enc.finish()
}

/// Transaction id at the front of any transaction-layer payload.
pub fn payload_txn_id(payload: &[u8]) -> Option<String> {
    Decoder::new(payload).string().ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadReqBody {
    pub txn_id: String,
    pub seq: u32,
    pub origin: Caller,
    pub keys: Vec<String>,
    pub lock: bool,
}

impl ReadReqBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.txn_id).u32(self.seq);
        self.origin.encode_into(&mut enc);
        put_keys(&mut enc, &self.keys);
        enc.u8(self.lock as u8);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let txn_id = dec.string()?;
        let seq = dec.u32()?;
        let origin = Caller::decode_from(&mut dec)?;
        let keys = get_keys(&mut dec)?;
        let lock = dec.u8()? != 0;
        dec.finish()?;
        Ok(Self { txn_id, seq, origin, keys, lock })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadStatus {
    Ok(Vec<(String, Value, Option<Version>)>),
    /// A key is locked by another transaction; retry later.
    Busy(String),
    Failed(AbortReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRespBody {
    pub txn_id: String,
    pub seq: u32,
    pub status: ReadStatus,
}

impl ReadRespBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.txn_id).u32(self.seq);
        match &self.status {
            ReadStatus::Ok(items) => {
                enc.u8(0).u32(items.len() as u32);
                for (k, v, ver) in items {
                    enc.str(k);
                    v.encode_into(&mut enc);
                    put_version(&mut enc, *ver);
                }
            }
            ReadStatus::Busy(k) => {
                enc.u8(1).str(k);
            }
            ReadStatus::Failed(r) => {
                enc.u8(2).str(&r.encode());
            }
        }
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let txn_id = dec.string()?;
        let seq = dec.u32()?;
        let at = dec.position();
        let status = match dec.u8()? {
            0 => {
                let n = dec.u32()? as usize;
                let items = (0..n)
                    .map(|_| Ok((dec.string()?, Value::decode_from(&mut dec)?, get_version(&mut dec)?)))
                    .collect::<Result<_, DecodeError>>()?;
                ReadStatus::Ok(items)
            }
            1 => ReadStatus::Busy(dec.string()?),
            2 => {
                let s = dec.string()?;
                ReadStatus::Failed(AbortReason::decode(&s).ok_or(DecodeError::Invalid(s))?)
            }
            tag => return Err(DecodeError::BadTag { tag, offset: at }),
        };
        dec.finish()?;
        Ok(Self { txn_id, seq, status })
    }
}

pub fn encode_keys(keys: &[String]) -> Vec<u8> {
    let mut enc = Encoder::new();
    put_keys(&mut enc, keys);
    enc.finish()
}

pub fn decode_keys(bytes: &[u8]) -> Result<Vec<String>, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let k = get_keys(&mut dec)?;
    dec.finish()?;
    Ok(k)
}

pub fn encode_kvs(kvs: &[(String, Value)]) -> Vec<u8> {
    let mut enc = Encoder::new();
    put_kvs(&mut enc, kvs);
    enc.finish()
}

pub fn decode_kvs(bytes: &[u8]) -> Result<Vec<(String, Value)>, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let k = get_kvs(&mut dec)?;
    dec.finish()?;
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bodies_roundtrip() {
        let p = PrepareBody {
            txn_id: "c/1".into(),
            origin: Some(Caller::contract("t", "A")),
            held: vec!["k.a".into()],
            versions: vec![("k.b".into(), Some(Version { height: 4, index: 0 })), ("k.c".into(), None)],
            compares: vec![("k.d".into(), Value::from("open"))],
            reads: vec!["k.e".into()],
            writes: vec![("k.f".into(), Value::Int(3))],
        };
        assert_eq!(PrepareBody::decode(&p.encode()).unwrap(), p);
        assert_eq!(p.all_keys().len(), 6);
        let v = VoteBody {
            txn_id: "c/1".into(),
            vote: Err(AbortReason::CompareFailed { chain: "b".into(), key: "k.d".into() }),
            reads: vec![],
        };
        assert_eq!(VoteBody::decode(&v.encode()).unwrap(), v);
        let r = ReadRespBody { txn_id: "x".into(), seq: 2, status: ReadStatus::Busy("k".into()) };
        assert_eq!(ReadRespBody::decode(&r.encode()).unwrap(), r);
        assert_eq!(payload_txn_id(&r.encode()).as_deref(), Some("x"));
    }

    #[test]
    fn abort_reasons_roundtrip() {
        for r in [
            AbortReason::LockTimeout,
            AbortReason::VoteQuorumFailure { chain: "b".into() },
            AbortReason::VersionConflict { chain: "b".into(), key: "Bidder.bids.x".into() },
            AbortReason::Client("gave up".into()),
        ] {
            assert_eq!(AbortReason::decode(&r.encode()), Some(r));
        }
    }
}
