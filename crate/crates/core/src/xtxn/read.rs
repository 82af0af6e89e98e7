//! Verified fresh reads: the fast path asks every node of the target chain
//! directly, bypassing consensus, and accepts f+1 matching signed answers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chain::{authorize, Behavior, BlockHeader, Caller, Chain, NamespaceView, QueryView, QuorumCert};
use crate::codec::Encoder;
use crate::crypto::{hash, Digest, KeySet, NodeId, Signature};
use crate::merkle::{verify_proof, MerkleProof};
use crate::policy::{eval_aggregate, Action, AggExpr};
use crate::state::Version;
use crate::value::Value;

use super::msg::put_version;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    /// Contract-relative key.
    Get(String),
    /// Read-only contract method.
    Call { method: String, args: Vec<Value> },
    /// Scalar summary; gated as resource `agg.<kind>.<prefix>`.
    Aggregate(AggExpr),
}

impl Query {
    fn resource(&self) -> String {
        match self {
            Query::Get(k) => k.clone(),
            Query::Call { method, .. } => method.clone(),
            Query::Aggregate(a) => a.resource(),
        }
    }

    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Query::Get(k) => {
                enc.u8(0).str(k);
            }
            Query::Call { method, args } => {
                enc.u8(1).str(method).u32(args.len() as u32);
                for a in args {
                    a.encode_into(enc);
                }
            }
            Query::Aggregate(a) => {
                enc.u8(2).str(&a.resource());
                match a.range {
                    None => enc.u8(0),
                    Some((x, y)) => enc.u8(1).i64(x).i64(y),
                };
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRequest {
    pub nonce: u64,
    pub target_chain: String,
    pub contract: String,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResponse {
    pub value: Value,
    /// Version of the key read, for plain key queries.
    pub version: Option<Version>,
    pub anchor_height: u64,
    pub nonce: u64,
    pub signatures: BTreeMap<NodeId, Signature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReadError {
    #[error("PolicyDenied: {0}")]
    PolicyDenied(String),
    #[error("StaleQuorum: {matching} matching signatures, need {needed}")]
    StaleQuorum { matching: usize, needed: usize },
    #[error("nonce mismatch: requested {requested}, response carries {found}")]
    NonceMismatch { requested: u64, found: u64 },
    #[error("ProofInvalid: {0}")]
    ProofInvalid(String),
    #[error("query failed: {0}")]
    QueryFailed(String),
    #[error("unknown chain or contract {0}")]
    Unknown(String),
}

/// What a node signs: the request it answers and the answer itself.
pub fn response_digest(req: &ReadRequest, value: &Value, version: Option<Version>, anchor_height: u64) -> Digest {
    let mut enc = Encoder::new();
    enc.raw(b"read-resp").str(&req.target_chain).str(&req.contract);
    req.query.encode_into(&mut enc);
    value.encode_into(&mut enc);
    put_version(&mut enc, version);
    enc.u64(req.nonce).u64(anchor_height);
    hash(enc.as_slice())
}

fn authorize_read(chain: &Chain, requester: &Caller, req: &ReadRequest) -> Result<(), ReadError> {
    let h = chain.height();
    let view = NamespaceView { store: chain.store(), namespace: &req.contract, height: h };
    authorize(chain.policy_at(&req.contract, h).as_deref(), &view, chain.id(), requester, Action::Read, &req.query.resource(), &[])
        .map_err(|e| ReadError::PolicyDenied(e.to_string()))
}

fn execute_query(chain: &Chain, req: &ReadRequest) -> Result<(Value, Option<Version>), ReadError> {
    let h = chain.height();
    match &req.query {
        Query::Get(k) => {
            let full = format!("{}.{k}", req.contract);
            Ok(match chain.store().get_versioned_at(&full, h) {
                Some((ver, v)) => (v.clone(), Some(ver)),
                None => (Value::Null, None),
            })
        }
        Query::Call { method, args } => {
            let c = chain.contract(&req.contract).ok_or_else(|| ReadError::Unknown(req.contract.clone()))?;
            let view = QueryView { store: chain.store(), namespace: &req.contract, height: h };
            c.query(&view, method, args).map(|v| (v, None)).map_err(|e| ReadError::QueryFailed(e.to_string()))
        }
        Query::Aggregate(agg) => {
            let view = NamespaceView { store: chain.store(), namespace: &req.contract, height: h };
            eval_aggregate(agg, &view).map(|v| (v, None)).map_err(|e| ReadError::QueryFailed(e.to_string()))
        }
    }
}

/// Each node answers from its current state and signs. Silent nodes do not
/// answer; equivocating nodes sign an answer for a different height.
pub fn collect_responses(chain: &Chain, req: &ReadRequest) -> Result<Vec<(NodeId, ReadResponse)>, ReadError> {
    let (value, version) = execute_query(chain, req)?;
    let h = chain.height();
    let mut out = Vec::new();
    for node in 0..chain.n() as NodeId {
        let anchor = match chain.behavior(node) {
            Behavior::Silent => continue,
            Behavior::EquivocateDigest => h + 1,
            Behavior::Honest | Behavior::ForgeEvents => h,
        };
        let d = response_digest(req, &value, version, anchor);
        let sig = chain.node_key(node).sign(d.as_bytes());
        out.push((
            node,
            ReadResponse {
                value: value.clone(),
                version,
                anchor_height: anchor,
                nonce: req.nonce,
                signatures: [(node, sig)].into(),
            },
        ));
    }
    Ok(out)
}

/// Merges individual answers into one response per distinct digest and
/// returns the best supported one.
pub fn aggregate_responses(req: &ReadRequest, answers: Vec<(NodeId, ReadResponse)>) -> Option<ReadResponse> {
    let mut groups: BTreeMap<Digest, ReadResponse> = BTreeMap::new();
    for (_, r) in answers {
        let d = response_digest(req, &r.value, r.version, r.anchor_height);
        groups
            .entry(d)
            .and_modify(|g| g.signatures.extend(r.signatures.clone()))
            .or_insert(r);
    }
    groups.into_values().max_by_key(|g| g.signatures.len())
}

/// Accepts a response iff it echoes the request nonce and at least f+1
/// distinct members signed exactly this answer to exactly this request.
pub fn verify_response(keys: &KeySet, req: &ReadRequest, resp: &ReadResponse) -> Result<(), ReadError> {
    if resp.nonce != req.nonce {
        return Err(ReadError::NonceMismatch { requested: req.nonce, found: resp.nonce });
    }
    let d = response_digest(req, &resp.value, resp.version, resp.anchor_height);
    let matching = keys.count_valid(d.as_bytes(), resp.signatures.iter());
    if matching <= keys.f {
        return Err(ReadError::StaleQuorum { matching, needed: keys.f + 1 });
    }
    Ok(())
}

/// Contract-path verified read against `chain` on behalf of `requester`.
pub fn verified_read(chain: &Chain, requester: &Caller, req: &ReadRequest) -> Result<ReadResponse, ReadError> {
    if req.target_chain != chain.id() {
        return Err(ReadError::Unknown(req.target_chain.clone()));
    }
    authorize_read(chain, requester, req)?;
    let answers = collect_responses(chain, req)?;
    let needed = chain.f() + 1;
    let resp = aggregate_responses(req, answers).ok_or(ReadError::StaleQuorum { matching: 0, needed })?;
    verify_response(chain.keyset(), req, &resp)?;
    Ok(resp)
}

/// Storage-path answer: one node returns the value with a proof against the
/// latest certified block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenRead {
    pub nonce: u64,
    pub value: Value,
    pub proof: MerkleProof,
    pub header: BlockHeader,
    pub cert: QuorumCert,
}

pub fn proven_read(chain: &Chain, requester: &Caller, nonce: u64, contract: &str, key: &str) -> Result<ProvenRead, ReadError> {
    let req = ReadRequest { nonce, target_chain: chain.id().to_string(), contract: contract.to_string(), query: Query::Get(key.to_string()) };
    authorize_read(chain, requester, &req)?;
    let h = chain.height();
    let full = format!("{contract}.{key}");
    let proof = chain.get_proof(&full, h).map_err(|e| ReadError::QueryFailed(e.to_string()))?;
    let block = chain.tip();
    Ok(ProvenRead {
        nonce,
        value: chain.store().get_at(&full, h),
        proof,
        header: block.header.clone(),
        cert: block.cert.clone(),
    })
}

/// Checks the certificate, the proof against the certified root, and that
/// the proof is about the requested key and reports the returned value.
pub fn verify_proven(keys: &KeySet, nonce: u64, contract: &str, key: &str, r: &ProvenRead) -> Result<(), ReadError> {
    if r.nonce != nonce {
        return Err(ReadError::NonceMismatch { requested: nonce, found: r.nonce });
    }
    let invalid = |m: &str| Err(ReadError::ProofInvalid(m.to_string()));
    if r.header.chain_id != keys.chain_id || r.cert.header_digest != r.header.digest() || !r.cert.verify(keys) {
        return invalid("header not certified");
    }
    if r.proof.leaf_key != format!("{contract}.{key}").as_bytes() || r.proof.root_height != r.header.height {
        return invalid("proof is for another key or height");
    }
    if r.proof.leaf_value().cloned().unwrap_or(Value::Null) != r.value {
        return invalid("value does not match proof");
    }
    if !verify_proof(&r.header.state_root, &r.proof) {
        return invalid("path does not reach the state root");
    }
    Ok(())
}
