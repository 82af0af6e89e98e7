//! The `xtxn` system contract. Every chain hosts one; it coordinates the
//! transactions submitted to its chain and participates in everyone else's.

use crate::chain::{Caller, Contract, ContractError, ExecCtx};
use crate::policy::Action;
use crate::value::{decode_values, encode_values, Value};
use crate::xbus::{kind, Event};

use super::msg::{
    decode_keys, decode_kvs, encode_id, encode_keys, encode_kvs, payload_txn_id, AbortReason, DecideBody, PrepareBody,
    ReadReqBody, ReadRespBody, ReadStatus, VoteBody,
};

pub const XTXN: &str = "xtxn";

/// Retransmission schedule of the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Prepare retransmissions before the coordinator gives up and aborts.
    pub retry_limit: u32,
    pub backoff_base: u64,
    pub backoff_cap: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retry_limit: 5, backoff_base: 6, backoff_cap: 48 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> u64 {
        self.backoff_base.saturating_mul(1u64 << attempt.saturating_sub(1).min(20)).min(self.backoff_cap)
    }
}

#[derive(Debug, Clone, Default)]
pub struct XtxnContract {
    pub retry: RetryPolicy,
}

fn co(txn: &str, field: &str) -> String {
    format!("co.{txn}.{field}")
}

fn part(txn: &str, field: &str) -> String {
    format!("part.{txn}.{field}")
}

fn lock_rel(key: &str) -> String {
    format!("lock.{key}")
}

fn bad(msg: impl Into<String>) -> ContractError {
    ContractError::BadArgs(msg.into())
}

fn get_bytes(ctx: &ExecCtx<'_>, key: &str) -> Option<Vec<u8>> {
    ctx.get(key).as_bytes().map(<[u8]>::to_vec)
}

fn get_keys(ctx: &ExecCtx<'_>, key: &str) -> Vec<String> {
    get_bytes(ctx, key).and_then(|b| decode_keys(&b).ok()).unwrap_or_default()
}

/// Parses the `(chain, prepare body)` list a client submits.
pub fn encode_plan(items: &[(String, PrepareBody)]) -> Vec<u8> {
    let vals: Vec<Value> = items.iter().flat_map(|(c, p)| [Value::from(c.as_str()), Value::Bytes(p.encode())]).collect();
    encode_values(&vals)
}

pub fn decode_plan(bytes: &[u8]) -> Result<Vec<(String, PrepareBody)>, ContractError> {
    let vals = decode_values(bytes).map_err(|e| bad(e.to_string()))?;
    vals.chunks(2)
        .map(|pair| match pair {
            [Value::Str(c), Value::Bytes(b)] => Ok((c.clone(), PrepareBody::decode(b).map_err(|e| bad(e.to_string()))?)),
            _ => Err(bad("malformed plan")),
        })
        .collect()
}

/// Transactional access to a contract's keys bypasses its methods, so a
/// contract with a policy must also let the origin invoke `xtxn`.
fn admit(ctx: &ExecCtx<'_>, origin: &Caller, action: Action, key: &str, args: &[Value]) -> Result<(), ContractError> {
    let ns = key.split_once('.').map_or(key, |(ns, _)| ns);
    ctx.authorize_resource(origin, Action::Invoke, ns, XTXN)?;
    ctx.authorize_key(origin, action, key, args)
}

impl XtxnContract {
    pub fn new(retry: RetryPolicy) -> Self {
        Self { retry }
    }

    fn parts(&self, ctx: &ExecCtx<'_>, txn: &str) -> Vec<String> {
        get_keys(ctx, &co(txn, "parts"))
    }

    fn add_part(&self, ctx: &mut ExecCtx<'_>, txn: &str, chain: &str) -> Result<(), ContractError> {
        let mut parts = self.parts(ctx, txn);
        if !parts.iter().any(|p| p == chain) {
            parts.push(chain.to_string());
            ctx.set(&co(txn, "parts"), Value::Bytes(encode_keys(&parts)))?;
        }
        Ok(())
    }

    fn start_timer(&self, ctx: &mut ExecCtx<'_>, txn: &str) -> Result<(), ContractError> {
        if ctx.get(&co(txn, "timer")).is_null() {
            ctx.set(&co(txn, "timer"), Value::Bool(true))?;
            let at = ctx.tick() + self.retry.backoff(1);
            ctx.schedule(at, "retry", vec![Value::from(txn), Value::Int(1)]);
        }
        Ok(())
    }

    fn begin_commit(&self, ctx: &mut ExecCtx<'_>, txn: &str, mini: bool, plan: &[u8]) -> Result<(), ContractError> {
        if !ctx.get(&co(txn, "decision")).is_null() || !ctx.get(&co(txn, "prepared")).is_null() {
            return Err(ContractError::Rejected(format!("{txn} already committing")));
        }
        let items = decode_plan(plan)?;
        if items.is_empty() {
            return Err(bad("no participants"));
        }
        let origin = ctx.caller().qualified(ctx.chain_id());
        ctx.set_tag(txn);
        ctx.set(&co(txn, "kind"), Value::from(if mini { "mt" } else { "gt" }))?;
        ctx.set(&co(txn, "prepared"), Value::Bool(true))?;
        let prep_kind = if mini { kind::MT_PREPARE } else { kind::GT_PREPARE };
        let mut chains = Vec::new();
        for (chain, mut body) in items {
            if chains.contains(&chain) {
                return Err(bad(format!("duplicate participant {chain}")));
            }
            body.txn_id = txn.to_string();
            body.origin = Some(origin.clone());
            let bytes = body.encode();
            ctx.set(&co(txn, &format!("prep.{chain}")), Value::Bytes(bytes.clone()))?;
            ctx.emit(&chain, XTXN, prep_kind, bytes);
            self.add_part(ctx, txn, &chain)?;
            chains.push(chain);
        }
        ctx.set(&co(txn, "preps"), Value::Bytes(encode_keys(&chains)))?;
        self.start_timer(ctx, txn)
    }

    fn decide(&self, ctx: &mut ExecCtx<'_>, txn: &str, outcome: Result<(), AbortReason>) -> Result<(), ContractError> {
        let decision = match &outcome {
            Ok(()) => "commit".to_string(),
            Err(r) => format!("abort|{}", r.encode()),
        };
        ctx.set(&co(txn, "decision"), Value::Str(decision))?;
        let mini = ctx.get(&co(txn, "kind")).as_str() == Some("mt");
        let body = DecideBody { txn_id: txn.to_string(), commit: outcome.is_ok() }.encode();
        let k = if mini { kind::MT_DECIDE } else { kind::GT_DECIDE };
        for chain in self.parts(ctx, txn) {
            ctx.emit(&chain, XTXN, k, body.clone());
        }
        self.start_timer(ctx, txn)
    }

    fn retry_tick(&self, ctx: &mut ExecCtx<'_>, txn: &str, attempt: u32) -> Result<(), ContractError> {
        if ctx.get(&co(txn, "done")).as_bool() == Some(true) {
            return ctx.set(&co(txn, "timer"), Value::Null);
        }
        let parts = self.parts(ctx, txn);
        if ctx.get(&co(txn, "decision")).is_null() {
            let preps = get_keys(ctx, &co(txn, "preps"));
            let missing: Vec<String> =
                preps.into_iter().filter(|c| ctx.get(&co(txn, &format!("vote.{c}"))).is_null()).collect();
            if attempt > self.retry.retry_limit {
                let chain = missing.first().cloned().unwrap_or_default();
                self.decide(ctx, txn, Err(AbortReason::VoteQuorumFailure { chain }))?;
            } else {
                let mini = ctx.get(&co(txn, "kind")).as_str() == Some("mt");
                let k = if mini { kind::MT_PREPARE } else { kind::GT_PREPARE };
                for chain in missing {
                    let body = get_bytes(ctx, &co(txn, &format!("prep.{chain}"))).unwrap_or_default();
                    ctx.emit(&chain, XTXN, k, body);
                }
            }
        } else {
            let mini = ctx.get(&co(txn, "kind")).as_str() == Some("mt");
            let commit = ctx.get(&co(txn, "decision")).as_str() == Some("commit");
            let body = DecideBody { txn_id: txn.to_string(), commit }.encode();
            let k = if mini { kind::MT_DECIDE } else { kind::GT_DECIDE };
            for chain in parts {
                if ctx.get(&co(txn, &format!("ack.{chain}"))).is_null() {
                    ctx.emit(&chain, XTXN, k, body.clone());
                }
            }
        }
        let at = ctx.tick() + self.retry.backoff(attempt + 1);
        ctx.schedule(at, "retry", vec![Value::from(txn), Value::Int(attempt as i64 + 1)]);
        Ok(())
    }

    fn on_vote(&self, ctx: &mut ExecCtx<'_>, from: &str, body: VoteBody) -> Result<(), ContractError> {
        let txn = body.txn_id.as_str();
        let preps = get_keys(ctx, &co(txn, "preps"));
        if !preps.iter().any(|c| c == from) || !ctx.get(&co(txn, "decision")).is_null() {
            return Ok(());
        }
        let vote_key = co(txn, &format!("vote.{from}"));
        if !ctx.get(&vote_key).is_null() {
            return Ok(());
        }
        ctx.set_tag(txn);
        match body.vote {
            Err(reason) => {
                ctx.set(&vote_key, Value::Str(reason.encode()))?;
                self.decide(ctx, txn, Err(reason))
            }
            Ok(()) => {
                ctx.set(&vote_key, Value::from(""))?;
                ctx.set(&co(txn, &format!("reads.{from}")), Value::Bytes(encode_kvs(&body.reads)))?;
                if preps.iter().all(|c| !ctx.get(&co(txn, &format!("vote.{c}"))).is_null()) {
                    self.decide(ctx, txn, Ok(()))?;
                }
                Ok(())
            }
        }
    }

    fn on_ack(&self, ctx: &mut ExecCtx<'_>, from: &str, txn: &str) -> Result<(), ContractError> {
        let parts = self.parts(ctx, txn);
        if !parts.iter().any(|c| c == from) || ctx.get(&co(txn, "decision")).is_null() {
            return Ok(());
        }
        ctx.set_tag(txn);
        ctx.set(&co(txn, &format!("ack.{from}")), Value::Bool(true))?;
        if parts.iter().all(|c| !ctx.get(&co(txn, &format!("ack.{c}"))).is_null()) {
            ctx.set(&co(txn, "done"), Value::Bool(true))?;
        }
        Ok(())
    }

    fn holder(ctx: &ExecCtx<'_>, key: &str) -> Option<String> {
        ctx.get(&lock_rel(key)).as_str().map(str::to_string)
    }

    fn lock_all(&self, ctx: &mut ExecCtx<'_>, txn: &str, keys: &[String]) -> Result<(), ContractError> {
        let mut held = get_keys(ctx, &part(txn, "locks"));
        for k in keys {
            if !held.contains(k) {
                ctx.set(&lock_rel(k), Value::from(txn))?;
                held.push(k.clone());
            }
        }
        ctx.set(&part(txn, "locks"), Value::Bytes(encode_keys(&held)))
    }

    /// Checks a participant's part of a transaction against local state.
    fn validate(&self, ctx: &ExecCtx<'_>, body: &PrepareBody) -> Result<Vec<(String, Value)>, AbortReason> {
        let chain = ctx.chain_id().to_string();
        let txn = body.txn_id.as_str();
        let origin = body.origin.clone().unwrap_or(Caller::System);
        let denied = |key: &str| AbortReason::PolicyDenied { chain: chain.clone(), key: key.to_string() };
        for k in body.all_keys() {
            if !user_key(&k) {
                return Err(denied(&k));
            }
        }
        for k in &body.held {
            if Self::holder(ctx, k).as_deref() != Some(txn) {
                return Err(AbortReason::LockConflict { chain: chain.clone(), key: k.clone() });
            }
        }
        for k in body.all_keys() {
            if Self::holder(ctx, &k).is_some_and(|h| h != txn) {
                return Err(AbortReason::LockConflict { chain: chain.clone(), key: k });
            }
        }
        for (k, v) in &body.writes {
            admit(ctx, &origin, Action::Write, k, std::slice::from_ref(v)).map_err(|_| denied(k))?;
        }
        let read_keys = body.compares.iter().map(|(k, _)| k).chain(&body.reads).chain(body.versions.iter().map(|(k, _)| k));
        for k in read_keys {
            admit(ctx, &origin, Action::Read, k, &[]).map_err(|_| denied(k))?;
        }
        for (k, expected) in &body.versions {
            let current = ctx.version_of(k).map_err(|_| denied(k))?;
            if current != *expected {
                return Err(AbortReason::VersionConflict { chain: chain.clone(), key: k.clone() });
            }
        }
        for (k, expected) in &body.compares {
            if ctx.get_key(k).map_err(|_| denied(k))? != *expected {
                return Err(AbortReason::CompareFailed { chain: chain.clone(), key: k.clone() });
            }
        }
        body.reads.iter().map(|k| Ok((k.clone(), ctx.get_key(k).map_err(|_| denied(k))?))).collect()
    }

    fn on_prepare(&self, ctx: &mut ExecCtx<'_>, event: &Event, body: PrepareBody) -> Result<(), ContractError> {
        let txn = body.txn_id.clone();
        let vote_kind = if event.kind == kind::MT_PREPARE { kind::MT_VOTE } else { kind::GT_VOTE };
        if !ctx.get(&part(&txn, "done")).is_null() {
            return Ok(());
        }
        ctx.set_tag(&txn);
        let stored = ctx.get(&part(&txn, "vote"));
        let vote = if let Value::Str(v) = stored {
            let reads = get_bytes(ctx, &part(&txn, "reads")).and_then(|b| decode_kvs(&b).ok()).unwrap_or_default();
            let vote = if v.is_empty() { Ok(()) } else { Err(AbortReason::decode(&v).unwrap_or(AbortReason::Client(v))) };
            VoteBody { txn_id: txn.clone(), vote, reads }
        } else {
            let result = self.validate(ctx, &body);
            ctx.set(&part(&txn, "coord"), Value::from(event.source_chain.as_str()))?;
            match result {
                Ok(reads) => {
                    self.lock_all(ctx, &txn, &body.all_keys())?;
                    ctx.set(&part(&txn, "writes"), Value::Bytes(encode_kvs(&body.writes)))?;
                    ctx.set(&part(&txn, "reads"), Value::Bytes(encode_kvs(&reads)))?;
                    ctx.set(&part(&txn, "vote"), Value::from(""))?;
                    VoteBody { txn_id: txn.clone(), vote: Ok(()), reads }
                }
                Err(reason) => {
                    ctx.set(&part(&txn, "vote"), Value::Str(reason.encode()))?;
                    VoteBody { txn_id: txn.clone(), vote: Err(reason), reads: vec![] }
                }
            }
        };
        ctx.emit(&event.source_chain, XTXN, vote_kind, vote.encode());
        Ok(())
    }

    fn on_decide(&self, ctx: &mut ExecCtx<'_>, event: &Event, body: DecideBody) -> Result<(), ContractError> {
        let txn = body.txn_id.as_str();
        ctx.set_tag(txn);
        if ctx.get(&part(txn, "done")).is_null() {
            if body.commit {
                let writes = get_bytes(ctx, &part(txn, "writes")).and_then(|b| decode_kvs(&b).ok()).unwrap_or_default();
                for (k, v) in writes {
                    ctx.set_key(&k, v)?;
                }
            }
            for k in get_keys(ctx, &part(txn, "locks")) {
                if Self::holder(ctx, &k).as_deref() == Some(txn) {
                    ctx.set(&lock_rel(&k), Value::Null)?;
                }
            }
            ctx.set(&part(txn, "done"), Value::from(if body.commit { "commit" } else { "abort" }))?;
        }
        ctx.emit(&event.source_chain, XTXN, kind::DECIDE_ACK, encode_id(txn));
        Ok(())
    }

    fn on_read(&self, ctx: &mut ExecCtx<'_>, event: &Event, req: ReadReqBody) -> Result<(), ContractError> {
        let txn = req.txn_id.as_str();
        let chain = ctx.chain_id().to_string();
        ctx.set_tag(txn);
        let status = if !ctx.get(&part(txn, "done")).is_null() || !ctx.get(&part(txn, "vote")).is_null() {
            ReadStatus::Failed(AbortReason::AlreadyDecided { chain })
        } else if let Some(k) = req.keys.iter().find(|k| {
            !user_key(k) || admit(ctx, &req.origin, Action::Read, k, &[]).is_err()
        }) {
            ReadStatus::Failed(AbortReason::PolicyDenied { chain, key: k.clone() })
        } else if let Some(k) = req.keys.iter().find(|k| req.lock && Self::holder(ctx, k).is_some_and(|h| h != txn)) {
            ReadStatus::Busy(k.clone())
        } else {
            if req.lock {
                ctx.set(&part(txn, "coord"), Value::from(event.source_chain.as_str()))?;
                self.lock_all(ctx, txn, &req.keys)?;
            }
            let mut items = Vec::new();
            for k in &req.keys {
                let v = ctx.get_key(k)?;
                let ver = ctx.version_of(k)?;
                items.push((k.clone(), v, ver));
            }
            ReadStatus::Ok(items)
        };
        let resp = ReadRespBody { txn_id: txn.to_string(), seq: req.seq, status };
        ctx.emit(&event.source_chain, XTXN, kind::READ_RESP, resp.encode());
        Ok(())
    }

    fn on_read_resp(&self, ctx: &mut ExecCtx<'_>, from: &str, resp: ReadRespBody) -> Result<(), ContractError> {
        let txn = resp.txn_id.as_str();
        let key = co(txn, &format!("rr.{}", resp.seq));
        let expected = ctx.get(&co(txn, &format!("rqchain.{}", resp.seq)));
        if expected.as_str() != Some(from) {
            return Ok(());
        }
        ctx.set_tag(txn);
        let current = get_bytes(ctx, &key).and_then(|b| ReadRespBody::decode(&b).ok());
        let keep_current = matches!(current, Some(ReadRespBody { status: ReadStatus::Ok(_), .. }))
            && !matches!(resp.status, ReadStatus::Ok(_));
        if !keep_current {
            ctx.set(&key, Value::Bytes(resp.encode()))?;
        }
        Ok(())
    }
}

/// Keys a transaction may touch: namespaced, and not owned by a system contract.
fn user_key(k: &str) -> bool {
    match k.split_once('.') {
        Some((ns, rest)) => !rest.is_empty() && ns != XTXN && ns != crate::chain::SYS,
        None => false,
    }
}

impl Contract for XtxnContract {
    fn id(&self) -> &str {
        XTXN
    }

    fn privileged(&self) -> bool {
        true
    }

    fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError> {
        match (method, args) {
            ("mt_begin", [Value::Str(txn), Value::Bytes(plan)]) => self.begin_commit(ctx, txn, true, plan),
            ("gt_commit", [Value::Str(txn), Value::Bytes(plan)]) => self.begin_commit(ctx, txn, false, plan),
            ("gt_read", [Value::Str(txn), Value::Int(seq), Value::Str(chain), Value::Bytes(keys), Value::Bool(lock)]) => {
                if !ctx.get(&co(txn, "decision")).is_null() || !ctx.get(&co(txn, "prepared")).is_null() {
                    return Err(ContractError::Rejected(format!("{txn} is no longer active")));
                }
                let keys = decode_keys(keys).map_err(|e| bad(e.to_string()))?;
                let seq = u32::try_from(*seq).map_err(|_| bad("seq"))?;
                ctx.set_tag(txn);
                ctx.set(&co(txn, "kind"), Value::from("gt"))?;
                self.add_part(ctx, txn, chain)?;
                ctx.set(&co(txn, &format!("rqchain.{seq}")), Value::from(chain.as_str()))?;
                ctx.set(&co(txn, &format!("rr.{seq}")), Value::Null)?;
                let origin = ctx.caller().qualified(ctx.chain_id());
                let req = ReadReqBody { txn_id: txn.clone(), seq, origin, keys, lock: *lock };
                ctx.emit(chain, XTXN, kind::READ_REQ, req.encode());
                Ok(())
            }
            ("gt_abort", [Value::Str(txn), Value::Str(reason)]) => {
                if !ctx.get(&co(txn, "decision")).is_null() {
                    return Ok(());
                }
                ctx.set_tag(txn);
                if ctx.get(&co(txn, "kind")).is_null() {
                    ctx.set(&co(txn, "kind"), Value::from("gt"))?;
                }
                let r = AbortReason::decode(reason).unwrap_or_else(|| AbortReason::Client(reason.clone()));
                self.decide(ctx, txn, Err(r))?;
                if self.parts(ctx, txn).is_empty() {
                    ctx.set(&co(txn, "done"), Value::Bool(true))?;
                }
                Ok(())
            }
            ("retry", [Value::Str(txn), Value::Int(attempt)]) if *ctx.caller() == Caller::System => {
                self.retry_tick(ctx, txn, *attempt as u32)
            }
            _ => Err(bad(format!("xtxn.{method}"))),
        }
    }

    fn on_event(&self, ctx: &mut ExecCtx<'_>, event: &Event) -> Result<(), ContractError> {
        if event.source_contract != XTXN {
            return Err(ContractError::Rejected(format!("event from {}", event.source_contract)));
        }
        let p = &event.payload;
        let decode_err = |e: crate::codec::DecodeError| bad(e.to_string());
        match event.kind {
            kind::MT_PREPARE | kind::GT_PREPARE => self.on_prepare(ctx, event, PrepareBody::decode(p).map_err(decode_err)?),
            kind::MT_VOTE | kind::GT_VOTE => self.on_vote(ctx, &event.source_chain, VoteBody::decode(p).map_err(decode_err)?),
            kind::MT_DECIDE | kind::GT_DECIDE => self.on_decide(ctx, event, DecideBody::decode(p).map_err(decode_err)?),
            kind::DECIDE_ACK => {
                let txn = payload_txn_id(p).ok_or_else(|| bad("ack payload"))?;
                self.on_ack(ctx, &event.source_chain, &txn)
            }
            kind::READ_REQ => self.on_read(ctx, event, ReadReqBody::decode(p).map_err(decode_err)?),
            kind::READ_RESP => self.on_read_resp(ctx, &event.source_chain, ReadRespBody::decode(p).map_err(decode_err)?),
            k => Err(ContractError::Unsupported(format!("event kind {k}"))),
        }
    }
}
