//! Client side of cross-chain transactions. Calls block by running the
//! simulation until the coordinator chain has logged the answer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SimError, TxnMetrics, World};
use crate::chain::{Caller, Status};
use crate::state::Version;
use crate::value::Value;
use crate::xtxn::{
    encode_plan, AbortReason, PrepareBody, Query, ReadError, ReadRequest, ReadRespBody, ReadStatus, XTXN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Occ,
    Locks,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "occ" => Ok(Mode::Occ),
            "locks" => Ok(Mode::Locks),
            _ => Err(format!("unknown mode {s:?}, expected occ or locks")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnStatus {
    Active,
    Prepared,
    Committed,
    Aborted(AbortReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnOutcome {
    Committed { reads: BTreeMap<(String, String), Value> },
    Aborted(AbortReason),
}

impl TxnOutcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, TxnOutcome::Committed { .. })
    }

    fn label(&self) -> String {
        match self {
            TxnOutcome::Committed { .. } => "committed".into(),
            TxnOutcome::Aborted(r) => format!("aborted:{r}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TxnError {
    #[error("InvalidState: transaction is {0}")]
    InvalidState(String),
    #[error("LockTimeout on {chain}/{key}")]
    LockTimeout { chain: String, key: String },
    #[error("aborted: {0}")]
    Aborted(AbortReason),
    #[error("invalid transaction: {0}")]
    Invalid(String),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One-shot transaction with all items known up front. Keys are full state
/// keys (`contract.suffix`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiniTxn {
    pub compares: Vec<(String, String, Value)>,
    pub reads: Vec<(String, String)>,
    pub writes: Vec<(String, String, Value)>,
}

fn dup<'a>(set: &mut BTreeSet<(&'a str, &'a str)>, c: &'a str, k: &'a str) -> Result<(), TxnError> {
    if set.insert((c, k)) {
        Ok(())
    } else {
        Err(TxnError::Invalid(format!("duplicate item {c}/{k}")))
    }
}

impl MiniTxn {
    fn plan(&self) -> Result<Vec<(String, PrepareBody)>, TxnError> {
        let mut seen: [BTreeSet<(&str, &str)>; 3] = Default::default();
        let mut plan: BTreeMap<String, PrepareBody> = BTreeMap::new();
        for (c, k, v) in &self.compares {
            dup(&mut seen[0], c, k)?;
            plan.entry(c.clone()).or_default().compares.push((k.clone(), v.clone()));
        }
        for (c, k) in &self.reads {
            dup(&mut seen[1], c, k)?;
            plan.entry(c.clone()).or_default().reads.push(k.clone());
        }
        for (c, k, v) in &self.writes {
            dup(&mut seen[2], c, k)?;
            plan.entry(c.clone()).or_default().writes.push((k.clone(), v.clone()));
        }
        if plan.is_empty() {
            return Err(TxnError::Invalid("empty mini-transaction".into()));
        }
        Ok(plan.into_iter().collect())
    }
}

/// Interactive transaction handle.
#[derive(Debug, Clone)]
pub struct GeneralTxn {
    pub id: String,
    pub coordinator: String,
    pub mode: Mode,
    pub origin: Caller,
    pub status: TxnStatus,
    pub lock_timeout: u64,
    reads: Vec<(String, String, Option<Version>)>,
    writes: BTreeMap<(String, String), Value>,
    locked: BTreeSet<(String, String)>,
    cache: BTreeMap<(String, String), Value>,
    seq: u32,
    trips: u64,
}

impl GeneralTxn {
    pub fn read_set(&self) -> &[(String, String, Option<Version>)] {
        &self.reads
    }

    pub fn write_set(&self) -> &BTreeMap<(String, String), Value> {
        &self.writes
    }

    /// Remote read or lock round trips issued so far, retransmissions excluded.
    pub fn request_trips(&self) -> u64 {
        self.trips
    }

    fn require_active(&self) -> Result<(), TxnError> {
        match &self.status {
            TxnStatus::Active => Ok(()),
            s => Err(TxnError::InvalidState(format!("{s:?}"))),
        }
    }
}

fn split_key(key: &str) -> Result<(&str, &str), TxnError> {
    key.split_once('.').ok_or_else(|| TxnError::Invalid(format!("key {key} has no contract namespace")))
}

const RESEND_AFTER: u64 = 12;
const BUSY_BACKOFF: u64 = 4;

impl World {
    fn co_get(&self, coordinator: &str, txn: &str, field: &str) -> Result<Value, SimError> {
        Ok(self.chain(coordinator)?.store().get(&format!("{XTXN}.co.{txn}.{field}")))
    }

    fn submit_ok(&mut self, chain: &str, caller: &Caller, method: &str, args: Vec<Value>) -> Result<(), TxnError> {
        let r = self.call(chain, caller, XTXN, method, args)?;
        match r.status {
            Status::Ok => Ok(()),
            Status::Failed(m) => Err(TxnError::Invalid(m)),
        }
    }

    /// Waits for the decision and for every participant to acknowledge it.
    fn await_decision(&mut self, coordinator: &str, txn: &str) -> Result<Result<(), AbortReason>, TxnError> {
        let start = self.tick();
        loop {
            let decision = self.co_get(coordinator, txn, "decision")?;
            let done = self.co_get(coordinator, txn, "done")?.as_bool() == Some(true);
            if let (Value::Str(d), true) = (&decision, done) {
                return Ok(match d.strip_prefix("abort|") {
                    None => Ok(()),
                    Some(r) => Err(AbortReason::decode(r).unwrap_or_else(|| AbortReason::Client(r.to_string()))),
                });
            }
            if self.tick() - start > self.cfg.max_ticks {
                return Err(SimError::MaxTicksExceeded(self.tick()).into());
            }
            self.step()?;
        }
    }

    fn record_txn(&mut self, txn: &str, kind: &str, outcome: &TxnOutcome) {
        let m = TxnMetrics {
            kind: kind.to_string(),
            outcome: outcome.label(),
            round_trips: self.meter.round_trips(txn),
            retransmissions: self.meter.retransmissions(txn),
        };
        self.txn_log.insert(txn.to_string(), m);
    }

    /// Runs a mini-transaction coordinated by `coordinator` to completion.
    pub fn execute_minitxn(&mut self, coordinator: &str, origin: &Caller, mt: &MiniTxn) -> Result<(String, TxnOutcome), TxnError> {
        let plan = mt.plan()?;
        let id = self.next_txn_id(coordinator);
        self.submit_ok(coordinator, origin, "mt_begin", vec![Value::from(id.as_str()), Value::Bytes(encode_plan(&plan))])?;
        let outcome = match self.await_decision(coordinator, &id)? {
            Err(r) => TxnOutcome::Aborted(r),
            Ok(()) => {
                let mut reads = BTreeMap::new();
                for (chain, body) in &plan {
                    if body.reads.is_empty() {
                        continue;
                    }
                    let raw = self.co_get(coordinator, &id, &format!("reads.{chain}"))?;
                    let kvs = raw.as_bytes().and_then(|b| crate::xtxn::decode_kvs(b).ok()).unwrap_or_default();
                    for (k, v) in kvs {
                        reads.insert((chain.clone(), k), v);
                    }
                }
                TxnOutcome::Committed { reads }
            }
        };
        self.record_txn(&id, "mini", &outcome);
        Ok((id, outcome))
    }

    pub fn begin_general(&mut self, coordinator: &str, mode: Mode, origin: &Caller) -> GeneralTxn {
        GeneralTxn {
            id: self.next_txn_id(coordinator),
            coordinator: coordinator.to_string(),
            mode,
            origin: origin.clone(),
            status: TxnStatus::Active,
            lock_timeout: self.cfg.lock_timeout,
            reads: Vec::new(),
            writes: BTreeMap::new(),
            locked: BTreeSet::new(),
            cache: BTreeMap::new(),
            seq: 0,
            trips: 0,
        }
    }

    /// Acquires locks on `keys` of `chain` through the coordinator and returns
    /// their values and versions. Gives up after the handle's lock timeout.
    fn lock_keys(&mut self, t: &mut GeneralTxn, chain: &str, keys: &[String]) -> Result<Vec<(String, Value, Option<Version>)>, TxnError> {
        t.seq += 1;
        t.trips += 1;
        let seq = t.seq;
        let args = vec![
            Value::from(t.id.as_str()),
            Value::Int(seq as i64),
            Value::from(chain),
            Value::Bytes(crate::xtxn::encode_keys(keys)),
            Value::Bool(true),
        ];
        let start = self.tick();
        let mut last_sent = start;
        self.submit_ok(&t.coordinator, &t.origin, "gt_read", args.clone())?;
        loop {
            let raw = self.co_get(&t.coordinator, &t.id, &format!("rr.{seq}"))?;
            let resp = raw.as_bytes().and_then(|b| ReadRespBody::decode(b).ok());
            let resend = match resp.map(|r| r.status) {
                Some(ReadStatus::Ok(items)) => {
                    for k in keys {
                        t.locked.insert((chain.to_string(), k.clone()));
                    }
                    return Ok(items);
                }
                Some(ReadStatus::Failed(reason)) => {
                    self.abort_with(t, reason.clone())?;
                    return Err(TxnError::Aborted(reason));
                }
                Some(ReadStatus::Busy(_)) => self.tick() - last_sent >= BUSY_BACKOFF,
                None => self.tick() - last_sent >= RESEND_AFTER,
            };
            if self.tick() - start >= t.lock_timeout {
                self.abort_with(t, AbortReason::LockTimeout)?;
                return Err(TxnError::LockTimeout { chain: chain.to_string(), key: keys.join(",") });
            }
            if resend {
                last_sent = self.tick();
                self.submit_ok(&t.coordinator, &t.origin, "gt_read", args.clone())?;
            } else {
                self.step()?;
            }
        }
    }

    /// Reads `key` (full form) on `chain` inside the transaction.
    pub fn txn_read(&mut self, t: &mut GeneralTxn, chain: &str, key: &str) -> Result<Value, TxnError> {
        Ok(self.txn_read_many(t, chain, &[key.to_string()])?.remove(0))
    }

    /// Reads several keys of one chain in a single round trip. Keys already
    /// read or written by the handle are answered locally.
    pub fn txn_read_many(&mut self, t: &mut GeneralTxn, chain: &str, keys: &[String]) -> Result<Vec<Value>, TxnError> {
        t.require_active()?;
        let mut missing: Vec<String> = Vec::new();
        for k in keys {
            split_key(k)?;
            let ck = (chain.to_string(), k.clone());
            if !t.writes.contains_key(&ck) && !t.cache.contains_key(&ck) && !missing.contains(k) {
                missing.push(k.clone());
            }
        }
        if !missing.is_empty() {
            let fetched: Vec<(String, Value, Option<Version>)> = match t.mode {
                Mode::Occ => {
                    let requester = t.origin.qualified(&t.coordinator);
                    let mut out = Vec::new();
                    for k in &missing {
                        let (contract, suffix) = split_key(k)?;
                        let req = ReadRequest {
                            nonce: self.next_read_nonce(),
                            target_chain: chain.to_string(),
                            contract: contract.to_string(),
                            query: Query::Get(suffix.to_string()),
                        };
                        let resp = self.verified_read(&requester, &req)?;
                        out.push((k.clone(), resp.value, resp.version));
                    }
                    self.meter.on_direct_read(&t.id);
                    t.trips += 1;
                    out
                }
                Mode::Locks => self.lock_keys(t, chain, &missing)?,
            };
            for (k, v, ver) in fetched {
                t.reads.push((chain.to_string(), k.clone(), ver));
                t.cache.insert((chain.to_string(), k), v);
            }
        }
        Ok(keys
            .iter()
            .map(|k| {
                let ck = (chain.to_string(), k.clone());
                t.writes.get(&ck).or_else(|| t.cache.get(&ck)).cloned().unwrap_or(Value::Null)
            })
            .collect())
    }

    /// Buffers a write. In lock mode the key's lock is taken first.
    pub fn txn_write(&mut self, t: &mut GeneralTxn, chain: &str, key: &str, value: Value) -> Result<(), TxnError> {
        self.txn_write_many(t, chain, vec![(key.to_string(), value)])
    }

    /// Buffers several writes to one chain, locking any unlocked keys in a
    /// single round trip in lock mode. Later items win.
    pub fn txn_write_many(&mut self, t: &mut GeneralTxn, chain: &str, items: Vec<(String, Value)>) -> Result<(), TxnError> {
        t.require_active()?;
        let mut need: Vec<String> = Vec::new();
        for (k, _) in &items {
            split_key(k)?;
            if t.mode == Mode::Locks && !t.locked.contains(&(chain.to_string(), k.clone())) && !need.contains(k) {
                need.push(k.clone());
            }
        }
        if !need.is_empty() {
            self.lock_keys(t, chain, &need)?;
        }
        for (k, v) in items {
            t.writes.insert((chain.to_string(), k), v);
        }
        Ok(())
    }

    fn abort_with(&mut self, t: &mut GeneralTxn, reason: AbortReason) -> Result<(), TxnError> {
        if t.status == TxnStatus::Active {
            self.submit_ok(&t.coordinator, &t.origin, "gt_abort", vec![Value::from(t.id.as_str()), Value::Str(reason.encode())])?;
            let _ = self.await_decision(&t.coordinator, &t.id)?;
            let outcome = TxnOutcome::Aborted(reason.clone());
            self.record_txn(&t.id, "general", &outcome);
            t.status = TxnStatus::Aborted(reason);
        }
        Ok(())
    }

    pub fn txn_abort(&mut self, t: &mut GeneralTxn, why: &str) -> Result<(), TxnError> {
        t.require_active()?;
        self.abort_with(t, AbortReason::Client(why.to_string()))
    }

    /// Runs two-phase commit through the coordinator chain.
    pub fn txn_commit(&mut self, t: &mut GeneralTxn) -> Result<TxnOutcome, TxnError> {
        t.require_active()?;
        let mut plan: BTreeMap<String, PrepareBody> = BTreeMap::new();
        match t.mode {
            Mode::Occ => {
                for (c, k, v) in &t.reads {
                    plan.entry(c.clone()).or_default().versions.push((k.clone(), *v));
                }
            }
            Mode::Locks => {
                for (c, k) in &t.locked {
                    plan.entry(c.clone()).or_default().held.push(k.clone());
                }
            }
        }
        for ((c, k), v) in &t.writes {
            plan.entry(c.clone()).or_default().writes.push((k.clone(), v.clone()));
        }
        if plan.is_empty() {
            t.status = TxnStatus::Committed;
            return Ok(TxnOutcome::Committed { reads: BTreeMap::new() });
        }
        let plan: Vec<(String, PrepareBody)> = plan.into_iter().collect();
        self.submit_ok(&t.coordinator, &t.origin, "gt_commit", vec![Value::from(t.id.as_str()), Value::Bytes(encode_plan(&plan))])?;
        t.status = TxnStatus::Prepared;
        let outcome = match self.await_decision(&t.coordinator, &t.id)? {
            Ok(()) => {
                t.status = TxnStatus::Committed;
                TxnOutcome::Committed { reads: t.cache.clone() }
            }
            Err(r) => {
                t.status = TxnStatus::Aborted(r.clone());
                TxnOutcome::Aborted(r)
            }
        };
        self.record_txn(&t.id, "general", &outcome);
        Ok(outcome)
    }
}
