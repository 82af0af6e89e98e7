//! Contract interface and the execution context handed to handlers.

use std::rc::Rc;

use thiserror::Error;

use super::block::{Caller, Transaction};
use crate::policy::{self, AccessRequest, Action, Decision, EvalContext, PolicyAst};
use crate::state::{HistoryEntry, Version, VersionedStore};
use crate::value::Value;
use crate::xbus::Event;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("PolicyDenied: {0}")]
    PolicyDenied(String),
    #[error("LockConflict: {0}")]
    LockConflict(String),
    #[error("InsufficientFunds: {0}")]
    InsufficientFunds(String),
    #[error("NotOwner: {0}")]
    NotOwner(String),
    #[error("AlreadyEscrowed: {0}")]
    AlreadyEscrowed(String),
    #[error("BadArgs: {0}")]
    BadArgs(String),
    #[error("Unsupported: {0}")]
    Unsupported(String),
    #[error("Rejected: {0}")]
    Rejected(String),
}

/// A deterministic state machine hosted on a chain. Handlers must be pure
/// functions of the context they are given.
pub trait Contract {
    fn id(&self) -> &str;

    fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError>;

    fn on_event(&self, _ctx: &mut ExecCtx<'_>, event: &Event) -> Result<(), ContractError> {
        Err(ContractError::Unsupported(format!("event kind {}", event.kind)))
    }

    /// Method name an inbound event is authorized as (`invoke on <name>`).
    fn event_method(&self, event: &Event) -> String {
        format!("event_{}", event.kind)
    }

    /// Read-only query used by verified reads on the contract path.
    fn query(&self, view: &QueryView<'_>, method: &str, args: &[Value]) -> Result<Value, ContractError> {
        match (method, args) {
            ("get", [Value::Str(k)]) => Ok(view.get(k)),
            _ => Err(ContractError::Unsupported(format!("query {method}"))),
        }
    }

    /// System contracts may touch any key and are not gated by policies.
    fn privileged(&self) -> bool {
        false
    }
}

pub type ContractRef = Rc<dyn Contract>;

/// Key under which a cross-chain transaction holds the lock on `key`.
pub fn lock_key(key: &str) -> String {
    format!("xtxn.lock.{key}")
}

pub(crate) struct OutEvent {
    pub dest_chain: String,
    pub dest_contract: String,
    pub kind: u8,
    pub payload: Vec<u8>,
}

pub(crate) struct Timer {
    pub at_tick: u64,
    pub txn: Transaction,
}

/// Policy view of one contract namespace over the chain store.
pub struct NamespaceView<'a> {
    pub store: &'a VersionedStore,
    pub namespace: &'a str,
    pub height: u64,
}

impl NamespaceView<'_> {
    fn full(&self, key: &str) -> String {
        format!("{}.{key}", self.namespace)
    }

    fn strip<'k>(&self, key: &'k str) -> &'k str {
        &key[self.namespace.len() + 1..]
    }
}

impl EvalContext for NamespaceView<'_> {
    fn height(&self) -> u64 {
        self.height
    }

    fn read(&self, key: &str) -> Value {
        self.store.get_at(&self.full(key), self.height)
    }

    fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry> {
        self.store
            .history(&self.full(prefix), from, to.min(self.height))
            .into_iter()
            .map(|h| HistoryEntry { key: self.strip(&h.key).to_string(), ..h })
            .collect()
    }

    fn current(&self, prefix: &str) -> Vec<(String, Value)> {
        self.store
            .current_at(&self.full(prefix), self.height)
            .into_iter()
            .map(|(k, v)| (self.strip(&k).to_string(), v))
            .collect()
    }
}

/// Runs a policy check for `caller` against `policy`; no policy means unrestricted.
pub fn authorize(
    policy: Option<&PolicyAst>,
    view: &NamespaceView<'_>,
    chain_id: &str,
    caller: &Caller,
    action: Action,
    resource: &str,
    args: &[Value],
) -> Result<(), ContractError> {
    let Some(policy) = policy else {
        return Ok(());
    };
    let req = AccessRequest {
        caller_id: caller.id().to_string(),
        caller_chain: caller.chain(chain_id).to_string(),
        action,
        resource: resource.to_string(),
        height: view.height,
        args: args.to_vec(),
    };
    match policy::evaluate(policy, &req, view) {
        Decision::Allow => Ok(()),
        Decision::Deny(reason) => Err(ContractError::PolicyDenied(format!("{} {resource}: {reason}", action.as_str()))),
    }
}

/// Read-only state access for queries.
pub struct QueryView<'a> {
    pub store: &'a VersionedStore,
    pub namespace: &'a str,
    pub height: u64,
}

impl QueryView<'_> {
    pub fn get(&self, key: &str) -> Value {
        self.store.get_at(&format!("{}.{key}", self.namespace), self.height)
    }

    pub fn get_versioned(&self, key: &str) -> Option<(Version, Value)> {
        self.store.get_versioned_at(&format!("{}.{key}", self.namespace), self.height).map(|(v, x)| (v, x.clone()))
    }
}

/// Handed to contract handlers. Writes, events and timers are buffered and
/// only take effect if the handler returns `Ok`.
pub struct ExecCtx<'a> {
    pub(crate) chain_id: &'a str,
    pub(crate) contract_id: &'a str,
    pub(crate) caller: &'a Caller,
    pub(crate) height: u64,
    pub(crate) tick: u64,
    pub(crate) store: &'a VersionedStore,
    pub(crate) policy: Option<Rc<PolicyAst>>,
    pub(crate) privileged: bool,
    pub(crate) policies: &'a dyn Fn(&str) -> Option<Rc<PolicyAst>>,
    pub(crate) writes: Vec<(String, Value)>,
    pub(crate) events: Vec<OutEvent>,
    pub(crate) timers: Vec<Timer>,
    pub(crate) tag: String,
}

impl<'a> ExecCtx<'a> {
    pub fn chain_id(&self) -> &str {
        self.chain_id
    }

    pub fn contract_id(&self) -> &str {
        self.contract_id
    }

    pub fn caller(&self) -> &Caller {
        self.caller
    }

    /// Height of the block being built.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn full(&self, key: &str) -> String {
        format!("{}.{key}", self.contract_id)
    }

    /// Reads a key of this contract, seeing this handler's own writes.
    pub fn get(&self, key: &str) -> Value {
        self.read_full(&self.full(key))
    }

    pub fn get_int(&self, key: &str) -> i64 {
        self.get(key).as_int().unwrap_or(0)
    }

    fn read_full(&self, full: &str) -> Value {
        if let Some((_, v)) = self.writes.iter().rev().find(|(k, _)| k == full) {
            return v.clone();
        }
        self.store.get(full)
    }

    /// Reads any key on this chain. Only for system contracts.
    pub fn get_key(&self, full: &str) -> Result<Value, ContractError> {
        self.require_privileged()?;
        Ok(self.read_full(full))
    }

    pub fn version_of(&self, full: &str) -> Result<Option<Version>, ContractError> {
        self.require_privileged()?;
        Ok(self.store.get_versioned(full).map(|(v, _)| v))
    }

    /// Keys under `prefix` (full form) with live values, own writes included.
    pub fn scan(&self, prefix: &str) -> Result<Vec<(String, Value)>, ContractError> {
        self.require_privileged()?;
        let mut out: std::collections::BTreeMap<String, Value> = self.store.current_at(prefix, u64::MAX).into_iter().collect();
        for (k, v) in &self.writes {
            if k.starts_with(prefix) {
                out.insert(k.clone(), v.clone());
            }
        }
        Ok(out.into_iter().filter(|(_, v)| !v.is_null()).collect())
    }

    /// Checks `caller` against the policy of the contract owning `full`.
    /// Only for system contracts acting on behalf of another caller.
    pub fn authorize_key(&self, caller: &Caller, action: Action, full: &str, args: &[Value]) -> Result<(), ContractError> {
        self.require_privileged()?;
        let (ns, suffix) = full
            .split_once('.')
            .ok_or_else(|| ContractError::BadArgs(format!("key {full} has no namespace")))?;
        let view = NamespaceView { store: self.store, namespace: ns, height: self.height };
        authorize((self.policies)(ns).as_deref(), &view, self.chain_id, caller, action, suffix, args)
    }

    /// Like [`authorize_key`](Self::authorize_key) for an arbitrary resource of contract `ns`.
    pub fn authorize_resource(&self, caller: &Caller, action: Action, ns: &str, resource: &str) -> Result<(), ContractError> {
        self.require_privileged()?;
        let view = NamespaceView { store: self.store, namespace: ns, height: self.height };
        authorize((self.policies)(ns).as_deref(), &view, self.chain_id, caller, action, resource, &[])
    }

    fn require_privileged(&self) -> Result<(), ContractError> {
        if self.privileged {
            Ok(())
        } else {
            Err(ContractError::Unsupported(format!("{} may only access its own keys", self.contract_id)))
        }
    }

    /// Writes a key of this contract, subject to the contract's write policy
    /// and to locks held by cross-chain transactions.
    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ContractError> {
        let full = self.full(key);
        if !self.privileged {
            let view = NamespaceView { store: self.store, namespace: self.contract_id, height: self.height };
            authorize(self.policy.as_deref(), &view, self.chain_id, self.caller, Action::Write, key, std::slice::from_ref(&value))?;
            if let Value::Str(holder) = self.store.get(&lock_key(&full)) {
                return Err(ContractError::LockConflict(format!("{full} locked by {holder}")));
            }
        }
        self.writes.push((full, value));
        Ok(())
    }

    /// Writes any key on this chain. Only for system contracts.
    pub fn set_key(&mut self, full: &str, value: Value) -> Result<(), ContractError> {
        self.require_privileged()?;
        self.writes.push((full.to_string(), value));
        Ok(())
    }

    pub fn emit(&mut self, dest_chain: &str, dest_contract: &str, kind: u8, payload: Vec<u8>) {
        self.events.push(OutEvent {
            dest_chain: dest_chain.to_string(),
            dest_contract: dest_contract.to_string(),
            kind,
            payload,
        });
    }

    /// Schedules `method(args)` on this contract as a system call at `at_tick`.
    pub fn schedule(&mut self, at_tick: u64, method: &str, args: Vec<Value>) {
        self.timers.push(Timer {
            at_tick,
            txn: Transaction::new(Caller::System, self.contract_id, method, args, 0),
        });
    }

    /// Labels the receipt, e.g. with the cross-chain transaction id.
    pub fn set_tag(&mut self, tag: &str) {
        self.tag = tag.to_string();
    }
}
