//! Simulated permissioned chain: FIFO sequencing, deterministic execution,
//! quorum-certified blocks with authenticated state roots.

mod block;
mod exec;
mod kv;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{digest_list_root, Block, BlockHeader, Caller, Entry, QuorumCert, Receipt, Status, Transaction};
pub use kv::KvContract;
pub use exec::{authorize, lock_key, Contract, ContractError, ContractRef, ExecCtx, NamespaceView, QueryView};

use crate::crypto::{hash_parts, Digest, KeySet, Keypair, NodeId, SchemeKind};
use crate::merkle::{empty_root, MerkleProof};
use crate::policy::{parse_policy, Action, ParseError, PolicyAst};
use crate::state::{HistoryEntry, Version, VersionedStore};
use crate::value::Value;
use crate::xbus::Event;
use exec::Timer;

/// Namespace of chain-level system keys.
pub const SYS: &str = "sys";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Never signs anything.
    Silent,
    /// Signs a different digest than the one it was shown.
    EquivocateDigest,
    /// Behaves honestly but also signs fabricated events.
    ForgeEvents,
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub chain_id: String,
    pub n: usize,
    pub f: usize,
    pub node_keys: Vec<Keypair>,
    pub byzantine: BTreeMap<NodeId, Behavior>,
}

impl ChainConfig {
    /// Config with keys derived from `seed`.
    pub fn generate(chain_id: &str, n: usize, f: usize, scheme: SchemeKind, seed: u64) -> Self {
        Self {
            chain_id: chain_id.to_string(),
            n,
            f,
            node_keys: (0..n as NodeId).map(|i| Keypair::derive(scheme, seed, chain_id, i)).collect(),
            byzantine: BTreeMap::new(),
        }
    }

    pub fn with_behavior(mut self, node: NodeId, b: Behavior) -> Self {
        self.byzantine.insert(node, b);
        self
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.chain_id.is_empty() {
            return Err(ChainError::InvalidConfig("empty chain id".into()));
        }
        if self.n < 3 * self.f + 1 {
            return Err(ChainError::InvalidConfig(format!("n={} < 3f+1 with f={}", self.n, self.f)));
        }
        if self.node_keys.len() != self.n {
            return Err(ChainError::InvalidConfig(format!("{} keys for {} nodes", self.node_keys.len(), self.n)));
        }
        if let Some(node) = self.byzantine.keys().find(|id| **id as usize >= self.n) {
            return Err(ChainError::InvalidConfig(format!("behavior for unknown node {node}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("invalid chain config: {0}")]
    InvalidConfig(String),
    #[error("contract {0} already registered")]
    DuplicateContract(String),
    #[error("nonce {nonce} already used by {caller}")]
    DuplicateNonce { caller: String, nonce: u64 },
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("quorum failure: {valid} valid signatures, need {needed}")]
    QuorumFailure { valid: usize, needed: usize },
    #[error("height {requested} is beyond current height {current}")]
    FutureHeight { requested: u64, current: u64 },
    #[error("invalid height range [{from}, {to}]")]
    InvalidRange { from: u64, to: u64 },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub struct Chain {
    cfg: ChainConfig,
    keyset: KeySet,
    contracts: BTreeMap<String, ContractRef>,
    pending_contracts: BTreeMap<String, ContractRef>,
    store: VersionedStore,
    blocks: Vec<Block>,
    mempool: VecDeque<Entry>,
    inbound_seen: BTreeSet<(String, u64)>,
    used_nonces: BTreeSet<(Caller, u64)>,
    system_nonce: u64,
    next_event_nonce: u64,
    timers: BTreeMap<(u64, u64), Transaction>,
    timer_seq: u64,
    policy_cache: RefCell<HashMap<String, Rc<PolicyAst>>>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chain").field("id", &self.cfg.chain_id).field("height", &self.height()).finish()
    }
}

impl Chain {
    pub fn create(cfg: ChainConfig) -> Result<Self, ChainError> {
        cfg.validate()?;
        let keyset = KeySet {
            chain_id: cfg.chain_id.clone(),
            f: cfg.f,
            keys: cfg.node_keys.iter().map(Keypair::public).collect(),
        };
        let header = BlockHeader {
            chain_id: cfg.chain_id.clone(),
            height: 0,
            prev_digest: Digest::ZERO,
            txn_root: digest_list_root(&[]),
            state_root: empty_root(),
            tick: 0,
        };
        let digest = header.digest();
        let cert = QuorumCert {
            header_digest: digest,
            signatures: cfg.node_keys.iter().enumerate().map(|(i, k)| (i as NodeId, k.sign(digest.as_bytes()))).collect(),
        };
        let genesis = Block { header, entries: vec![], receipts: vec![], outbox: vec![], cert };
        Ok(Self {
            cfg,
            keyset,
            contracts: BTreeMap::new(),
            pending_contracts: BTreeMap::new(),
            store: VersionedStore::new(),
            blocks: vec![genesis],
            mempool: VecDeque::new(),
            inbound_seen: BTreeSet::new(),
            used_nonces: BTreeSet::new(),
            system_nonce: 0,
            next_event_nonce: 0,
            timers: BTreeMap::new(),
            timer_seq: 0,
            policy_cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn id(&self) -> &str {
        &self.cfg.chain_id
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn f(&self) -> usize {
        self.cfg.f
    }

    pub fn n(&self) -> usize {
        self.cfg.n
    }

    /// Signatures needed to certify a block.
    pub fn quorum(&self) -> usize {
        2 * self.cfg.f + 1
    }

    pub fn keyset(&self) -> &KeySet {
        &self.keyset
    }

    pub fn node_key(&self, node: NodeId) -> &Keypair {
        &self.cfg.node_keys[node as usize]
    }

    pub fn behavior(&self, node: NodeId) -> Behavior {
        self.cfg.byzantine.get(&node).copied().unwrap_or_default()
    }

    pub fn set_behavior(&mut self, node: NodeId, b: Behavior) {
        if b == Behavior::Honest {
            self.cfg.byzantine.remove(&node);
        } else {
            self.cfg.byzantine.insert(node, b);
        }
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().unwrap()
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn store(&self) -> &VersionedStore {
        &self.store
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn has_pending_timers(&self) -> bool {
        !self.timers.is_empty()
    }

    pub fn next_timer_tick(&self) -> Option<u64> {
        self.timers.keys().next().map(|(t, _)| *t)
    }

    pub fn contract(&self, id: &str) -> Option<&ContractRef> {
        self.contracts.get(id)
    }

    fn known_contract(&self, id: &str) -> bool {
        id == SYS || self.contracts.contains_key(id) || self.pending_contracts.contains_key(id)
    }

    /// Queues a registration transaction; the contract is callable from the
    /// block after the one that records it.
    pub fn register_contract(&mut self, c: ContractRef) -> Result<Digest, ChainError> {
        let id = c.id().to_string();
        if id.is_empty() || id.contains('.') || self.known_contract(&id) {
            return Err(ChainError::DuplicateContract(id));
        }
        self.pending_contracts.insert(id.clone(), c);
        self.submit_system("register", vec![Value::Str(id)])
    }

    /// Parses `src` and queues its attachment; it governs blocks after the one
    /// that records it. Unparseable text leaves the ledger untouched.
    pub fn attach_policy(&mut self, contract_id: &str, src: &str) -> Result<Digest, ChainError> {
        parse_policy(src)?;
        self.submit_system("attach_policy", vec![Value::from(contract_id), Value::from(src)])
    }

    fn submit_system(&mut self, method: &str, args: Vec<Value>) -> Result<Digest, ChainError> {
        self.system_nonce += 1;
        let txn = Transaction::new(Caller::System, SYS, method, args, self.system_nonce);
        self.submit_transaction(txn)
    }

    pub fn submit_transaction(&mut self, txn: Transaction) -> Result<Digest, ChainError> {
        if !self.known_contract(&txn.target_contract) {
            return Err(ChainError::UnknownContract(txn.target_contract.clone()));
        }
        let key = (txn.caller.clone(), txn.nonce);
        if self.used_nonces.contains(&key) {
            return Err(ChainError::DuplicateNonce { caller: txn.caller.to_string(), nonce: txn.nonce });
        }
        self.used_nonces.insert(key);
        let id = txn.id();
        self.mempool.push_back(Entry::Txn(txn));
        Ok(id)
    }

    /// Queues an authenticated inbound event for the next block. Returns
    /// false if an event with the same (source chain, nonce) was seen before.
    pub fn enqueue_inbound(&mut self, event: Event) -> bool {
        if !self.inbound_seen.insert((event.source_chain.clone(), event.nonce)) {
            return false;
        }
        self.mempool.push_back(Entry::Inbound(event));
        true
    }

    pub fn has_seen_inbound(&self, source_chain: &str, nonce: u64) -> bool {
        self.inbound_seen.contains(&(source_chain.to_string(), nonce))
    }

    /// Queues an empty system transaction so the chain produces a block.
    pub fn heartbeat(&mut self) -> Digest {
        self.submit_system("heartbeat", vec![]).expect("system calls are always accepted")
    }

    /// Policy attached to `contract_id` as of the end of block `height`.
    pub fn policy_at(&self, contract_id: &str, height: u64) -> Option<Rc<PolicyAst>> {
        let src = match self.store.get_at(&format!("{SYS}.policy.{contract_id}"), height) {
            Value::Str(s) => s,
            _ => return None,
        };
        if let Some(p) = self.policy_cache.borrow().get(&src) {
            return Some(p.clone());
        }
        // Attachment only stores text that parsed.
        let ast = Rc::new(parse_policy(&src).ok()?);
        self.policy_cache.borrow_mut().insert(src, ast.clone());
        Some(ast)
    }

    fn fire_timers(&mut self, tick: u64) {
        let due: Vec<(u64, u64)> = self.timers.range(..=(tick, u64::MAX)).map(|(k, _)| *k).collect();
        for key in due {
            let txn = self.timers.remove(&key).unwrap();
            self.mempool.push_back(Entry::Txn(txn));
        }
    }

    /// Executes the mempool as the next block and collects node signatures.
    /// Returns `Ok(None)` when there is nothing to order.
    pub fn produce_block(&mut self, tick: u64) -> Result<Option<&Block>, ChainError> {
        self.fire_timers(tick);
        if self.mempool.is_empty() {
            return Ok(None);
        }
        let height = self.height() + 1;
        let entries: Vec<Entry> = self.mempool.drain(..).collect();

        let mut receipts = Vec::with_capacity(entries.len());
        let mut out_events = Vec::new();
        let mut new_timers = Vec::new();
        let mut activated = Vec::new();
        for (idx, entry) in entries.iter().enumerate() {
            let version = Version { height, index: idx as u32 };
            let (receipt, events, timers, activate) = self.execute(entry, height, tick);
            for (k, v) in &receipt.writes {
                self.store.apply(k, v.clone(), version);
            }
            out_events.extend(events.into_iter().map(|e| (idx, e)));
            new_timers.extend(timers);
            activated.extend(activate);
            receipts.push(receipt);
        }

        let header = BlockHeader {
            chain_id: self.cfg.chain_id.clone(),
            height,
            prev_digest: self.tip().digest(),
            txn_root: digest_list_root(&entries.iter().map(Entry::id).collect::<Vec<_>>()),
            state_root: crate::merkle::MerkleTree::build(&self.store.snapshot()).root(),
            tick,
        };
        let cert = self.collect_signatures(&header);
        if cert.signatures.len() < self.quorum() {
            let valid = cert.signatures.len();
            self.store.truncate_from(height);
            for e in entries.into_iter().rev() {
                self.mempool.push_front(e);
            }
            return Err(ChainError::QuorumFailure { valid, needed: self.quorum() });
        }

        let outbox: Vec<Event> = out_events
            .into_iter()
            .map(|(_, e)| {
                let nonce = self.next_event_nonce;
                self.next_event_nonce += 1;
                Event {
                    version: crate::xbus::EVENT_VERSION,
                    source_chain: self.cfg.chain_id.clone(),
                    dest_chain: e.dest_chain,
                    source_contract: e.source_contract,
                    dest_contract: e.dest_contract,
                    nonce,
                    kind: e.kind,
                    payload: e.payload,
                }
            })
            .collect();
        for t in new_timers {
            self.timer_seq += 1;
            let mut txn = t.txn;
            txn.nonce = self.timer_seq;
            self.timers.insert((t.at_tick, self.timer_seq), txn);
        }
        for id in activated {
            if let Some(c) = self.pending_contracts.remove(&id) {
                self.contracts.insert(id, c);
            }
        }
        self.blocks.push(Block { header, entries, receipts, outbox, cert });
        Ok(self.blocks.last())
    }

    /// Honest and forging nodes sign the header digest; equivocating nodes
    /// sign something else and are left out; silent nodes do nothing.
    fn collect_signatures(&self, header: &BlockHeader) -> QuorumCert {
        let digest = header.digest();
        let mut signatures = BTreeMap::new();
        for node in 0..self.cfg.n as NodeId {
            let key = self.node_key(node);
            let sig = match self.behavior(node) {
                Behavior::Silent => continue,
                Behavior::EquivocateDigest => key.sign(hash_parts(&[b"equivocate", digest.as_bytes()]).as_bytes()),
                Behavior::Honest | Behavior::ForgeEvents => key.sign(digest.as_bytes()),
            };
            if self.keyset.keys[node as usize].verify(digest.as_bytes(), &sig) {
                signatures.insert(node, sig);
            }
        }
        QuorumCert { header_digest: digest, signatures }
    }

    #[allow(clippy::type_complexity)]
    fn execute(&mut self, entry: &Entry, height: u64, tick: u64) -> (Receipt, Vec<PendingEvent>, Vec<Timer>, Option<String>) {
        let (caller, target, call) = match entry {
            Entry::Txn(t) => (t.caller.clone(), t.target_contract.as_str(), Call::Method(&t.method, &t.args)),
            Entry::Inbound(e) => {
                (Caller::contract(&e.source_chain, &e.source_contract), e.dest_contract.as_str(), Call::Event(e))
            }
        };
        if target == SYS {
            return match call {
                Call::Method(m, args) => {
                    let (r, act) = self.execute_system(m, args, height);
                    (r, vec![], vec![], act)
                }
                Call::Event(_) => (Receipt::failed("Unsupported: events to sys"), vec![], vec![], None),
            };
        }
        let Some(contract) = self.contracts.get(target).cloned() else {
            return (Receipt::failed(format!("UnknownContract: {target}")), vec![], vec![], None);
        };
        let policy = if contract.privileged() { None } else { self.policy_at(target, height - 1) };
        let store = &self.store;
        let lookup = |id: &str| self.policy_at(id, height - 1);
        let view = NamespaceView { store, namespace: target, height };
        if caller != Caller::System {
            let (method, args): (String, &[Value]) = match call {
                Call::Method(m, a) => (m.to_string(), a),
                Call::Event(e) => (contract.event_method(e), &[]),
            };
            if let Err(e) = authorize(policy.as_deref(), &view, &self.cfg.chain_id, &caller, Action::Invoke, &method, args) {
                return (Receipt::failed(e.to_string()), vec![], vec![], None);
            }
        }
        let mut ctx = ExecCtx {
            chain_id: &self.cfg.chain_id,
            contract_id: target,
            caller: &caller,
            height,
            tick,
            store,
            policy,
            privileged: contract.privileged(),
            policies: &lookup,
            writes: Vec::new(),
            events: Vec::new(),
            timers: Vec::new(),
            tag: String::new(),
        };
        let result = match call {
            Call::Method(m, args) => contract.invoke(&mut ctx, m, args),
            Call::Event(e) => contract.on_event(&mut ctx, e),
        };
        match result {
            Err(e) => (Receipt::failed(e.to_string()), vec![], vec![], None),
            Ok(()) => {
                // Collapse repeated writes to one final value per key, in first-write order.
                let mut order: Vec<String> = Vec::new();
                let mut last: HashMap<String, Value> = HashMap::new();
                for (k, v) in ctx.writes {
                    if !last.contains_key(&k) {
                        order.push(k.clone());
                    }
                    last.insert(k, v);
                }
                let writes = order.into_iter().map(|k| { let v = last.remove(&k).unwrap(); (k, v) }).collect();
                let events = ctx
                    .events
                    .into_iter()
                    .map(|e| PendingEvent {
                        source_contract: target.to_string(),
                        dest_chain: e.dest_chain,
                        dest_contract: e.dest_contract,
                        kind: e.kind,
                        payload: e.payload,
                    })
                    .collect();
                (Receipt { status: Status::Ok, tag: ctx.tag, writes }, events, ctx.timers, None)
            }
        }
    }

    fn execute_system(&mut self, method: &str, args: &[Value], _height: u64) -> (Receipt, Option<String>) {
        match (method, args) {
            ("register", [Value::Str(id)]) => {
                if self.contracts.contains_key(id) {
                    return (Receipt::failed(format!("DuplicateContract: {id}")), None);
                }
                let receipt = Receipt {
                    status: Status::Ok,
                    tag: String::new(),
                    writes: vec![(format!("{SYS}.contracts.{id}"), Value::Bool(true))],
                };
                (receipt, Some(id.clone()))
            }
            ("heartbeat", []) => (Receipt { status: Status::Ok, tag: String::new(), writes: vec![] }, None),
            ("attach_policy", [Value::Str(id), Value::Str(src)]) => {
                if let Err(e) = parse_policy(src) {
                    return (Receipt::failed(format!("ParseError: {e}")), None);
                }
                let receipt = Receipt {
                    status: Status::Ok,
                    tag: String::new(),
                    writes: vec![(format!("{SYS}.policy.{id}"), Value::Str(src.clone()))],
                };
                (receipt, None)
            }
            _ => (Receipt::failed(format!("Unsupported: sys.{method}")), None),
        }
    }

    /// Value with the highest version at or below `height` (default: current).
    pub fn read_state(&self, key: &str, height: Option<u64>) -> Result<Value, ChainError> {
        let h = self.check_height(height.unwrap_or(self.height()))?;
        Ok(self.store.get_at(key, h))
    }

    pub fn read_versioned(&self, key: &str) -> Option<(Version, Value)> {
        self.store.get_versioned(key).map(|(v, x)| (v, x.clone()))
    }

    fn check_height(&self, h: u64) -> Result<u64, ChainError> {
        if h > self.height() {
            Err(ChainError::FutureHeight { requested: h, current: self.height() })
        } else {
            Ok(h)
        }
    }

    /// Every version of keys under `key_prefix` written in blocks `from..=to`.
    pub fn get_history(&self, key_prefix: &str, from: u64, to: u64) -> Result<Vec<HistoryEntry>, ChainError> {
        if from > to || to > self.height() {
            return Err(ChainError::InvalidRange { from, to });
        }
        Ok(self.store.history(key_prefix, from, to))
    }

    /// Membership or absence proof against the state root of block `height`.
    pub fn get_proof(&self, key: &str, height: u64) -> Result<MerkleProof, ChainError> {
        let h = self.check_height(height)?;
        Ok(self.store.tree_at(h).prove(key.as_bytes(), h))
    }

    pub fn state_root(&self, height: u64) -> Option<Digest> {
        self.block(height).map(|b| b.header.state_root)
    }
}

enum Call<'a> {
    Method(&'a str, &'a [Value]),
    Event(&'a Event),
}

pub(crate) struct PendingEvent {
    source_contract: String,
    dest_chain: String,
    dest_contract: String,
    kind: u8,
    payload: Vec<u8>,
}

/// Creates a chain after validating its configuration.
pub fn create_chain(cfg: ChainConfig) -> Result<Chain, ChainError> {
    Chain::create(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::{verify_proof, ProofKind};

    struct Kv;

    impl Contract for Kv {
        fn id(&self) -> &str {
            "kv"
        }

        fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError> {
            match (method, args) {
                ("put", [Value::Str(k), v]) => ctx.set(k, v.clone()),
                ("emit", []) => {
                    ctx.emit("other", "kv", 40, vec![]);
                    Ok(())
                }
                _ => Err(ContractError::BadArgs(method.into())),
            }
        }
    }

    fn chain(n: usize, f: usize) -> Chain {
        let mut c = Chain::create(ChainConfig::generate("a", n, f, SchemeKind::Test, 1)).unwrap();
        c.register_contract(Rc::new(Kv)).unwrap();
        c.produce_block(0).unwrap();
        c
    }

    fn put(c: &mut Chain, nonce: u64, k: &str, v: i64) {
        let t = Transaction::new(Caller::user("u"), "kv", "put", vec![Value::from(k), Value::Int(v)], nonce);
        c.submit_transaction(t).unwrap();
    }

    #[test]
    fn config_validation() {
        let genesis = Chain::create(ChainConfig::generate("a", 4, 1, SchemeKind::Test, 0)).unwrap();
        assert_eq!(genesis.height(), 0);
        assert_eq!(genesis.tip().header.state_root, empty_root());
        assert_eq!(genesis.tip().header.prev_digest, Digest::ZERO);
        assert!(matches!(
            Chain::create(ChainConfig::generate("a", 3, 1, SchemeKind::Test, 0)),
            Err(ChainError::InvalidConfig(_))
        ));
        assert_eq!(Chain::create(ChainConfig::generate("a", 7, 2, SchemeKind::Test, 0)).unwrap().quorum(), 5);
    }

    #[test]
    fn registration_and_nonces() {
        let mut c = chain(4, 1);
        assert_eq!(c.register_contract(Rc::new(Kv)), Err(ChainError::DuplicateContract("kv".into())));
        put(&mut c, 1, "x", 1);
        let dup = Transaction::new(Caller::user("u"), "kv", "put", vec![], 1);
        assert!(matches!(c.submit_transaction(dup), Err(ChainError::DuplicateNonce { .. })));
        let unknown = Transaction::new(Caller::user("u"), "nope", "put", vec![], 2);
        assert_eq!(c.submit_transaction(unknown), Err(ChainError::UnknownContract("nope".into())));
    }

    #[test]
    fn contract_callable_only_after_registration_block() {
        let mut c = Chain::create(ChainConfig::generate("a", 4, 1, SchemeKind::Test, 1)).unwrap();
        c.register_contract(Rc::new(Kv)).unwrap();
        put(&mut c, 1, "x", 1);
        let b = c.produce_block(1).unwrap().unwrap();
        assert!(b.receipts[0].is_ok());
        assert!(!b.receipts[1].is_ok());
    }

    #[test]
    fn blocks_chain_and_certify() {
        let mut c = chain(4, 1);
        for i in 0..3 {
            put(&mut c, i + 1, "x", i as i64);
        }
        let b = c.produce_block(2).unwrap().unwrap().clone();
        assert_eq!(b.header.height, 2);
        assert_eq!(b.cert.signatures.len(), 4);
        assert!(b.cert.verify(c.keyset()));
        assert_eq!(b.header.prev_digest, c.block(1).unwrap().digest());
        assert_eq!(Block::decode(&b.encode()).unwrap(), b);
        assert!(c.produce_block(3).unwrap().is_none());
    }

    #[test]
    fn failed_txn_is_recorded_without_writes() {
        let mut c = chain(4, 1);
        c.submit_transaction(Transaction::new(Caller::user("u"), "kv", "bogus", vec![], 1)).unwrap();
        let b = c.produce_block(2).unwrap().unwrap();
        assert_eq!(b.entries.len(), 1);
        assert!(matches!(&b.receipts[0].status, Status::Failed(r) if r.starts_with("BadArgs")));
        assert!(b.receipts[0].writes.is_empty());
    }

    #[test]
    fn quorum_failure_rolls_back() {
        let mut c = chain(4, 1);
        c.set_behavior(0, Behavior::Silent);
        c.set_behavior(1, Behavior::EquivocateDigest);
        put(&mut c, 1, "x", 5);
        assert_eq!(c.produce_block(2).unwrap_err(), ChainError::QuorumFailure { valid: 2, needed: 3 });
        assert_eq!(c.height(), 1);
        assert_eq!(c.read_state("kv.x", None).unwrap(), Value::Null);
        assert_eq!(c.mempool_len(), 1);
        c.set_behavior(1, Behavior::Honest);
        c.produce_block(3).unwrap().unwrap();
        assert_eq!(c.read_state("kv.x", None).unwrap(), Value::Int(5));
    }

    #[test]
    fn quorum_threshold_over_behavior_assignments() {
        // Oracle: a block certifies iff the count of honest or forging nodes reaches 2f+1.
        let all = [Behavior::Honest, Behavior::Silent, Behavior::EquivocateDigest, Behavior::ForgeEvents];
        for code in 0..256u32 {
            let mut c = chain(4, 1);
            let mut signers = 0;
            for node in 0..4 {
                let b = all[((code >> (2 * node)) & 3) as usize];
                c.set_behavior(node, b);
                signers += matches!(b, Behavior::Honest | Behavior::ForgeEvents) as usize;
            }
            put(&mut c, 1, "x", 1);
            assert_eq!(c.produce_block(2).is_ok(), signers >= 3, "assignment {code:08b}");
        }
    }

    #[test]
    fn reads_history_and_proofs() {
        let mut c = chain(4, 1);
        put(&mut c, 1, "x", 5);
        c.produce_block(2).unwrap();
        c.produce_block(3).unwrap_or(None);
        put(&mut c, 2, "y", 1);
        c.produce_block(3).unwrap();
        put(&mut c, 3, "x", 6);
        c.produce_block(4).unwrap();
        assert_eq!(c.height(), 4);
        assert_eq!(c.read_state("kv.x", Some(3)).unwrap(), Value::Int(5));
        assert_eq!(c.read_state("kv.none", None).unwrap(), Value::Null);
        assert_eq!(c.read_state("kv.x", Some(5)), Err(ChainError::FutureHeight { requested: 5, current: 4 }));
        let hist = c.get_history("kv.x", 1, 4).unwrap();
        assert_eq!(hist.iter().map(|h| h.version.height).collect::<Vec<_>>(), vec![2, 4]);
        assert!(c.get_history("kv.x", 3, 3).unwrap().is_empty());
        assert_eq!(c.get_history("kv.x", 4, 2), Err(ChainError::InvalidRange { from: 4, to: 2 }));

        let p = c.get_proof("kv.x", 3).unwrap();
        assert_eq!(p.kind(), ProofKind::Membership);
        assert!(verify_proof(&c.state_root(3).unwrap(), &p));
        assert!(!verify_proof(&c.state_root(4).unwrap(), &p));
        let a = c.get_proof("kv.zz", 4).unwrap();
        assert_eq!(a.kind(), ProofKind::Absence);
        assert!(verify_proof(&c.state_root(4).unwrap(), &a));
        assert_eq!(c.get_proof("kv.x", 9), Err(ChainError::FutureHeight { requested: 9, current: 4 }));
    }

    #[test]
    fn policy_applies_from_next_block() {
        let mut c = chain(4, 1);
        c.attach_policy("kv", "allow invoke on put; allow write on x;").unwrap();
        put(&mut c, 1, "y", 1);
        let b = c.produce_block(2).unwrap().unwrap();
        assert!(b.receipts.iter().all(Receipt::is_ok));
        put(&mut c, 2, "y", 2);
        put(&mut c, 3, "x", 2);
        let b = c.produce_block(3).unwrap().unwrap();
        assert!(matches!(&b.receipts[0].status, Status::Failed(r) if r.starts_with("PolicyDenied")));
        assert!(b.receipts[1].is_ok());
        assert!(c.attach_policy("kv", "allow write on").is_err());
        assert_eq!(c.mempool_len(), 0);
    }

    #[test]
    fn outbox_nonces_are_sequential() {
        let mut c = chain(4, 1);
        for i in 0..2 {
            c.submit_transaction(Transaction::new(Caller::user("u"), "kv", "emit", vec![], i + 1)).unwrap();
        }
        let b = c.produce_block(2).unwrap().unwrap();
        assert_eq!(b.outbox.iter().map(|e| e.nonce).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(b.outbox[0].source_chain, "a");
    }
}
