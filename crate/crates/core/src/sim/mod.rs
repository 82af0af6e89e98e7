//! Single-threaded simulation of several chains joined by the event bus,
//! advanced by a global tick counter.

mod metrics;
mod txn;

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub use metrics::{BusMetrics, RoundTripMeter, RunMetrics, TxnMetrics};
pub use txn::{GeneralTxn, MiniTxn, Mode, TxnError, TxnOutcome, TxnStatus};

use crate::chain::{Behavior, Caller, Chain, ChainConfig, ChainError, ContractRef, Receipt, Transaction};
use crate::crypto::{hash_parts, Digest, KeySet, NodeId, SchemeKind};
use crate::value::Value;
use crate::xbus::{deliver, publish, Broker, Consumer, Event, Gateway, MemoryBroker, FaultProfile};
use crate::xtxn::{verified_read, ReadError, ReadRequest, ReadResponse, RetryPolicy, XtxnContract};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub scheme: SchemeKind,
    /// Ticks a below-threshold gateway entry is kept.
    pub gateway_timeout: u64,
    /// Ticks between a node's retransmissions of an unacknowledged signature.
    pub retransmit_interval: u64,
    pub republish_count: u32,
    pub republish_interval: u64,
    pub retry: RetryPolicy,
    pub lock_timeout: u64,
    pub max_ticks: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scheme: SchemeKind::Test,
            gateway_timeout: 20,
            retransmit_interval: 8,
            republish_count: 4,
            republish_interval: 2,
            retry: RetryPolicy::default(),
            lock_timeout: 50,
            max_ticks: 5_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("unknown chain {0}")]
    UnknownChain(String),
    #[error("max ticks exceeded at tick {0}")]
    MaxTicksExceeded(u64),
    #[error("transaction failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct Outgoing {
    event: Event,
    digest: Digest,
    next_send: u64,
    sends: u32,
}

/// A copy of a real event with altered payload and a nonce outside the range
/// the chain assigns, as colluding nodes would fabricate it.
pub fn forged_variant(e: &Event) -> Event {
    let mut f = e.clone();
    f.nonce = u64::MAX - e.nonce;
    f.payload = [b"forged:".as_slice(), &e.payload].concat();
    f
}

pub struct World {
    pub cfg: WorldConfig,
    tick: u64,
    chains: BTreeMap<String, Chain>,
    gateways: BTreeMap<String, Gateway>,
    consumers: BTreeMap<String, Consumer>,
    brokers: Vec<Box<dyn Broker>>,
    keysets: BTreeMap<String, KeySet>,
    unacked: BTreeMap<String, BTreeMap<u64, Outgoing>>,
    forged: BTreeSet<(String, u64)>,
    rng: ChaCha20Rng,
    nonces: BTreeMap<(String, Caller), u64>,
    read_nonce: u64,
    txn_seq: u64,
    production: Vec<(String, u64)>,
    pub bus: BusMetrics,
    pub meter: RoundTripMeter,
    pub quorum_failures: u64,
    pub txn_log: BTreeMap<String, TxnMetrics>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        Self {
            cfg,
            tick: 0,
            chains: BTreeMap::new(),
            gateways: BTreeMap::new(),
            consumers: BTreeMap::new(),
            brokers: Vec::new(),
            keysets: BTreeMap::new(),
            unacked: BTreeMap::new(),
            forged: BTreeSet::new(),
            rng,
            nonces: BTreeMap::new(),
            read_nonce: 0,
            txn_seq: 0,
            production: Vec::new(),
            bus: BusMetrics::default(),
            meter: RoundTripMeter::default(),
            quorum_failures: 0,
            txn_log: BTreeMap::new(),
        }
    }

    /// World with one fault-free broker.
    pub fn with_default_broker(cfg: WorldConfig) -> Self {
        let mut w = Self::new(cfg);
        w.add_broker(Box::new(MemoryBroker::new("b0", FaultProfile::default())));
        w
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Creates a chain with keys derived from the world seed and installs the
    /// transaction system contract on it.
    pub fn add_chain(&mut self, id: &str, n: usize, f: usize, byzantine: &[(NodeId, Behavior)]) -> Result<(), SimError> {
        if self.chains.contains_key(id) {
            return Err(ChainError::InvalidConfig(format!("duplicate chain id {id}")).into());
        }
        let mut cfg = ChainConfig::generate(id, n, f, self.cfg.scheme, self.cfg.seed);
        for (node, b) in byzantine {
            cfg = cfg.with_behavior(*node, *b);
        }
        let mut chain = Chain::create(cfg)?;
        chain.register_contract(Rc::new(XtxnContract::new(self.cfg.retry)))?;
        self.keysets.insert(id.to_string(), chain.keyset().clone());
        let gw = Gateway::new(chain.keyset().clone(), self.cfg.gateway_timeout)
            .with_republish(self.cfg.republish_count, self.cfg.republish_interval);
        self.gateways.insert(id.to_string(), gw);
        self.consumers.insert(id.to_string(), Consumer::new());
        self.unacked.insert(id.to_string(), BTreeMap::new());
        self.chains.insert(id.to_string(), chain);
        Ok(())
    }

    pub fn add_broker(&mut self, b: Box<dyn Broker>) {
        self.brokers.push(b);
    }

    pub fn brokers(&self) -> &[Box<dyn Broker>] {
        &self.brokers
    }

    pub fn register(&mut self, chain: &str, c: ContractRef) -> Result<(), SimError> {
        self.chain_mut(chain)?.register_contract(c)?;
        Ok(())
    }

    pub fn attach_policy(&mut self, chain: &str, contract: &str, src: &str) -> Result<(), SimError> {
        self.chain_mut(chain)?.attach_policy(contract, src)?;
        Ok(())
    }

    pub fn chain(&self, id: &str) -> Result<&Chain, SimError> {
        self.chains.get(id).ok_or_else(|| SimError::UnknownChain(id.to_string()))
    }

    pub fn chain_mut(&mut self, id: &str) -> Result<&mut Chain, SimError> {
        self.chains.get_mut(id).ok_or_else(|| SimError::UnknownChain(id.to_string()))
    }

    pub fn chains(&self) -> impl Iterator<Item = &Chain> {
        self.chains.values()
    }

    pub fn chain_ids(&self) -> Vec<String> {
        self.chains.keys().cloned().collect()
    }

    pub fn keysets(&self) -> &BTreeMap<String, KeySet> {
        &self.keysets
    }

    pub fn gateway(&self, chain: &str) -> Option<&Gateway> {
        self.gateways.get(chain)
    }

    pub fn set_behavior(&mut self, chain: &str, node: NodeId, b: Behavior) -> Result<(), SimError> {
        self.chain_mut(chain)?.set_behavior(node, b);
        Ok(())
    }

    /// Restarts a chain's gateway with empty state.
    pub fn crash_gateway(&mut self, chain: &str) -> Result<(), SimError> {
        self.gateways.get_mut(chain).ok_or_else(|| SimError::UnknownChain(chain.to_string()))?.crash();
        Ok(())
    }

    /// Forgets every consumer's broker offsets.
    pub fn reset_consumers(&mut self) {
        for c in self.consumers.values_mut() {
            c.reset();
        }
    }

    /// Events fabricated by forging nodes, as (source chain, nonce).
    pub fn forged_events(&self) -> &BTreeSet<(String, u64)> {
        &self.forged
    }

    /// Order in which blocks were certified across chains.
    pub fn production(&self) -> &[(String, u64)] {
        &self.production
    }

    /// Queues a transaction with the caller's next nonce on that chain.
    pub fn submit(
        &mut self,
        chain: &str,
        caller: &Caller,
        contract: &str,
        method: &str,
        args: Vec<Value>,
    ) -> Result<Digest, SimError> {
        let n = self.nonces.entry((chain.to_string(), caller.clone())).or_insert(0);
        *n += 1;
        let txn = Transaction::new(caller.clone(), contract, method, args, *n);
        Ok(self.chain_mut(chain)?.submit_transaction(txn)?)
    }

    /// Submits and runs until the transaction is in a certified block.
    pub fn call(
        &mut self,
        chain: &str,
        caller: &Caller,
        contract: &str,
        method: &str,
        args: Vec<Value>,
    ) -> Result<Receipt, SimError> {
        let from = self.chain(chain)?.height() + 1;
        let id = self.submit(chain, caller, contract, method, args)?;
        let start = self.tick;
        loop {
            self.step()?;
            if let Some(r) = self.find_receipt(chain, id, from)? {
                return Ok(r);
            }
            if self.tick - start > self.cfg.max_ticks {
                return Err(SimError::MaxTicksExceeded(self.tick));
            }
        }
    }

    fn find_receipt(&self, chain: &str, id: Digest, from: u64) -> Result<Option<Receipt>, SimError> {
        let c = self.chain(chain)?;
        for h in from..=c.height() {
            let b = c.block(h).unwrap();
            if let Some(i) = b.entries.iter().position(|e| e.id() == id) {
                return Ok(Some(b.receipts[i].clone()));
            }
        }
        Ok(None)
    }

    pub fn next_read_nonce(&mut self) -> u64 {
        self.read_nonce += 1;
        self.read_nonce
    }

    pub fn verified_read(&mut self, requester: &Caller, req: &ReadRequest) -> Result<ReadResponse, ReadError> {
        let chain = self.chains.get(&req.target_chain).ok_or_else(|| ReadError::Unknown(req.target_chain.clone()))?;
        verified_read(chain, requester, req)
    }

    pub(crate) fn next_txn_id(&mut self, coordinator: &str) -> String {
        self.txn_seq += 1;
        format!("{coordinator}/{}", self.txn_seq)
    }

    /// Advances the simulation by one tick: deliver, produce blocks, sign and
    /// forward new events, then run gateway maintenance.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.tick += 1;
        let t = self.tick;
        for (id, chain) in self.chains.iter_mut() {
            let consumer = self.consumers.get_mut(id).unwrap();
            let before = self.bus.delivery.delivered;
            for e in deliver(chain, consumer, &self.brokers, &self.keysets, &mut self.bus.delivery) {
                self.meter.on_deliver(&e);
                if self.forged.contains(&(e.source_chain.clone(), e.nonce)) {
                    self.bus.forged_events_delivered += 1;
                }
            }
            debug_assert!(self.bus.delivery.delivered >= before);
        }
        for (id, chain) in self.chains.iter_mut() {
            match chain.produce_block(t) {
                Ok(Some(b)) => {
                    let h = b.header.height;
                    let out = self.unacked.get_mut(id).unwrap();
                    for e in &b.outbox {
                        self.meter.on_emit(e);
                        out.insert(e.nonce, Outgoing { event: e.clone(), digest: e.digest(), next_send: t, sends: 0 });
                    }
                    self.production.push((id.clone(), h));
                }
                Ok(None) => {}
                Err(ChainError::QuorumFailure { .. }) => self.quorum_failures += 1,
                Err(e) => return Err(e.into()),
            }
        }
        self.forward_signatures(t)?;
        for gw in self.gateways.values_mut() {
            for batch in gw.republish_due(t) {
                self.bus.republished += 1;
                publish(&mut self.brokers, &batch, &mut self.rng, &mut self.bus.publish)?;
            }
            gw.expire(t);
        }
        for (id, out) in self.unacked.iter_mut() {
            let gw = &self.gateways[id];
            out.retain(|_, o| !gw.acknowledged(&o.digest));
        }
        self.bus.gateway_invalid_signatures = self.gateways.values().map(|g| g.invalid_signatures).sum();
        self.bus.gateway_expired = self.gateways.values().map(|g| g.expired).sum();
        Ok(())
    }

    fn forward_signatures(&mut self, t: u64) -> Result<(), SimError> {
        for (id, out) in self.unacked.iter_mut() {
            let chain = &self.chains[id];
            let gw = self.gateways.get_mut(id).unwrap();
            for o in out.values_mut().filter(|o| o.next_send <= t) {
                if o.sends > 0 {
                    self.bus.signature_retransmits += 1;
                }
                let forged = forged_variant(&o.event);
                for node in 0..chain.n() as NodeId {
                    let key = chain.node_key(node);
                    let behavior = chain.behavior(node);
                    let sig = match behavior {
                        Behavior::Silent => continue,
                        Behavior::EquivocateDigest => key.sign(hash_parts(&[b"equivocate", o.digest.as_bytes()]).as_bytes()),
                        Behavior::Honest | Behavior::ForgeEvents => key.sign(o.digest.as_bytes()),
                    };
                    // Rejections are counted inside the gateway.
                    if let Ok(Some(batch)) = gw.collect(node, &o.event, sig, t) {
                        publish(&mut self.brokers, &batch, &mut self.rng, &mut self.bus.publish)?;
                    }
                    if behavior == Behavior::ForgeEvents && o.sends == 0 {
                        self.bus.forged_events_signed += 1;
                        self.forged.insert((forged.source_chain.clone(), forged.nonce));
                        let fsig = key.sign(forged.digest().as_bytes());
                        if let Ok(Some(batch)) = gw.collect(node, &forged, fsig, t) {
                            publish(&mut self.brokers, &batch, &mut self.rng, &mut self.bus.publish)?;
                        }
                    }
                }
                o.sends += 1;
                o.next_send = t + self.cfg.retransmit_interval;
            }
        }
        Ok(())
    }

    /// Nothing queued, in flight or scheduled anywhere.
    pub fn is_idle(&self) -> bool {
        self.chains.values().all(|c| c.mempool_len() == 0 && !c.has_pending_timers())
            && self.unacked.values().all(|o| o.is_empty())
            && self.gateways.values().all(Gateway::is_idle)
            && self.consumers.iter().all(|(id, c)| c.caught_up(id, &self.brokers))
    }

    /// Steps until idle. Fails if `max_ticks` pass first.
    pub fn run_until_idle(&mut self) -> Result<u64, SimError> {
        let start = self.tick;
        while !self.is_idle() {
            if self.tick - start >= self.cfg.max_ticks {
                return Err(SimError::MaxTicksExceeded(self.tick));
            }
            self.step()?;
        }
        Ok(self.tick - start)
    }

    pub fn run_ticks(&mut self, n: u64) -> Result<(), SimError> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until `pred` holds or `limit` ticks pass; returns whether it held.
    pub fn run_until(&mut self, limit: u64, mut pred: impl FnMut(&World) -> bool) -> Result<bool, SimError> {
        for _ in 0..limit {
            if pred(self) {
                return Ok(true);
            }
            self.step()?;
        }
        Ok(pred(self))
    }

    /// Produces blocks on `chain` until its height reaches `height`.
    pub fn advance_height(&mut self, chain: &str, height: u64) -> Result<(), SimError> {
        let start = self.tick;
        while self.chain(chain)?.height() < height {
            if self.chain(chain)?.mempool_len() == 0 {
                self.chain_mut(chain)?.heartbeat();
            }
            self.step()?;
            if self.tick - start > self.cfg.max_ticks {
                return Err(SimError::MaxTicksExceeded(self.tick));
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> RunMetrics {
        let mut aborts = BTreeMap::new();
        for t in self.txn_log.values() {
            if let Some(r) = t.outcome.strip_prefix("aborted:") {
                *aborts.entry(r.split(['(', '|']).next().unwrap_or(r).to_string()).or_default() += 1;
            }
        }
        RunMetrics {
            seed: self.cfg.seed,
            ticks: self.tick,
            blocks: self.chains.iter().map(|(id, c)| (id.clone(), c.height())).collect(),
            state_roots: self.chains.iter().map(|(id, c)| (id.clone(), c.tip().header.state_root.to_hex())).collect(),
            quorum_failures: self.quorum_failures,
            bus: self.bus.clone(),
            aborts,
            txns: self.txn_log.clone(),
            auctions: BTreeMap::new(),
        }
    }
}
