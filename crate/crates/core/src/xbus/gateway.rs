use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::event::{Event, SignedEventBatch};
use crate::crypto::{Digest, KeySet, NodeId, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid signature from node {node} over {digest}")]
    InvalidSignature { node: NodeId, digest: String },
}

#[derive(Debug, Clone)]
struct PendingEntry {
    event: Event,
    signatures: BTreeMap<NodeId, Signature>,
    first_seen: u64,
}

#[derive(Debug, Clone)]
struct Emitted {
    batch: SignedEventBatch,
    next_publish: u64,
    publishes_left: u32,
}

/// Per-chain relay that waits for f+1 node signatures over an event before
/// publishing it. Holds no keys, so it can delay or drop but never forge.
#[derive(Debug, Clone)]
pub struct Gateway {
    keys: KeySet,
    timeout: u64,
    republish_count: u32,
    republish_interval: u64,
    pending: BTreeMap<Digest, PendingEntry>,
    emitted: BTreeMap<Digest, Emitted>,
    done: BTreeSet<Digest>,
    pub invalid_signatures: u64,
    pub expired: u64,
}

impl Gateway {
    pub fn new(keys: KeySet, timeout: u64) -> Self {
        Self {
            keys,
            timeout,
            republish_count: 0,
            republish_interval: 1,
            pending: BTreeMap::new(),
            emitted: BTreeMap::new(),
            done: BTreeSet::new(),
            invalid_signatures: 0,
            expired: 0,
        }
    }

    /// Re-publishes each emitted batch `count` more times, every `interval` ticks.
    pub fn with_republish(mut self, count: u32, interval: u64) -> Self {
        self.republish_count = count;
        self.republish_interval = interval.max(1);
        self
    }

    pub fn chain_id(&self) -> &str {
        &self.keys.chain_id
    }

    /// Records a node's signature. Returns the batch the first time f+1 valid
    /// signatures over the same digest are present.
    pub fn collect(
        &mut self,
        node: NodeId,
        event: &Event,
        sig: Signature,
        tick: u64,
    ) -> Result<Option<SignedEventBatch>, GatewayError> {
        let digest = event.digest();
        let valid = self.keys.get(node).is_some_and(|pk| pk.verify(digest.as_bytes(), &sig));
        if !valid {
            self.invalid_signatures += 1;
            return Err(GatewayError::InvalidSignature { node, digest: digest.short() });
        }
        if self.emitted.contains_key(&digest) || self.done.contains(&digest) {
            return Ok(None);
        }
        let entry = self.pending.entry(digest).or_insert_with(|| PendingEntry {
            event: event.clone(),
            signatures: BTreeMap::new(),
            first_seen: tick,
        });
        entry.signatures.insert(node, sig);
        if entry.signatures.len() <= self.keys.f {
            return Ok(None);
        }
        let entry = self.pending.remove(&digest).unwrap();
        let batch = SignedEventBatch { event: entry.event, signatures: entry.signatures };
        self.emitted.insert(
            digest,
            Emitted {
                batch: batch.clone(),
                next_publish: tick + self.republish_interval,
                publishes_left: self.republish_count,
            },
        );
        if self.republish_count == 0 {
            self.finish(digest);
        }
        Ok(Some(batch))
    }

    fn finish(&mut self, digest: Digest) {
        self.emitted.remove(&digest);
        self.done.insert(digest);
    }

    /// Batches due for re-publication at `tick`.
    pub fn republish_due(&mut self, tick: u64) -> Vec<SignedEventBatch> {
        let mut out = Vec::new();
        let mut finished = Vec::new();
        for (d, e) in self.emitted.iter_mut() {
            if e.next_publish <= tick {
                out.push(e.batch.clone());
                e.publishes_left -= 1;
                e.next_publish = tick + self.republish_interval;
                if e.publishes_left == 0 {
                    finished.push(*d);
                }
            }
        }
        for d in finished {
            self.finish(d);
        }
        out
    }

    /// Drops pending entries that stayed below threshold for longer than the timeout.
    pub fn expire(&mut self, tick: u64) -> usize {
        let timeout = self.timeout;
        let before = self.pending.len();
        self.pending.retain(|_, p| tick.saturating_sub(p.first_seen) < timeout);
        let n = before - self.pending.len();
        self.expired += n as u64;
        n
    }

    /// True once the batch for `digest` has been emitted and fully re-published.
    /// Nodes stop retransmitting their signature at that point.
    pub fn acknowledged(&self, digest: &Digest) -> bool {
        self.done.contains(digest)
    }

    pub fn was_emitted(&self, digest: &Digest) -> bool {
        self.done.contains(digest) || self.emitted.contains_key(digest)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_idle(&self) -> bool {
        self.emitted.is_empty()
    }

    /// Loses all volatile state, as after a process crash and restart.
    pub fn crash(&mut self) {
        self.pending.clear();
        self.emitted.clear();
        self.done.clear();
    }
}
