use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::broker::Broker;
use super::event::{Event, SignedEventBatch};
use crate::chain::Chain;
use crate::codec::DecodeError;
use crate::crypto::KeySet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("undecodable batch: {0}")]
    Malformed(#[from] DecodeError),
    #[error("batch for {found} on topic {topic}")]
    WrongTopic { topic: String, found: String },
    #[error("unknown source chain {0}")]
    UnknownSource(String),
    #[error("{valid} valid signatures, need more than {f}")]
    BelowThreshold { valid: usize, f: usize },
}

/// Decodes and authenticates one broker entry for destination `topic`.
pub fn check_batch(bytes: &[u8], topic: &str, keysets: &BTreeMap<String, KeySet>) -> Result<SignedEventBatch, Rejection> {
    let batch = SignedEventBatch::decode(bytes)?;
    if batch.event.dest_chain != topic {
        return Err(Rejection::WrongTopic { topic: topic.to_string(), found: batch.event.dest_chain.clone() });
    }
    let keys = keysets.get(&batch.event.source_chain).ok_or_else(|| Rejection::UnknownSource(batch.event.source_chain.clone()))?;
    let valid = batch.valid_signers(keys);
    if valid <= keys.f {
        return Err(Rejection::BelowThreshold { valid, f: keys.f });
    }
    Ok(batch)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryStats {
    pub delivered: u64,
    pub rejected_invalid: u64,
    pub rejected_duplicate: u64,
}

/// Pull-side connection state of one chain: a read offset per broker. It
/// carries nothing that correctness depends on and may be reset at any time.
#[derive(Debug, Clone, Default)]
pub struct Consumer {
    cursors: BTreeMap<String, usize>,
}

impl Consumer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.cursors.clear();
    }

    /// Entries appended to `topic` since the last poll, broker by broker.
    pub fn poll(&mut self, topic: &str, brokers: &[Box<dyn Broker>]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for b in brokers {
            let cur = self.cursors.entry(b.id().to_string()).or_insert(0);
            let len = b.len(topic);
            out.extend((*cur..len).filter_map(|i| b.get(topic, i).map(<[u8]>::to_vec)));
            *cur = len;
        }
        out
    }

    pub fn caught_up(&self, topic: &str, brokers: &[Box<dyn Broker>]) -> bool {
        brokers.iter().all(|b| self.cursors.get(b.id()).copied().unwrap_or(0) >= b.len(topic))
    }
}

/// Pulls new batches for `chain`, authenticates them and enqueues each fresh
/// event for the next block. Returns the accepted events.
pub fn deliver(
    chain: &mut Chain,
    consumer: &mut Consumer,
    brokers: &[Box<dyn Broker>],
    keysets: &BTreeMap<String, KeySet>,
    stats: &mut DeliveryStats,
) -> Vec<Event> {
    let topic = chain.id().to_string();
    let mut accepted = Vec::new();
    for bytes in consumer.poll(&topic, brokers) {
        match check_batch(&bytes, &topic, keysets) {
            Err(_) => stats.rejected_invalid += 1,
            Ok(batch) => {
                if chain.enqueue_inbound(batch.event.clone()) {
                    stats.delivered += 1;
                    accepted.push(batch.event);
                } else {
                    stats.rejected_duplicate += 1;
                }
            }
        }
    }
    accepted
}
