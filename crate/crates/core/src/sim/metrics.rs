use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::Decoder;
use crate::xbus::{kind, DeliveryStats, Event, PublishStats};
use crate::xtxn::XTXN;

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusMetrics {
    #[serde(flatten)]
    pub publish: PublishStats,
    #[serde(flatten)]
    pub delivery: DeliveryStats,
    pub republished: u64,
    pub gateway_invalid_signatures: u64,
    pub gateway_expired: u64,
    pub signature_retransmits: u64,
    pub forged_events_signed: u64,
    pub forged_events_delivered: u64,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnMetrics {
    pub kind: String,
    pub outcome: String,
    pub round_trips: u64,
    pub retransmissions: u64,
}

/// Deterministic run summary. Wall-clock time is reported separately so
/// that two runs of one seed serialize identically.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub ticks: u64,
    pub blocks: BTreeMap<String, u64>,
    pub state_roots: BTreeMap<String, String>,
    pub quorum_failures: u64,
    pub bus: BusMetrics,
    pub aborts: BTreeMap<String, u64>,
    pub txns: BTreeMap<String, TxnMetrics>,
    /// Auction id to final outcome, filled in by the scenario runner.
    #[serde(default)]
    pub auctions: BTreeMap<String, String>,
}

/// Counts coordinator/participant exchanges by watching transaction-layer
/// messages on the bus. A round trip is one request phase answered by at
/// least one participant; resending a request in the same phase is a
/// retransmission, not a new round trip.
#[derive(Debug, Default, Clone)]
pub struct RoundTripMeter {
    phases: BTreeMap<String, BTreeSet<String>>,
    requests: BTreeMap<(String, String, String), u64>,
}

fn phase_of(e: &Event) -> Option<(String, String, bool)> {
    if e.source_contract != XTXN {
        return None;
    }
    let mut dec = Decoder::new(&e.payload);
    let txn = dec.string().ok()?;
    let (phase, request) = match e.kind {
        kind::MT_PREPARE | kind::GT_PREPARE => ("prepare".to_string(), true),
        kind::MT_VOTE | kind::GT_VOTE => ("prepare".to_string(), false),
        kind::MT_DECIDE | kind::GT_DECIDE => ("decide".to_string(), true),
        kind::DECIDE_ACK => ("decide".to_string(), false),
        kind::READ_REQ => (format!("read:{}", dec.u32().ok()?), true),
        kind::READ_RESP => (format!("read:{}", dec.u32().ok()?), false),
        _ => return None,
    };
    Some((txn, phase, request))
}

impl RoundTripMeter {
    /// An event left a source chain's outbox.
    pub fn on_emit(&mut self, e: &Event) {
        if let Some((txn, phase, true)) = phase_of(e) {
            *self.requests.entry((txn, phase, e.dest_chain.clone())).or_default() += 1;
        }
    }

    /// An authenticated event was accepted by its destination.
    pub fn on_deliver(&mut self, e: &Event) {
        if let Some((txn, phase, false)) = phase_of(e) {
            self.phases.entry(txn).or_default().insert(phase);
        }
    }

    /// A fast-path read made directly to chain nodes for `txn`.
    pub fn on_direct_read(&mut self, txn: &str) {
        let set = self.phases.entry(txn.to_string()).or_default();
        let n = set.iter().filter(|p| p.starts_with("vread:")).count();
        set.insert(format!("vread:{n}"));
    }

    pub fn round_trips(&self, txn: &str) -> u64 {
        self.phases.get(txn).map_or(0, |s| s.len() as u64)
    }

    pub fn phases(&self, txn: &str) -> Vec<String> {
        self.phases.get(txn).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn retransmissions(&self, txn: &str) -> u64 {
        self.requests.iter().filter(|((t, _, _), _)| t == txn).map(|(_, n)| n - 1).sum()
    }
}
