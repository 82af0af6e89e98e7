//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use interchain::auction::{AuctionHouse, AuctionSetup, Rate};
use interchain::chain::{Chain, Entry};
use interchain::crypto::NodeId;
use interchain::chain::Behavior;
use interchain::sim::{Mode, World, WorldConfig};
use interchain::xbus::{FaultProfile, MemoryBroker};
use interchain::Value;

pub mod policy;

pub const T: &str = "tickets";
pub const B: &str = "chainB";
pub const C: &str = "chainC";

pub fn rates() -> BTreeMap<String, Rate> {
    [(B.to_string(), Rate::new(1, 2)), (C.to_string(), Rate::new(3, 2))].into()
}

pub fn auction_world(cfg: WorldConfig, brokers: &[FaultProfile], byz: &[(NodeId, Behavior)], mode: Mode) -> (World, AuctionHouse) {
    let mut w = World::new(cfg);
    for (i, p) in brokers.iter().enumerate() {
        w.add_broker(Box::new(MemoryBroker::new(&format!("b{i}"), p.clone())));
    }
    for c in [T, B, C] {
        w.add_chain(c, 4, 1, byz).unwrap();
    }
    let setup = AuctionSetup {
        ticket_chain: T.into(),
        bidder_chains: vec![B.into(), C.into()],
        rates: rates(),
        window: 40,
        mode,
        max_attempts: 8,
    };
    let house = AuctionHouse::install(&mut w, setup).unwrap();
    (w, house)
}

pub fn clean(mode: Mode) -> (World, AuctionHouse) {
    auction_world(WorldConfig::default(), &[FaultProfile::default()], &[], mode)
}

/// A bid as recorded by a successful `submit_bid` entry in a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerBid {
    pub chain: String,
    pub user: String,
    pub amount: i64,
    pub height: u64,
}

/// Every accepted bid for `aid` on `chain`, found by scanning blocks.
pub fn ledger_bids(chain: &Chain, aid: &str) -> Vec<LedgerBid> {
    let mut out = Vec::new();
    for b in chain.blocks() {
        for (e, r) in b.entries.iter().zip(&b.receipts) {
            let Entry::Txn(t) = e else { continue };
            if t.target_contract != "bidder" || t.method != "submit_bid" || !r.is_ok() {
                continue;
            }
            if let [Value::Str(a), Value::Int(amount)] = t.args.as_slice() {
                if a == aid {
                    out.push(LedgerBid { chain: chain.id().to_string(), user: t.caller.id().to_string(), amount: *amount, height: b.header.height });
                }
            }
        }
    }
    out
}

/// `a` strictly precedes `b` in the auction order: larger amount × rate by
/// cross-multiplication, then lower height, then smaller (chain, user).
fn beats(a: &LedgerBid, b: &LedgerBid, rates: &BTreeMap<String, Rate>) -> bool {
    let (ra, rb) = (rates[&a.chain], rates[&b.chain]);
    let lhs = a.amount as i128 * *ra.numer() as i128 * *rb.denom() as i128;
    let rhs = b.amount as i128 * *rb.numer() as i128 * *ra.denom() as i128;
    if lhs != rhs {
        return lhs > rhs;
    }
    if a.height != b.height {
        return a.height < b.height;
    }
    (&a.chain, &a.user) < (&b.chain, &b.user)
}

/// Brute-force winner: the unique bid that precedes every other bid.
pub fn oracle_winner(bids: &[LedgerBid], rates: &BTreeMap<String, Rate>) -> Option<LedgerBid> {
    let winners: Vec<_> = bids
        .iter()
        .enumerate()
        .filter(|(i, a)| bids.iter().enumerate().all(|(j, b)| *i == j || beats(a, b, rates)))
        .map(|(_, a)| a.clone())
        .collect();
    assert!(winners.len() <= 1);
    winners.into_iter().next()
}

/// sum(balance) + sum(escrow) of the Bidder contract on `chain`.
pub fn bidder_total(chain: &Chain) -> i64 {
    chain
        .store()
        .current_at("bidder.", u64::MAX)
        .into_iter()
        .filter(|(k, _)| k.starts_with("bidder.balance.") || k.starts_with("bidder.escrow."))
        .filter_map(|(_, v)| v.as_int())
        .sum()
}

pub fn get(w: &World, chain: &str, key: &str) -> Value {
    w.chain(chain).unwrap().store().get(key)
}
