//! Property tests for ledger, policy, transaction, bus and auction invariants.
//! Seeds are fixed so failures reproduce.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use common::*;
use interchain::auction::AuctionOutcome;
use interchain::chain::{Behavior, Caller, Entry, KvContract, NamespaceView};
use interchain::policy::{evaluate, parse_policy, AccessRequest, Action};
use interchain::sim::{Mode, TxnError, World, WorldConfig};
use interchain::xbus::{FaultProfile, MemoryBroker};
use interchain::Value;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, rng_seed: RngSeed::Fixed(0x1c3), failure_persistence: None, ..ProptestConfig::default() }
}

#[derive(Debug, Clone)]
enum KvOp {
    Set(u8, i64),
    Add(u8, i64),
    Del(u8),
    Flush,
}

fn kv_op() -> impl Strategy<Value = KvOp> {
    prop_oneof![
        (0..5u8, -50..50i64).prop_map(|(k, v)| KvOp::Set(k, v)),
        (0..5u8, -5..5i64).prop_map(|(k, d)| KvOp::Add(k, d)),
        (0..5u8).prop_map(KvOp::Del),
        Just(KvOp::Flush),
    ]
}

fn behavior() -> impl Strategy<Value = Behavior> {
    prop_oneof![Just(Behavior::Honest), Just(Behavior::Silent), Just(Behavior::EquivocateDigest), Just(Behavior::ForgeEvents)]
}

/// One chain with n = 3f+1 nodes, at most f of them Byzantine, after `ops`.
fn kv_chain(f: usize, byz: &[(u32, Behavior)], ops: &[KvOp]) -> World {
    let mut w = World::with_default_broker(WorldConfig::default());
    w.add_chain("c", 3 * f + 1, f, byz).unwrap();
    w.register("c", Rc::new(KvContract::new("kv"))).unwrap();
    w.run_until_idle().unwrap();
    let u = Caller::user("u");
    for op in ops {
        let (method, args) = match op {
            KvOp::Set(k, v) => ("set", vec![Value::from(format!("k{k}")), Value::Int(*v)]),
            KvOp::Add(k, d) => ("add", vec![Value::from(format!("k{k}")), Value::Int(*d)]),
            KvOp::Del(k) => ("del", vec![Value::from(format!("k{k}"))]),
            KvOp::Flush => {
                w.step().unwrap();
                continue;
            }
        };
        w.submit("c", &u, "kv", method, args).unwrap();
    }
    w.run_until_idle().unwrap();
    w
}

fn byzantine(f: usize) -> impl Strategy<Value = Vec<(u32, Behavior)>> {
    proptest::collection::vec((0..(3 * f + 1) as u32, behavior()), 0..=f).prop_map(|v| {
        let mut seen = BTreeSet::new();
        v.into_iter().filter(|(n, _)| seen.insert(*n)).collect()
    })
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn ledger_is_deterministic_linked_and_certified(
        (f, byz) in (1..=2usize).prop_flat_map(|f| (Just(f), byzantine(f))),
        ops in proptest::collection::vec(kv_op(), 0..40),
    ) {
        let a = kv_chain(f, &byz, &ops);
        let b = kv_chain(f, &byz, &ops);
        let (ca, cb) = (a.chain("c").unwrap(), b.chain("c").unwrap());
        let digests = |c: &interchain::chain::Chain| c.blocks().iter().map(|b| (b.digest(), b.header.state_root)).collect::<Vec<_>>();
        prop_assert_eq!(digests(ca), digests(cb));

        let keys = ca.keyset();
        for (i, blk) in ca.blocks().iter().enumerate() {
            prop_assert_eq!(blk.header.height, i as u64);
            if i > 0 {
                prop_assert_eq!(blk.header.prev_digest, ca.blocks()[i - 1].digest());
                prop_assert_eq!(blk.cert.header_digest, blk.digest());
                prop_assert!(blk.cert.verify(keys));
                let valid = keys.count_valid(blk.digest().as_bytes(), blk.cert.signatures.iter());
                prop_assert!(valid > 2 * f);
                prop_assert!(blk.cert.signatures.keys().all(|n| (*n as usize) < 3 * f + 1));
            }
        }
    }

    #[test]
    fn history_ranges_concatenate(ops in proptest::collection::vec(kv_op(), 1..40), split in 0..1000u64) {
        let w = kv_chain(1, &[], &ops);
        let c = w.chain("c").unwrap();
        let top = c.height();
        let m = split % (top + 1);
        for k in 0..5 {
            let key = format!("kv.k{k}");
            let whole = c.get_history(&key, 0, top).unwrap();
            let mut parts = c.get_history(&key, 0, m).unwrap();
            if m < top {
                parts.extend(c.get_history(&key, m + 1, top).unwrap());
            }
            prop_assert_eq!(&parts, &whole);
            // Oracle: every receipt write to the key, in block order.
            let scanned: Vec<(u64, Value)> = c
                .blocks()
                .iter()
                .flat_map(|b| b.receipts.iter().flat_map(move |r| r.writes.iter().map(move |(wk, v)| (b.header.height, wk, v))))
                .filter(|(_, wk, _)| **wk == key)
                .map(|(h, _, v)| (h, v.clone()))
                .collect();
            let got: Vec<(u64, Value)> = whole.iter().map(|h| (h.version.height, h.value.clone())).collect();
            prop_assert_eq!(got, scanned);
        }
    }

    #[test]
    fn count_matches_history_and_evaluation_is_read_only(
        ops in proptest::collection::vec(kv_op(), 1..40),
        a in 0..30u64,
        len in 0..30u64,
    ) {
        let w = kv_chain(1, &[], &ops);
        let c = w.chain("c").unwrap();
        let top = c.height();
        let (from, to) = (a.min(top), (a + len).min(top));
        let expected = c.get_history("kv.k", from, to).unwrap().len();
        let view = NamespaceView { store: c.store(), namespace: "kv", height: top };
        let req = AccessRequest {
            caller_id: "u".into(),
            caller_chain: "c".into(),
            action: Action::Read,
            resource: "k0".into(),
            height: top,
            args: vec![],
        };
        let root_before = c.state_root(top);
        for (n, want) in [(expected, true), (expected + 1, false)] {
            let ast = parse_policy(&format!("allow read on * when count(\"k\", {from}, {to}) == {n};")).unwrap();
            prop_assert_eq!(evaluate(&ast, &req, &view).is_allow(), want);
        }
        prop_assert_eq!(c.state_root(top), root_before);
        prop_assert_eq!(c.store().current_at("kv.", top), w.chain("c").unwrap().store().current_at("kv.", top));
    }
}

#[derive(Debug, Clone)]
enum TxnStep {
    Read(usize, u8),
    Write(usize, u8, i64),
    Commit,
    Abort,
    Idle(u8),
}

fn txn_step() -> impl Strategy<Value = TxnStep> {
    prop_oneof![
        (0..3usize, 0..3u8).prop_map(|(c, k)| TxnStep::Read(c, k)),
        (0..3usize, 0..3u8, 0..100i64).prop_map(|(c, k, v)| TxnStep::Write(c, k, v)),
        Just(TxnStep::Commit),
        Just(TxnStep::Abort),
        (1..30u8).prop_map(TxnStep::Idle),
    ]
}

const CHAINS: [&str; 3] = ["x", "y", "z"];

proptest! {
    #![proptest_config(config(32))]

    /// Interleaved general transactions that commit, abort, stall or time out
    /// leave no lock behind.
    #[test]
    fn lock_table_drains(
        locks in any::<bool>(),
        drop in 0..3u8,
        script in proptest::collection::vec((0..3usize, txn_step()), 1..30),
    ) {
        let cfg = WorldConfig { lock_timeout: 15, ..WorldConfig::default() };
        let profile = FaultProfile { drop_rate: drop as f64 * 0.1, duplicate_rate: 0.1, replay_rate: 0.1, forge: false };
        let mut w = World::new(cfg);
        w.add_broker(Box::new(MemoryBroker::new("b", profile)));
        for c in CHAINS {
            w.add_chain(c, 4, 1, &[]).unwrap();
            w.register(c, Rc::new(KvContract::new("kv"))).unwrap();
        }
        w.run_until_idle().unwrap();
        let mode = if locks { Mode::Locks } else { Mode::Occ };
        let u = Caller::user("u");
        let mut txns: Vec<_> = (0..3).map(|i| Some(w.begin_general(CHAINS[i], mode, &u))).collect();
        for (i, step) in script {
            let Some(t) = txns[i].as_mut() else { continue };
            let r: Result<bool, TxnError> = match step {
                TxnStep::Read(c, k) => w.txn_read(t, CHAINS[c], &format!("kv.k{k}")).map(|_| false),
                TxnStep::Write(c, k, v) => w.txn_write(t, CHAINS[c], &format!("kv.k{k}"), Value::Int(v)).map(|_| false),
                TxnStep::Commit => w.txn_commit(t).map(|_| true),
                TxnStep::Abort => w.txn_abort(t, "script").map(|_| true),
                TxnStep::Idle(n) => w.run_ticks(n as u64).map(|_| false).map_err(TxnError::Sim),
            };
            match r {
                Ok(false) => {}
                Ok(true) | Err(TxnError::Aborted(_) | TxnError::LockTimeout { .. } | TxnError::InvalidState(_)) => txns[i] = None,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
        // Transactions the script never finished are abandoned by the client.
        for t in txns.iter_mut().flatten() {
            let _ = w.txn_abort(t, "end of script");
        }
        w.run_ticks(3 * 15).unwrap();
        w.run_until_idle().unwrap();
        for c in CHAINS {
            let held = w.chain(c).unwrap().store().current_at("xtxn.lock.", u64::MAX);
            prop_assert!(held.is_empty(), "{}: {:?}", c, held);
        }
    }

    /// Forgetting broker offsets between ticks changes nothing a chain accepts,
    /// and with a working broker every sent event arrives.
    #[test]
    fn consumers_are_stateless_and_delivery_completes(
        seed in any::<u64>(),
        drop in 0..5u8,
        sends in proptest::collection::vec((0..2usize, 0..4u8, 0..100i64), 1..12),
    ) {
        let run = |reset: bool| {
            // One lossy broker and one that tampers with everything it carries.
            let profile = FaultProfile { drop_rate: drop as f64 * 0.1, duplicate_rate: 0.2, replay_rate: 0.2, forge: false };
            let mut w = World::new(WorldConfig { seed, ..WorldConfig::default() });
            w.add_broker(Box::new(MemoryBroker::new("b0", profile.clone())));
            w.add_broker(Box::new(MemoryBroker::new("b1", FaultProfile { forge: true, ..profile })));
            for c in ["p", "q"] {
                w.add_chain(c, 4, 1, &[]).unwrap();
                w.register(c, Rc::new(KvContract::new("kv"))).unwrap();
            }
            w.run_until_idle().unwrap();
            let names = ["p", "q"];
            for (src, k, v) in &sends {
                let args = vec![Value::from(names[1 - src]), Value::from("kv"), Value::from(format!("k{k}")), Value::Int(*v)];
                w.submit(names[*src], &Caller::user("u"), "kv", "send", args).unwrap();
            }
            let start = w.tick();
            while !w.is_idle() {
                if reset {
                    w.reset_consumers();
                }
                w.step().unwrap();
            }
            let accepted: BTreeMap<&str, Vec<_>> = names
                .iter()
                .map(|c| {
                    let chain = w.chain(c).unwrap();
                    let ids = chain
                        .blocks()
                        .iter()
                        .flat_map(|b| &b.entries)
                        .filter_map(|e| match e { Entry::Inbound(ev) => Some((ev.source_chain.clone(), ev.nonce)), _ => None })
                        .collect::<BTreeSet<_>>();
                    (*c, ids.into_iter().collect())
                })
                .collect();
            (accepted, w.tick() - start, w.bus.forged_events_delivered)
        };
        let (kept, ticks, forged) = run(false);
        let (reset, _, _) = run(true);
        prop_assert_eq!(&kept, &reset);
        let arrived: usize = kept.values().map(|v| v.len()).sum();
        prop_assert_eq!(arrived, sends.len());
        prop_assert_eq!(forged, 0);
        let cfg = WorldConfig::default();
        prop_assert!(ticks <= 2 + cfg.republish_count as u64 * cfg.republish_interval + cfg.gateway_timeout + 2 * cfg.retransmit_interval, "{} ticks", ticks);
    }
}

proptest! {
    #![proptest_config(config(16))]

    /// Exactly one owner after conclusion; the winner pays exactly the winning
    /// amount and every loser ends where they started.
    #[test]
    fn settlement_pays_winner_and_refunds_losers(
        locks in any::<bool>(),
        bids in proptest::collection::vec(proptest::option::of(1..300i64), 4),
    ) {
        let mode = if locks { Mode::Locks } else { Mode::Occ };
        let (mut w, house) = clean(mode);
        house.create_ticket(&mut w, "sam", "t1").unwrap();
        let users = [(B, "ann"), (B, "bob"), (C, "cat"), (C, "dan")];
        for (c, u) in users {
            house.fund(&mut w, c, u, 500).unwrap();
        }
        let aid = house.start_auction(&mut w, "sam", "t1").unwrap();
        house.await_started(&mut w, &aid, 200).unwrap();
        for ((c, u), amount) in users.iter().zip(&bids) {
            if let Some(a) = amount {
                house.submit_bid(&mut w, c, u, &aid, *a).unwrap();
            }
        }
        let done = house.conclude(&mut w, "sam", &aid).unwrap();
        w.run_until_idle().unwrap();
        let holdings = |w: &World, c: &str, u: &str| {
            [format!("bidder.balance.{u}"), format!("bidder.escrow.{u}")].iter().filter_map(|k| get(w, c, k).as_int()).sum::<i64>()
        };
        let owners = w.chain(T).unwrap().store().current_at("auctioneer.ticket.t1.owner", u64::MAX);
        prop_assert_eq!(owners.len(), 1);
        match &done.outcome {
            AuctionOutcome::Concluded(win) => {
                prop_assert_eq!(house.owner(&w, "t1").unwrap(), Value::from(win.user.as_str()));
                for (c, u) in users {
                    let expected = if (c, u) == (win.chain.as_str(), win.user.as_str()) { 500 - win.amount } else { 500 };
                    prop_assert_eq!(holdings(&w, c, u), expected, "{}/{}", c, u);
                }
            }
            AuctionOutcome::Cancelled => {
                prop_assert!(bids.iter().all(Option::is_none));
                prop_assert_eq!(house.owner(&w, "t1").unwrap(), Value::from("sam"));
                for (c, u) in users {
                    prop_assert_eq!(holdings(&w, c, u), 500);
                }
            }
        }
    }
}
