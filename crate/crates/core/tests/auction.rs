mod common;

use common::*;
use interchain::auction::{AuctionError, AuctionOutcome, StartState};
use interchain::sim::Mode;
use interchain::Value;

fn opened(mode: Mode) -> (interchain::sim::World, interchain::auction::AuctionHouse, String) {
    let (mut w, house) = clean(mode);
    house.create_ticket(&mut w, "sam", "t1").unwrap();
    for (c, u) in [(B, "ann"), (B, "bob"), (C, "cat"), (C, "dan")] {
        house.fund(&mut w, c, u, 500).unwrap();
    }
    let aid = house.start_auction(&mut w, "sam", "t1").unwrap();
    let started = house.await_started(&mut w, &aid, 200).unwrap();
    assert!(started.values().all(|s| *s == StartState::Open), "{started:?}");
    (w, house, aid)
}

#[test]
fn start_opens_auction_on_every_chain() {
    let (w, _, aid) = opened(Mode::Occ);
    assert_eq!(get(&w, T, "auctioneer.ticket.t1.escrowed"), Value::Bool(true));
    for c in [B, C] {
        assert_eq!(get(&w, c, "bidder.auction.id"), Value::from(aid.as_str()));
        assert_eq!(get(&w, c, "bidder.auction.status"), Value::from("open"));
    }
}

#[test]
fn start_requires_owner_and_unescrowed_ticket() {
    let (mut w, house) = clean(Mode::Occ);
    house.create_ticket(&mut w, "sam", "t1").unwrap();
    let blocks_before: Vec<u64> = [B, C].iter().map(|c| w.chain(c).unwrap().height()).collect();
    assert!(matches!(house.start_auction(&mut w, "eve", "t1"), Err(AuctionError::NotOwner(_))));
    w.run_until_idle().unwrap();
    let outbox: usize = w.chain(T).unwrap().blocks().iter().map(|b| b.outbox.len()).sum();
    assert_eq!(outbox, 0);
    let blocks_after: Vec<u64> = [B, C].iter().map(|c| w.chain(c).unwrap().height()).collect();
    assert_eq!(blocks_before, blocks_after);

    house.start_auction(&mut w, "sam", "t1").unwrap();
    assert!(matches!(house.start_auction(&mut w, "sam", "t1"), Err(AuctionError::AlreadyEscrowed(_))));
    assert!(matches!(house.transfer(&mut w, "sam", "t1", "eve"), Err(AuctionError::AlreadyEscrowed(_))));
}

#[test]
fn bids_are_escrowed_once_and_only_while_open() {
    let (mut w, house, aid) = opened(Mode::Occ);
    house.submit_bid(&mut w, B, "ann", &aid, 100).unwrap();
    assert_eq!(get(&w, B, "bidder.escrow.ann"), Value::Int(100));
    assert_eq!(get(&w, B, "bidder.balance.ann"), Value::Int(400));
    assert!(matches!(house.submit_bid(&mut w, B, "ann", &aid, 50), Err(AuctionError::PolicyDenied(_))));
    assert!(matches!(house.submit_bid(&mut w, B, "bob", &aid, 501), Err(AuctionError::InsufficientFunds(_))));
    let close = get(&w, C, "bidder.auction.close_height").as_int().unwrap() as u64;
    w.advance_height(C, close + 1).unwrap();
    assert!(matches!(house.submit_bid(&mut w, C, "cat", &aid, 10), Err(AuctionError::PolicyDenied(_))));
}

#[test]
fn highest_normalized_bid_wins_and_losers_are_refunded() {
    for mode in [Mode::Occ, Mode::Locks] {
        let (mut w, house, aid) = opened(mode);
        let totals: Vec<i64> = [B, C].iter().map(|c| bidder_total(w.chain(c).unwrap())).collect();
        house.submit_bid(&mut w, B, "ann", &aid, 100).unwrap();
        house.submit_bid(&mut w, C, "cat", &aid, 40).unwrap();
        let done = house.conclude(&mut w, "sam", &aid).unwrap();
        w.run_until_idle().unwrap();
        let AuctionOutcome::Concluded(win) = &done.outcome else { panic!("{done:?}") };
        assert_eq!((win.chain.as_str(), win.user.as_str(), win.amount), (C, "cat", 40));
        assert_eq!(house.owner(&w, "t1").unwrap(), Value::from("cat"));
        assert_eq!(get(&w, T, "auctioneer.ticket.t1.escrowed"), Value::Bool(false));
        assert_eq!(get(&w, B, "bidder.balance.ann"), Value::Int(500));
        assert_eq!(get(&w, C, "bidder.balance.cat"), Value::Int(460));
        assert_eq!(get(&w, C, "bidder.balance.sam"), Value::Int(40));
        assert_eq!(get(&w, C, "bidder.escrow.cat"), Value::Null);
        let after: Vec<i64> = [B, C].iter().map(|c| bidder_total(w.chain(c).unwrap())).collect();
        assert_eq!(totals, after);

        let bids: Vec<_> = [B, C].iter().flat_map(|c| ledger_bids(w.chain(c).unwrap(), &aid)).collect();
        let oracle = oracle_winner(&bids, &rates()).unwrap();
        assert_eq!((oracle.chain.as_str(), oracle.user.as_str()), (win.chain.as_str(), win.user.as_str()));

        let last = done.attempts.last().unwrap();
        assert_eq!(last.read_trips, if mode == Mode::Occ { 5 } else { 6 });
        assert_eq!(w.meter.round_trips(&last.txn_id), last.read_trips + 2, "{mode:?} {:?}", w.meter.phases(&last.txn_id));
        let locks = w.chains().flat_map(|c| c.store().current_at("xtxn.lock.", u64::MAX)).filter(|(_, v)| !v.is_null()).count();
        assert_eq!(locks, 0);
    }
}

#[test]
fn equal_normalized_bids_go_to_the_earlier_height() {
    let (mut w, house, aid) = opened(Mode::Occ);
    house.submit_bid(&mut w, C, "cat", &aid, 20).unwrap();
    house.submit_bid(&mut w, B, "ann", &aid, 60).unwrap();
    let done = house.conclude(&mut w, "sam", &aid).unwrap();
    let AuctionOutcome::Concluded(win) = done.outcome else { panic!() };
    let bids: Vec<_> = [B, C].iter().flat_map(|c| ledger_bids(w.chain(c).unwrap(), &aid)).collect();
    let oracle = oracle_winner(&bids, &rates()).unwrap();
    assert_eq!((win.user.as_str(), win.bid_height), (oracle.user.as_str(), oracle.height));
}

#[test]
fn no_bids_cancels_and_releases_ticket() {
    let (mut w, house, aid) = opened(Mode::Locks);
    let done = house.conclude(&mut w, "sam", &aid).unwrap();
    assert_eq!(done.outcome, AuctionOutcome::Cancelled);
    w.run_until_idle().unwrap();
    assert_eq!(house.owner(&w, "t1").unwrap(), Value::from("sam"));
    assert_eq!(get(&w, T, "auctioneer.ticket.t1.escrowed"), Value::Bool(false));
    assert_eq!(get(&w, T, "auctioneer.auction.a1.status"), Value::from("cancelled"));
    assert_eq!(get(&w, B, "bidder.balance.ann"), Value::Int(500));
    assert!(matches!(house.conclude(&mut w, "sam", &aid), Err(AuctionError::NotOpen(_))));
    assert!(matches!(house.submit_bid(&mut w, B, "ann", &aid, 1), Err(AuctionError::PolicyDenied(_))));
}

#[test]
fn only_the_seller_concludes() {
    let (mut w, house, aid) = opened(Mode::Occ);
    assert!(matches!(house.conclude(&mut w, "eve", &aid), Err(AuctionError::NotOwner(_))));
}

#[test]
fn rate_limit_refuses_the_fifth_recent_start() {
    let (mut w, house) = clean(Mode::Occ);
    house.create_ticket(&mut w, "sam", "t1").unwrap();
    let mut states = Vec::new();
    for _ in 0..5 {
        let aid = house.start_auction(&mut w, "sam", "t1").unwrap();
        let s = house.await_started(&mut w, &aid, 200).unwrap();
        states.push(s[B].clone());
        if s.values().any(|s| *s == StartState::Open) {
            house.conclude(&mut w, "sam", &aid).unwrap();
        }
    }
    assert!(states[..4].iter().all(|s| *s == StartState::Open), "{states:?}");
    assert!(matches!(&states[4], StartState::Refused(m) if m.starts_with("PolicyDenied")), "{states:?}");
}

#[test]
fn random_auctions_match_the_ledger_oracle() {
    use rand::{Rng, SeedableRng};
    for seed in 0..12u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mode = if seed % 2 == 0 { Mode::Occ } else { Mode::Locks };
        let (mut w, house, aid) = opened(mode);
        for (c, u) in [(B, "ann"), (B, "bob"), (C, "cat"), (C, "dan")] {
            if rng.gen_bool(0.7) {
                let _ = house.submit_bid(&mut w, c, u, &aid, rng.gen_range(0..=12) * 10);
            }
        }
        let done = house.conclude(&mut w, "sam", &aid).unwrap();
        let bids: Vec<_> = [B, C].iter().flat_map(|c| ledger_bids(w.chain(c).unwrap(), &aid)).collect();
        match (done.outcome, oracle_winner(&bids, &rates())) {
            (AuctionOutcome::Concluded(win), Some(o)) => assert_eq!((win.chain, win.user), (o.chain, o.user), "seed {seed}"),
            (AuctionOutcome::Cancelled, None) => {}
            (got, want) => panic!("seed {seed}: {got:?} vs {want:?}"),
        }
    }
}

#[test]
fn late_bid_between_read_and_prepare() {
    use interchain::auction::Stage;
    use interchain::xtxn::AbortReason;
    for mode in [Mode::Occ, Mode::Locks] {
        let (mut w, house, aid) = opened(mode);
        house.submit_bid(&mut w, B, "ann", &aid, 100).unwrap();
        let mut late: Option<bool> = None;
        let done = house
            .conclude_with(&mut w, "sam", &aid, |w, stage| {
                if late.is_none() && *stage == Stage::BiddersRead(B.into()) {
                    let args = vec![Value::from(aid.as_str()), Value::Int(300)];
                    let r = w.call(B, &interchain::chain::Caller::user("bob"), "bidder", "submit_bid", args)?;
                    late = Some(r.is_ok());
                }
                Ok(())
            })
            .unwrap();
        let AuctionOutcome::Concluded(win) = &done.outcome else { panic!() };
        match mode {
            Mode::Occ => {
                assert_eq!(late, Some(true));
                assert!(matches!(done.attempts[0].outcome, Err(AbortReason::VersionConflict { .. })), "{done:?}");
                assert_eq!(win.user, "bob");
            }
            Mode::Locks => {
                assert_eq!(late, Some(false));
                assert_eq!(done.attempts.len(), 1);
                assert_eq!(win.user, "ann");
            }
        }
        let bids: Vec<_> = [B, C].iter().flat_map(|c| ledger_bids(w.chain(c).unwrap(), &aid)).collect();
        assert_eq!(oracle_winner(&bids, &rates()).unwrap().user, win.user);
    }
}
