//! The cross-chain ticket auction: a ticket on one chain, bids in two
//! currencies on two others, and a conclusion that reads every bid and
//! settles atomically.

use std::collections::BTreeMap;

use interchain::auction::{AuctionHouse, AuctionOutcome, AuctionSetup, Rate};
use interchain::crypto::SchemeKind;
use interchain::sim::{Mode, World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("locks") => Mode::Locks,
        _ => Mode::Occ,
    };
    let mut w = World::with_default_broker(WorldConfig { seed: 42, scheme: SchemeKind::Ed25519, ..WorldConfig::default() });
    for c in ["tickets", "euro", "yen"] {
        w.add_chain(c, 4, 1, &[])?;
    }
    let rates: BTreeMap<String, Rate> = [("euro".to_string(), Rate::new(1, 1)), ("yen".to_string(), Rate::new(1, 100))].into();
    let house = AuctionHouse::install(
        &mut w,
        AuctionSetup {
            ticket_chain: "tickets".into(),
            bidder_chains: vec!["euro".into(), "yen".into()],
            rates,
            window: 40,
            mode,
            max_attempts: 4,
        },
    )?;

    house.create_ticket(&mut w, "sam", "opera")?;
    house.fund(&mut w, "euro", "ann", 500)?;
    house.fund(&mut w, "euro", "bob", 500)?;
    house.fund(&mut w, "yen", "kei", 50_000)?;
    let aid = house.start_auction(&mut w, "sam", "opera")?;
    house.await_started(&mut w, &aid, 200)?;
    house.submit_bid(&mut w, "euro", "ann", &aid, 120)?;
    house.submit_bid(&mut w, "euro", "bob", &aid, 90)?;
    house.submit_bid(&mut w, "yen", "kei", &aid, 13_000)?;

    let done = house.conclude(&mut w, "sam", &aid)?;
    for a in &done.attempts {
        let result = a.outcome.as_ref().map_or_else(|e| format!("aborted: {e}"), |_| "committed".into());
        println!("{}: {result} ({} read trips, {} round trips)", a.txn_id, a.read_trips, w.meter.round_trips(&a.txn_id));
    }
    match done.outcome {
        AuctionOutcome::Concluded(bid) => println!("{mode:?}: {aid} won by {}/{} with {}", bid.chain, bid.user, bid.amount),
        AuctionOutcome::Cancelled => println!("{mode:?}: {aid} cancelled"),
    }
    println!("ticket owner is now {}", house.owner(&w, "opera")?);
    Ok(())
}
