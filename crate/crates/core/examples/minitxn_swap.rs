//! Atomic swap of two items on two chains with a single minitransaction:
//! compare both owners, then write both new owners, in two round trips.

use std::rc::Rc;

use interchain::chain::{Caller, KvContract};
use interchain::sim::{MiniTxn, TxnOutcome, World, WorldConfig};
use interchain::Value;

fn owner(w: &World, chain: &str) -> Value {
    w.chain(chain).unwrap().read_state("kv.owner", None).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::with_default_broker(WorldConfig::default());
    for c in ["left", "right"] {
        w.add_chain(c, 4, 1, &[])?;
        w.register(c, Rc::new(KvContract::new("kv")))?;
    }
    w.run_until_idle()?;
    w.call("left", &Caller::user("alice"), "kv", "set", vec![Value::from("owner"), Value::from("alice")])?;
    w.call("right", &Caller::user("bob"), "kv", "set", vec![Value::from("owner"), Value::from("bob")])?;

    let swap = |left_owner: &str, right_owner: &str| MiniTxn {
        compares: vec![
            ("left".into(), "kv.owner".into(), Value::from(left_owner)),
            ("right".into(), "kv.owner".into(), Value::from(right_owner)),
        ],
        reads: vec![],
        writes: vec![
            ("left".into(), "kv.owner".into(), Value::from(right_owner)),
            ("right".into(), "kv.owner".into(), Value::from(left_owner)),
        ],
    };

    let (id, outcome) = w.execute_minitxn("left", &Caller::user("broker"), &swap("alice", "bob"))?;
    println!("{id}: committed={} in {} round trips", outcome.is_committed(), w.meter.round_trips(&id));
    println!("left owner {}, right owner {}", owner(&w, "left"), owner(&w, "right"));

    // The same swap again: the compares no longer hold, so nothing is written.
    let (id, outcome) = w.execute_minitxn("left", &Caller::user("broker"), &swap("alice", "bob"))?;
    if let TxnOutcome::Aborted(why) = outcome {
        println!("{id}: aborted ({why})");
    }
    println!("left owner {}, right owner {}", owner(&w, "left"), owner(&w, "right"));
    Ok(())
}
