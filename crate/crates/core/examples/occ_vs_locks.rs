//! The same transfer run as a general transaction under both concurrency
//! modes, with a conflicting write landing between read and commit.

use std::rc::Rc;

use interchain::chain::{Caller, KvContract};
use interchain::sim::{Mode, TxnError, TxnOutcome, World, WorldConfig};
use interchain::Value;

fn world() -> Result<World, Box<dyn std::error::Error>> {
    let mut w = World::with_default_broker(WorldConfig { lock_timeout: 20, ..WorldConfig::default() });
    for c in ["bank", "shop"] {
        w.add_chain(c, 4, 1, &[])?;
        w.register(c, Rc::new(KvContract::new("kv")))?;
    }
    w.run_until_idle()?;
    w.call("bank", &Caller::user("ann"), "kv", "set", vec![Value::from("ann"), Value::Int(100)])?;
    w.call("shop", &Caller::user("ann"), "kv", "set", vec![Value::from("ann"), Value::Int(0)])?;
    Ok(w)
}

fn run(mode: Mode) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = world()?;
    let ann = Caller::user("ann");
    let mut t = w.begin_general("bank", mode, &ann);
    let balance = w.txn_read(&mut t, "bank", "kv.ann")?.as_int().unwrap_or(0);
    let credit = w.txn_read(&mut t, "shop", "kv.ann")?.as_int().unwrap_or(0);

    // A direct deposit races the transaction.
    let deposit = w.call("bank", &Caller::user("payroll"), "kv", "add", vec![Value::from("ann"), Value::Int(50)])?;
    println!("{mode:?}: concurrent deposit {}", if deposit.is_ok() { "applied" } else { "rejected" });

    w.txn_write(&mut t, "bank", "kv.ann", Value::Int(balance - 30))?;
    w.txn_write(&mut t, "shop", "kv.ann", Value::Int(credit + 30))?;
    match w.txn_commit(&mut t) {
        Ok(TxnOutcome::Committed { .. }) => println!("{mode:?}: transfer committed after {} round trips", w.meter.round_trips(&t.id)),
        Ok(TxnOutcome::Aborted(why)) | Err(TxnError::Aborted(why)) => println!("{mode:?}: transfer aborted ({why})"),
        Err(e) => return Err(e.into()),
    }
    w.run_until_idle()?;
    let read = |c: &str| w.chain(c).unwrap().read_state("kv.ann", None).unwrap();
    println!("{mode:?}: bank {} shop {}\n", read("bank"), read("shop"));
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(Mode::Occ)?;
    run(Mode::Locks)
}
