//! Events sent from one chain to another over two unreliable brokers, with
//! one Byzantine node per chain. Every event arrives exactly once.

use std::rc::Rc;

use interchain::chain::{Behavior, Caller, KvContract};
use interchain::crypto::SchemeKind;
use interchain::sim::{World, WorldConfig};
use interchain::xbus::{FaultProfile, MemoryBroker};
use interchain::Value;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::new(WorldConfig { seed: 11, scheme: SchemeKind::Ed25519, ..WorldConfig::default() });
    let lossy = FaultProfile { drop_rate: 0.3, duplicate_rate: 0.2, replay_rate: 0.2, forge: false };
    w.add_broker(Box::new(MemoryBroker::new("east", lossy.clone())));
    w.add_broker(Box::new(MemoryBroker::new("west", lossy)));
    w.add_chain("src", 4, 1, &[(0, Behavior::ForgeEvents)])?;
    w.add_chain("dst", 4, 1, &[(3, Behavior::Silent)])?;
    for c in ["src", "dst"] {
        w.register(c, Rc::new(KvContract::new("kv")))?;
    }
    w.run_until_idle()?;

    for i in 0..10 {
        let args = vec![Value::from("dst"), Value::from("kv"), Value::from(format!("msg{i}")), Value::Int(i)];
        w.submit("src", &Caller::user("sender"), "kv", "send", args)?;
    }
    let ticks = w.run_until_idle()?;

    let dst = w.chain("dst")?;
    let arrived = (0..10).filter(|i| dst.read_state(&format!("kv.msg{i}"), None).unwrap() != Value::Null).count();
    let inbound = dst.blocks().iter().flat_map(|b| &b.entries).filter(|e| matches!(e, interchain::chain::Entry::Inbound(_))).count();
    let bus = &w.bus;
    println!("{arrived}/10 messages arrived as {inbound} inbound entries after {ticks} ticks");
    println!(
        "brokers: published {}, dropped {}, duplicated {}, replayed {}",
        bus.publish.published, bus.publish.dropped, bus.publish.duplicated, bus.publish.replayed
    );
    println!(
        "delivered {}, duplicates rejected {}, invalid rejected {}, republished {}",
        bus.delivery.delivered, bus.delivery.rejected_duplicate, bus.delivery.rejected_invalid, bus.republished
    );
    println!("forged events signed {}, delivered {}", bus.forged_events_signed, bus.forged_events_delivered);
    Ok(())
}
