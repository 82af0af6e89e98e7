//! A client reads a key from a chain it does not run, checks the quorum
//! signatures and Merkle proof, then shows that a replayed answer fails.

use std::rc::Rc;

use interchain::chain::{Caller, KvContract};
use interchain::crypto::SchemeKind;
use interchain::sim::{World, WorldConfig};
use interchain::xtxn::{verify_response, Query, ReadRequest};
use interchain::Value;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::with_default_broker(WorldConfig { scheme: SchemeKind::Ed25519, ..WorldConfig::default() });
    w.add_chain("vault", 4, 1, &[])?;
    w.register("vault", Rc::new(KvContract::new("kv")))?;
    w.run_until_idle()?;
    let alice = Caller::user("alice");
    w.call("vault", &alice, "kv", "set", vec![Value::from("gold"), Value::Int(7)])?;

    let keys = w.keysets()["vault"].clone();
    let req = ReadRequest { nonce: w.next_read_nonce(), target_chain: "vault".into(), contract: "kv".into(), query: Query::Get("gold".into()) };
    let resp = w.verified_read(&alice, &req)?;
    verify_response(&keys, &req, &resp)?;
    println!(
        "gold = {} at height {} with {} signatures",
        resp.value,
        resp.anchor_height,
        resp.signatures.len()
    );

    w.call("vault", &alice, "kv", "set", vec![Value::from("gold"), Value::Int(9)])?;
    let fresh = ReadRequest { nonce: w.next_read_nonce(), ..req.clone() };
    println!("old answer against a new nonce: {}", verify_response(&keys, &fresh, &resp).unwrap_err());
    let mut relabeled = resp.clone();
    relabeled.nonce = fresh.nonce;
    println!("old answer with the nonce rewritten: {}", verify_response(&keys, &fresh, &relabeled).unwrap_err());

    let now = w.verified_read(&alice, &fresh)?;
    verify_response(&keys, &fresh, &now)?;
    println!("fresh read: gold = {}", now.value);
    Ok(())
}
