//! Builds a state tree, proves one present and one absent key, and shows
//! that a tampered proof no longer verifies.

use std::collections::BTreeMap;

use interchain::merkle::{verify_proof, MerkleTree, ProofBody};
use interchain::Value;

fn main() {
    let entries: BTreeMap<Vec<u8>, Value> = [
        ("alice", Value::Int(30)),
        ("bob", Value::Int(12)),
        ("dave", Value::from("frozen")),
    ]
    .into_iter()
    .map(|(k, v)| (k.as_bytes().to_vec(), v))
    .collect();
    let tree = MerkleTree::build(&entries);
    let root = tree.root();
    println!("root {}", hex::encode(root.as_bytes()));

    let present = tree.prove(b"bob", 7);
    println!("bob: membership proof with {} steps, verifies={}", path_len(&present.body), verify_proof(&root, &present));

    let absent = tree.prove(b"carol", 7);
    println!("carol: absence proof, verifies={}", verify_proof(&root, &absent));

    let mut forged = present.clone();
    if let ProofBody::Membership { value, .. } = &mut forged.body {
        *value = Value::Int(1_000);
    }
    println!("bob with a forged balance verifies={}", verify_proof(&root, &forged));
}

fn path_len(body: &ProofBody) -> usize {
    match body {
        ProofBody::Membership { path, .. } => path.len(),
        ProofBody::Absence { .. } => 0,
    }
}
