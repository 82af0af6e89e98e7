//! Authenticated key-value map.
//!
//! A binary Merkle tree over the live entries sorted bytewise by key. Leaves
//! are `H(0x00 ‖ len₄ ‖ key ‖ canonical(value))`, inner nodes
//! `H(0x01 ‖ left ‖ right)`; an odd node at any level is paired with itself.
//! The empty map has root `H("")`.
//!
//! Absence of a key is shown by the pair of adjacent leaves bracketing it
//! (or the single first/last leaf when the key falls outside the range).
//! Adjacency is checked from the path directions, so an absence proof cannot
//! skip over a present key.

use std::collections::BTreeMap;

use crate::codec::Encoder;
use crate::crypto::{hash, hash_parts, Digest};
use crate::value::Value;

/// Side on which the sibling sits relative to the running node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathStep {
    pub sibling: Digest,
    pub side: Side,
}

/// Inclusion proof for one leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafProof {
    pub key: Vec<u8>,
    pub value: Value,
    pub path: Vec<PathStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProofKind {
    Membership,
    Absence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofBody {
    Membership { value: Value, path: Vec<PathStep> },
    Absence { left: Option<LeafProof>, right: Option<LeafProof> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_key: Vec<u8>,
    /// Height of the block whose state root anchors the proof.
    pub root_height: u64,
    pub body: ProofBody,
}

impl MerkleProof {
    pub fn kind(&self) -> ProofKind {
        match self.body {
            ProofBody::Membership { .. } => ProofKind::Membership,
            ProofBody::Absence { .. } => ProofKind::Absence,
        }
    }

    pub fn leaf_value(&self) -> Option<&Value> {
        match &self.body {
            ProofBody::Membership { value, .. } => Some(value),
            ProofBody::Absence { .. } => None,
        }
    }
}

pub fn empty_root() -> Digest {
    hash(&[])
}

pub fn leaf_hash(key: &[u8], value: &Value) -> Digest {
    let mut enc = Encoder::new();
    enc.u8(0).bytes(key);
    value.encode_into(&mut enc);
    hash(enc.as_slice())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[1], left.as_bytes(), right.as_bytes()])
}

/// Fully materialized tree; levels[0] holds the leaves.
#[derive(Debug, Clone)]
pub struct MerkleTree {
    keys: Vec<Vec<u8>>,
    values: Vec<Value>,
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    /// Builds from a sorted map; `Null` values are treated as absent.
    pub fn build(entries: &BTreeMap<Vec<u8>, Value>) -> Self {
        let (keys, values): (Vec<_>, Vec<_>) = entries
            .iter()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| (k.clone(), v.clone()))
            .unzip();
        let leaves: Vec<Digest> = keys.iter().zip(&values).map(|(k, v)| leaf_hash(k, v)).collect();
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Self { keys, values, levels }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn root(&self) -> Digest {
        match self.levels.last().and_then(|l| l.first()) {
            Some(r) => *r,
            None => empty_root(),
        }
    }

    fn path(&self, mut index: usize) -> Vec<PathStep> {
        let mut path = Vec::with_capacity(self.levels.len());
        for level in &self.levels[..self.levels.len() - 1] {
            let step = if index.is_multiple_of(2) {
                PathStep { sibling: *level.get(index + 1).unwrap_or(&level[index]), side: Side::Right }
            } else {
                PathStep { sibling: level[index - 1], side: Side::Left }
            };
            path.push(step);
            index /= 2;
        }
        path
    }

    fn leaf_proof(&self, index: usize) -> LeafProof {
        LeafProof { key: self.keys[index].clone(), value: self.values[index].clone(), path: self.path(index) }
    }

    pub fn prove(&self, key: &[u8], root_height: u64) -> MerkleProof {
        let body = match self.keys.binary_search_by(|k| k.as_slice().cmp(key)) {
            Ok(i) => ProofBody::Membership { value: self.values[i].clone(), path: self.path(i) },
            Err(i) => ProofBody::Absence {
                left: i.checked_sub(1).map(|l| self.leaf_proof(l)),
                right: (i < self.keys.len()).then(|| self.leaf_proof(i)),
            },
        };
        MerkleProof { leaf_key: key.to_vec(), root_height, body }
    }
}

struct Walk {
    root: Digest,
    index: u64,
    rightmost: bool,
}

/// Recomputes the root from a leaf. Rejects the non-canonical form where a
/// left sibling duplicates the running node (padding only happens on the right).
fn walk(leaf: Digest, path: &[PathStep]) -> Option<Walk> {
    if path.len() >= 64 {
        return None;
    }
    let mut cur = leaf;
    let mut index = 0u64;
    let mut rightmost = true;
    for (level, step) in path.iter().enumerate() {
        match step.side {
            Side::Right => {
                if step.sibling != cur {
                    rightmost = false;
                }
                cur = node_hash(&cur, &step.sibling);
            }
            Side::Left => {
                if step.sibling == cur {
                    return None;
                }
                index |= 1 << level;
                cur = node_hash(&step.sibling, &cur);
            }
        }
    }
    Some(Walk { root: cur, index, rightmost })
}

fn walk_leaf(p: &LeafProof) -> Option<Walk> {
    if p.value.is_null() {
        return None;
    }
    walk(leaf_hash(&p.key, &p.value), &p.path)
}

/// True iff the proof recomputes to `state_root` and, for absence, the
/// bracketing leaves are adjacent and strictly surround the key.
pub fn verify_proof(state_root: &Digest, proof: &MerkleProof) -> bool {
    let key = proof.leaf_key.as_slice();
    match &proof.body {
        ProofBody::Membership { value, path } => {
            if value.is_null() {
                return false;
            }
            walk(leaf_hash(key, value), path).is_some_and(|w| w.root == *state_root)
        }
        ProofBody::Absence { left: None, right: None } => *state_root == empty_root(),
        ProofBody::Absence { left: Some(l), right: None } => {
            l.key.as_slice() < key && walk_leaf(l).is_some_and(|w| w.root == *state_root && w.rightmost)
        }
        ProofBody::Absence { left: None, right: Some(r) } => {
            key < r.key.as_slice() && walk_leaf(r).is_some_and(|w| w.root == *state_root && w.index == 0)
        }
        ProofBody::Absence { left: Some(l), right: Some(r) } => {
            if !(l.key.as_slice() < key && key < r.key.as_slice()) || l.path.len() != r.path.len() {
                return false;
            }
            match (walk_leaf(l), walk_leaf(r)) {
                (Some(wl), Some(wr)) => {
                    wl.root == *state_root && wr.root == *state_root && wl.index.checked_add(1) == Some(wr.index)
                }
                _ => false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, i64)]) -> BTreeMap<Vec<u8>, Value> {
        pairs.iter().map(|(k, v)| (k.as_bytes().to_vec(), Value::Int(*v))).collect()
    }

    /// Independent root computation: recursive halving over the padded leaf list.
    fn reference_root(entries: &BTreeMap<Vec<u8>, Value>) -> Digest {
        fn level_up(nodes: Vec<Digest>) -> Digest {
            if nodes.len() == 1 {
                return nodes[0];
            }
            let mut next = Vec::new();
            let mut i = 0;
            while i < nodes.len() {
                let l = nodes[i];
                let r = if i + 1 < nodes.len() { nodes[i + 1] } else { nodes[i] };
                next.push(node_hash(&l, &r));
                i += 2;
            }
            level_up(next)
        }
        let leaves: Vec<_> = entries.iter().map(|(k, v)| leaf_hash(k, v)).collect();
        if leaves.is_empty() {
            hash(b"")
        } else {
            level_up(leaves)
        }
    }

    #[test]
    fn empty_tree() {
        let t = MerkleTree::build(&BTreeMap::new());
        assert_eq!(t.root(), empty_root());
        let p = t.prove(b"anything", 0);
        assert_eq!(p.kind(), ProofKind::Absence);
        assert!(verify_proof(&t.root(), &p));
        assert!(!verify_proof(&Digest::ZERO, &p));
    }

    #[test]
    fn roots_match_reference() {
        for n in 0..20 {
            let pairs: Vec<(String, i64)> = (0..n).map(|i| (format!("k{i:03}"), i as i64)).collect();
            let m: BTreeMap<_, _> = pairs.iter().map(|(k, v)| (k.as_bytes().to_vec(), Value::Int(*v))).collect();
            assert_eq!(MerkleTree::build(&m).root(), reference_root(&m), "n={n}");
        }
    }

    #[test]
    fn membership_and_tamper() {
        let m = map(&[("a", 1), ("c", 3), ("e", 5)]);
        let t = MerkleTree::build(&m);
        let p = t.prove(b"c", 4);
        assert_eq!(p.kind(), ProofKind::Membership);
        assert!(verify_proof(&t.root(), &p));
        let mut bad = p.clone();
        if let ProofBody::Membership { value, .. } = &mut bad.body {
            *value = Value::Int(4);
        }
        assert!(!verify_proof(&t.root(), &bad));
    }

    #[test]
    fn absence_brackets_neighbours() {
        let m = map(&[("b", 1), ("d", 2), ("f", 3)]);
        let t = MerkleTree::build(&m);
        for (key, left, right) in [("a", None, Some("b")), ("c", Some("b"), Some("d")), ("g", Some("f"), None)] {
            let p = t.prove(key.as_bytes(), 1);
            let ProofBody::Absence { left: l, right: r } = &p.body else { panic!("expected absence") };
            assert_eq!(l.as_ref().map(|x| x.key.as_slice()), left.map(str::as_bytes));
            assert_eq!(r.as_ref().map(|x| x.key.as_slice()), right.map(str::as_bytes));
            assert!(verify_proof(&t.root(), &p), "{key}");
        }
    }

    #[test]
    fn absence_cannot_skip_a_present_key() {
        let m = map(&[("b", 1), ("d", 2), ("f", 3), ("h", 4)]);
        let t = MerkleTree::build(&m);
        // Claim "e" is absent using b and f as neighbours (d sits between them).
        let mut p = t.prove(b"c", 0);
        if let ProofBody::Absence { right, .. } = &mut p.body {
            *right = Some(t.leaf_proof(2));
        }
        p.leaf_key = b"e".to_vec();
        assert!(!verify_proof(&t.root(), &p));
        // Present key claimed absent via its neighbours.
        let mut q = t.prove(b"c", 0);
        q.leaf_key = b"d".to_vec();
        assert!(!verify_proof(&t.root(), &q));
        // Key below the range with a non-first leaf.
        let mut r = t.prove(b"a", 0);
        if let ProofBody::Absence { right, .. } = &mut r.body {
            *right = Some(t.leaf_proof(1));
        }
        assert!(!verify_proof(&t.root(), &r));
    }

    #[test]
    fn last_leaf_of_odd_tree_is_rightmost() {
        let m = map(&[("a", 1), ("b", 2), ("c", 3)]);
        let t = MerkleTree::build(&m);
        let p = t.prove(b"z", 0);
        assert!(verify_proof(&t.root(), &p));
        // "b" is not the last leaf.
        let mut q = p.clone();
        if let ProofBody::Absence { left, .. } = &mut q.body {
            *left = Some(t.leaf_proof(1));
        }
        assert!(!verify_proof(&t.root(), &q));
    }

    #[test]
    fn proof_from_other_root_fails() {
        let t1 = MerkleTree::build(&map(&[("a", 1)]));
        let t2 = MerkleTree::build(&map(&[("a", 2)]));
        assert!(!verify_proof(&t2.root(), &t1.prove(b"a", 1)));
    }
}
