//! Versioned key-value state with full per-key history.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::merkle::MerkleTree;
use crate::value::Value;

/// Position of a write: block height, then index of the entry within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Version {
    pub height: u64,
    pub index: u32,
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.height, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub key: String,
    pub value: Value,
    pub version: Version,
}

#[derive(Debug, Clone, Default)]
pub struct VersionedStore {
    history: BTreeMap<String, Vec<(Version, Value)>>,
}

impl VersionedStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a version. Versions of a key must arrive in increasing order.
    pub fn apply(&mut self, key: &str, value: Value, version: Version) {
        let versions = self.history.entry(key.to_string()).or_default();
        debug_assert!(versions.last().is_none_or(|(v, _)| *v < version));
        versions.push((version, value));
    }

    pub fn get(&self, key: &str) -> Value {
        self.get_versioned(key).map(|(_, v)| v.clone()).unwrap_or(Value::Null)
    }

    pub fn get_versioned(&self, key: &str) -> Option<(Version, &Value)> {
        self.history.get(key).and_then(|vs| vs.last()).map(|(ver, v)| (*ver, v))
    }

    /// Value with the highest version at or below `height`.
    pub fn get_at(&self, key: &str, height: u64) -> Value {
        self.get_versioned_at(key, height).map(|(_, v)| v.clone()).unwrap_or(Value::Null)
    }

    pub fn get_versioned_at(&self, key: &str, height: u64) -> Option<(Version, &Value)> {
        let vs = self.history.get(key)?;
        let idx = vs.partition_point(|(ver, _)| ver.height <= height);
        idx.checked_sub(1).map(|i| (vs[i].0, &vs[i].1))
    }

    /// All versions of keys under `prefix` with height in `from..=to`, ordered by version.
    pub fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry> {
        let mut out: Vec<HistoryEntry> = self
            .history
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .flat_map(|(k, vs)| {
                vs.iter().filter(|(ver, _)| (from..=to).contains(&ver.height)).map(|(ver, v)| HistoryEntry {
                    key: k.clone(),
                    value: v.clone(),
                    version: *ver,
                })
            })
            .collect();
        out.sort_by(|a, b| a.version.cmp(&b.version).then_with(|| a.key.cmp(&b.key)));
        out
    }

    /// Live values under `prefix` as of `height`.
    pub fn current_at(&self, prefix: &str, height: u64) -> Vec<(String, Value)> {
        self.history
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .filter_map(|(k, _)| {
                let v = self.get_at(k, height);
                (!v.is_null()).then(|| (k.clone(), v))
            })
            .collect()
    }

    pub fn snapshot_at(&self, height: u64) -> BTreeMap<Vec<u8>, Value> {
        self.history
            .keys()
            .filter_map(|k| {
                let v = self.get_at(k, height);
                (!v.is_null()).then(|| (k.as_bytes().to_vec(), v))
            })
            .collect()
    }

    pub fn snapshot(&self) -> BTreeMap<Vec<u8>, Value> {
        self.snapshot_at(u64::MAX)
    }

    pub fn tree_at(&self, height: u64) -> MerkleTree {
        MerkleTree::build(&self.snapshot_at(height))
    }

    /// Drops every version written at or above `height`.
    pub fn truncate_from(&mut self, height: u64) {
        self.history.retain(|_, vs| {
            let keep = vs.partition_point(|(ver, _)| ver.height < height);
            vs.truncate(keep);
            !vs.is_empty()
        });
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.history.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(h: u64, i: u32) -> Version {
        Version { height: h, index: i }
    }

    #[test]
    fn reads_at_heights() {
        let mut s = VersionedStore::new();
        s.apply("a", Value::Int(5), v(2, 0));
        s.apply("a", Value::Int(6), v(5, 1));
        assert_eq!(s.get_at("a", 1), Value::Null);
        assert_eq!(s.get_at("a", 3), Value::Int(5));
        assert_eq!(s.get_at("a", 5), Value::Int(6));
        assert_eq!(s.get("a"), Value::Int(6));
        assert_eq!(s.get("missing"), Value::Null);
    }

    #[test]
    fn history_ranges() {
        let mut s = VersionedStore::new();
        s.apply("k.a", Value::Int(1), v(3, 0));
        s.apply("k.b", Value::Int(2), v(3, 1));
        s.apply("k.a", Value::Int(3), v(5, 0));
        s.apply("other", Value::Int(9), v(4, 0));
        let all = s.history("k.", 1, 10);
        assert_eq!(all.iter().map(|h| h.version).collect::<Vec<_>>(), vec![v(3, 0), v(3, 1), v(5, 0)]);
        assert!(s.history("k.", 6, 10).is_empty());
        assert_eq!(s.history("k.a", 4, 5).len(), 1);
    }

    #[test]
    fn null_writes_delete_from_snapshot() {
        let mut s = VersionedStore::new();
        s.apply("a", Value::Int(1), v(1, 0));
        s.apply("a", Value::Null, v(2, 0));
        assert_eq!(s.snapshot_at(1).len(), 1);
        assert!(s.snapshot_at(2).is_empty());
        assert!(s.current_at("a", 2).is_empty());
    }
}
