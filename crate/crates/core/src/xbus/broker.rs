use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::event::SignedEventBatch;

/// Misbehavior a broker applies to each publication.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultProfile {
    pub drop_rate: f64,
    pub duplicate_rate: f64,
    pub replay_rate: f64,
    /// Rewrites the payload of everything it carries.
    pub forge: bool,
}

impl FaultProfile {
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [("drop_rate", self.drop_rate), ("duplicate_rate", self.duplicate_rate), ("replay_rate", self.replay_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} {r} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Untrusted transport holding one append-only queue per destination chain.
pub trait Broker {
    fn id(&self) -> &str;
    fn profile(&self) -> &FaultProfile;
    fn append(&mut self, topic: &str, entry: Vec<u8>) -> io::Result<()>;
    fn len(&self, topic: &str) -> usize;
    fn get(&self, topic: &str, index: usize) -> Option<&[u8]>;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishStats {
    pub published: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub replayed: u64,
    pub forged: u64,
}

/// Hands `batch` to every broker on topic `dest_chain`, letting each apply its
/// fault profile. Per broker the generator is drawn exactly four times, in
/// the order drop, duplicate, replay, replay index.
pub fn publish<R: Rng>(
    brokers: &mut [Box<dyn Broker>],
    batch: &SignedEventBatch,
    rng: &mut R,
    stats: &mut PublishStats,
) -> io::Result<()> {
    let topic = batch.event.dest_chain.as_str();
    let bytes = batch.encode();
    for b in brokers.iter_mut() {
        let (drop, dup, replay) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
        let replay_pick = rng.gen::<u64>();
        let p = b.profile().clone();
        stats.published += 1;
        if drop < p.drop_rate {
            stats.dropped += 1;
            continue;
        }
        let entry = if p.forge {
            stats.forged += 1;
            forge(batch)
        } else {
            bytes.clone()
        };
        b.append(topic, entry.clone())?;
        if dup < p.duplicate_rate {
            stats.duplicated += 1;
            b.append(topic, entry)?;
        }
        let n = b.len(topic);
        if replay < p.replay_rate && n > 1 {
            let old = b.get(topic, (replay_pick % (n as u64 - 1)) as usize).unwrap().to_vec();
            stats.replayed += 1;
            b.append(topic, old)?;
        }
    }
    Ok(())
}

fn forge(batch: &SignedEventBatch) -> Vec<u8> {
    let mut forged = batch.clone();
    forged.event.payload.push(0xFF);
    forged.encode()
}

#[derive(Debug, Clone)]
pub struct MemoryBroker {
    id: String,
    profile: FaultProfile,
    topics: BTreeMap<String, Vec<Vec<u8>>>,
}

impl MemoryBroker {
    pub fn new(id: &str, profile: FaultProfile) -> Self {
        Self { id: id.to_string(), profile, topics: BTreeMap::new() }
    }
}

impl Broker for MemoryBroker {
    fn id(&self) -> &str {
        &self.id
    }

    fn profile(&self) -> &FaultProfile {
        &self.profile
    }

    fn append(&mut self, topic: &str, entry: Vec<u8>) -> io::Result<()> {
        self.topics.entry(topic.to_string()).or_default().push(entry);
        Ok(())
    }

    fn len(&self, topic: &str) -> usize {
        self.topics.get(topic).map_or(0, Vec::len)
    }

    fn get(&self, topic: &str, index: usize) -> Option<&[u8]> {
        self.topics.get(topic)?.get(index).map(Vec::as_slice)
    }
}

/// Broker whose queues are append-only files (`<dir>/<topic>.log`, one base64
/// entry per line). Reopening the directory restores every queue.
#[derive(Debug)]
pub struct FileBroker {
    id: String,
    profile: FaultProfile,
    dir: PathBuf,
    topics: BTreeMap<String, Vec<Vec<u8>>>,
}

impl FileBroker {
    pub fn open(id: &str, profile: FaultProfile, dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut topics = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("log") {
                continue;
            }
            let topic = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mut entries = Vec::new();
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                // A torn final line from a crash mid-append is ignored.
                match B64.decode(line.trim()) {
                    Ok(bytes) if !line.trim().is_empty() => entries.push(bytes),
                    _ => break,
                }
            }
            topics.insert(topic, entries);
        }
        Ok(Self { id: id.to_string(), profile, dir: dir.to_path_buf(), topics })
    }
}

impl Broker for FileBroker {
    fn id(&self) -> &str {
        &self.id
    }

    fn profile(&self) -> &FaultProfile {
        &self.profile
    }

    fn append(&mut self, topic: &str, entry: Vec<u8>) -> io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(format!("{topic}.log")))?;
        writeln!(f, "{}", B64.encode(&entry))?;
        self.topics.entry(topic.to_string()).or_default().push(entry);
        Ok(())
    }

    fn len(&self, topic: &str) -> usize {
        self.topics.get(topic).map_or(0, Vec::len)
    }

    fn get(&self, topic: &str, index: usize) -> Option<&[u8]> {
        self.topics.get(topic)?.get(index).map(Vec::as_slice)
    }
}
