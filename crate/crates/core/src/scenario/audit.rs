//! Offline checks over a run log. Everything is recomputed from the logged
//! blocks and the scenario's key material; the live world is not consulted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{LogError, RunLog, ScenarioConfig};
use crate::auction::{select_winner, Bid, AUCTIONEER, BIDDER};
use crate::chain::{digest_list_root, Block, ChainConfig, Entry, SYS};
use crate::crypto::{Digest, KeySet};
use crate::merkle::{empty_root, MerkleTree};
use crate::value::Value;
use crate::xtxn::{PrepareBody, XTXN};

type Writes = Vec<(String, Value)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub properties: Vec<PropertyResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            writeln!(f, "{} {}", if p.passed { "PASS" } else { "FAIL" }, p.name)?;
            for v in p.violations.iter().take(20) {
                writeln!(f, "  {v}")?;
            }
            if p.violations.len() > 20 {
                writeln!(f, "  ... {} more", p.violations.len() - 20)?;
            }
        }
        Ok(())
    }
}

/// Collects violations for one property.
struct Check {
    name: &'static str,
    violations: Vec<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Self { name, violations: Vec::new() }
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    fn done(self) -> PropertyResult {
        PropertyResult { name: self.name, passed: self.violations.is_empty(), violations: self.violations }
    }
}

type State = BTreeMap<String, Value>;

fn apply(state: &mut State, block: &Block) {
    for r in &block.receipts {
        for (k, v) in &r.writes {
            if v.is_null() {
                state.remove(k);
            } else {
                state.insert(k.clone(), v.clone());
            }
        }
    }
}

fn root(state: &State) -> Digest {
    let entries: BTreeMap<Vec<u8>, Value> = state.iter().map(|(k, v)| (k.as_bytes().to_vec(), v.clone())).collect();
    MerkleTree::build(&entries).root()
}

fn user_key(k: &str) -> bool {
    match k.split_once('.') {
        Some((ns, _)) => ns != XTXN && ns != SYS,
        None => false,
    }
}

struct Ledger<'a> {
    cfg: ScenarioConfig,
    blocks: BTreeMap<&'a str, Vec<&'a Block>>,
    finals: BTreeMap<String, State>,
}

impl Ledger<'_> {
    fn get(&self, chain: &str, key: &str) -> Value {
        self.finals.get(chain).and_then(|s| s.get(key)).cloned().unwrap_or(Value::Null)
    }
}

/// Audits a run log. Fails only if the log itself is unreadable; broken
/// chains are reported as property failures.
pub fn audit_run(log: &RunLog) -> Result<AuditReport, LogError> {
    let cfg: ScenarioConfig = toml::from_str(&log.config)
        .map_err(|e| LogError::CorruptLog { line: 2, reason: format!("config: {e}") })?;
    let mut blocks: BTreeMap<&str, Vec<&Block>> = BTreeMap::new();
    for b in &log.blocks {
        blocks.entry(b.header.chain_id.as_str()).or_default().push(b);
    }
    let mut props = Vec::new();
    let (integrity, finals, conservation) = integrity(&cfg, &blocks);
    let ledger = Ledger { cfg, blocks, finals };
    props.push(integrity);
    props.push(atomicity(&ledger));
    props.push(conservation);
    props.push(at_most_once(&ledger));
    props.push(authenticity(&ledger));
    props.push(locks_released(&ledger));
    if ledger.cfg.auction.is_some() {
        props.extend(auction_checks(&ledger));
    }
    Ok(AuditReport { properties: props })
}

/// Hash links, certificates and roots, replaying receipts to rebuild state.
/// Conservation is checked along the way since it needs every intermediate state.
fn integrity(cfg: &ScenarioConfig, blocks: &BTreeMap<&str, Vec<&Block>>) -> (PropertyResult, BTreeMap<String, State>, PropertyResult) {
    let mut check = Check::new("integrity");
    let mut cons = Check::new("conservation");
    let bidder_chains: BTreeSet<&str> =
        cfg.auction.iter().flat_map(|a| a.bidder_chains.iter().map(String::as_str)).collect();
    let mut finals = BTreeMap::new();
    for spec in &cfg.chains {
        let id = spec.id.as_str();
        let Some(chain_blocks) = blocks.get(id) else {
            check.fail(format!("{id}: no blocks"));
            continue;
        };
        let keys = {
            let c = ChainConfig::generate(id, spec.n, spec.f, cfg.scheme, cfg.seed);
            KeySet { chain_id: id.to_string(), f: spec.f, keys: c.node_keys.iter().map(|k| k.public()).collect() }
        };
        let mut state = State::new();
        let mut prev: Option<&Block> = None;
        for (i, b) in chain_blocks.iter().enumerate() {
            let h = &b.header;
            let at = format!("{id}@{}", h.height);
            if h.height != i as u64 {
                check.fail(format!("{at}: expected height {i}"));
            }
            let want_prev = prev.map_or(Digest::ZERO, |p| p.digest());
            if h.prev_digest != want_prev {
                check.fail(format!("{at}: prev_digest does not link"));
            }
            if b.cert.header_digest != h.digest() || !b.cert.verify(&keys) {
                check.fail(format!("{at}: certificate invalid"));
            }
            let ids: Vec<Digest> = b.entries.iter().map(Entry::id).collect();
            if h.txn_root != digest_list_root(&ids) {
                check.fail(format!("{at}: txn_root mismatch"));
            }
            if b.receipts.len() != b.entries.len() {
                check.fail(format!("{at}: {} receipts for {} entries", b.receipts.len(), b.entries.len()));
            }
            apply(&mut state, b);
            let want_root = if state.is_empty() { empty_root() } else { root(&state) };
            if h.state_root != want_root {
                check.fail(format!("{at}: state_root mismatch"));
            }
            if bidder_chains.contains(id) {
                let total: i64 = state
                    .iter()
                    .filter(|(k, _)| k.starts_with(&format!("{BIDDER}.balance.")) || k.starts_with(&format!("{BIDDER}.escrow.")))
                    .filter_map(|(_, v)| v.as_int())
                    .sum();
                let minted = state.get(&format!("{BIDDER}.minted")).and_then(Value::as_int).unwrap_or(0);
                if total != minted {
                    cons.fail(format!("{at}: balances and escrow sum to {total}, minted {minted}"));
                }
            }
            prev = Some(b);
        }
        finals.insert(id.to_string(), state);
    }
    (check.done(), finals, cons.done())
}

/// Writes tagged with a cross-chain transaction must match its decision.
fn atomicity(l: &Ledger<'_>) -> PropertyResult {
    let mut check = Check::new("atomicity");
    // txn -> (committed, planned user writes per chain)
    let mut decisions: BTreeMap<String, bool> = BTreeMap::new();
    let mut plans: BTreeMap<String, BTreeMap<String, Vec<(String, Value)>>> = BTreeMap::new();
    let prefix = format!("{XTXN}.co.");
    for state in l.finals.values() {
        for (k, v) in state.range(prefix.clone()..) {
            let Some(rest) = k.strip_prefix(&prefix) else { break };
            let Some((txn, field)) = rest.split_once('.') else { continue };
            if field == "decision" {
                decisions.insert(txn.to_string(), v.as_str() == Some("commit"));
            } else if let Some(chain) = field.strip_prefix("prep.") {
                match v.as_bytes().map(PrepareBody::decode) {
                    Some(Ok(body)) => {
                        plans.entry(txn.to_string()).or_default().insert(chain.to_string(), body.writes);
                    }
                    _ => check.fail(format!("{txn}: unreadable plan for {chain}")),
                }
            }
        }
    }
    // (chain, txn) -> receipts with user-key writes
    let mut applied: BTreeMap<(String, String), Vec<Writes>> = BTreeMap::new();
    for (chain, blocks) in &l.blocks {
        for b in blocks {
            for r in &b.receipts {
                if r.tag.is_empty() {
                    continue;
                }
                let writes: Vec<_> = r.writes.iter().filter(|(k, _)| user_key(k)).cloned().collect();
                if !writes.is_empty() {
                    applied.entry((chain.to_string(), r.tag.clone())).or_default().push(writes);
                }
            }
        }
    }
    for ((chain, txn), receipts) in &applied {
        let committed = decisions.get(txn).copied().unwrap_or(false);
        let planned = plans.get(txn).and_then(|p| p.get(chain));
        if !committed || planned.is_none_or(Vec::is_empty) {
            let state = match decisions.get(txn) {
                Some(true) => "commit",
                Some(false) => "abort",
                None => "undecided",
            };
            for (k, _) in receipts.iter().flatten() {
                check.fail(format!("({chain}, {k}, {txn}): written under {state}"));
            }
        }
    }
    for (txn, chains) in &plans {
        if decisions.get(txn) != Some(&true) {
            continue;
        }
        for (chain, planned) in chains {
            if planned.is_empty() {
                continue;
            }
            let got = applied.get(&(chain.clone(), txn.clone()));
            match got.map(Vec::as_slice) {
                None | Some([]) => {
                    for (k, _) in planned {
                        check.fail(format!("({chain}, {k}, {txn}): committed but not applied"));
                    }
                }
                Some([one]) => {
                    let a: BTreeMap<_, _> = one.iter().cloned().collect();
                    let p: BTreeMap<_, _> = planned.iter().cloned().collect();
                    for (k, v) in &p {
                        if a.get(k) != Some(v) {
                            check.fail(format!("({chain}, {k}, {txn}): applied value differs from plan"));
                        }
                    }
                    for k in a.keys().filter(|k| !p.contains_key(*k)) {
                        check.fail(format!("({chain}, {k}, {txn}): applied but not planned"));
                    }
                }
                Some(many) => check.fail(format!("({chain}, *, {txn}): applied {} times", many.len())),
            }
        }
    }
    check.done()
}

fn at_most_once(l: &Ledger<'_>) -> PropertyResult {
    let mut check = Check::new("at_most_once");
    for (chain, blocks) in &l.blocks {
        let mut seen = BTreeSet::new();
        for b in blocks {
            for e in &b.entries {
                if let Entry::Inbound(ev) = e {
                    if !seen.insert((ev.source_chain.clone(), ev.nonce)) {
                        check.fail(format!("{chain}@{}: event ({}, {}) applied again", b.header.height, ev.source_chain, ev.nonce));
                    }
                }
            }
        }
    }
    check.done()
}

fn authenticity(l: &Ledger<'_>) -> PropertyResult {
    let mut check = Check::new("authenticity");
    let mut emitted: BTreeMap<&str, BTreeSet<Digest>> = BTreeMap::new();
    for (chain, blocks) in &l.blocks {
        emitted.entry(chain).or_default().extend(blocks.iter().flat_map(|b| b.outbox.iter().map(|e| e.digest())));
    }
    for (chain, blocks) in &l.blocks {
        for b in blocks {
            for e in &b.entries {
                if let Entry::Inbound(ev) = e {
                    let ok = ev.dest_chain == *chain
                        && emitted.get(ev.source_chain.as_str()).is_some_and(|s| s.contains(&ev.digest()));
                    if !ok {
                        check.fail(format!(
                            "{chain}@{}: event ({}, {}) was never emitted by its source",
                            b.header.height, ev.source_chain, ev.nonce
                        ));
                    }
                }
            }
        }
    }
    check.done()
}

fn locks_released(l: &Ledger<'_>) -> PropertyResult {
    let mut check = Check::new("locks_released");
    let prefix = format!("{XTXN}.lock.");
    for (chain, state) in &l.finals {
        for (k, v) in state.range(prefix.clone()..).take_while(|(k, _)| k.starts_with(&prefix)) {
            check.fail(format!("{chain}: {} still held by {v}", &k[prefix.len()..]));
        }
    }
    check.done()
}

/// Winner and settlement, recomputed from accepted bids and funding calls.
fn auction_checks(l: &Ledger<'_>) -> Vec<PropertyResult> {
    let a = l.cfg.auction.as_ref().expect("auction configured");
    let setup = l.cfg.auction_setup().ok().flatten().expect("validated config");
    let mut winner = Check::new("winner");
    let mut settle = Check::new("settlement");

    let mut bids: BTreeMap<String, Vec<Bid>> = BTreeMap::new();
    let mut funded: BTreeMap<(String, String), i64> = BTreeMap::new();
    for c in &a.bidder_chains {
        for b in l.blocks.get(c.as_str()).into_iter().flatten() {
            for (e, r) in b.entries.iter().zip(&b.receipts) {
                let Entry::Txn(t) = e else { continue };
                if t.target_contract != BIDDER || !r.is_ok() {
                    continue;
                }
                let user = t.caller.id().to_string();
                match (t.method.as_str(), t.args.as_slice()) {
                    ("submit_bid", [Value::Str(aid), Value::Int(amount)]) => bids.entry(aid.clone()).or_default().push(Bid {
                        chain: c.clone(),
                        user,
                        amount: *amount,
                        bid_height: b.header.height,
                    }),
                    ("fund", [Value::Int(amount)]) => *funded.entry((c.clone(), user)).or_default() += amount,
                    _ => {}
                }
            }
        }
    }

    let t = &a.ticket_chain;
    let ak = |k: String| format!("{AUCTIONEER}.{k}");
    let mut aids = BTreeSet::new();
    let prefix = ak("auction.".into());
    if let Some(state) = l.finals.get(t) {
        for k in state.range(prefix.clone()..).map(|(k, _)| k).take_while(|k| k.starts_with(&prefix)) {
            if let Some((aid, _)) = k[prefix.len()..].split_once('.') {
                aids.insert(aid.to_string());
            }
        }
    }

    // chain -> user -> net transfer from concluded auctions
    let mut net: BTreeMap<(String, String), i64> = BTreeMap::new();
    for aid in &aids {
        let status = l.get(t, &ak(format!("auction.{aid}.status")));
        let empty = Vec::new();
        let accepted = bids.get(aid).unwrap_or(&empty);
        match status.as_str() {
            Some("concluded") => {
                let Some(best) = select_winner(accepted, &setup.rates) else {
                    winner.fail(format!("{aid}: concluded without accepted bids"));
                    continue;
                };
                let want = format!("{}/{}/{}", best.chain, best.user, best.amount);
                let got = l.get(t, &ak(format!("auction.{aid}.winner")));
                if got.as_str() != Some(want.as_str()) {
                    winner.fail(format!("{aid}: recorded winner {got}, expected {want}"));
                }
                let tid = l.get(t, &ak(format!("auction.{aid}.ticket")));
                let owner = l.get(t, &ak(format!("ticket.{}.owner", tid.as_str().unwrap_or_default())));
                let later_sale = aids.iter().any(|other| {
                    other != aid
                        && l.get(t, &ak(format!("auction.{other}.ticket"))) == tid
                        && l.get(t, &ak(format!("auction.{other}.status"))).as_str() == Some("concluded")
                });
                if !later_sale && owner.as_str() != Some(best.user.as_str()) {
                    winner.fail(format!("{aid}: ticket owned by {owner}, expected {}", best.user));
                }
                let wb = l.get(&best.chain, &format!("{BIDDER}.winning_bids.{aid}"));
                if wb.as_int() != Some(best.amount) {
                    winner.fail(format!("{aid}: winning_bids on {} is {wb}, expected {}", best.chain, best.amount));
                }
                let seller = l.get(t, &ak(format!("auction.{aid}.seller")));
                *net.entry((best.chain.clone(), best.user.clone())).or_default() -= best.amount;
                *net.entry((best.chain.clone(), seller.as_str().unwrap_or_default().to_string())).or_default() += best.amount;
            }
            Some("cancelled") if !accepted.is_empty() => {
                winner.fail(format!("{aid}: cancelled with {} accepted bids", accepted.len()));
            }
            _ => {}
        }
    }

    // Every unit a user was funded with is either still theirs (balance or
    // open escrow) or moved by a concluded auction.
    let mut users: BTreeSet<(String, String)> = funded.keys().chain(net.keys()).cloned().collect();
    for c in &a.bidder_chains {
        for (k, _) in l.finals.get(c).into_iter().flatten() {
            if let Some(u) = k.strip_prefix(&format!("{BIDDER}.balance.")).or_else(|| k.strip_prefix(&format!("{BIDDER}.escrow."))) {
                users.insert((c.clone(), u.to_string()));
            }
        }
    }
    for (c, u) in users {
        let held = l.get(&c, &format!("{BIDDER}.balance.{u}")).as_int().unwrap_or(0)
            + l.get(&c, &format!("{BIDDER}.escrow.{u}")).as_int().unwrap_or(0);
        let want = funded.get(&(c.clone(), u.clone())).copied().unwrap_or(0) + net.get(&(c.clone(), u.clone())).copied().unwrap_or(0);
        if held != want {
            settle.fail(format!("{c}: {u} holds {held}, expected {want}"));
        }
    }
    vec![winner.done(), settle.done()]
}
