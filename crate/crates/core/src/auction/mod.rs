//! Three-chain ticket auction: an Auctioneer on the ticket chain escrows a
//! ticket and opens the auction on Bidder contracts on coin chains; the
//! conclusion is one general cross-chain transaction.

mod contracts;

use std::collections::BTreeMap;
use std::rc::Rc;

use num_rational::Ratio;
use thiserror::Error;

pub use contracts::{bidder_policy, parse_bidders, Auctioneer, Bidder, AUCTIONEER, BIDDER, START};

use crate::chain::{Caller, Entry, Receipt, Status};
use crate::sim::{Mode, SimError, TxnError, TxnOutcome, World};
use crate::value::{decode_values, Value};
use crate::xtxn::AbortReason;

/// Exchange rate into the common unit.
pub type Rate = Ratio<i64>;

#[derive(Debug, Error)]
pub enum AuctionError {
    #[error("PolicyDenied: {0}")]
    PolicyDenied(String),
    #[error("NotOwner: {0}")]
    NotOwner(String),
    #[error("AlreadyEscrowed: {0}")]
    AlreadyEscrowed(String),
    #[error("InsufficientFunds: {0}")]
    InsufficientFunds(String),
    #[error("auction {0} is not open")]
    NotOpen(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("conclusion aborted {attempts} times, last: {last}")]
    Aborted { attempts: u32, last: AbortReason },
    #[error("invalid auction setup: {0}")]
    Config(String),
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn check(r: Receipt) -> Result<(), AuctionError> {
    let m = match r.status {
        Status::Ok => return Ok(()),
        Status::Failed(m) => m,
    };
    let (label, rest) = m.split_once(": ").unwrap_or(("", m.as_str()));
    let rest = rest.to_string();
    Err(match label {
        "PolicyDenied" => AuctionError::PolicyDenied(rest),
        "NotOwner" => AuctionError::NotOwner(rest),
        "AlreadyEscrowed" => AuctionError::AlreadyEscrowed(rest),
        "InsufficientFunds" => AuctionError::InsufficientFunds(rest),
        _ => AuctionError::Rejected(m),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionSetup {
    pub ticket_chain: String,
    pub bidder_chains: Vec<String>,
    pub rates: BTreeMap<String, Rate>,
    /// Blocks a Bidder chain accepts bids after it opens the auction.
    pub window: u64,
    pub mode: Mode,
    pub max_attempts: u32,
}

impl AuctionSetup {
    pub fn validate(&self) -> Result<(), AuctionError> {
        if self.bidder_chains.is_empty() {
            return Err(AuctionError::Config("no bidder chains".into()));
        }
        for c in &self.bidder_chains {
            match self.rates.get(c) {
                Some(r) if *r.numer() > 0 && *r.denom() > 0 => {}
                Some(r) => return Err(AuctionError::Config(format!("rate {r} for {c} is not positive"))),
                None => return Err(AuctionError::Config(format!("no rate for {c}"))),
            }
        }
        if self.max_attempts == 0 {
            return Err(AuctionError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bid {
    pub chain: String,
    pub user: String,
    pub amount: i64,
    pub bid_height: u64,
}

impl Bid {
    pub fn normalized(&self, rate: Rate) -> Ratio<i128> {
        Ratio::from(self.amount as i128) * Ratio::new(*rate.numer() as i128, *rate.denom() as i128)
    }
}

/// Highest normalized bid; ties go to the lower bid height, then the smaller
/// (chain, user).
pub fn select_winner<'a>(bids: &'a [Bid], rates: &BTreeMap<String, Rate>) -> Option<&'a Bid> {
    bids.iter().min_by(|a, b| {
        let (na, nb) = (a.normalized(rates[&a.chain]), b.normalized(rates[&b.chain]));
        nb.cmp(&na)
            .then(a.bid_height.cmp(&b.bid_height))
            .then_with(|| (&a.chain, &a.user).cmp(&(&b.chain, &b.user)))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuctionOutcome {
    Concluded(Bid),
    Cancelled,
}

/// Points in a conclusion attempt where a test hook may interleave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    TicketRead,
    BiddersRead(String),
    BidsRead(String),
    BeforeCommit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub txn_id: String,
    pub outcome: Result<(), AbortReason>,
    /// Dependent read and lock round trips made before commit.
    pub read_trips: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conclusion {
    pub outcome: AuctionOutcome,
    pub attempts: Vec<Attempt>,
}

/// How a Bidder chain handled an auction's START event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartState {
    Pending,
    Open,
    Refused(String),
}

pub struct AuctionHouse {
    pub setup: AuctionSetup,
}

fn auctioneer_key(k: &str) -> String {
    format!("{AUCTIONEER}.{k}")
}

fn bidder_key(k: &str) -> String {
    format!("{BIDDER}.{k}")
}

impl AuctionHouse {
    /// Registers both contracts and attaches the Bidder policy on each coin
    /// chain. The chains must exist.
    pub fn install(w: &mut World, setup: AuctionSetup) -> Result<Self, AuctionError> {
        setup.validate()?;
        w.register(&setup.ticket_chain, Rc::new(Auctioneer::new(&setup.bidder_chains)))?;
        for c in &setup.bidder_chains {
            w.register(c, Rc::new(Bidder))?;
        }
        w.run_until_idle()?;
        for c in &setup.bidder_chains {
            w.attach_policy(c, BIDDER, &bidder_policy(&setup.ticket_chain, c))?;
        }
        w.run_until_idle()?;
        Ok(Self { setup })
    }

    pub fn create_ticket(&self, w: &mut World, owner: &str, tid: &str) -> Result<(), AuctionError> {
        check(w.call(&self.setup.ticket_chain, &Caller::user(owner), AUCTIONEER, "create_ticket", vec![Value::from(tid)])?)
    }

    pub fn transfer(&self, w: &mut World, owner: &str, tid: &str, to: &str) -> Result<(), AuctionError> {
        let args = vec![Value::from(tid), Value::from(to)];
        check(w.call(&self.setup.ticket_chain, &Caller::user(owner), AUCTIONEER, "transfer", args)?)
    }

    pub fn owner(&self, w: &World, tid: &str) -> Result<Value, AuctionError> {
        Ok(w.chain(&self.setup.ticket_chain)?.store().get(&auctioneer_key(&format!("ticket.{tid}.owner"))))
    }

    pub fn fund(&self, w: &mut World, chain: &str, user: &str, amount: i64) -> Result<(), AuctionError> {
        check(w.call(chain, &Caller::user(user), BIDDER, "fund", vec![Value::Int(amount)])?)
    }

    /// Starts an auction of `tid` and returns its id once the ticket chain has
    /// recorded it. Bidder chains open it when the START event arrives.
    pub fn start_auction(&self, w: &mut World, seller: &str, tid: &str) -> Result<String, AuctionError> {
        let args = vec![Value::from(tid), Value::Int(self.setup.window as i64)];
        check(w.call(&self.setup.ticket_chain, &Caller::user(seller), AUCTIONEER, "start_auction", args)?)?;
        let aid = w.chain(&self.setup.ticket_chain)?.store().get(&auctioneer_key(&format!("ticket.{tid}.auction")));
        aid.as_str().map(str::to_string).ok_or_else(|| AuctionError::Rejected("auction id missing".into()))
    }

    /// Scans `chain`'s blocks for the START of `aid`.
    pub fn start_state(&self, w: &World, chain: &str, aid: &str) -> Result<StartState, AuctionError> {
        for b in w.chain(chain)?.blocks() {
            for (e, r) in b.entries.iter().zip(&b.receipts) {
                let Entry::Inbound(ev) = e else { continue };
                if ev.kind != START || ev.source_chain != self.setup.ticket_chain {
                    continue;
                }
                let vals = decode_values(&ev.payload).unwrap_or_default();
                if vals.first().and_then(Value::as_str) == Some(aid) {
                    return Ok(match &r.status {
                        Status::Ok => StartState::Open,
                        Status::Failed(m) => StartState::Refused(m.clone()),
                    });
                }
            }
        }
        Ok(StartState::Pending)
    }

    /// Runs until every Bidder chain has processed the START of `aid`.
    pub fn await_started(&self, w: &mut World, aid: &str, limit: u64) -> Result<BTreeMap<String, StartState>, AuctionError> {
        let chains = self.setup.bidder_chains.clone();
        w.run_until(limit, |w| chains.iter().all(|c| !matches!(self.start_state(w, c, aid), Ok(StartState::Pending))))?;
        chains.iter().map(|c| Ok((c.clone(), self.start_state(w, c, aid)?))).collect()
    }

    pub fn submit_bid(&self, w: &mut World, chain: &str, user: &str, aid: &str, amount: i64) -> Result<(), AuctionError> {
        let args = vec![Value::from(aid), Value::Int(amount)];
        check(w.call(chain, &Caller::user(user), BIDDER, "submit_bid", args)?)
    }

    pub fn conclude(&self, w: &mut World, seller: &str, aid: &str) -> Result<Conclusion, AuctionError> {
        self.conclude_with(w, seller, aid, |_, _| Ok(()))
    }

    /// Concludes `aid`, retrying aborted attempts up to `max_attempts`.
    /// `hook` runs at each [`Stage`] of every attempt.
    pub fn conclude_with(
        &self,
        w: &mut World,
        seller: &str,
        aid: &str,
        mut hook: impl FnMut(&mut World, &Stage) -> Result<(), SimError>,
    ) -> Result<Conclusion, AuctionError> {
        let store = w.chain(&self.setup.ticket_chain)?.store();
        match store.get(&auctioneer_key(&format!("auction.{aid}.seller"))) {
            Value::Str(s) if s == seller => {}
            Value::Null => return Err(AuctionError::NotOpen(aid.to_string())),
            _ => return Err(AuctionError::NotOwner(format!("{seller} did not start {aid}"))),
        }
        let mut attempts = Vec::new();
        loop {
            let (attempt, outcome) = self.attempt(w, aid, &mut hook)?;
            let failed = attempt.outcome.clone().err();
            attempts.push(attempt);
            match (outcome, failed) {
                (Some(outcome), None) => return Ok(Conclusion { outcome, attempts }),
                (_, Some(last)) if attempts.len() as u32 >= self.setup.max_attempts => {
                    return Err(AuctionError::Aborted { attempts: attempts.len() as u32, last });
                }
                _ => {}
            }
        }
    }

    fn attempt(
        &self,
        w: &mut World,
        aid: &str,
        hook: &mut impl FnMut(&mut World, &Stage) -> Result<(), SimError>,
    ) -> Result<(Attempt, Option<AuctionOutcome>), AuctionError> {
        let s = &self.setup;
        let origin = Caller::contract(&s.ticket_chain, AUCTIONEER);
        let mut t = w.begin_general(&s.ticket_chain, s.mode, &origin);
        let aborted = |t: &crate::sim::GeneralTxn, r: AbortReason| {
            Ok((Attempt { txn_id: t.id.clone(), outcome: Err(r), read_trips: t.request_trips() }, None))
        };
        macro_rules! step {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(TxnError::Aborted(r)) => return aborted(&t, r),
                    Err(TxnError::LockTimeout { .. }) => return aborted(&t, AbortReason::LockTimeout),
                    Err(e) => return Err(e.into()),
                }
            };
        }

        let tk = |k: &str| auctioneer_key(&format!("auction.{aid}.{k}"));
        let head = step!(w.txn_read_many(&mut t, &s.ticket_chain, &[tk("status"), tk("ticket"), tk("seller"), tk("winner")]));
        hook(w, &Stage::TicketRead)?;
        let (Some("open"), Some(tid), Some(seller)) = (head[0].as_str(), head[1].as_str(), head[2].as_str()) else {
            w.txn_abort(&mut t, "auction not open")?;
            return Err(AuctionError::NotOpen(aid.to_string()));
        };
        let (tid, seller) = (tid.to_string(), seller.to_string());

        // Per participating chain: bidders and the balances read for them.
        // Reads include every key the conclusion writes, so that lock mode
        // needs no extra round trips for the writes.
        let mut books: BTreeMap<String, (Vec<String>, BTreeMap<String, i64>)> = BTreeMap::new();
        let mut bids = Vec::new();
        for c in &s.bidder_chains {
            let head = [bidder_key("auction.id"), bidder_key("auction.bidders"), bidder_key("auction.status")];
            let v = step!(w.txn_read_many(&mut t, c, &head));
            hook(w, &Stage::BiddersRead(c.clone()))?;
            if v[0].as_str() != Some(aid) {
                continue;
            }
            let users = parse_bidders(&v[1]);
            let mut balances = BTreeMap::new();
            if !users.is_empty() {
                let mut keys = vec![bidder_key(&format!("balance.{seller}")), bidder_key(&format!("winning_bids.{aid}"))];
                for u in &users {
                    for field in ["bids", "bid_height", "escrow", "balance"] {
                        keys.push(bidder_key(&format!("{field}.{u}")));
                    }
                }
                let vals = step!(w.txn_read_many(&mut t, c, &keys));
                hook(w, &Stage::BidsRead(c.clone()))?;
                balances.insert(seller.clone(), vals[0].as_int().unwrap_or(0));
                for (u, row) in users.iter().zip(vals[2..].chunks(4)) {
                    balances.insert(u.clone(), row[3].as_int().unwrap_or(0));
                    bids.push(Bid {
                        chain: c.clone(),
                        user: u.clone(),
                        amount: row[0].as_int().unwrap_or(0),
                        bid_height: row[1].as_int().unwrap_or(0) as u64,
                    });
                }
            }
            books.insert(c.clone(), (users, balances));
        }

        let winner = select_winner(&bids, &s.rates).cloned();
        let status = if winner.is_some() { "concluded" } else { "cancelled" };
        let mut ticket_writes = vec![
            (tk("status"), Value::from(status)),
            (auctioneer_key(&format!("ticket.{tid}.escrowed")), Value::Bool(false)),
        ];
        if let Some(win) = &winner {
            ticket_writes.push((auctioneer_key(&format!("ticket.{tid}.owner")), Value::from(win.user.as_str())));
            ticket_writes.push((tk("winner"), Value::from(format!("{}/{}/{}", win.chain, win.user, win.amount))));
        }
        step!(w.txn_write_many(&mut t, &s.ticket_chain, ticket_writes));
        for (c, (users, read_balances)) in books {
            let mut writes = vec![(bidder_key("auction.status"), Value::from(status)), (bidder_key("auction.bidders"), Value::Null)];
            let mut balances = read_balances.clone();
            for b in bids.iter().filter(|b| b.chain == c) {
                if winner.as_ref() == Some(b) {
                    *balances.get_mut(&seller).unwrap() += b.amount;
                    writes.push((bidder_key(&format!("winning_bids.{aid}")), Value::Int(b.amount)));
                } else {
                    *balances.get_mut(&b.user).unwrap() += b.amount;
                }
            }
            for u in &users {
                for field in ["bids", "bid_height", "escrow"] {
                    writes.push((bidder_key(&format!("{field}.{u}")), Value::Null));
                }
            }
            for (u, bal) in balances {
                if read_balances[&u] != bal {
                    writes.push((bidder_key(&format!("balance.{u}")), Value::Int(bal)));
                }
            }
            step!(w.txn_write_many(&mut t, &c, writes));
        }
        hook(w, &Stage::BeforeCommit)?;
        let outcome = step!(w.txn_commit(&mut t));
        let attempt = |o| Attempt { txn_id: t.id.clone(), outcome: o, read_trips: t.request_trips() };
        Ok(match outcome {
            TxnOutcome::Committed { .. } => {
                (attempt(Ok(())), Some(winner.map_or(AuctionOutcome::Cancelled, AuctionOutcome::Concluded)))
            }
            TxnOutcome::Aborted(r) => (attempt(Err(r)), None),
        })
    }
}
