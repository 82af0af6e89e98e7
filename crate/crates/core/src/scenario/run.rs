use std::rc::Rc;

use super::{to_value, Action, ConfigError, RunLog, ScenarioConfig};
use crate::auction::{AuctionError, AuctionHouse, AuctionOutcome};
use crate::chain::{Caller, KvContract, Status};
use crate::sim::{MiniTxn, RunMetrics, SimError, TxnError, TxnOutcome, World};
use crate::value::Value;
use crate::xbus::MemoryBroker;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: RunLog,
    /// Set when the run stopped early, e.g. on `MaxTicksExceeded`. Metrics
    /// and log then describe the partial run.
    pub error: Option<String>,
}

fn setup_error(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    w: World,
    house: Option<AuctionHouse>,
    current: Option<String>,
    actions: Vec<String>,
    auctions: std::collections::BTreeMap<String, String>,
}

/// Action failures are part of the scenario's outcome; only simulator
/// failures stop the run.
fn soft(e: AuctionError) -> Result<String, SimError> {
    match e {
        AuctionError::Sim(e) | AuctionError::Txn(TxnError::Sim(e)) => Err(e),
        other => Ok(format!("error: {other}")),
    }
}

fn caller(s: &str) -> Caller {
    match s.split_once('@') {
        Some((contract, chain)) => Caller::contract(chain, contract),
        None => Caller::user(s),
    }
}

impl Runner<'_> {
    fn exec(&mut self, action: &Action) -> Result<String, SimError> {
        let Runner { w, house, current, auctions, .. } = self;
        let house = || house.as_ref().expect("validated: auction actions need an auction");
        let auction_id = |explicit: &Option<String>| explicit.clone().or_else(|| current.clone());
        Ok(match action {
            Action::SubmitTxn { chain, caller: c, contract, method, args } => {
                let args: Vec<Value> = args.iter().map(|a| to_value(a).expect("validated")).collect();
                match w.call(chain, &caller(c), contract, method, args) {
                    Ok(r) => match r.status {
                        Status::Ok => "ok".into(),
                        Status::Failed(m) => format!("failed: {m}"),
                    },
                    Err(SimError::Chain(e)) => format!("rejected: {e}"),
                    Err(e) => return Err(e),
                }
            }
            Action::Minitxn { coordinator, caller: c, compares, reads, writes } => {
                let v = |x: &toml::Value| to_value(x).expect("validated");
                let mt = MiniTxn {
                    compares: compares.iter().map(|(c, k, x)| (c.clone(), k.clone(), v(x))).collect(),
                    reads: reads.clone(),
                    writes: writes.iter().map(|(c, k, x)| (c.clone(), k.clone(), v(x))).collect(),
                };
                match w.execute_minitxn(coordinator, &caller(c), &mt) {
                    Ok((id, TxnOutcome::Committed { .. })) => format!("{id} committed"),
                    Ok((id, TxnOutcome::Aborted(r))) => format!("{id} aborted: {r}"),
                    Err(TxnError::Sim(e)) => return Err(e),
                    Err(e) => format!("error: {e}"),
                }
            }
            Action::CreateTicket { owner, ticket } => {
                house().create_ticket(w, owner, ticket).map(|()| "ok".to_string()).or_else(soft)?
            }
            Action::Fund { chain, user, amount } => {
                house().fund(w, chain, user, *amount).map(|()| "ok".to_string()).or_else(soft)?
            }
            Action::StartAuction { seller, ticket } => {
                match house().start_auction(w, seller, ticket) {
                    Ok(aid) => {
                        auctions.insert(aid.clone(), "open".into());
                        *current = Some(aid.clone());
                        format!("started {aid}")
                    }
                    Err(e) => soft(e)?,
                }
            }
            Action::SubmitBid { chain, user, amount, auction } => match auction_id(auction) {
                None => "error: no auction started".into(),
                Some(aid) => {
                    house().submit_bid(w, chain, user, &aid, *amount).map(|()| "ok".to_string()).or_else(soft)?
                }
            },
            Action::Conclude { seller, auction } => match auction_id(auction) {
                None => "error: no auction started".into(),
                Some(aid) => {
                    let text = match house().conclude(w, seller, &aid) {
                        Ok(c) => {
                            let n = c.attempts.len();
                            match c.outcome {
                                AuctionOutcome::Concluded(b) => format!("concluded {}/{}/{} attempts={n}", b.chain, b.user, b.amount),
                                AuctionOutcome::Cancelled => format!("cancelled attempts={n}"),
                            }
                        }
                        Err(AuctionError::Aborted { attempts, last }) => format!("aborted attempts={attempts} last={last}"),
                        Err(e) => soft(e)?,
                    };
                    if !text.starts_with("error") {
                        auctions.insert(aid.clone(), text.clone());
                    }
                    text
                }
            },
            Action::CrashGateway { chain } => {
                w.crash_gateway(chain)?;
                "ok".into()
            }
            Action::SetByzantine { chain, node, behavior } => {
                w.set_behavior(chain, *node, *behavior)?;
                "ok".into()
            }
        })
    }

    fn script(&mut self) -> Result<(), SimError> {
        for (i, step) in self.cfg.script.iter().enumerate() {
            while self.w.tick() < step.tick {
                self.w.step()?;
            }
            let at = self.w.tick();
            let result = self.exec(&step.action)?;
            self.actions.push(format!("{i} tick={at} {} -> {result}", describe(&step.action)));
            if self.w.tick() > self.cfg.max_ticks {
                return Err(SimError::MaxTicksExceeded(self.w.tick()));
            }
        }
        self.w.run_until_idle()?;
        if self.w.tick() > self.cfg.max_ticks {
            return Err(SimError::MaxTicksExceeded(self.w.tick()));
        }
        Ok(())
    }
}

fn describe(a: &Action) -> String {
    match a {
        Action::SubmitTxn { chain, caller, contract, method, .. } => format!("submit_txn {caller} {contract}.{method}@{chain}"),
        Action::Minitxn { coordinator, caller, .. } => format!("minitxn {caller}@{coordinator}"),
        Action::CreateTicket { owner, ticket } => format!("create_ticket {ticket} for {owner}"),
        Action::Fund { chain, user, amount } => format!("fund {user}@{chain} {amount}"),
        Action::StartAuction { seller, ticket } => format!("start_auction {ticket} by {seller}"),
        Action::SubmitBid { chain, user, amount, .. } => format!("submit_bid {user}@{chain} {amount}"),
        Action::Conclude { seller, .. } => format!("conclude by {seller}"),
        Action::CrashGateway { chain } => format!("crash_gateway {chain}"),
        Action::SetByzantine { chain, node, behavior } => format!("set_byzantine {chain}/{node} {behavior:?}"),
    }
}

/// Builds the world a scenario describes and runs its script to quiescence.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let mut w = World::new(cfg.world_config());
    for b in &cfg.brokers {
        w.add_broker(Box::new(MemoryBroker::new(&b.id, b.profile())));
    }
    for c in &cfg.chains {
        let byz: Vec<_> = c.byzantine.iter().map(|b| (b.node, b.behavior)).collect();
        w.add_chain(&c.id, c.n, c.f, &byz).map_err(setup_error)?;
        for k in &c.contracts {
            let id = k.strip_prefix("kv:").unwrap_or("kv");
            w.register(&c.id, Rc::new(KvContract::new(id))).map_err(setup_error)?;
        }
    }
    let mut early = w.run_until_idle().err();
    for c in &cfg.chains {
        for p in &c.policies {
            w.attach_policy(&c.id, &p.contract, p.source.as_deref().unwrap_or_default()).map_err(setup_error)?;
        }
    }
    let house = match cfg.auction_setup()? {
        Some(setup) if early.is_none() => match AuctionHouse::install(&mut w, setup) {
            Ok(h) => Some(h),
            Err(AuctionError::Sim(e)) => {
                early = Some(e);
                None
            }
            Err(e) => return Err(setup_error(e)),
        },
        _ => None,
    };
    let mut r = Runner { cfg, w, house, current: None, actions: Vec::new(), auctions: Default::default() };
    let error = match early {
        Some(e) => Some(e.to_string()),
        None => r.script().err().map(|e| e.to_string()),
    };
    let mut metrics = r.w.metrics();
    metrics.auctions = r.auctions;
    let mut blocks: Vec<_> = r.w.chains().map(|c| c.blocks()[0].clone()).collect();
    for (chain, h) in r.w.production() {
        blocks.push(r.w.chain(chain).unwrap().block(*h).unwrap().clone());
    }
    let log = RunLog { config: cfg.to_toml(), actions: r.actions, blocks };
    Ok(RunOutput { metrics, log, error })
}
