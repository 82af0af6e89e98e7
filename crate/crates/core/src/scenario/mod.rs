//! Declarative scenarios: a TOML file naming chains, brokers, contracts,
//! policies and a timed script, run deterministically from one seed.

mod audit;
mod log;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit_run, AuditReport, PropertyResult};
pub use log::{LogError, RunLog};
pub use run::{run_scenario, RunOutput};

use crate::auction::{AuctionSetup, Rate};
use crate::chain::Behavior;
use crate::crypto::{NodeId, SchemeKind};
use crate::sim::{Mode, WorldConfig};
use crate::value::Value;
use crate::xbus::FaultProfile;
use crate::xtxn::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    #[serde(default)]
    pub timing: Timing,
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub brokers: Vec<BrokerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auction: Option<AuctionSpec>,
    #[serde(default)]
    pub script: Vec<Step>,
}

fn default_max_ticks() -> u64 {
    20_000
}

fn default_scheme() -> SchemeKind {
    SchemeKind::Ed25519
}

/// Tick-denominated timeouts and retry parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub lock_timeout: u64,
    pub gateway_timeout: u64,
    pub retransmit_interval: u64,
    pub republish_count: u32,
    pub republish_interval: u64,
    pub retry_limit: u32,
    pub backoff_base: u64,
    pub backoff_cap: u64,
}

impl Default for Timing {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            lock_timeout: w.lock_timeout,
            gateway_timeout: w.gateway_timeout,
            retransmit_interval: w.retransmit_interval,
            republish_count: w.republish_count,
            republish_interval: w.republish_interval,
            retry_limit: w.retry.retry_limit,
            backoff_base: w.retry.backoff_base,
            backoff_cap: w.retry.backoff_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: String,
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub byzantine: Vec<ByzantineSpec>,
    /// Generic contracts to install: `kv` or `kv:<id>`.
    #[serde(default)]
    pub contracts: Vec<String>,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineSpec {
    pub node: NodeId,
    pub behavior: Behavior,
}

/// A policy given inline (`source`) or as a path relative to the scenario
/// file (`file`). Loading inlines files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub contract: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerSpec {
    pub id: String,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub duplicate_rate: f64,
    #[serde(default)]
    pub replay_rate: f64,
    #[serde(default)]
    pub forge: bool,
}

impl BrokerSpec {
    pub fn profile(&self) -> FaultProfile {
        FaultProfile {
            drop_rate: self.drop_rate,
            duplicate_rate: self.duplicate_rate,
            replay_rate: self.replay_rate,
            forge: self.forge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuctionSpec {
    pub ticket_chain: String,
    pub bidder_chains: Vec<String>,
    /// Chain to rate as `"num/den"`.
    pub rates: BTreeMap<String, String>,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

fn default_window() -> u64 {
    40
}

fn default_attempts() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub tick: u64,
    #[serde(flatten)]
    pub action: Action,
}

/// Script actions. Auction actions without an explicit `auction` refer to
/// the most recently started one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SubmitTxn { chain: String, caller: String, contract: String, method: String, #[serde(default)] args: Vec<toml::Value> },
    Minitxn {
        coordinator: String,
        caller: String,
        #[serde(default)]
        compares: Vec<(String, String, toml::Value)>,
        #[serde(default)]
        reads: Vec<(String, String)>,
        #[serde(default)]
        writes: Vec<(String, String, toml::Value)>,
    },
    CreateTicket { owner: String, ticket: String },
    Fund { chain: String, user: String, amount: i64 },
    StartAuction { seller: String, ticket: String },
    SubmitBid { chain: String, user: String, amount: i64, #[serde(default)] auction: Option<String> },
    Conclude { seller: String, #[serde(default)] auction: Option<String> },
    CrashGateway { chain: String },
    SetByzantine { chain: String, node: NodeId, behavior: Behavior },
}

/// Converts a scalar TOML value to a contract value.
pub fn to_value(v: &toml::Value) -> Result<Value, ConfigError> {
    Ok(match v {
        toml::Value::Integer(i) => Value::Int(*i),
        toml::Value::String(s) => Value::Str(s.clone()),
        toml::Value::Boolean(b) => Value::Bool(*b),
        other => return invalid(format!("unsupported argument {other}")),
    })
}

fn ident_ok(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file, inlining policy files relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut cfg.chains {
            for p in &mut c.policies {
                if let Some(file) = p.file.take() {
                    if p.source.is_some() {
                        return invalid(format!("policy for {} has both source and file", p.contract));
                    }
                    p.source = Some(std::fs::read_to_string(base.join(file))?);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn world_config(&self) -> WorldConfig {
        let t = &self.timing;
        WorldConfig {
            seed: self.seed,
            scheme: self.scheme,
            gateway_timeout: t.gateway_timeout,
            retransmit_interval: t.retransmit_interval,
            republish_count: t.republish_count,
            republish_interval: t.republish_interval,
            retry: RetryPolicy { retry_limit: t.retry_limit, backoff_base: t.backoff_base, backoff_cap: t.backoff_cap },
            lock_timeout: t.lock_timeout,
            max_ticks: self.max_ticks,
        }
    }

    pub fn auction_setup(&self) -> Result<Option<AuctionSetup>, ConfigError> {
        let Some(a) = &self.auction else { return Ok(None) };
        let mut rates = BTreeMap::new();
        for (c, r) in &a.rates {
            let rate: Rate = r.parse().map_err(|_| ConfigError::Invalid(format!("rate {r:?} for {c}")))?;
            rates.insert(c.clone(), rate);
        }
        let setup = AuctionSetup {
            ticket_chain: a.ticket_chain.clone(),
            bidder_chains: a.bidder_chains.clone(),
            rates,
            window: a.window,
            mode: self.mode,
            max_attempts: a.max_attempts,
        };
        setup.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Some(setup))
    }

    /// Sets every broker's drop rate.
    pub fn with_drop_rate(mut self, rate: f64) -> Self {
        for b in &mut self.brokers {
            b.drop_rate = rate;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut ids = BTreeSet::new();
        for c in &self.chains {
            if !ident_ok(&c.id) || !ids.insert(c.id.as_str()) {
                return invalid(format!("chain id {:?} is invalid or repeated", c.id));
            }
            if c.n < 3 * c.f + 1 {
                return invalid(format!("chain {} needs n >= 3f+1", c.id));
            }
            for b in &c.byzantine {
                if b.node as usize >= c.n {
                    return invalid(format!("chain {} has no node {}", c.id, b.node));
                }
            }
            for k in &c.contracts {
                let id = k.strip_prefix("kv:").unwrap_or(k);
                if !(k == "kv" || k.starts_with("kv:")) || !ident_ok(id) {
                    return invalid(format!("unknown contract kind {k:?}"));
                }
            }
            for p in &c.policies {
                if p.source.is_none() {
                    return invalid(format!("policy for {} on {} has no source", p.contract, c.id));
                }
            }
        }
        let chain = |id: &str| -> Result<(), ConfigError> {
            if ids.contains(id) {
                Ok(())
            } else {
                invalid(format!("unknown chain {id}"))
            }
        };
        if self.brokers.is_empty() {
            return invalid("at least one broker is required");
        }
        let mut broker_ids = BTreeSet::new();
        for b in &self.brokers {
            if !broker_ids.insert(b.id.as_str()) {
                return invalid(format!("broker id {} repeated", b.id));
            }
            b.profile().validate().map_err(ConfigError::Invalid)?;
        }
        if let Some(a) = &self.auction {
            chain(&a.ticket_chain)?;
            for c in &a.bidder_chains {
                chain(c)?;
            }
            self.auction_setup()?;
        }
        let mut last = 0;
        for s in &self.script {
            if s.tick < last {
                return invalid(format!("script tick {} after {last}", s.tick));
            }
            last = s.tick;
            match &s.action {
                Action::SubmitTxn { chain: c, args, .. } => {
                    chain(c)?;
                    for a in args {
                        to_value(a)?;
                    }
                }
                Action::Minitxn { coordinator, compares, reads, writes, .. } => {
                    chain(coordinator)?;
                    for (c, _, v) in compares.iter().chain(writes) {
                        chain(c)?;
                        to_value(v)?;
                    }
                    for (c, _) in reads {
                        chain(c)?;
                    }
                }
                Action::Fund { chain: c, .. } | Action::SubmitBid { chain: c, .. } | Action::CrashGateway { chain: c } => chain(c)?,
                Action::SetByzantine { chain: c, node, .. } => {
                    chain(c)?;
                    if *node as usize >= self.chains.iter().find(|x| &x.id == c).unwrap().n {
                        return invalid(format!("chain {c} has no node {node}"));
                    }
                }
                Action::CreateTicket { .. } | Action::StartAuction { .. } | Action::Conclude { .. } => {
                    if self.auction.is_none() {
                        return invalid("auction action without an [auction] section");
                    }
                }
            }
        }
        Ok(())
    }
}
