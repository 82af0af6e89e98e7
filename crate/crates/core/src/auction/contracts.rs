use crate::chain::{Caller, Contract, ContractError, ExecCtx};
use crate::value::{decode_values, encode_values, Value};
use crate::xbus::{kind, Event};

pub const AUCTIONEER: &str = "auctioneer";
pub const BIDDER: &str = "bidder";
/// Event kind carrying `[auction_id, window]` from the auctioneer to bidders.
pub const START: u8 = kind::KIND_APP_BASE;

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn user_caller(ctx: &ExecCtx<'_>) -> Result<String, ContractError> {
    match ctx.caller() {
        Caller::User(u) if valid_ident(u) => Ok(u.clone()),
        other => Err(ContractError::Rejected(format!("{other} is not a local user"))),
    }
}

/// Ticket registry and auction starter on the ticket chain.
///
/// Keys: `ticket.<tid>.owner`, `ticket.<tid>.escrowed`, `ticket.<tid>.auction`,
/// `auction.<aid>.{ticket,seller,status,winner}`, `next_auction`.
#[derive(Debug, Clone)]
pub struct Auctioneer {
    bidder_chains: Vec<String>,
}

impl Auctioneer {
    pub fn new(bidder_chains: &[String]) -> Self {
        Self { bidder_chains: bidder_chains.to_vec() }
    }

    fn owned(ctx: &ExecCtx<'_>, tid: &str, user: &str) -> Result<(), ContractError> {
        match ctx.get(&format!("ticket.{tid}.owner")) {
            Value::Str(o) if o == user => {}
            Value::Null => return Err(ContractError::BadArgs(format!("no ticket {tid}"))),
            _ => return Err(ContractError::NotOwner(format!("{user} does not own {tid}"))),
        }
        if ctx.get(&format!("ticket.{tid}.escrowed")) == Value::Bool(true) {
            return Err(ContractError::AlreadyEscrowed(tid.to_string()));
        }
        Ok(())
    }
}

impl Contract for Auctioneer {
    fn id(&self) -> &str {
        AUCTIONEER
    }

    fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError> {
        match (method, args) {
            ("create_ticket", [Value::Str(tid)]) => {
                let user = user_caller(ctx)?;
                if !valid_ident(tid) {
                    return Err(ContractError::BadArgs(format!("bad ticket id {tid:?}")));
                }
                if !ctx.get(&format!("ticket.{tid}.owner")).is_null() {
                    return Err(ContractError::Rejected(format!("ticket {tid} exists")));
                }
                ctx.set(&format!("ticket.{tid}.owner"), Value::from(user))?;
                ctx.set(&format!("ticket.{tid}.escrowed"), Value::Bool(false))
            }
            ("transfer", [Value::Str(tid), Value::Str(to)]) => {
                let user = user_caller(ctx)?;
                Self::owned(ctx, tid, &user)?;
                ctx.set(&format!("ticket.{tid}.owner"), Value::from(to.as_str()))
            }
            ("start_auction", [Value::Str(tid), Value::Int(window)]) => {
                let user = user_caller(ctx)?;
                Self::owned(ctx, tid, &user)?;
                if *window < 0 {
                    return Err(ContractError::BadArgs("negative bid window".into()));
                }
                let n = ctx.get_int("next_auction") + 1;
                let aid = format!("a{n}");
                ctx.set("next_auction", Value::Int(n))?;
                ctx.set(&format!("ticket.{tid}.escrowed"), Value::Bool(true))?;
                ctx.set(&format!("ticket.{tid}.auction"), Value::from(aid.as_str()))?;
                ctx.set(&format!("auction.{aid}.ticket"), Value::from(tid.as_str()))?;
                ctx.set(&format!("auction.{aid}.seller"), Value::from(user))?;
                ctx.set(&format!("auction.{aid}.status"), Value::from("open"))?;
                let payload = encode_values(&[Value::from(aid.as_str()), Value::Int(*window)]);
                for chain in &self.bidder_chains {
                    ctx.emit(chain, BIDDER, START, payload.clone());
                }
                Ok(())
            }
            _ => Err(ContractError::BadArgs(format!("{method}/{}", args.len()))),
        }
    }
}

/// Escrowing bid book on a coin chain. One auction is open at a time.
///
/// Keys: `balance.<u>`, `escrow.<u>`, `bids.<u>`, `bid_height.<u>`,
/// `auction.{id,status,close_height,bidders}`, `auctions.<aid>`,
/// `winning_bids.<aid>`, `minted`.
#[derive(Debug, Clone, Default)]
pub struct Bidder;

/// Users listed in `auction.bidders`.
pub fn parse_bidders(v: &Value) -> Vec<String> {
    v.as_str().map(|s| s.split(',').filter(|u| !u.is_empty()).map(str::to_string).collect()).unwrap_or_default()
}

impl Contract for Bidder {
    fn id(&self) -> &str {
        BIDDER
    }

    fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError> {
        match (method, args) {
            ("fund", [Value::Int(amount)]) => {
                let user = user_caller(ctx)?;
                if *amount <= 0 {
                    return Err(ContractError::BadArgs("funding must be positive".into()));
                }
                let bal = ctx.get_int(&format!("balance.{user}"));
                ctx.set(&format!("balance.{user}"), Value::Int(bal + amount))?;
                let minted = ctx.get_int("minted");
                ctx.set("minted", Value::Int(minted + amount))
            }
            ("submit_bid", [Value::Str(aid), Value::Int(amount)]) => {
                let user = user_caller(ctx)?;
                if ctx.get("auction.id").as_str() != Some(aid) {
                    return Err(ContractError::Rejected(format!("auction {aid} is not running here")));
                }
                if *amount < 0 {
                    return Err(ContractError::BadArgs("negative bid".into()));
                }
                ctx.set(&format!("bids.{user}"), Value::Int(*amount))?;
                let bal = ctx.get_int(&format!("balance.{user}"));
                if bal < *amount {
                    return Err(ContractError::InsufficientFunds(format!("{user} has {bal}, bid {amount}")));
                }
                ctx.set(&format!("balance.{user}"), Value::Int(bal - amount))?;
                ctx.set(&format!("escrow.{user}"), Value::Int(*amount))?;
                ctx.set(&format!("bid_height.{user}"), Value::Int(ctx.height() as i64))?;
                let mut bidders = parse_bidders(&ctx.get("auction.bidders"));
                bidders.push(user);
                ctx.set("auction.bidders", Value::from(bidders.join(",")))
            }
            _ => Err(ContractError::BadArgs(format!("{method}/{}", args.len()))),
        }
    }

    fn event_method(&self, event: &Event) -> String {
        if event.kind == START {
            "start_auction".into()
        } else {
            format!("event_{}", event.kind)
        }
    }

    /// Bids open when the START event is processed; the close height is
    /// relative to that block.
    fn on_event(&self, ctx: &mut ExecCtx<'_>, event: &Event) -> Result<(), ContractError> {
        let vals = decode_values(&event.payload).map_err(|e| ContractError::BadArgs(e.to_string()))?;
        let (aid, window) = match (event.kind, vals.as_slice()) {
            (START, [Value::Str(aid), Value::Int(w)]) if valid_ident(aid) && *w >= 0 => (aid.clone(), *w),
            _ => return Err(ContractError::BadArgs("malformed START".into())),
        };
        if ctx.get("auction.status").as_str() == Some("open") {
            return Err(ContractError::Rejected("an auction is already open".into()));
        }
        let h = ctx.height() as i64;
        ctx.set("auction.id", Value::from(aid.as_str()))?;
        ctx.set("auction.status", Value::from("open"))?;
        ctx.set("auction.close_height", Value::Int(h + window))?;
        ctx.set("auction.bidders", Value::from(""))?;
        ctx.set(&format!("auctions.{aid}"), Value::Int(h))
    }
}

/// Policy for the Bidder contract on `local`, admitting the auctioneer on
/// `ticket_chain`. The first two rules are the bid and rate-limit policies;
/// the rest grant the contract's own bookkeeping.
pub fn bidder_policy(ticket_chain: &str, local: &str) -> String {
    let auct = format!("caller.chain == \"{ticket_chain}\" && caller.id == \"{AUCTIONEER}\"");
    let user = format!("caller.chain == \"{local}\"");
    format!(
        r#"# one bid per user, while open, up to the close height
allow write on bids.* when state("auction.status") == "open" && !exists("bids." + caller.id) && block.height <= state("auction.close_height");
# at most a few auction starts per hundred blocks
allow invoke on start_auction when {auct} && count("auctions.", block.height - 100, block.height) <= 3;
allow invoke on fund when {user};
allow invoke on submit_bid when {user};
allow write on balance.* when {user} || {auct};
allow write on escrow.* when {user} || {auct};
allow write on bid_height.* when {user} || {auct};
allow write on minted when {user};
allow write on auction.bidders when state("auction.status") == "open";
allow write on auction.* when {auct};
allow write on auctions.* when {auct};
allow write on winning_bids.* when {auct};
allow write on bids.* when {auct};
allow invoke on xtxn when {auct};
allow read on * when {auct};
allow read on auction.*;
allow read on agg.sum.winning_bids when caller.id == "auditor";
"#
    )
}
