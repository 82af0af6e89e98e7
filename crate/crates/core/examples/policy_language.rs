//! Parses an access policy, prints it back in canonical form and evaluates
//! a few requests against a hand-built history.

use interchain::policy::{evaluate, parse_policy, AccessRequest, Action, EvalContext};
use interchain::state::{HistoryEntry, Version};
use interchain::Value;

const POLICY: &str = r#"
# One bid per user while the auction is open.
allow write on bids.* when state("auction.status") == "open"
    && block.height <= state("auction.close_height")
    && !exists("bids." + caller.id);
# At most three auction starts in the last hundred blocks.
allow invoke on start_auction when count("auctions.", block.height - 100, block.height) <= 3;
allow read on * when caller.chain == "tickets";
"#;

struct Ctx {
    height: u64,
}

impl EvalContext for Ctx {
    fn height(&self) -> u64 {
        self.height
    }

    fn read(&self, key: &str) -> Value {
        match key {
            "auction.status" => Value::from("open"),
            "auction.close_height" => Value::Int(100),
            "bids.bob" => Value::Int(5),
            _ => Value::Null,
        }
    }

    fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry> {
        let starts = [("auctions.a1", 20), ("auctions.a2", 55), ("bids.bob", 40)];
        starts
            .into_iter()
            .filter(|(k, h)| k.starts_with(prefix) && (from..=to).contains(h))
            .map(|(k, h)| HistoryEntry { key: k.into(), value: Value::Int(h as i64), version: Version { height: h, index: 0 } })
            .collect()
    }

    fn current(&self, _prefix: &str) -> Vec<(String, Value)> {
        vec![]
    }
}

fn main() {
    let ast = parse_policy(POLICY).expect("policy parses");
    println!("canonical form:\n{ast}");

    let ctx = Ctx { height: 90 };
    let cases = [
        ("alice", "chainB", Action::Write, "bids.alice"),
        ("bob", "chainB", Action::Write, "bids.bob"),
        ("auctioneer", "tickets", Action::Read, "winning_bids.a1"),
        ("auctioneer", "tickets", Action::Invoke, "start_auction"),
        ("mallory", "chainB", Action::Read, "balance.alice"),
    ];
    for (caller, chain, action, resource) in cases {
        let req = AccessRequest {
            caller_id: caller.into(),
            caller_chain: chain.into(),
            action,
            resource: resource.into(),
            height: ctx.height,
            args: vec![],
        };
        println!("{caller}@{chain} {action:?} {resource}: {:?}", evaluate(&ast, &req, &ctx));
    }
}
