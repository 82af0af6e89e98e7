//! Cross-chain transactions: verified reads, mini-transactions and general
//! transactions committed through two-phase commit on a coordinator chain.

mod contract;
mod msg;
mod read;

pub use contract::{decode_plan, encode_plan, RetryPolicy, XtxnContract, XTXN};
pub use msg::{
    decode_keys, decode_kvs, encode_id, encode_keys, encode_kvs, payload_txn_id, AbortReason, DecideBody, PrepareBody, ReadReqBody, ReadRespBody, ReadStatus, VoteBody,
};
pub use read::{
    aggregate_responses, collect_responses, proven_read, response_digest, verified_read, verify_proven, verify_response,
    ProvenRead, Query, ReadError, ReadRequest, ReadResponse,
};
