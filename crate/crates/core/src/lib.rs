//! Deterministic simulator for interoperating permissioned blockchains.

pub mod auction;
pub mod chain;
pub mod codec;
pub mod crypto;
pub mod merkle;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod state;
pub mod value;
pub mod xbus;
pub mod xtxn;

pub use value::Value;
