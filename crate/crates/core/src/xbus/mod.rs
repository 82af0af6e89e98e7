//! Cross-chain event bus: gateway batching, untrusted brokers, verifying consumers.

mod broker;
mod consumer;
mod event;
mod gateway;

pub use broker::{publish, Broker, FaultProfile, FileBroker, MemoryBroker, PublishStats};
pub use consumer::{check_batch, deliver, Consumer, DeliveryStats, Rejection};
pub use event::{kind, Event, SignedEventBatch, EVENT_VERSION};
pub use gateway::{Gateway, GatewayError};
