//! Wire harness: a stateless attester agent serving claims over its world
//! slice, and a verifier service owning the context and exposing the three
//! pipeline stages as separate staged requests plus a composite evaluation.
//!
//! Transport is line-delimited JSON over TCP, one message per line, every
//! message carrying the protocol version and a correlation id echoed in its
//! response. No TLS: trust semantics are symbolic and the traffic is meant
//! to be inspectable.

mod agent;
mod client;
mod messages;
mod verifier;

pub use agent::{agent_serve, AgentHandle};
pub use client::WireClient;
pub use messages::{Envelope, WireMessage, PROTOCOL_VERSION};
pub use verifier::{verifier_serve, VerifierHandle};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("message framing: {0}")]
    Frame(String),
    #[error("verifier refused to start: {0}")]
    Policy(String),
    #[error("peer reported {code}: {message}")]
    Remote { code: String, message: String },
}
