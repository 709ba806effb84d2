//! Message shapes. One JSON object per line; byte payloads are lowercase
//! hex strings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use trustkit_core::evidence::{Claim, ElementId, MechanismId};
use trustkit_core::verdict::PredicateAtom;

pub const PROTOCOL_VERSION: &str = "trust-wire 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// Ask for a claim over an element. The nonce is hex; the verifier mints
    /// one when a client omits it, the agent requires it.
    AttestRequest {
        element: ElementId,
        mechanism: MechanismId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<String>,
    },
    AttestResponse {
        /// Present when a verifier stored the claim for staged evaluation.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        claim_ref: Option<String>,
        claim: Claim,
    },
    VerifyRequest {
        claim_ref: String,
        verify_policy: String,
    },
    VerifyResponse {
        outcome_ref: String,
        class: String,
        is_error: bool,
        atom_values: BTreeMap<PredicateAtom, bool>,
    },
    DecideRequest {
        outcome_ref: String,
        decide_policy: String,
    },
    DecideResponse {
        level: String,
        report_ref: String,
    },
    /// Composite: run the full pipeline over the agent.
    EvalRequest {
        element: ElementId,
        /// mechanism:verify:decide
        point: String,
    },
    EvalResponse {
        level: String,
        class: String,
        atom_values: BTreeMap<PredicateAtom, bool>,
        claim_ref: String,
        outcome_ref: String,
        report_ref: String,
    },
    Error {
        code: String,
        message: String,
    },
}

/// Every message travels in an envelope carrying the protocol version and
/// the correlation id echoed by responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub proto: String,
    pub cid: String,
    #[serde(flatten)]
    pub body: WireMessage,
}

impl Envelope {
    pub fn new(cid: impl Into<String>, body: WireMessage) -> Self {
        Envelope {
            proto: PROTOCOL_VERSION.to_string(),
            cid: cid.into(),
            body,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("wire messages serialize");
        line.push('\n');
        line
    }
}

/// Best-effort cid extraction from a line that failed to parse, so the error
/// response still correlates.
pub(crate) fn salvage_cid(line: &str) -> String {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("cid").and_then(|c| c.as_str()).map(str::to_string))
        .unwrap_or_else(|| "?".to_string())
}
