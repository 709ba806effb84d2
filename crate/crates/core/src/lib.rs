//! Trust-decision engine for simulated remote attestation.
//!
//! The engine models attestation as a three-stage pipeline over a world of
//! elements: `attest` gathers claims (measurement, signature, identifier),
//! `verify` checks claims against a policy and routes them into result
//! classes, and `decide` folds result classes into levels of a finite trust
//! lattice. Around that core sit capability restrictions (which mechanisms
//! and policies sensibly apply to an element), trust-potential computation,
//! lifecycle simulation with restart/reset semantics, and composition of
//! elements into systems with meet-based or mediated aggregate trust.
//!
//! All cryptography is symbolic: signatures are key references checked
//! against a registry, digests are SHA-256 of canonical encodings. This keeps
//! every evaluation deterministic and inspectable, which is the point — the
//! engine is a reasoning and simulation tool, not a TPM stack.

pub mod capability;
pub mod composition;
pub mod decision;
pub mod evidence;
pub mod lattice;
pub mod lifecycle;
pub mod pipeline;
pub mod report;
mod shape;
pub mod verdict;

pub mod fixtures;

pub use capability::{Environment, ExpressibilityReport, TrustableClass};
pub use composition::{CompositionView, MediationRule};
pub use decision::{DecideGuard, DecidePolicy, DecideRule};
pub use evidence::{
    Claim, ClaimId, Context, Element, ElementId, Measurement, Mechanism, MechanismId, Signature,
    World,
};
pub use lattice::{DecisionLattice, LatticeDiagnostic, LatticeError, TrustLevel};
pub use lifecycle::{
    LifecycleState, ScenarioScript, ScenarioStep, SigmaClass, SigmaOp, Trace,
};
pub use pipeline::{ForensicReport, GapReport, PipelinePoint};
pub use verdict::{PredicateAtom, ResultClass, VerdictOutcome, VerifyPolicy};
