//! Symbolic claim shapes.
//!
//! The verification atoms are driven by a small number of independent
//! dimensions of a claim and its context: the measurement state (absent,
//! present-but-unexpected, expected), the signature state (absent, forged,
//! valid), freshness, and context metadata entries. Enumerating these shapes
//! exactly covers every claim the engine can produce, which is what makes
//! the decide checker, trust-potential computation and gap analysis finite
//! and exact under symbolic cryptography.

use std::collections::{BTreeMap, BTreeSet};

use crate::decision::{DecideGuard, DecidePolicy};
use crate::verdict::{PredicateAtom, VerifyPolicy, NOVELTY_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum MState {
    Null,
    Unexpected,
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum SState {
    Null,
    Forged,
    Valid,
}

/// Value of one context key in a shape; `None` is the "anything else"
/// sentinel covering unset keys and unmentioned values.
pub(crate) type CtxAssignment = BTreeMap<String, Option<String>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ClaimShape {
    pub m: MState,
    pub s: SState,
    pub fresh: bool,
    pub ctx: CtxAssignment,
}

impl ClaimShape {
    pub fn atom_value(&self, atom: &PredicateAtom) -> bool {
        match atom {
            PredicateAtom::ChiS => self.s == SState::Valid,
            PredicateAtom::ChiM => self.m == MState::Expected,
            PredicateAtom::ChiI => self.fresh,
            PredicateAtom::ChiNull => self.m == MState::Null && self.s == SState::Null,
            PredicateAtom::CtxGuard { key, expected } => {
                self.ctx.get(key).map(|v| v.as_deref()) == Some(Some(expected.as_str()))
            }
        }
    }

    pub fn valuation(&self, atoms: &BTreeSet<PredicateAtom>) -> BTreeMap<PredicateAtom, bool> {
        atoms
            .iter()
            .map(|a| (a.clone(), self.atom_value(a)))
            .collect()
    }

    pub fn guard_matches(&self, guard: &DecideGuard) -> bool {
        match guard {
            DecideGuard::CtxEquals { key, value } => {
                self.ctx.get(key).map(|v| v.as_deref()) == Some(Some(value.as_str()))
            }
            DecideGuard::MeasurementIsNull => self.m == MState::Null,
            DecideGuard::MeasurementNotNull => self.m != MState::Null,
        }
    }
}

/// Context-key domains mentioned by a verify/decide policy pair. The derived
/// novelty key ranges over exactly true/false; any other key ranges over its
/// mentioned values plus the sentinel.
fn ctx_domains_for(
    verify: &VerifyPolicy,
    decide: Option<&DecidePolicy>,
) -> BTreeMap<String, Vec<Option<String>>> {
    let mut mentioned: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for atom in verify.atoms() {
        if let PredicateAtom::CtxGuard { key, expected } = atom {
            mentioned.entry(key).or_default().insert(expected);
        }
    }
    if let Some(decide) = decide {
        for rule in &decide.rules {
            if let Some(DecideGuard::CtxEquals { key, value }) = &rule.guard {
                mentioned
                    .entry(key.clone())
                    .or_default()
                    .insert(value.clone());
            }
        }
    }
    mentioned
        .into_iter()
        .map(|(key, values)| {
            let domain = if key == NOVELTY_KEY {
                vec![Some("true".to_string()), Some("false".to_string())]
            } else {
                values.into_iter().map(Some).chain([None]).collect()
            };
            (key, domain)
        })
        .collect()
}

/// Every assignment of the context keys the policy pair mentions.
pub(crate) fn ctx_assignments(
    verify: &VerifyPolicy,
    decide: Option<&DecidePolicy>,
) -> Vec<CtxAssignment> {
    let domains = ctx_domains_for(verify, decide);
    let mut assignments: Vec<CtxAssignment> = vec![BTreeMap::new()];
    for (key, domain) in &domains {
        let mut next = Vec::new();
        for assignment in &assignments {
            for value in domain {
                let mut extended = assignment.clone();
                extended.insert(key.clone(), value.clone());
                next.push(extended);
            }
        }
        assignments = next;
    }
    assignments
}

/// Every claim shape relevant to the policy pair, in deterministic order.
pub(crate) fn enumerate_shapes(
    verify: &VerifyPolicy,
    decide: Option<&DecidePolicy>,
) -> Vec<ClaimShape> {
    let assignments = ctx_assignments(verify, decide);
    let mut shapes = Vec::new();
    for m in [MState::Null, MState::Unexpected, MState::Expected] {
        for s in [SState::Null, SState::Forged, SState::Valid] {
            for fresh in [false, true] {
                for ctx in &assignments {
                    shapes.push(ClaimShape {
                        m,
                        s,
                        fresh,
                        ctx: ctx.clone(),
                    });
                }
            }
        }
    }
    shapes
}

/// Human-readable guard-relevant projection of a shape, for diagnostics.
pub(crate) fn describe_guard_cell(shape: &ClaimShape) -> String {
    let mut parts = vec![format!(
        "measurement={}",
        match shape.m {
            MState::Null => "null",
            MState::Unexpected | MState::Expected => "present",
        }
    )];
    for (key, value) in &shape.ctx {
        match value {
            Some(v) => parts.push(format!("{key}={v}")),
            None => parts.push(format!("{key}=<other>")),
        }
    }
    parts.join(" ")
}
