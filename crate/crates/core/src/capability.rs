//! The registries of mechanisms, verify and decide policies, restriction
//! maps between them, and what they admit for each element.
//!
//! Restrictions compose: capabilities select mechanisms, mechanisms select
//! verify policies, verify policies select decide policies. The admitted
//! triples of an element and the levels reachable through them give the
//! element's trust potential — the exact upper envelope of how trustable it
//! can ever be in this environment, computed by enumerating symbolic claim
//! shapes rather than concrete bytes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::decision::DecidePolicy;
use crate::evidence::{
    Element, ElementId, EvidenceError, MechanismId, SlotSelector, World, AK_REF_SLOT,
    PRIVATE_SLOT_PREFIX, SERIAL_SLOT,
};
use crate::lattice::{DecisionLattice, LatticeError, TrustLevel};
use crate::pipeline::PipelinePoint;
use crate::shape::{ctx_assignments, ClaimShape, MState, SState};
use crate::verdict::{PolicyDiagnostic, VerifyPolicy};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CapabilityError {
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// The appraisal configuration: one decision lattice, the policy registries,
/// and the three restriction maps. Immutable after load.
#[derive(Debug, Clone)]
pub struct Environment {
    pub lattice: Arc<DecisionLattice>,
    pub verify_policies: BTreeMap<String, VerifyPolicy>,
    pub decide_policies: BTreeMap<String, DecidePolicy>,
    /// Capability patterns to admitted mechanisms; a pattern matches an
    /// element when it is a subset of the element's capabilities. Empty map
    /// means each element admits exactly its own capabilities.
    pub rho_attest_patterns: Vec<(BTreeSet<MechanismId>, BTreeSet<MechanismId>)>,
    /// Mechanism to admitted verify policies; a missing entry admits all.
    pub rho_verify_map: BTreeMap<MechanismId, BTreeSet<String>>,
    /// Verify policy to admitted decide policies; a missing entry admits all.
    pub rho_decide_map: BTreeMap<String, BTreeSet<String>>,
}

impl Environment {
    pub fn new(lattice: Arc<DecisionLattice>) -> Self {
        Environment {
            lattice,
            verify_policies: BTreeMap::new(),
            decide_policies: BTreeMap::new(),
            rho_attest_patterns: Vec::new(),
            rho_verify_map: BTreeMap::new(),
            rho_decide_map: BTreeMap::new(),
        }
    }

    /// Run both policy checkers over every registered policy and pairing.
    pub fn check_policies(&self) -> Vec<(String, PolicyDiagnostic)> {
        let mut out = Vec::new();
        for (name, policy) in &self.verify_policies {
            for diag in crate::verdict::check_verify_policy(policy) {
                out.push((format!("verify:{name}"), diag));
            }
        }
        for vname in self.verify_policies.keys() {
            for dname in self.rho_decide(vname) {
                if let (Some(vp), Some(dp)) = (
                    self.verify_policies.get(vname),
                    self.decide_policies.get(&dname),
                ) {
                    for diag in crate::decision::check_decide_policy(dp, vp) {
                        out.push((format!("decide:{dname} (with verify:{vname})"), diag));
                    }
                }
            }
        }
        out
    }

    /// Mechanisms admitted for an element by the capability patterns.
    pub fn rho_attest(&self, element: &Element) -> BTreeSet<MechanismId> {
        if self.rho_attest_patterns.is_empty() {
            return element.capabilities.clone();
        }
        let mut out = BTreeSet::new();
        for (pattern, mechanisms) in &self.rho_attest_patterns {
            if pattern.is_subset(&element.capabilities) {
                out.extend(mechanisms.iter().cloned());
            }
        }
        out
    }

    /// Verify policies admitted for a mechanism.
    pub fn rho_verify(&self, mechanism: &MechanismId) -> BTreeSet<String> {
        match self.rho_verify_map.get(mechanism) {
            Some(set) => set.clone(),
            None => self.verify_policies.keys().cloned().collect(),
        }
    }

    /// Decide policies admitted for a verify policy.
    pub fn rho_decide(&self, verify_policy: &str) -> BTreeSet<String> {
        match self.rho_decide_map.get(verify_policy) {
            Some(set) => set.clone(),
            None => self.decide_policies.keys().cloned().collect(),
        }
    }

    /// Every pipeline point the restriction maps admit for the element.
    pub fn admitted_triples(
        &self,
        world: &World,
        element: &ElementId,
    ) -> Result<BTreeSet<PipelinePoint>, CapabilityError> {
        let element = world.element(element)?;
        let mut out = BTreeSet::new();
        for mechanism in self.rho_attest(element) {
            for verify_policy in self.rho_verify(&mechanism) {
                for decide_policy in self.rho_decide(&verify_policy) {
                    out.insert(PipelinePoint {
                        mechanism: mechanism.clone(),
                        verify_policy: verify_policy.clone(),
                        decide_policy,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Claim shapes this mechanism can produce on this element, across all
    /// context states. Structural: capability and slot layout decide what is
    /// producible; expectations, keys, freshness and novelty vary with the
    /// context and are enumerated. The null claim is always producible.
    fn producible_shapes(
        &self,
        world: &World,
        element: &Element,
        point: &PipelinePoint,
        verify_policy: &VerifyPolicy,
        decide_policy: &DecidePolicy,
    ) -> Result<Vec<ClaimShape>, CapabilityError> {
        let mechanism = world.mechanism(&point.mechanism)?;
        let capable = element.capabilities.contains(&mechanism.id);
        let has_integrity_slots = element.state.keys().any(|name| {
            name != AK_REF_SLOT && name != SERIAL_SLOT && !name.starts_with(PRIVATE_SLOT_PREFIX)
        });
        let m_options: Vec<MState> = if capable {
            match mechanism.reads {
                SlotSelector::Integrity if has_integrity_slots => {
                    vec![MState::Expected, MState::Unexpected]
                }
                SlotSelector::SerialOnly if element.state.contains_key(SERIAL_SLOT) => {
                    vec![MState::Expected, MState::Unexpected]
                }
                _ => vec![MState::Null],
            }
        } else {
            vec![MState::Null]
        };
        let s_options: Vec<SState> = if capable && mechanism.signs && element.ak_ref().is_some() {
            vec![SState::Valid, SState::Forged]
        } else {
            vec![SState::Null]
        };

        let assignments = ctx_assignments(verify_policy, Some(decide_policy));
        let mut shapes = Vec::new();
        let mut pairs: Vec<(MState, SState)> = Vec::new();
        for &m in &m_options {
            for &s in &s_options {
                pairs.push((m, s));
            }
        }
        // Mechanism failure: the null claim is always producible.
        if !pairs.contains(&(MState::Null, SState::Null)) {
            pairs.push((MState::Null, SState::Null));
        }
        for (m, s) in pairs {
            for fresh in [true, false] {
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
        Ok(shapes)
    }

    /// Levels reachable through one admitted triple.
    fn reachable_levels(
        &self,
        world: &World,
        element: &Element,
        point: &PipelinePoint,
    ) -> Result<BTreeSet<TrustLevel>, CapabilityError> {
        let Some(verify_policy) = self.verify_policies.get(&point.verify_policy) else {
            return Ok(BTreeSet::new());
        };
        let Some(decide_policy) = self.decide_policies.get(&point.decide_policy) else {
            return Ok(BTreeSet::new());
        };
        let atoms = verify_policy.atoms();
        let mut levels = BTreeSet::new();
        for shape in
            self.producible_shapes(world, element, point, verify_policy, decide_policy)?
        {
            let valuation = shape.valuation(&atoms);
            let (_, class) = verify_policy.classify_valuation(&valuation);
            let class = class.to_string();
            let rule = decide_policy.rules.iter().find(|rule| {
                rule.class == class
                    && rule
                        .guard
                        .as_ref()
                        .map(|g| shape.guard_matches(g))
                        .unwrap_or(true)
            });
            let level = match rule {
                Some(rule) => Some(rule.target.clone()),
                None => decide_policy.default_per_class.get(&class).cloned(),
            };
            if let Some(level) = level {
                levels.insert(level);
            }
        }
        Ok(levels)
    }

    /// The trust potential: every decision level some producible claim can
    /// reach through some admitted triple. Elements with no admitted triples
    /// have potential {bottom}.
    pub fn trust_potential(
        &self,
        world: &World,
        element: &ElementId,
    ) -> Result<BTreeSet<TrustLevel>, CapabilityError> {
        let elem = world.element(element)?;
        let triples = self.admitted_triples(world, element)?;
        let mut levels = BTreeSet::new();
        for point in &triples {
            levels.extend(self.reachable_levels(world, elem, point)?);
        }
        if levels.is_empty() {
            levels.insert(self.lattice.bottom());
        }
        Ok(levels)
    }

    /// Classify how trustable an element is with respect to a lower bound.
    pub fn trustable_class(
        &self,
        world: &World,
        element: &ElementId,
        bound: &TrustLevel,
    ) -> Result<TrustableClass, CapabilityError> {
        // Resolve the bound against our lattice up front.
        let _ = self.lattice.leq(bound, &self.lattice.top())?;
        let potential = self.trust_potential(world, element)?;
        let bottom = self.lattice.bottom();
        if potential.len() == 1 && potential.contains(&bottom) {
            return Ok(TrustableClass::Untrustable);
        }
        if potential.contains(&self.lattice.top()) {
            return Ok(TrustableClass::FullyTrustable);
        }
        let meeting: Vec<TrustLevel> = potential
            .iter()
            .filter(|level| self.lattice.leq(bound, level).unwrap_or(false))
            .cloned()
            .collect();
        // Maximal elements of the qualifying set; a unique one is the exact
        // ceiling, otherwise the whole antichain is reported.
        let maximal: Vec<TrustLevel> = meeting
            .iter()
            .filter(|level| {
                !meeting
                    .iter()
                    .any(|other| *other != **level && self.lattice.leq(level, other).unwrap_or(false))
            })
            .cloned()
            .collect();
        Ok(TrustableClass::TrustableWrtBound { maximal })
    }

    /// Size of the mechanism/policy spaces and of the admitted triple space:
    /// the larger, the more fine-grained the environment.
    pub fn expressibility(&self, world: &World) -> Result<ExpressibilityReport, CapabilityError> {
        let mut triples = BTreeSet::new();
        for element in world.elements.keys() {
            triples.extend(self.admitted_triples(world, element)?);
        }
        Ok(ExpressibilityReport {
            mechanisms: world.mechanisms.len(),
            verify_policies: self.verify_policies.len(),
            decide_policies: self.decide_policies.len(),
            admitted_triples: triples.len(),
        })
    }
}

/// Trustability of one element relative to a bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrustableClass {
    /// Potential is exactly {bottom}: nothing this element can ever provide
    /// earns trust.
    Untrustable,
    /// Top is reachable.
    FullyTrustable,
    /// The maximal potential levels at or above the bound; empty when the
    /// bound is unreachable, a singleton when the ceiling is unique.
    TrustableWrtBound { maximal: Vec<TrustLevel> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExpressibilityReport {
    pub mechanisms: usize,
    pub verify_policies: usize,
    pub decide_policies: usize,
    pub admitted_triples: usize,
}
