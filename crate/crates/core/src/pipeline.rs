//! The composed attestation pipeline and its derived views.
//!
//! `run_pipeline` is attest → verify → decide over one element with one
//! context, enforcing the capability restrictions. `trustworthy` stops after
//! verification (the ability to produce verifiable evidence is not the same
//! as being trusted), `judgement` decides an existing claim without
//! re-attestation, and the two compose back to the pipeline. The forensic
//! report records which atoms failed, which case fired and which rule
//! matched; gap analysis answers what evidence is missing to move between
//! trust levels.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{CapabilityError, Environment};
use crate::decision::{decide_with_trace, DecideGuard, DecisionError};
use crate::evidence::{attest, Claim, Context, ElementId, EvidenceError, MechanismId, World};
use crate::lattice::{LatticeError, TrustLevel};
use crate::shape::{describe_guard_cell, enumerate_shapes};
use crate::verdict::{verify, PredicateAtom, VerdictError, VerdictOutcome};

/// One point of the combined mechanism × verify × decide space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PipelinePoint {
    pub mechanism: MechanismId,
    pub verify_policy: String,
    pub decide_policy: String,
}

impl PipelinePoint {
    pub fn new(
        mechanism: impl Into<String>,
        verify_policy: impl Into<String>,
        decide_policy: impl Into<String>,
    ) -> Self {
        PipelinePoint {
            mechanism: MechanismId::new(mechanism),
            verify_policy: verify_policy.into(),
            decide_policy: decide_policy.into(),
        }
    }
}

impl fmt::Display for PipelinePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.mechanism, self.verify_policy, self.decide_policy
        )
    }
}

impl FromStr for PipelinePoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [a, v, d] if !a.is_empty() && !v.is_empty() && !d.is_empty() => {
                Ok(PipelinePoint::new(*a, *v, *d))
            }
            _ => Err(format!(
                "expected mechanism:verify:decide, got `{s}`"
            )),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error("point `{point}` is not admitted for element `{element}`")]
    RestrictionViolation {
        element: ElementId,
        point: PipelinePoint,
    },
    #[error("unknown verify policy `{0}`")]
    UnknownVerifyPolicy(String),
    #[error("unknown decide policy `{0}`")]
    UnknownDecidePolicy(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Fixed narrative vocabulary so reports are machine-diffable.
pub const PROCEDURAL_FAILURE: &str = "procedural-failure";
pub const INTEGRITY_FAILURE: &str = "integrity-failure";
pub const IDENTITY_FAILURE: &str = "identity-failure";
pub const FRESHNESS_FAILURE: &str = "freshness-failure";
pub const CONTEXT_FAILURE: &str = "context-failure";

/// Full trace of one pipeline run over one element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ForensicReport {
    pub element: ElementId,
    pub point: PipelinePoint,
    pub decision: TrustLevel,
    pub outcome: VerdictOutcome,
    /// Atoms recorded false by verification.
    pub failed_atoms: BTreeSet<PredicateAtom>,
    /// Index of the decide rule that matched; `None` means a class default.
    pub matched_rule: Option<usize>,
    pub narrative: Vec<String>,
}

impl ForensicReport {
    fn build(
        element: ElementId,
        point: PipelinePoint,
        outcome: VerdictOutcome,
        decision: TrustLevel,
        matched_rule: Option<usize>,
        top: &TrustLevel,
        bottom: &TrustLevel,
    ) -> Self {
        let failed_atoms: BTreeSet<PredicateAtom> = outcome
            .atom_values
            .iter()
            .filter(|(_, v)| !**v)
            .map(|(a, _)| a.clone())
            .collect();
        let mut narrative = Vec::new();
        if outcome.class.is_error {
            narrative.push(format!(
                "{PROCEDURAL_FAILURE}: verification routed the claim to error class `{}`",
                outcome.class.label
            ));
        }
        for atom in &failed_atoms {
            match atom {
                PredicateAtom::ChiM => narrative.push(format!(
                    "{INTEGRITY_FAILURE}: measurements do not match the expected values"
                )),
                PredicateAtom::ChiS => narrative.push(format!(
                    "{IDENTITY_FAILURE}: signature absent or not bound to the element"
                )),
                PredicateAtom::ChiI => narrative.push(format!(
                    "{FRESHNESS_FAILURE}: claim identifier was stale or replayed"
                )),
                PredicateAtom::CtxGuard { key, expected } => narrative.push(format!(
                    "{CONTEXT_FAILURE}: context `{key}` is not `{expected}`"
                )),
                PredicateAtom::ChiNull => {}
            }
        }
        if !outcome.class.is_error {
            if decision == *top {
                narrative.push("fully-trusted: optimal evidence in this context".to_string());
            } else if decision == *bottom {
                narrative.push(format!(
                    "policy-graded: class `{}` decided {}",
                    outcome.class.label, decision
                ));
            } else {
                narrative.push(format!(
                    "policy-graded: class `{}` decided {} (below full trust)",
                    outcome.class.label, decision
                ));
            }
        }
        ForensicReport {
            element,
            point,
            decision,
            outcome,
            failed_atoms,
            matched_rule,
            narrative,
        }
    }

    pub fn claim(&self) -> &Claim {
        &self.outcome.claim
    }
}

/// Assemble a forensic report for an outcome decided elsewhere (the wire
/// verifier runs the stages separately and still reports uniformly).
pub fn assemble_report(
    env: &Environment,
    element: ElementId,
    point: PipelinePoint,
    outcome: VerdictOutcome,
    decision: TrustLevel,
    matched_rule: Option<usize>,
) -> ForensicReport {
    ForensicReport::build(
        element,
        point,
        outcome,
        decision,
        matched_rule,
        &env.lattice.top(),
        &env.lattice.bottom(),
    )
}

/// Attest, verify and decide one element through a restriction-consistent
/// point. The same context object flows through all three stages; its only
/// mutation is the mint and consumption of the claim nonce.
pub fn run_pipeline(
    world: &World,
    env: &Environment,
    element: &ElementId,
    point: &PipelinePoint,
    ctx: &mut Context,
) -> Result<(TrustLevel, ForensicReport), PipelineError> {
    let admitted = env.admitted_triples(world, element)?;
    if !admitted.contains(point) {
        return Err(PipelineError::RestrictionViolation {
            element: element.clone(),
            point: point.clone(),
        });
    }
    let verify_policy = env
        .verify_policies
        .get(&point.verify_policy)
        .ok_or_else(|| PipelineError::UnknownVerifyPolicy(point.verify_policy.clone()))?;
    let decide_policy = env
        .decide_policies
        .get(&point.decide_policy)
        .ok_or_else(|| PipelineError::UnknownDecidePolicy(point.decide_policy.clone()))?;

    let claim = attest(world, element, &point.mechanism, ctx)?;
    let outcome = verify(verify_policy, claim, ctx)?;
    let (decision, matched_rule) = decide_with_trace(decide_policy, &outcome)?;
    let report = ForensicReport::build(
        element.clone(),
        point.clone(),
        outcome,
        decision.clone(),
        matched_rule,
        &env.lattice.top(),
        &env.lattice.bottom(),
    );
    Ok((decision, report))
}

/// Membership test for the trusted subobject: decision equals top.
pub fn is_trusted(
    world: &World,
    env: &Environment,
    element: &ElementId,
    point: &PipelinePoint,
    ctx: &mut Context,
) -> Result<bool, PipelineError> {
    let (decision, _) = run_pipeline(world, env, element, point, ctx)?;
    Ok(decision == env.lattice.top())
}

/// Attest and verify without deciding: trustworthiness is the ability to
/// provide verifiable evidence, nothing more.
pub fn trustworthy(
    world: &World,
    env: &Environment,
    element: &ElementId,
    mechanism: &MechanismId,
    verify_policy: &str,
    ctx: &mut Context,
) -> Result<VerdictOutcome, PipelineError> {
    let elem = world.element(element)?;
    if !env.rho_attest(elem).contains(mechanism)
        || !env.rho_verify(mechanism).contains(verify_policy)
    {
        return Err(PipelineError::RestrictionViolation {
            element: element.clone(),
            point: PipelinePoint {
                mechanism: mechanism.clone(),
                verify_policy: verify_policy.to_string(),
                decide_policy: "-".to_string(),
            },
        });
    }
    let policy = env
        .verify_policies
        .get(verify_policy)
        .ok_or_else(|| PipelineError::UnknownVerifyPolicy(verify_policy.to_string()))?;
    let claim = attest(world, element, mechanism, ctx)?;
    Ok(verify(policy, claim, ctx)?)
}

/// Decide from an existing claim without re-attestation.
pub fn judgement(
    env: &Environment,
    claim: Claim,
    verify_policy: &str,
    decide_policy: &str,
    ctx: &mut Context,
) -> Result<TrustLevel, PipelineError> {
    let vp = env
        .verify_policies
        .get(verify_policy)
        .ok_or_else(|| PipelineError::UnknownVerifyPolicy(verify_policy.to_string()))?;
    let dp = env
        .decide_policies
        .get(decide_policy)
        .ok_or_else(|| PipelineError::UnknownDecidePolicy(decide_policy.to_string()))?;
    let outcome = verify(vp, claim, ctx)?;
    let (decision, _) = decide_with_trace(dp, &outcome)?;
    Ok(decision)
}

/// Full pipeline run returning only the forensic report.
pub fn forensics(
    world: &World,
    env: &Environment,
    element: &ElementId,
    point: &PipelinePoint,
    ctx: &mut Context,
) -> Result<ForensicReport, PipelineError> {
    run_pipeline(world, env, element, point, ctx).map(|(_, report)| report)
}

/// One item of evidence missing on a gap path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapNeed {
    /// A verification atom must evaluate to the given value.
    Atom { atom: PredicateAtom, required: bool },
    MeasurementPresent,
    MeasurementAbsent,
    /// A context entry must hold the given value.
    Ctx { key: String, value: String },
}

impl fmt::Display for GapNeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GapNeed::Atom { atom, required } => write!(f, "{atom}={required}"),
            GapNeed::MeasurementPresent => f.write_str("measurement-present"),
            GapNeed::MeasurementAbsent => f.write_str("measurement-absent"),
            GapNeed::Ctx { key, value } => write!(f, "ctx:{key}={value}"),
        }
    }
}

/// One way to reach the target level: a decide cell at or above the target
/// plus the evidence missing relative to the current level's cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GapPath {
    pub class: String,
    pub guard: String,
    pub level: TrustLevel,
    pub missing: Vec<GapNeed>,
}

/// The algebraic implication alongside the operational evidence diff; on a
/// defective lattice the former may not exist while the latter always does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImplicationOutcome {
    Level { level: TrustLevel },
    NoImplication { maximal: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GapReport {
    pub current: TrustLevel,
    pub target: TrustLevel,
    pub implication: ImplicationOutcome,
    pub already_satisfied: bool,
    pub paths: Vec<GapPath>,
}

/// Decide cells (class, matched rule, forced evidence) for a policy pair.
struct Cell {
    class: String,
    guard: String,
    level: TrustLevel,
    needs: BTreeSet<GapNeed>,
}

fn decide_cells(env: &Environment, verify_policy: &str, decide_policy: &str) -> Vec<Cell> {
    let vp = &env.verify_policies[verify_policy];
    let dp = &env.decide_policies[decide_policy];
    let atoms = vp.atoms();

    // Group shapes by (class, matched rule index or default).
    let mut groups: std::collections::BTreeMap<(String, Option<usize>), Vec<crate::shape::ClaimShape>> =
        std::collections::BTreeMap::new();
    for shape in enumerate_shapes(vp, Some(dp)) {
        let valuation = shape.valuation(&atoms);
        let (_, class) = vp.classify_valuation(&valuation);
        let class = class.to_string();
        let rule = dp.rules.iter().position(|rule| {
            rule.class == class
                && rule
                    .guard
                    .as_ref()
                    .map(|g| shape.guard_matches(g))
                    .unwrap_or(true)
        });
        groups.entry((class, rule)).or_default().push(shape);
    }

    let mut cells = Vec::new();
    for ((class, rule), shapes) in groups {
        let level = match rule {
            Some(i) => dp.rules[i].target.clone(),
            None => match dp.default_per_class.get(&class) {
                Some(level) => level.clone(),
                None => continue,
            },
        };
        let mut needs: BTreeSet<GapNeed> = BTreeSet::new();
        // Atoms forced across every shape in the cell.
        for atom in &atoms {
            let values: BTreeSet<bool> =
                shapes.iter().map(|s| s.atom_value(atom)).collect();
            if values.len() == 1 {
                needs.insert(GapNeed::Atom {
                    atom: atom.clone(),
                    required: values.into_iter().next().unwrap(),
                });
            }
        }
        if let Some(i) = rule {
            match &dp.rules[i].guard {
                Some(DecideGuard::CtxEquals { key, value }) => {
                    needs.insert(GapNeed::Ctx {
                        key: key.clone(),
                        value: value.clone(),
                    });
                }
                Some(DecideGuard::MeasurementIsNull) => {
                    needs.insert(GapNeed::MeasurementAbsent);
                }
                Some(DecideGuard::MeasurementNotNull) => {
                    needs.insert(GapNeed::MeasurementPresent);
                }
                None => {}
            }
        }
        let guard = shapes
            .first()
            .map(describe_guard_cell)
            .unwrap_or_default();
        cells.push(Cell {
            class,
            guard,
            level,
            needs,
        });
    }
    cells
}

/// Positive evidence a cell provides: atoms forced true plus guard facts.
fn provided(needs: &BTreeSet<GapNeed>) -> BTreeSet<GapNeed> {
    needs
        .iter()
        .filter(|need| {
            !matches!(
                need,
                GapNeed::Atom {
                    required: false,
                    ..
                }
            )
        })
        .cloned()
        .collect()
}

/// What is the minimum evidence required to move from `current` to `target`?
///
/// Two answers are produced. The lattice part is the relative
/// pseudo-complement `current -> target`, with a missing implication
/// surfaced as-is. The evidence part enumerates every decide cell whose
/// level reaches the target and diffs its requirements against what the
/// current level's cells already establish.
pub fn gap_analysis(
    env: &Environment,
    verify_policy: &str,
    decide_policy: &str,
    current: &TrustLevel,
    target: &TrustLevel,
) -> Result<GapReport, PipelineError> {
    if !env.verify_policies.contains_key(verify_policy) {
        return Err(PipelineError::UnknownVerifyPolicy(verify_policy.to_string()));
    }
    if !env.decide_policies.contains_key(decide_policy) {
        return Err(PipelineError::UnknownDecidePolicy(decide_policy.to_string()));
    }
    let lattice = &env.lattice;
    let implication = match lattice.implies(current, target) {
        Ok(level) => ImplicationOutcome::Level { level },
        Err(LatticeError::NoImplication { maximal, .. }) => {
            ImplicationOutcome::NoImplication { maximal }
        }
        Err(other) => return Err(other.into()),
    };
    // The gap is closed once the current level sits at or above the target.
    let already_satisfied = lattice.leq(target, current)?;
    let mut paths = Vec::new();
    if !already_satisfied {
        let cells = decide_cells(env, verify_policy, decide_policy);
        let current_provides: Vec<BTreeSet<GapNeed>> = cells
            .iter()
            .filter(|c| c.level == *current)
            .map(|c| provided(&c.needs))
            .collect();
        for cell in &cells {
            if !lattice.leq(target, &cell.level)? {
                continue;
            }
            let requirements = provided(&cell.needs);
            let missing = current_provides
                .iter()
                .map(|have| {
                    requirements
                        .difference(have)
                        .cloned()
                        .collect::<Vec<GapNeed>>()
                })
                .min_by_key(|diff| diff.len())
                .unwrap_or_else(|| requirements.iter().cloned().collect());
            paths.push(GapPath {
                class: cell.class.clone(),
                guard: cell.guard.clone(),
                level: cell.level.clone(),
                missing,
            });
        }
        paths.sort_by(|a, b| (&a.class, &a.guard).cmp(&(&b.class, &b.guard)));
    }
    Ok(GapReport {
        current: current.clone(),
        target: target.clone(),
        implication,
        already_satisfied,
        paths,
    })
}
