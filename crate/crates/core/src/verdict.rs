//! Verification: predicate atoms, verify policies as case tables into the
//! result coproduct, and the static policy checker.
//!
//! A policy routes claims into named result classes, exactly one of which is
//! the error class; the default target must be that error class, which is
//! what makes every policy total. The checker proves the case conditions
//! mutually exclusive and exhaustive by enumerating every valuation of the
//! atoms the policy mentions, pruned to valuations a real claim can produce
//! (a fully null claim cannot carry a valid signature or an expected
//! measurement), and additionally asserts that null claims always land in
//! the error class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{chi_null, ground, Claim, Context, ElementId, Signature};

/// Derived metadata key recording element novelty; always "true" or "false".
pub const NOVELTY_KEY: &str = "new";

/// One verification predicate. The three chi atoms are the classic checks:
/// signature validity, measurement expectation, claim freshness. `ChiNull`
/// detects the fully null claim; `CtxGuard` compares a context metadata
/// entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PredicateAtom {
    ChiS,
    ChiM,
    ChiI,
    ChiNull,
    CtxGuard { key: String, expected: String },
}

impl fmt::Display for PredicateAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateAtom::ChiS => f.write_str("chi_s"),
            PredicateAtom::ChiM => f.write_str("chi_m"),
            PredicateAtom::ChiI => f.write_str("chi_i"),
            PredicateAtom::ChiNull => f.write_str("chi_null"),
            PredicateAtom::CtxGuard { key, expected } => write!(f, "ctx:{key}={expected}"),
        }
    }
}

impl FromStr for PredicateAtom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chi_s" => Ok(PredicateAtom::ChiS),
            "chi_m" => Ok(PredicateAtom::ChiM),
            "chi_i" => Ok(PredicateAtom::ChiI),
            "chi_null" => Ok(PredicateAtom::ChiNull),
            other => {
                let guard = other
                    .strip_prefix("ctx:")
                    .and_then(|rest| rest.split_once('='));
                match guard {
                    Some((key, expected)) => Ok(PredicateAtom::CtxGuard {
                        key: key.to_string(),
                        expected: expected.to_string(),
                    }),
                    None => Err(format!("unknown atom `{other}`")),
                }
            }
        }
    }
}

impl Serialize for PredicateAtom {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PredicateAtom {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Boolean combination of atoms; the whole expression language of a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoolExpr {
    Atom(PredicateAtom),
    Not(Box<BoolExpr>),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
}

impl BoolExpr {
    pub fn atom(a: PredicateAtom) -> Self {
        BoolExpr::Atom(a)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: BoolExpr) -> Self {
        BoolExpr::Not(Box::new(e))
    }

    pub fn and(es: Vec<BoolExpr>) -> Self {
        BoolExpr::And(es)
    }

    pub fn or(es: Vec<BoolExpr>) -> Self {
        BoolExpr::Or(es)
    }

    pub fn eval(&self, valuation: &BTreeMap<PredicateAtom, bool>) -> bool {
        match self {
            BoolExpr::Atom(a) => *valuation.get(a).unwrap_or(&false),
            BoolExpr::Not(e) => !e.eval(valuation),
            BoolExpr::And(es) => es.iter().all(|e| e.eval(valuation)),
            BoolExpr::Or(es) => es.iter().any(|e| e.eval(valuation)),
        }
    }

    pub fn atoms(&self, into: &mut BTreeSet<PredicateAtom>) {
        match self {
            BoolExpr::Atom(a) => {
                into.insert(a.clone());
            }
            BoolExpr::Not(e) => e.atoms(into),
            BoolExpr::And(es) | BoolExpr::Or(es) => {
                for e in es {
                    e.atoms(into);
                }
            }
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = match self {
            BoolExpr::Atom(_) | BoolExpr::Not(_) => 3,
            BoolExpr::And(_) => 2,
            BoolExpr::Or(_) => 1,
        };
        let parens = prec < parent;
        if parens {
            f.write_str("(")?;
        }
        match self {
            BoolExpr::Atom(a) => write!(f, "{a}")?,
            BoolExpr::Not(e) => {
                f.write_str("!")?;
                e.fmt_prec(f, 3)?;
            }
            BoolExpr::And(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    e.fmt_prec(f, 2)?;
                }
            }
            BoolExpr::Or(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    e.fmt_prec(f, 1)?;
                }
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// One arm of the result coproduct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultClass {
    pub label: String,
    pub is_error: bool,
}

impl ResultClass {
    pub fn success(label: impl Into<String>) -> Self {
        ResultClass {
            label: label.into(),
            is_error: false,
        }
    }

    pub fn error(label: impl Into<String>) -> Self {
        ResultClass {
            label: label.into(),
            is_error: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyCase {
    pub condition: BoolExpr,
    pub target: String,
}

/// A point of the verification space: a case table over predicate atoms
/// mapping into the result coproduct.
#[derive(Debug)]
pub struct VerifyPolicy {
    pub name: String,
    pub classes: Vec<ResultClass>,
    pub cases: Vec<VerifyCase>,
    /// Label of the class claims fall into when no case fires; must be the
    /// error class, which is what makes verification total.
    pub default: String,
    checked: AtomicBool,
}

impl Clone for VerifyPolicy {
    fn clone(&self) -> Self {
        VerifyPolicy {
            name: self.name.clone(),
            classes: self.classes.clone(),
            cases: self.cases.clone(),
            default: self.default.clone(),
            checked: AtomicBool::new(self.checked.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for VerifyPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.classes == other.classes
            && self.cases == other.cases
            && self.default == other.default
    }
}

impl Eq for VerifyPolicy {}

impl VerifyPolicy {
    pub fn new(
        name: impl Into<String>,
        classes: Vec<ResultClass>,
        cases: Vec<VerifyCase>,
        default: impl Into<String>,
    ) -> Self {
        VerifyPolicy {
            name: name.into(),
            classes,
            cases,
            default: default.into(),
            checked: AtomicBool::new(false),
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked.load(Ordering::Relaxed)
    }

    pub fn class(&self, label: &str) -> Option<&ResultClass> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn error_class(&self) -> Option<&ResultClass> {
        self.classes.iter().find(|c| c.is_error)
    }

    /// Every atom mentioned by any case condition.
    pub fn atoms(&self) -> BTreeSet<PredicateAtom> {
        let mut atoms = BTreeSet::new();
        for case in &self.cases {
            case.condition.atoms(&mut atoms);
        }
        atoms
    }

    /// Index of the first case matching the valuation, and the target label
    /// (the default when none fires).
    pub fn classify_valuation(
        &self,
        valuation: &BTreeMap<PredicateAtom, bool>,
    ) -> (Option<usize>, &str) {
        for (i, case) in self.cases.iter().enumerate() {
            if case.condition.eval(valuation) {
                return (Some(i), &case.target);
            }
        }
        (None, &self.default)
    }

    /// All valuations of the mentioned atoms that a real claim can produce.
    /// A fully null claim cannot carry a valid signature or an expected
    /// measurement, so valuations with `chi_null` and either of those are
    /// pruned.
    pub fn admissible_valuations(&self) -> Vec<BTreeMap<PredicateAtom, bool>> {
        let atoms: Vec<PredicateAtom> = self.atoms().into_iter().collect();
        let n = atoms.len();
        let mut out = Vec::with_capacity(1 << n);
        for bits in 0u64..(1 << n) {
            let valuation: BTreeMap<PredicateAtom, bool> = atoms
                .iter()
                .enumerate()
                .map(|(i, a)| (a.clone(), bits & (1 << i) != 0))
                .collect();
            if valuation_admissible(&valuation) {
                out.push(valuation);
            }
        }
        out
    }

    /// Classes reachable by the fully null claim across admissible
    /// valuations (used by the decide checker's null law).
    pub fn null_claim_classes(&self) -> BTreeSet<String> {
        self.admissible_valuations()
            .into_iter()
            .filter(valuation_is_null_claim)
            .map(|v| self.classify_valuation(&v).1.to_string())
            .collect()
    }
}

fn valuation_admissible(valuation: &BTreeMap<PredicateAtom, bool>) -> bool {
    if valuation.get(&PredicateAtom::ChiNull) == Some(&true) {
        if valuation.get(&PredicateAtom::ChiS) == Some(&true) {
            return false;
        }
        if valuation.get(&PredicateAtom::ChiM) == Some(&true) {
            return false;
        }
    }
    true
}

/// Whether this valuation is consistent with the fully null claim: no valid
/// signature, no expected measurement, and `chi_null` true where mentioned.
fn valuation_is_null_claim(valuation: &BTreeMap<PredicateAtom, bool>) -> bool {
    valuation.get(&PredicateAtom::ChiS) != Some(&true)
        && valuation.get(&PredicateAtom::ChiM) != Some(&true)
        && valuation.get(&PredicateAtom::ChiNull) != Some(&false)
}

fn render_valuation(valuation: &BTreeMap<PredicateAtom, bool>) -> String {
    valuation
        .iter()
        .map(|(a, v)| format!("{a}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// A defect found by the verify or decide policy checker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyDiagnostic {
    DuplicateClass { label: String },
    NoErrorClass,
    MultipleErrorClasses,
    UnknownClass { case: usize, label: String },
    DefaultNotError { label: String },
    /// Two case conditions both fire on an admissible valuation.
    CaseOverlap {
        valuation: String,
        first: usize,
        second: usize,
    },
    /// A result class / guard combination no rule or default covers.
    Gap { class: String, guard: String },
    /// A null claim reaches a non-error class.
    NullClaimNotError { valuation: String, class: String },
    /// Two decide rules match the same class and guard valuation.
    RuleOverlap {
        class: String,
        guard: String,
        first: usize,
        second: usize,
    },
    /// The error class maps to something other than bottom.
    ErrNotBottom { class: String, level: String },
    /// A class reachable by null claims maps to something other than bottom.
    NullNotBottom { class: String, level: String },
    /// No rule targets top; the decision space cannot classify anything as
    /// fully trusted (heuristic, warning only).
    NoTopRule,
    /// A rule targets a level from a different lattice.
    ForeignLevel { rule: usize, level: String },
}

impl PolicyDiagnostic {
    pub fn severity(&self) -> Severity {
        match self {
            PolicyDiagnostic::NoTopRule => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

/// Prove the policy's cases mutually exclusive and, together with the
/// default, exhaustive, by enumerating the full admissible valuation space.
/// Also enforces class well-formedness and the null-claim law. An empty
/// result marks the policy checked; `verify` refuses unchecked policies.
pub fn check_verify_policy(policy: &VerifyPolicy) -> Vec<PolicyDiagnostic> {
    let mut diags = Vec::new();
    let mut seen = BTreeSet::new();
    for class in &policy.classes {
        if !seen.insert(class.label.clone()) {
            diags.push(PolicyDiagnostic::DuplicateClass {
                label: class.label.clone(),
            });
        }
    }
    match policy.classes.iter().filter(|c| c.is_error).count() {
        0 => diags.push(PolicyDiagnostic::NoErrorClass),
        1 => {}
        _ => diags.push(PolicyDiagnostic::MultipleErrorClasses),
    }
    for (i, case) in policy.cases.iter().enumerate() {
        if policy.class(&case.target).is_none() {
            diags.push(PolicyDiagnostic::UnknownClass {
                case: i,
                label: case.target.clone(),
            });
        }
    }
    match policy.class(&policy.default) {
        Some(c) if c.is_error => {}
        _ => diags.push(PolicyDiagnostic::DefaultNotError {
            label: policy.default.clone(),
        }),
    }

    for valuation in policy.admissible_valuations() {
        let firing: Vec<usize> = policy
            .cases
            .iter()
            .enumerate()
            .filter(|(_, case)| case.condition.eval(&valuation))
            .map(|(i, _)| i)
            .collect();
        if firing.len() > 1 {
            diags.push(PolicyDiagnostic::CaseOverlap {
                valuation: render_valuation(&valuation),
                first: firing[0],
                second: firing[1],
            });
        }
        if valuation_is_null_claim(&valuation) {
            let (_, label) = policy.classify_valuation(&valuation);
            let is_error = policy.class(label).map(|c| c.is_error).unwrap_or(false);
            if !is_error {
                diags.push(PolicyDiagnostic::NullClaimNotError {
                    valuation: render_valuation(&valuation),
                    class: label.to_string(),
                });
            }
        }
    }

    policy.checked.store(diags.is_empty(), Ordering::Relaxed);
    diags
}

/// Frozen copy of the context fields relevant to one verification, taken
/// before any atom evaluation. Re-evaluating atoms against the snapshot
/// reproduces the recorded values, including freshness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtxSnapshot {
    pub element: ElementId,
    pub expected: Option<BTreeMap<String, String>>,
    pub key_registry: BTreeMap<String, ElementId>,
    pub known: bool,
    /// Context metadata plus the derived novelty entry.
    pub metadata: BTreeMap<String, String>,
    /// Whether the claim's nonce was registered when verification began.
    pub nonce_registered: bool,
    pub clock: u64,
}

impl CtxSnapshot {
    pub fn capture(claim: &Claim, ctx: &Context) -> Self {
        let element = ground(claim).clone();
        let known = ctx.is_known(&element);
        let mut metadata = ctx.metadata.clone();
        metadata.insert(
            NOVELTY_KEY.to_string(),
            if known { "false" } else { "true" }.to_string(),
        );
        CtxSnapshot {
            expected: ctx
                .expectations
                .get(&element)
                .map(|m| m.iter().map(|(k, v)| (k.clone(), hex::encode(v))).collect()),
            key_registry: ctx.key_registry.clone(),
            known,
            metadata,
            nonce_registered: ctx.nonce_registry.contains(&claim.claim_id.nonce),
            clock: ctx.clock,
            element,
        }
    }
}

/// The outcome of verifying one claim: the selected result class plus the
/// full evidence trail for forensics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub policy: String,
    pub class: ResultClass,
    pub claim: Claim,
    pub ctx_snapshot: CtxSnapshot,
    pub atom_values: BTreeMap<PredicateAtom, bool>,
    /// Index of the case that fired; `None` means the default.
    pub matched_case: Option<usize>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("policy `{0}` has not passed check_verify_policy")]
    PolicyUnchecked(String),
}

/// Evaluate one atom against the live context. `ChiI` consumes the claim's
/// nonce, making freshness stateful by design; all other atoms are pure.
pub fn eval_atom(atom: &PredicateAtom, claim: &Claim, ctx: &mut Context) -> bool {
    match atom {
        PredicateAtom::ChiS => match &claim.signature {
            Signature::NullS => false,
            Signature::Sig {
                key_ref,
                payload_digest,
                ..
            } => {
                ctx.key_registry.get(key_ref) == Some(ground(claim))
                    && *payload_digest == claim.measurement.digest()
            }
        },
        PredicateAtom::ChiM => match &claim.measurement {
            crate::evidence::Measurement::NullM => false,
            crate::evidence::Measurement::Values { registers } => {
                ctx.expectations.get(ground(claim)) == Some(registers)
            }
        },
        PredicateAtom::ChiI => ctx.consume_nonce(&claim.claim_id.nonce),
        PredicateAtom::ChiNull => chi_null(claim),
        PredicateAtom::CtxGuard { key, expected } => {
            if key == NOVELTY_KEY {
                let derived = if ctx.is_known(ground(claim)) {
                    "false"
                } else {
                    "true"
                };
                return derived == expected;
            }
            ctx.metadata.get(key) == Some(expected)
        }
    }
}

/// Re-evaluate an atom against a frozen snapshot; pure, used to check
/// recorded atom values and by gap analysis.
pub fn eval_atom_snapshot(atom: &PredicateAtom, claim: &Claim, snap: &CtxSnapshot) -> bool {
    match atom {
        PredicateAtom::ChiS => match &claim.signature {
            Signature::NullS => false,
            Signature::Sig {
                key_ref,
                payload_digest,
                ..
            } => {
                snap.key_registry.get(key_ref) == Some(ground(claim))
                    && *payload_digest == claim.measurement.digest()
            }
        },
        PredicateAtom::ChiM => match &claim.measurement {
            crate::evidence::Measurement::NullM => false,
            crate::evidence::Measurement::Values { registers } => {
                let as_hex: BTreeMap<String, String> = registers
                    .iter()
                    .map(|(k, v)| (k.clone(), hex::encode(v)))
                    .collect();
                snap.expected.as_ref() == Some(&as_hex)
            }
        },
        PredicateAtom::ChiI => snap.nonce_registered,
        PredicateAtom::ChiNull => chi_null(claim),
        PredicateAtom::CtxGuard { key, expected } => {
            snap.metadata.get(key).map(String::as_str) == Some(expected.as_str())
        }
    }
}

/// Verify a claim against a checked policy. Every atom the policy mentions is
/// evaluated exactly once; the unique matching case (or the default) selects
/// the result class. Total: never fails on any claim, only on an unchecked
/// policy.
pub fn verify(
    policy: &VerifyPolicy,
    claim: Claim,
    ctx: &mut Context,
) -> Result<VerdictOutcome, VerdictError> {
    if !policy.is_checked() {
        return Err(VerdictError::PolicyUnchecked(policy.name.clone()));
    }
    let ctx_snapshot = CtxSnapshot::capture(&claim, ctx);
    let atom_values: BTreeMap<PredicateAtom, bool> = policy
        .atoms()
        .into_iter()
        .map(|atom| {
            let value = eval_atom(&atom, &claim, ctx);
            (atom, value)
        })
        .collect();
    let (matched_case, label) = policy.classify_valuation(&atom_values);
    let class = policy
        .class(label)
        .expect("checked policy targets exist")
        .clone();
    Ok(VerdictOutcome {
        policy: policy.name.clone(),
        class,
        claim,
        ctx_snapshot,
        atom_values,
        matched_case,
    })
}
