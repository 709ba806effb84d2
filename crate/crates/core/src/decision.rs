//! Decide folds: total mappings from result classes to trust levels.
//!
//! A decide policy is a list of guarded rules plus per-class defaults. The
//! checker proves, against a paired verify policy, that the fold is total
//! over every reachable (class, guard) cell, that the error class maps to
//! bottom unconditionally, and that null claims decide to bottom through the
//! composed pipeline. Rules win over defaults; two rules matching the same
//! cell are a defect, so the fold is order-independent.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{DecisionLattice, TrustLevel};
use crate::shape::{describe_guard_cell, enumerate_shapes};
use crate::verdict::{PolicyDiagnostic, VerdictOutcome, VerifyPolicy};

/// Closed guard vocabulary: context equality and measurement nullness. Keeps
/// the checker decidable by enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecideGuard {
    CtxEquals { key: String, value: String },
    MeasurementIsNull,
    MeasurementNotNull,
}

impl DecideGuard {
    fn matches(&self, outcome: &VerdictOutcome) -> bool {
        match self {
            DecideGuard::CtxEquals { key, value } => {
                outcome.ctx_snapshot.metadata.get(key) == Some(value)
            }
            DecideGuard::MeasurementIsNull => outcome.claim.measurement.is_null(),
            DecideGuard::MeasurementNotNull => !outcome.claim.measurement.is_null(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecideRule {
    pub class: String,
    pub guard: Option<DecideGuard>,
    pub target: TrustLevel,
}

/// A point of the decision space: a fold from result classes (with guards)
/// into the trust lattice.
#[derive(Debug)]
pub struct DecidePolicy {
    pub name: String,
    pub lattice: Arc<DecisionLattice>,
    pub rules: Vec<DecideRule>,
    pub default_per_class: BTreeMap<String, TrustLevel>,
    checked: AtomicBool,
}

impl Clone for DecidePolicy {
    fn clone(&self) -> Self {
        DecidePolicy {
            name: self.name.clone(),
            lattice: Arc::clone(&self.lattice),
            rules: self.rules.clone(),
            default_per_class: self.default_per_class.clone(),
            checked: AtomicBool::new(self.checked.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for DecidePolicy {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.lattice.id() == other.lattice.id()
            && self.rules == other.rules
            && self.default_per_class == other.default_per_class
    }
}

impl DecidePolicy {
    pub fn new(
        name: impl Into<String>,
        lattice: Arc<DecisionLattice>,
        rules: Vec<DecideRule>,
        default_per_class: BTreeMap<String, TrustLevel>,
    ) -> Self {
        DecidePolicy {
            name: name.into(),
            lattice,
            rules,
            default_per_class,
            checked: AtomicBool::new(false),
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked.load(Ordering::Relaxed)
    }

    /// First rule matching the class and guard; `None` falls to the class
    /// default.
    fn match_rule(&self, class: &str, matches: impl Fn(&DecideGuard) -> bool) -> Option<usize> {
        self.rules.iter().position(|rule| {
            rule.class == class && rule.guard.as_ref().map(&matches).unwrap_or(true)
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("policy `{0}` has not passed check_decide_policy")]
    PolicyUnchecked(String),
    #[error("class `{class}` is not covered by policy `{policy}`")]
    UncoveredClass { policy: String, class: String },
}

/// Apply the fold to a verification outcome. Pure; returns the level and the
/// index of the matched rule (`None` when a class default applied).
pub fn decide_with_trace(
    policy: &DecidePolicy,
    outcome: &VerdictOutcome,
) -> Result<(TrustLevel, Option<usize>), DecisionError> {
    if !policy.is_checked() {
        return Err(DecisionError::PolicyUnchecked(policy.name.clone()));
    }
    let class = &outcome.class.label;
    if let Some(i) = policy.match_rule(class, |guard| guard.matches(outcome)) {
        return Ok((policy.rules[i].target.clone(), Some(i)));
    }
    policy
        .default_per_class
        .get(class)
        .map(|level| (level.clone(), None))
        .ok_or_else(|| DecisionError::UncoveredClass {
            policy: policy.name.clone(),
            class: class.clone(),
        })
}

pub fn decide(policy: &DecidePolicy, outcome: &VerdictOutcome) -> Result<TrustLevel, DecisionError> {
    decide_with_trace(policy, outcome).map(|(level, _)| level)
}

/// Prove the fold total and law-abiding against its paired verify policy by
/// enumerating every claim shape: totality over reachable (class, guard)
/// cells, no two rules on one cell, error class to bottom, null claims to
/// bottom, and the top-coverage heuristic (warning).
pub fn check_decide_policy(
    policy: &DecidePolicy,
    verify_policy: &VerifyPolicy,
) -> Vec<PolicyDiagnostic> {
    let mut diags = Vec::new();
    let bottom = policy.lattice.bottom();
    let top = policy.lattice.top();

    for (i, rule) in policy.rules.iter().enumerate() {
        if rule.target.lattice_id() != policy.lattice.id() {
            diags.push(PolicyDiagnostic::ForeignLevel {
                rule: i,
                level: rule.target.name().to_string(),
            });
        }
        if verify_policy.class(&rule.class).is_none() {
            diags.push(PolicyDiagnostic::UnknownClass {
                case: i,
                label: rule.class.clone(),
            });
        }
    }

    // Error class maps to bottom unconditionally.
    if let Some(err_class) = verify_policy.error_class() {
        for rule in &policy.rules {
            if rule.class == err_class.label && rule.target != bottom {
                diags.push(PolicyDiagnostic::ErrNotBottom {
                    class: err_class.label.clone(),
                    level: rule.target.name().to_string(),
                });
            }
        }
        if let Some(level) = policy.default_per_class.get(&err_class.label) {
            if *level != bottom {
                diags.push(PolicyDiagnostic::ErrNotBottom {
                    class: err_class.label.clone(),
                    level: level.name().to_string(),
                });
            }
        }
    }

    let atoms = verify_policy.atoms();
    let mut gaps = std::collections::BTreeSet::new();
    let mut overlaps = std::collections::BTreeSet::new();
    let mut null_violations = std::collections::BTreeSet::new();
    for shape in enumerate_shapes(verify_policy, Some(policy)) {
        let valuation = shape.valuation(&atoms);
        let (_, class) = verify_policy.classify_valuation(&valuation);
        let class = class.to_string();

        let matching: Vec<usize> = policy
            .rules
            .iter()
            .enumerate()
            .filter(|(_, rule)| {
                rule.class == class
                    && rule
                        .guard
                        .as_ref()
                        .map(|g| shape.guard_matches(g))
                        .unwrap_or(true)
            })
            .map(|(i, _)| i)
            .collect();
        let cell = describe_guard_cell(&shape);
        if matching.len() > 1 {
            overlaps.insert((class.clone(), cell.clone(), matching[0], matching[1]));
        }
        let level = match matching.first() {
            Some(&i) => Some(policy.rules[i].target.clone()),
            None => policy.default_per_class.get(&class).cloned(),
        };
        let Some(level) = level else {
            gaps.insert((class.clone(), cell));
            continue;
        };
        let is_null_claim =
            shape.m == crate::shape::MState::Null && shape.s == crate::shape::SState::Null;
        if is_null_claim && level != bottom {
            null_violations.insert((class.clone(), level.name().to_string()));
        }
    }
    diags.extend(
        gaps.into_iter()
            .map(|(class, guard)| PolicyDiagnostic::Gap { class, guard }),
    );
    diags.extend(
        overlaps
            .into_iter()
            .map(|(class, guard, first, second)| PolicyDiagnostic::RuleOverlap {
                class,
                guard,
                first,
                second,
            }),
    );
    diags.extend(
        null_violations
            .into_iter()
            .map(|(class, level)| PolicyDiagnostic::NullNotBottom { class, level }),
    );

    let targets_top = policy.rules.iter().any(|r| r.target == top)
        || policy.default_per_class.values().any(|l| *l == top);
    if !targets_top {
        diags.push(PolicyDiagnostic::NoTopRule);
    }

    let passed = diags.iter().all(|d| d.severity() == crate::verdict::Severity::Warning);
    policy.checked.store(passed, Ordering::Relaxed);
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{attest, Context, Element, ElementId, World, AK_REF_SLOT};
    use crate::lattice::DecisionLattice;
    use crate::verdict::{
        check_verify_policy, verify, BoolExpr, PredicateAtom, ResultClass, VerifyCase,
        VerifyPolicy, NOVELTY_KEY,
    };

    pub(crate) fn six_level() -> Arc<DecisionLattice> {
        Arc::new(
            DecisionLattice::new(
                &["⊥", "D_S", "D_AUTH", "D_M", "D_NEW", "⊤"],
                &[
                    ("⊥", "D_S"),
                    ("D_S", "D_AUTH"),
                    ("D_AUTH", "D_NEW"),
                    ("⊥", "D_M"),
                    ("D_M", "D_NEW"),
                    ("D_NEW", "⊤"),
                ],
                "⊥",
                "⊤",
            )
            .unwrap(),
        )
    }

    fn paper_verify() -> VerifyPolicy {
        use BoolExpr as E;
        use PredicateAtom as A;
        VerifyPolicy::new(
            "paper",
            vec![
                ResultClass::success("1"),
                ResultClass::success("S"),
                ResultClass::success("M"),
                ResultClass::error("ERR"),
            ],
            vec![
                VerifyCase {
                    condition: E::and(vec![E::atom(A::ChiS), E::atom(A::ChiM), E::atom(A::ChiI)]),
                    target: "1".into(),
                },
                VerifyCase {
                    condition: E::and(vec![
                        E::atom(A::ChiS),
                        E::atom(A::ChiI),
                        E::not(E::atom(A::ChiM)),
                    ]),
                    target: "S".into(),
                },
                VerifyCase {
                    condition: E::and(vec![
                        E::not(E::atom(A::ChiS)),
                        E::atom(A::ChiI),
                        E::atom(A::ChiM),
                    ]),
                    target: "M".into(),
                },
            ],
            "ERR",
        )
    }

    /// The published six-case fold: novelty splits full success, measurement
    /// nullness splits the signature-only class.
    pub(crate) fn paper_decide(lattice: &Arc<DecisionLattice>) -> DecidePolicy {
        let level = |name: &str| lattice.level(name).unwrap();
        DecidePolicy::new(
            "paper",
            Arc::clone(lattice),
            vec![
                DecideRule {
                    class: "1".into(),
                    guard: Some(DecideGuard::CtxEquals {
                        key: NOVELTY_KEY.into(),
                        value: "false".into(),
                    }),
                    target: level("⊤"),
                },
                DecideRule {
                    class: "1".into(),
                    guard: Some(DecideGuard::CtxEquals {
                        key: NOVELTY_KEY.into(),
                        value: "true".into(),
                    }),
                    target: level("D_NEW"),
                },
                DecideRule {
                    class: "S".into(),
                    guard: Some(DecideGuard::MeasurementIsNull),
                    target: level("D_AUTH"),
                },
                DecideRule {
                    class: "S".into(),
                    guard: Some(DecideGuard::MeasurementNotNull),
                    target: level("D_S"),
                },
                DecideRule {
                    class: "M".into(),
                    guard: None,
                    target: level("D_M"),
                },
                DecideRule {
                    class: "ERR".into(),
                    guard: None,
                    target: level("⊥"),
                },
            ],
            BTreeMap::new(),
        )
    }

    /// The alternative fold that drops the novelty distinction; equally a
    /// valid point of the decision space.
    fn alt_decide(lattice: &Arc<DecisionLattice>) -> DecidePolicy {
        let level = |name: &str| lattice.level(name).unwrap();
        DecidePolicy::new(
            "alt",
            Arc::clone(lattice),
            vec![
                DecideRule {
                    class: "1".into(),
                    guard: None,
                    target: level("⊤"),
                },
                DecideRule {
                    class: "S".into(),
                    guard: Some(DecideGuard::MeasurementIsNull),
                    target: level("D_AUTH"),
                },
                DecideRule {
                    class: "S".into(),
                    guard: Some(DecideGuard::MeasurementNotNull),
                    target: level("D_S"),
                },
                DecideRule {
                    class: "M".into(),
                    guard: None,
                    target: level("D_M"),
                },
                DecideRule {
                    class: "ERR".into(),
                    guard: None,
                    target: level("⊥"),
                },
            ],
            BTreeMap::new(),
        )
    }

    #[test]
    fn paper_pair_checks_clean() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let decide_policy = paper_decide(&lattice);
        let diags = check_decide_policy(&decide_policy, &verify_policy);
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
        assert!(decide_policy.is_checked());
    }

    #[test]
    fn alternative_fold_is_also_a_valid_point() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let decide_policy = alt_decide(&lattice);
        assert!(check_decide_policy(&decide_policy, &verify_policy).is_empty());
    }

    #[test]
    fn err_mapped_above_bottom_is_reported() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let mut decide_policy = paper_decide(&lattice);
        decide_policy.rules.last_mut().unwrap().target = lattice.level("D_S").unwrap();
        let diags = check_decide_policy(&decide_policy, &verify_policy);
        assert!(diags
            .iter()
            .any(|d| matches!(d, PolicyDiagnostic::ErrNotBottom { .. })));
        assert!(!decide_policy.is_checked());
    }

    #[test]
    fn missing_class_coverage_is_a_gap() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let mut decide_policy = paper_decide(&lattice);
        decide_policy.rules.retain(|r| r.class != "M");
        let diags = check_decide_policy(&decide_policy, &verify_policy);
        assert!(diags
            .iter()
            .any(|d| matches!(d, PolicyDiagnostic::Gap { class, .. } if class == "M")));
    }

    #[test]
    fn two_rules_on_one_cell_are_reported() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let mut decide_policy = paper_decide(&lattice);
        decide_policy.rules.push(DecideRule {
            class: "M".into(),
            guard: Some(DecideGuard::MeasurementNotNull),
            target: lattice.level("D_M").unwrap(),
        });
        let diags = check_decide_policy(&decide_policy, &verify_policy);
        assert!(diags
            .iter()
            .any(|d| matches!(d, PolicyDiagnostic::RuleOverlap { .. })));
    }

    #[test]
    fn no_top_rule_is_a_warning_only() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let mut decide_policy = paper_decide(&lattice);
        // Demote full success to D_NEW everywhere.
        decide_policy.rules[0].target = lattice.level("D_NEW").unwrap();
        let diags = check_decide_policy(&decide_policy, &verify_policy);
        assert_eq!(diags, vec![PolicyDiagnostic::NoTopRule]);
        // Warnings do not block use.
        assert!(decide_policy.is_checked());
    }

    fn healthy_outcome(known: bool) -> VerdictOutcome {
        let mut world = World::new();
        world
            .insert_element(
                Element::new("pc1")
                    .with_capability("quote")
                    .with_slot("firmware_digest", vec![0xaa])
                    .with_slot(AK_REF_SLOT, b"ak_pc1".to_vec()),
            )
            .unwrap();
        let mut ctx = Context::new();
        ctx.key_registry
            .insert("ak_pc1".into(), ElementId::from("pc1"));
        ctx.expectations.insert(
            ElementId::from("pc1"),
            [("firmware_digest".to_string(), vec![0xaa_u8])]
                .into_iter()
                .collect(),
        );
        if known {
            ctx.known_elements.insert(ElementId::from("pc1"));
        }
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let claim = attest(&world, &"pc1".into(), &"quote".into(), &mut ctx).unwrap();
        verify(&verify_policy, claim, &mut ctx).unwrap()
    }

    #[test]
    fn novelty_guard_splits_full_success() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let decide_policy = paper_decide(&lattice);
        check_decide_policy(&decide_policy, &verify_policy);

        let (level, rule) = decide_with_trace(&decide_policy, &healthy_outcome(true)).unwrap();
        assert_eq!(level.name(), "⊤");
        assert_eq!(rule, Some(0));

        let (level, rule) = decide_with_trace(&decide_policy, &healthy_outcome(false)).unwrap();
        assert_eq!(level.name(), "D_NEW");
        assert_eq!(rule, Some(1));
    }

    #[test]
    fn unchecked_policy_is_refused() {
        let lattice = six_level();
        let decide_policy = paper_decide(&lattice);
        let err = decide(&decide_policy, &healthy_outcome(true)).unwrap_err();
        assert!(matches!(err, DecisionError::PolicyUnchecked(_)));
    }

    #[test]
    fn same_class_and_guard_fields_decide_identically() {
        let lattice = six_level();
        let verify_policy = paper_verify();
        check_verify_policy(&verify_policy);
        let decide_policy = paper_decide(&lattice);
        check_decide_policy(&decide_policy, &verify_policy);
        let a = healthy_outcome(true);
        let b = healthy_outcome(true);
        assert_eq!(
            decide(&decide_policy, &a).unwrap(),
            decide(&decide_policy, &b).unwrap()
        );
    }
}
