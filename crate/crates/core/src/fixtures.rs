//! The reference environment: the six-level decision lattice, the published
//! verify/decide policy pair plus the strict error-routing pair, and a small
//! world of elements spanning every interesting evidence shape — healthy,
//! new, compromised, impersonated, measurement-only, unattestable,
//! capability-less, and two composites.
//!
//! Used by the test suites, the command-line examples and the wire harness;
//! the same environment ships as a policy document under `fixtures/`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::capability::Environment;
use crate::decision::{DecideGuard, DecidePolicy, DecideRule};
use crate::evidence::{Context, Element, ElementId, MechanismId, World, AK_REF_SLOT, SERIAL_SLOT};
use crate::lattice::DecisionLattice;
use crate::lifecycle::{ScenarioScript, ScenarioStep, SigmaClass, SigmaOp, StateEdit};
use crate::pipeline::PipelinePoint;
use crate::verdict::{
    BoolExpr, PredicateAtom, ResultClass, VerifyCase, VerifyPolicy, NOVELTY_KEY,
};

pub const GOOD_FIRMWARE: &[u8] = &[0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88];
pub const EVIL_FIRMWARE: &[u8] = &[0xde, 0xad, 0xbe, 0xef];
pub const PCR0: &[u8] = &[0x0f, 0x1e, 0x2d, 0x3c];
pub const SENSOR_SERIAL: &[u8] = b"SN-42";

/// The six-level trust lattice: identity-only and measurement-only evidence
/// are incomparable, novelty sits below full trust.
pub fn six_level_lattice() -> Arc<DecisionLattice> {
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
        .expect("reference lattice is a bounded poset"),
    )
}

/// The published four-case verify policy: full success, signature-only,
/// measurement-only, error default.
pub fn paper_verify_policy() -> VerifyPolicy {
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

/// The strict routing: any measurement mismatch is a procedural error, so
/// there is no signature-only class at all.
pub fn strict_verify_policy() -> VerifyPolicy {
    use BoolExpr as E;
    use PredicateAtom as A;
    VerifyPolicy::new(
        "strict",
        vec![
            ResultClass::success("1"),
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

/// The published six-case decide fold over the six-level lattice.
pub fn paper_decide_policy(lattice: &Arc<DecisionLattice>) -> DecidePolicy {
    let level = |name: &str| lattice.level(name).expect("reference level");
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

/// Decide fold paired with the strict verify policy.
pub fn strict_decide_policy(lattice: &Arc<DecisionLattice>) -> DecidePolicy {
    let level = |name: &str| lattice.level(name).expect("reference level");
    DecidePolicy::new(
        "strict",
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

fn tpm_element(id: &str, ak: &str, firmware: &[u8]) -> Element {
    Element::new(id)
        .with_capability("quote")
        .with_capability("measure_only")
        .with_capability("token_only")
        .with_slot("firmware_digest", firmware.to_vec())
        .with_slot("pcr0", PCR0.to_vec())
        .with_slot(AK_REF_SLOT, ak.as_bytes().to_vec())
}

fn sensor_element(id: &str) -> Element {
    Element::new(id)
        .with_capability("serial_read")
        .with_slot(SERIAL_SLOT, SENSOR_SERIAL.to_vec())
}

fn expect_tpm(ctx: &mut Context, id: &str) {
    ctx.expectations.insert(
        ElementId::from(id),
        [
            ("firmware_digest".to_string(), GOOD_FIRMWARE.to_vec()),
            ("pcr0".to_string(), PCR0.to_vec()),
        ]
        .into_iter()
        .collect(),
    );
}

fn expect_sensor(ctx: &mut Context, id: &str) {
    ctx.expectations.insert(
        ElementId::from(id),
        [(SERIAL_SLOT.to_string(), SENSOR_SERIAL.to_vec())]
            .into_iter()
            .collect(),
    );
}

/// The assembled reference setup.
pub struct Fixture {
    pub world: World,
    pub env: Environment,
    pub ctx: Context,
    pub sigmas: BTreeMap<String, SigmaOp>,
}

impl Fixture {
    pub fn point_paper(&self) -> PipelinePoint {
        PipelinePoint::new("quote", "paper", "paper")
    }

    pub fn point_strict(&self) -> PipelinePoint {
        PipelinePoint::new("quote", "strict", "strict")
    }
}

/// Build the reference fixture. All policies are checked; constructing the
/// fixture fails loudly if the reference configuration ever regresses.
pub fn reference() -> Fixture {
    let mut world = World::new();
    for element in [
        tpm_element("pc1", "ak_pc1", GOOD_FIRMWARE),
        tpm_element("pc_new", "ak_pc2", GOOD_FIRMWARE),
        tpm_element("pc_compromised", "ak_pc3", EVIL_FIRMWARE),
        tpm_element("pc_impostor", "ak_rogue", GOOD_FIRMWARE),
        sensor_element("sensor1"),
        Element::new("brick1"),
        tpm_element("dormant1", "ak_dormant", GOOD_FIRMWARE).unattestable(),
        tpm_element("comp_root", "ak_root", GOOD_FIRMWARE)
            .with_child("comp_sensor")
            .with_child("comp_pc"),
        sensor_element("comp_sensor"),
        tpm_element("comp_pc", "ak_cpc", GOOD_FIRMWARE),
        tpm_element("vent_main", "ak_vent", GOOD_FIRMWARE).with_child("vent_gas"),
        Element::new("vent_gas"),
    ] {
        world.insert_element(element).expect("reference element");
    }

    let mut ctx = Context::new();
    for (key, element) in [
        ("ak_pc1", "pc1"),
        ("ak_pc2", "pc_new"),
        ("ak_pc3", "pc_compromised"),
        ("ak_dormant", "dormant1"),
        ("ak_root", "comp_root"),
        ("ak_cpc", "comp_pc"),
        ("ak_vent", "vent_main"),
    ] {
        ctx.key_registry
            .insert(key.to_string(), ElementId::from(element));
    }
    for id in [
        "pc1",
        "pc_compromised",
        "pc_impostor",
        "sensor1",
        "brick1",
        "dormant1",
        "comp_root",
        "comp_sensor",
        "comp_pc",
        "vent_main",
        "vent_gas",
    ] {
        ctx.known_elements.insert(ElementId::from(id));
    }
    expect_tpm(&mut ctx, "pc1");
    expect_tpm(&mut ctx, "pc_new");
    expect_tpm(&mut ctx, "pc_compromised");
    expect_tpm(&mut ctx, "pc_impostor");
    expect_tpm(&mut ctx, "dormant1");
    expect_tpm(&mut ctx, "comp_root");
    expect_tpm(&mut ctx, "comp_pc");
    expect_tpm(&mut ctx, "vent_main");
    expect_sensor(&mut ctx, "sensor1");
    expect_sensor(&mut ctx, "comp_sensor");

    let lattice = six_level_lattice();
    let mut env = Environment::new(Arc::clone(&lattice));
    for policy in [paper_verify_policy(), strict_verify_policy()] {
        env.verify_policies.insert(policy.name.clone(), policy);
    }
    for policy in [
        paper_decide_policy(&lattice),
        strict_decide_policy(&lattice),
    ] {
        env.decide_policies.insert(policy.name.clone(), policy);
    }
    for mech in ["quote", "measure_only", "token_only", "serial_read"] {
        env.rho_attest_patterns.push((
            [MechanismId::new(mech)].into_iter().collect(),
            [MechanismId::new(mech)].into_iter().collect(),
        ));
    }
    env.rho_verify_map.insert(
        MechanismId::new("quote"),
        ["paper".to_string(), "strict".to_string()]
            .into_iter()
            .collect(),
    );
    for mech in ["measure_only", "token_only", "serial_read"] {
        env.rho_verify_map.insert(
            MechanismId::new(mech),
            ["paper".to_string()].into_iter().collect(),
        );
    }
    env.rho_decide_map
        .insert("paper".to_string(), ["paper".to_string()].into_iter().collect());
    env.rho_decide_map.insert(
        "strict".to_string(),
        ["strict".to_string()].into_iter().collect(),
    );

    let diagnostics = env.check_policies();
    assert!(
        diagnostics.is_empty(),
        "reference policies must check clean: {diagnostics:?}"
    );

    let mut sigmas = BTreeMap::new();
    for sigma in [
        SigmaOp {
            name: "swap_firmware".into(),
            class: SigmaClass::Dangerous,
            effect: vec![StateEdit::SetSlot {
                slot: "firmware_digest".into(),
                value: EVIL_FIRMWARE.to_vec(),
            }],
        },
        SigmaOp {
            name: "noop_sync".into(),
            class: SigmaClass::Idempotent,
            effect: Vec::new(),
        },
        SigmaOp {
            name: "enter_run".into(),
            class: SigmaClass::Unclassified,
            effect: vec![StateEdit::SetPhase {
                phase: "run".into(),
            }],
        },
        SigmaOp {
            name: "enter_shutdown".into(),
            class: SigmaClass::Unclassified,
            effect: vec![StateEdit::SetPhase {
                phase: "shutdown".into(),
            }],
        },
    ] {
        sigmas.insert(sigma.name.clone(), sigma);
    }

    Fixture {
        world,
        env,
        ctx,
        sigmas,
    }
}

/// Boot-run-shutdown over the reference PC: identity-only evidence during
/// boot and shutdown, a full quote at runtime. The weak variant never brings
/// up the quote, so the strict rise into the run phase fails.
pub fn boot_run_shutdown_script(weak: bool) -> ScenarioScript {
    let token_point = PipelinePoint::new("token_only", "paper", "paper");
    let quote_point = PipelinePoint::new("quote", "paper", "paper");
    let run_point = if weak {
        token_point.clone()
    } else {
        quote_point.clone()
    };
    ScenarioScript {
        name: if weak {
            "boot_run_shutdown_weak".into()
        } else {
            "boot_run_shutdown".into()
        },
        subject: ElementId::from("pc1"),
        point: Some(quote_point),
        steps: vec![
            ScenarioStep::Apply {
                sigma: "power_on".into(),
            },
            ScenarioStep::Attest {
                point: Some(token_point.clone()),
            },
            ScenarioStep::AssertLevel {
                cmp: crate::lifecycle::LevelCmp::Eq,
                level: "D_AUTH".into(),
            },
            ScenarioStep::Apply {
                sigma: "enter_run".into(),
            },
            ScenarioStep::Attest {
                point: Some(run_point),
            },
            ScenarioStep::Apply {
                sigma: "enter_shutdown".into(),
            },
            ScenarioStep::Attest {
                point: Some(token_point),
            },
            ScenarioStep::AssertLevel {
                cmp: crate::lifecycle::LevelCmp::Eq,
                level: "D_AUTH".into(),
            },
            ScenarioStep::AssertPhases {
                floor: "D_AUTH".into(),
                boot: "boot".into(),
                run: "run".into(),
                shutdown: "shutdown".into(),
            },
            ScenarioStep::Apply {
                sigma: "power_off".into(),
            },
        ],
    }
}
