//! Lifecycle semantics: boot-run-shutdown with trust-level constraints, the
//! evil-maid attack in both policy routings, restart/reset counter rules,
//! state persistence across power cycles, and sigma classification.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use trustkit_core::evidence::{ElementId, Persistence};
use trustkit_core::fixtures;
use trustkit_core::lifecycle::{
    apply_sigma, classify_check, evil_maid_fixture, power_cycle, restart, run_scenario,
    AssertionOutcome, EvilMaidVariant, LifecycleError, LifecycleState, ScenarioRunner,
    ScenarioScript, ScenarioStep, SigmaClass, SigmaOp, StateEdit, ViolationKind,
};
use trustkit_core::verdict::PredicateAtom;

#[test]
fn boot_run_shutdown_satisfies_phase_constraint() {
    let fx = fixtures::reference();
    let script = fixtures::boot_run_shutdown_script(false);
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.ok(), "trace: {trace:?}");
    // Levels along the way: D_AUTH at boot, ⊤ at run, D_AUTH at shutdown.
    let levels: Vec<String> = trace
        .steps
        .iter()
        .filter_map(|s| s.level.as_ref().map(|l| l.name().to_string()))
        .collect();
    assert_eq!(levels, vec!["D_AUTH", "⊤", "D_AUTH"]);
}

#[test]
fn weak_runtime_breaks_the_strict_rise() {
    let fx = fixtures::reference();
    let script = fixtures::boot_run_shutdown_script(true);
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(!trace.ok());
    assert_eq!(trace.assertions_failed(), 1);
    let failure = trace
        .assertions()
        .find(|a| !matches!(a, AssertionOutcome::Pass))
        .unwrap();
    match failure {
        AssertionOutcome::Fail { detail } => {
            assert!(detail.contains('<'), "unexpected detail: {detail}")
        }
        other => panic!("expected a failed strict comparison, got {other:?}"),
    }
}

#[test]
fn evil_maid_error_routing_ends_at_bottom_with_identity_intact() {
    let fx = fixtures::reference();
    let script = evil_maid_fixture(EvilMaidVariant::ErrorRouting);
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.ok(), "trace: {trace:?}");
    assert_eq!(trace.final_level.as_ref().unwrap().name(), "⊥");
}

#[test]
fn evil_maid_case_table_grades_to_signed_compromise() {
    let fx = fixtures::reference();
    let script = evil_maid_fixture(EvilMaidVariant::CaseTable);
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.ok(), "trace: {trace:?}");
    assert_eq!(trace.final_level.as_ref().unwrap().name(), "D_S");
}

#[test]
fn tamper_requires_powered_off_state() {
    let fx = fixtures::reference();
    let script = ScenarioScript {
        name: "tamper_live".into(),
        subject: ElementId::from("pc1"),
        point: Some(fx.point_paper()),
        steps: vec![
            ScenarioStep::Apply {
                sigma: "power_on".into(),
            },
            ScenarioStep::Tamper {
                slot: "firmware_digest".into(),
                value: fixtures::EVIL_FIRMWARE.to_vec(),
            },
        ],
    };
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.aborted.is_some());
    assert_eq!(trace.steps.len(), 2);
}

#[test]
fn restart_and_power_cycle_counters() {
    let fx = fixtures::reference();
    let pc1 = ElementId::from("pc1");
    let base = fx.world.elements[&pc1].clone();
    let mut ctx = fx.ctx.clone();

    let state = apply_sigma(
        LifecycleState::Zero,
        &SigmaOp::power_on(),
        &base,
        &mut ctx,
    )
    .unwrap();
    let state = restart(state, &pc1, &mut ctx).unwrap();
    assert_eq!(ctx.restart_counter[&pc1], 1);
    assert!(!ctx.reset_counter.contains_key(&pc1));
    let state = restart(state, &pc1, &mut ctx).unwrap();
    assert_eq!(ctx.restart_counter[&pc1], 2);

    let state = apply_sigma(state, &SigmaOp::power_off(), &base, &mut ctx).unwrap();
    let state = power_cycle(state, &pc1, &mut ctx).unwrap();
    assert_eq!(ctx.reset_counter[&pc1], 1);
    assert_eq!(ctx.restart_counter[&pc1], 0);
    assert_eq!(state, LifecycleState::Zero);
}

#[test]
fn power_cycle_clears_volatile_but_not_context() {
    let fx = fixtures::reference();
    let pc1 = ElementId::from("pc1");
    let mut base = fx.world.elements[&pc1].clone();
    base.state.insert("session_key".into(), vec![0x5e, 0x55]);
    base.persistence
        .insert("session_key".into(), Persistence::Volatile);
    base.state.insert("boot_cache".into(), vec![0xca]);
    base.persistence
        .insert("boot_cache".into(), Persistence::RestartSurvivable);

    let mut ctx = fx.ctx.clone();
    let live = apply_sigma(LifecycleState::Zero, &SigmaOp::power_on(), &base, &mut ctx).unwrap();

    // Restart keeps the restart-survivable slot, clears the volatile one.
    let live = restart(live, &pc1, &mut ctx).unwrap();
    let LifecycleState::Live { element, .. } = &live else {
        panic!()
    };
    assert!(!element.state.contains_key("session_key"));
    assert!(element.state.contains_key("boot_cache"));

    // Power cycle drops both; persistent slots and the key registry survive.
    let state = apply_sigma(live, &SigmaOp::power_off(), &base, &mut ctx).unwrap();
    let state = power_cycle(state, &pc1, &mut ctx).unwrap();
    let live = apply_sigma(state, &SigmaOp::power_on(), &base, &mut ctx).unwrap();
    let LifecycleState::Live { element, .. } = &live else {
        panic!()
    };
    assert!(!element.state.contains_key("session_key"));
    assert!(!element.state.contains_key("boot_cache"));
    assert!(element.state.contains_key("firmware_digest"));
    assert_eq!(ctx.key_registry, fx.ctx.key_registry);
}

#[test]
fn fresh_boot_equals_power_cycled_boot_given_equal_context() {
    let fx = fixtures::reference();
    let pc1 = ElementId::from("pc1");
    let base = fx.world.elements[&pc1].clone();

    // Boot, power off, cycle, boot again.
    let mut ctx = fx.ctx.clone();
    let live = apply_sigma(LifecycleState::Zero, &SigmaOp::power_on(), &base, &mut ctx).unwrap();
    let state = apply_sigma(live, &SigmaOp::power_off(), &base, &mut ctx).unwrap();
    let state = power_cycle(state, &pc1, &mut ctx).unwrap();
    let cycled = apply_sigma(state, &SigmaOp::power_on(), &base, &mut ctx).unwrap();

    // Fresh boot from a context holding the same persisted slots.
    let mut ctx2 = fx.ctx.clone();
    ctx2.persisted = ctx.persisted.clone();
    let fresh = apply_sigma(LifecycleState::Zero, &SigmaOp::power_on(), &base, &mut ctx2).unwrap();

    let (LifecycleState::Live { element: a, .. }, LifecycleState::Live { element: b, .. }) =
        (&cycled, &fresh)
    else {
        panic!()
    };
    assert_eq!(a, b);
}

#[test]
fn attesting_while_powered_off_decides_bottom() {
    let fx = fixtures::reference();
    let script = ScenarioScript {
        name: "attest_while_off".into(),
        subject: ElementId::from("pc1"),
        point: Some(fx.point_paper()),
        steps: vec![
            ScenarioStep::Attest { point: None },
            ScenarioStep::AssertLevel {
                cmp: trustkit_core::lifecycle::LevelCmp::Eq,
                level: "⊥".into(),
            },
            ScenarioStep::AssertAtom {
                atom: PredicateAtom::ChiS,
                expected: false,
            },
        ],
    };
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.ok(), "trace: {trace:?}");
}

#[test]
fn invalid_transitions_abort_with_partial_trace() {
    let fx = fixtures::reference();
    let script = ScenarioScript {
        name: "double_on".into(),
        subject: ElementId::from("pc1"),
        point: None,
        steps: vec![
            ScenarioStep::Apply {
                sigma: "power_on".into(),
            },
            ScenarioStep::Apply {
                sigma: "power_on".into(),
            },
            ScenarioStep::Apply {
                sigma: "enter_run".into(),
            },
        ],
    };
    let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
    assert!(trace.aborted.is_some());
    assert_eq!(trace.steps.len(), 2);
}

#[test]
fn unknown_sigma_and_subject_are_errors() {
    let fx = fixtures::reference();
    let script = ScenarioScript {
        name: "ghost".into(),
        subject: ElementId::from("ghost"),
        point: None,
        steps: vec![],
    };
    assert!(matches!(
        run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()),
        Err(LifecycleError::UnknownSubject(_))
    ));
}

#[test]
fn noop_sigma_declared_idempotent_has_no_violations() {
    let fx = fixtures::reference();
    let report = classify_check(
        &fx.world,
        &fx.env,
        &fx.sigmas["noop_sync"],
        &["pc1".into(), "pc_new".into(), "pc_compromised".into()],
        &fx.point_paper(),
        &fx.ctx,
    )
    .unwrap();
    assert!(report.violations.is_empty());
}

#[test]
fn firmware_swap_declared_dangerous_has_no_violations() {
    let fx = fixtures::reference();
    // Every fixture element that admits the quote point.
    let subjects: Vec<ElementId> = fx
        .world
        .elements
        .keys()
        .filter(|e| {
            fx.env
                .admitted_triples(&fx.world, e)
                .unwrap()
                .contains(&fx.point_paper())
        })
        .cloned()
        .collect();
    assert!(subjects.len() >= 5);
    let report = classify_check(
        &fx.world,
        &fx.env,
        &fx.sigmas["swap_firmware"],
        &subjects,
        &fx.point_paper(),
        &fx.ctx,
    )
    .unwrap();
    assert!(report.violations.is_empty(), "{:?}", report.violations);
}

#[test]
fn firmware_swap_misdeclared_idempotent_reports_each_lowering() {
    let fx = fixtures::reference();
    let mut op = fx.sigmas["swap_firmware"].clone();
    op.class = SigmaClass::Idempotent;
    let report = classify_check(
        &fx.world,
        &fx.env,
        &op,
        &["pc1".into(), "pc_compromised".into()],
        &fx.point_paper(),
        &fx.ctx,
    )
    .unwrap();
    // pc1 drops from ⊤ to D_S: a violation of idempotence. pc_compromised
    // already runs the evil firmware, so the swap changes nothing there.
    assert_eq!(report.violations.len(), 1);
    let violation = &report.violations[0];
    assert_eq!(violation.element, ElementId::from("pc1"));
    assert_eq!(violation.kind, ViolationKind::NotPreserved);
    assert_eq!(violation.before.name(), "⊤");
    assert_eq!(violation.after.name(), "D_S");
}

#[test]
fn trust_raising_operation_is_always_reported() {
    let fx = fixtures::reference();
    // Repairing the compromised firmware raises D_S back to ⊤.
    let repair = SigmaOp {
        name: "repair_firmware".into(),
        class: SigmaClass::Dangerous,
        effect: vec![StateEdit::SetSlot {
            slot: "firmware_digest".into(),
            value: fixtures::GOOD_FIRMWARE.to_vec(),
        }],
    };
    let report = classify_check(
        &fx.world,
        &fx.env,
        &repair,
        &["pc_compromised".into()],
        &fx.point_paper(),
        &fx.ctx,
    )
    .unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].kind, ViolationKind::Raised);
}

#[test]
fn counters_obey_monotone_rules_across_random_interleavings() {
    let fx = fixtures::reference();
    let pc1 = ElementId::from("pc1");
    let mut rng = StdRng::seed_from_u64(0x7275_7374);
    for _ in 0..200 {
        let mut steps = Vec::new();
        // Random walk over the legal transition graph.
        let mut sim_state = 0u8; // 0 = zero, 1 = live, 2 = terminal
        for _ in 0..rng.gen_range(1..30) {
            match sim_state {
                0 => {
                    steps.push(ScenarioStep::Apply {
                        sigma: "power_on".into(),
                    });
                    sim_state = 1;
                }
                1 => match rng.gen_range(0..4) {
                    0 => steps.push(ScenarioStep::Restart),
                    1 => steps.push(ScenarioStep::Attest { point: None }),
                    2 => steps.push(ScenarioStep::Apply {
                        sigma: "noop_sync".into(),
                    }),
                    _ => {
                        steps.push(ScenarioStep::Apply {
                            sigma: "power_off".into(),
                        });
                        sim_state = 2;
                    }
                },
                _ => {
                    steps.push(ScenarioStep::PowerCycle);
                    sim_state = 0;
                }
            }
        }
        let script = ScenarioScript {
            name: "random_walk".into(),
            subject: pc1.clone(),
            point: Some(fx.point_paper()),
            steps,
        };
        let mut runner =
            ScenarioRunner::new(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
        let mut last_reset = 0;
        let mut last_restart = 0;
        loop {
            let before_reset = *runner.ctx.reset_counter.get(&pc1).unwrap_or(&0);
            let before_restart = *runner.ctx.restart_counter.get(&pc1).unwrap_or(&0);
            assert_eq!(before_reset, last_reset);
            assert_eq!(before_restart, last_restart);
            let Some(record) = runner.step() else { break };
            let desc = record.desc;
            let after_reset = *runner.ctx.reset_counter.get(&pc1).unwrap_or(&0);
            let after_restart = *runner.ctx.restart_counter.get(&pc1).unwrap_or(&0);
            // Reset counter never decreases; restart counter only ever
            // decreases by the documented zeroing on power cycle.
            assert!(after_reset >= before_reset);
            match desc.as_str() {
                "power_cycle" => {
                    assert_eq!(after_reset, before_reset + 1);
                    assert_eq!(after_restart, 0);
                }
                "restart" => {
                    assert_eq!(after_restart, before_restart + 1);
                    assert_eq!(after_reset, before_reset);
                }
                _ => {
                    assert_eq!(after_restart, before_restart);
                    assert_eq!(after_reset, before_reset);
                }
            }
            last_reset = after_reset;
            last_restart = after_restart;
        }
    }
}
