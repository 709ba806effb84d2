//! Acceptance suite: the engine's exit criteria, one test per criterion,
//! each printing a single pass line (failures panic with detail). Run with
//! `cargo test -p trustkit-cli --test acceptance -- --nocapture` to see the
//! lines.

// Oracles are written as plain matrix index loops on purpose.
#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use trustkit_core::composition::{aggregate_trust, AggregationMode, CompositionView};
use trustkit_core::decision::decide;
use trustkit_core::evidence::{
    attest, Claim, ClaimId, Context, ElementId, Measurement, Signature,
};
use trustkit_core::fixtures;
use trustkit_core::lattice::{DecisionLattice, LatticeDiagnostic, LatticeError};
use trustkit_core::lifecycle::{
    evil_maid_fixture, run_scenario, EvilMaidVariant, ScenarioRunner, ScenarioScript, ScenarioStep,
};
use trustkit_core::pipeline::{judgement, run_pipeline, trustworthy, PipelinePoint};
use trustkit_core::verdict::{check_verify_policy, PolicyDiagnostic, PredicateAtom};
use trustkit_wire::{agent_serve, verifier_serve, WireClient, WireMessage};

fn pass(criterion: &str) {
    println!("acceptance {criterion}: PASS");
}

// ---------------------------------------------------------------------------
// helpers shared by several criteria

/// Brute-force order oracle, independent of the lattice implementation.
struct OrderOracle {
    n: usize,
    leq: Vec<Vec<bool>>,
}

impl OrderOracle {
    fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut leq = vec![vec![false; n]; n];
        for (i, row) in leq.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in edges {
            leq[a][b] = true;
        }
        for i in 0..n {
            leq[0][i] = true;
            leq[i][n - 1] = true;
        }
        loop {
            let mut changed = false;
            for a in 0..n {
                for b in 0..n {
                    if !leq[a][b] && (0..n).any(|c| leq[a][c] && leq[c][b]) {
                        leq[a][b] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        OrderOracle { n, leq }
    }

    fn glb(&self, a: usize, b: usize) -> Option<usize> {
        let common: Vec<usize> = (0..self.n)
            .filter(|&x| self.leq[x][a] && self.leq[x][b])
            .collect();
        common
            .iter()
            .copied()
            .find(|&x| common.iter().all(|&y| self.leq[y][x]))
    }

    fn lub(&self, a: usize, b: usize) -> Option<usize> {
        let common: Vec<usize> = (0..self.n)
            .filter(|&x| self.leq[a][x] && self.leq[b][x])
            .collect();
        common
            .iter()
            .copied()
            .find(|&x| common.iter().all(|&y| self.leq[x][y]))
    }
}

fn random_poset(rng: &mut StdRng) -> (usize, Vec<(usize, usize)>) {
    let n: usize = rng.gen_range(2..=7);
    let mut edges = Vec::new();
    for i in 1..n.saturating_sub(1) {
        for j in (i + 1)..(n - 1) {
            if rng.gen_bool(0.35) {
                edges.push((i, j));
            }
        }
    }
    (n, edges)
}

fn build_lattice(n: usize, edges: &[(usize, usize)]) -> DecisionLattice {
    let names: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
    let pairs: Vec<(String, String)> = edges
        .iter()
        .map(|&(a, b)| (names[a].clone(), names[b].clone()))
        .collect();
    DecisionLattice::new(&names, &pairs, "L0", &format!("L{}", n - 1)).unwrap()
}

/// Build a claim of a given shape directly, bypassing the attest path.
fn shaped_claim(
    fx: &fixtures::Fixture,
    m: &str,
    s: &str,
    fresh: bool,
    known: bool,
) -> (Claim, Context) {
    let element = ElementId::from("pc1");
    let mut ctx = fx.ctx.clone();
    if known {
        ctx.known_elements.insert(element.clone());
    } else {
        ctx.known_elements.remove(&element);
    }
    let expected = ctx.expectations[&element].clone();
    let measurement = match m {
        "expected" => Measurement::values(expected),
        "unexpected" => {
            let mut wrong = expected;
            wrong.insert("firmware_digest".into(), fixtures::EVIL_FIRMWARE.to_vec());
            Measurement::values(wrong)
        }
        _ => Measurement::NullM,
    };
    let claim_id = if fresh {
        ctx.mint_claim_id()
    } else {
        ClaimId {
            nonce: vec![0xDE, 0xAD],
            timestamp: 0,
        }
    };
    let signature = match s {
        "valid" => Signature::Sig {
            key_ref: "ak_pc1".into(),
            payload_digest: measurement.digest(),
            nonce: claim_id.nonce.clone(),
        },
        "forged" => Signature::Sig {
            key_ref: "ak_rogue".into(),
            payload_digest: measurement.digest(),
            nonce: claim_id.nonce.clone(),
        },
        _ => Signature::NullS,
    };
    (
        Claim {
            measurement,
            signature,
            claim_id,
            grounded_to: element,
            mechanism: "quote".into(),
        },
        ctx,
    )
}

struct WireRig {
    agent: Option<trustkit_wire::AgentHandle>,
    verifier: Option<trustkit_wire::VerifierHandle>,
}

impl WireRig {
    fn start(world: trustkit_core::evidence::World, env: trustkit_core::capability::Environment, ctx: Context) -> Self {
        let agent = agent_serve(world, "127.0.0.1:0").unwrap();
        let verifier =
            verifier_serve(env, ctx, "127.0.0.1:0", agent.addr().to_string()).unwrap();
        WireRig {
            agent: Some(agent),
            verifier: Some(verifier),
        }
    }

    fn client(&self) -> WireClient {
        WireClient::connect(&self.verifier.as_ref().unwrap().addr().to_string()).unwrap()
    }
}

impl Drop for WireRig {
    fn drop(&mut self) {
        if let Some(v) = self.verifier.take() {
            v.shutdown();
        }
        if let Some(a) = self.agent.take() {
            a.shutdown();
        }
    }
}

fn staged_wire_eval(
    client: &mut WireClient,
    element: &str,
    point: &PipelinePoint,
) -> (String, BTreeMap<PredicateAtom, bool>) {
    let response = client
        .expect_ok(WireMessage::AttestRequest {
            element: element.into(),
            mechanism: point.mechanism.clone(),
            nonce: None,
        })
        .unwrap();
    let WireMessage::AttestResponse {
        claim_ref: Some(claim_ref),
        ..
    } = response
    else {
        panic!("no claim ref");
    };
    let response = client
        .expect_ok(WireMessage::VerifyRequest {
            claim_ref,
            verify_policy: point.verify_policy.clone(),
        })
        .unwrap();
    let WireMessage::VerifyResponse {
        outcome_ref,
        atom_values,
        ..
    } = response
    else {
        panic!("no verify response");
    };
    let response = client
        .expect_ok(WireMessage::DecideRequest {
            outcome_ref,
            decide_policy: point.decide_policy.clone(),
        })
        .unwrap();
    let WireMessage::DecideResponse { level, .. } = response else {
        panic!("no decide response");
    };
    (level, atom_values)
}

// ---------------------------------------------------------------------------
// 1. Lattice laws

#[test]
fn criterion_01_lattice_laws() {
    // The six-level example first.
    let six = fixtures::six_level_lattice();
    let edges: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (2, 4), (0, 3), (3, 4), (4, 5)];
    let names = ["⊥", "D_S", "D_AUTH", "D_M", "D_NEW", "⊤"];
    let oracle = OrderOracle::new(6, &edges);
    for a in 0..6 {
        for b in 0..6 {
            let la = six.level(names[a]).unwrap();
            let lb = six.level(names[b]).unwrap();
            assert_eq!(six.leq(&la, &lb).unwrap(), oracle.leq[a][b]);
            let meet = six.meet(&la, &lb).ok().map(|l| l.name().to_string());
            assert_eq!(meet, oracle.glb(a, b).map(|i| names[i].to_string()));
            let join = six.join(&la, &lb).ok().map(|l| l.name().to_string());
            assert_eq!(join, oracle.lub(a, b).map(|i| names[i].to_string()));
        }
    }

    // 120 random bounded posets with at most 7 elements.
    let mut rng = StdRng::seed_from_u64(0x1a77_1ce5);
    for round in 0..120 {
        let (n, edges) = random_poset(&mut rng);
        let oracle = OrderOracle::new(n, &edges);
        let lattice = build_lattice(n, &edges);
        let level = |i: usize| lattice.level(&format!("L{i}")).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(
                    lattice.leq(&level(a), &level(b)).unwrap(),
                    oracle.leq[a][b],
                    "round {round}: leq({a},{b})"
                );
                let meet = lattice.meet(&level(a), &level(b)).ok().map(|l| l.name().to_string());
                assert_eq!(
                    meet,
                    oracle.glb(a, b).map(|i| format!("L{i}")),
                    "round {round}: meet({a},{b})"
                );
                let join = lattice.join(&level(a), &level(b)).ok().map(|l| l.name().to_string());
                assert_eq!(
                    join,
                    oracle.lub(a, b).map(|i| format!("L{i}")),
                    "round {round}: join({a},{b})"
                );
            }
        }
        // Adjunction wherever the implication is defined.
        for a in 0..n {
            for b in 0..n {
                let Ok(imp) = lattice.implies(&level(a), &level(b)) else {
                    continue;
                };
                for c in 0..n {
                    let Ok(meet_ca) = lattice.meet(&level(c), &level(a)) else {
                        continue;
                    };
                    assert_eq!(
                        lattice.leq(&meet_ca, &level(b)).unwrap(),
                        lattice.leq(&level(c), &imp).unwrap(),
                        "round {round}: adjunction at ({a},{b},{c})"
                    );
                }
            }
        }
    }
    pass("1 (lattice laws vs brute-force oracle, 120 random posets)");
}

// ---------------------------------------------------------------------------
// 2. Non-Heyting detection

#[test]
fn criterion_02_non_heyting_detection() {
    let six = fixtures::six_level_lattice();
    let diags = six.validate();
    let witness_found = diags.iter().any(|d| {
        matches!(
            d,
            LatticeDiagnostic::NotDistributive { a, b, c }
            if a == "D_AUTH"
                && ((b == "D_S" && c == "D_M") || (b == "D_M" && c == "D_S"))
        )
    });
    assert!(witness_found, "diagnostics: {diags:?}");

    let auth = six.level("D_AUTH").unwrap();
    let ds = six.level("D_S").unwrap();
    match six.implies(&auth, &ds) {
        Err(LatticeError::NoImplication { maximal, .. }) => {
            assert_eq!(maximal, vec!["D_M".to_string(), "D_S".to_string()]);
        }
        other => panic!("expected NoImplication, got {other:?}"),
    }

    let completed = six.downset_completion();
    assert_eq!(completed.len(), 8);
    assert!(completed.validate().is_empty());
    pass("2 (non-Heyting witness (D_AUTH, D_S, D_M); completion has 8 levels and validates)");
}

// ---------------------------------------------------------------------------
// 3. Verify/decide totality and the decision table

#[test]
fn criterion_03_policy_totality_and_decision_table() {
    let fx = fixtures::reference();

    // The published pair checks clean, including the explicit error-case
    // formulation of the verify table.
    let diags = fx.env.check_policies();
    assert!(diags.is_empty(), "{diags:?}");
    let mut explicit = fixtures::paper_verify_policy();
    explicit.cases.push(trustkit_core::verdict::VerifyCase {
        condition: trustkit_core::verdict::BoolExpr::or(vec![
            trustkit_core::verdict::BoolExpr::atom(PredicateAtom::ChiNull),
            trustkit_core::verdict::BoolExpr::not(trustkit_core::verdict::BoolExpr::atom(
                PredicateAtom::ChiI,
            )),
        ]),
        target: "ERR".into(),
    });
    assert!(check_verify_policy(&explicit).is_empty());

    // A decide policy mapping the error class above bottom must be refused.
    let lattice = fx.env.lattice.clone();
    let mut bad = fixtures::paper_decide_policy(&lattice);
    bad.rules.last_mut().unwrap().target = lattice.level("D_S").unwrap();
    let verify_policy = fixtures::paper_verify_policy();
    check_verify_policy(&verify_policy);
    let diags = trustkit_core::decision::check_decide_policy(&bad, &verify_policy);
    assert!(diags
        .iter()
        .any(|d| matches!(d, PolicyDiagnostic::ErrNotBottom { .. })));

    // The decision table, cell for cell.
    for m in ["expected", "unexpected", "null"] {
        for s in ["valid", "forged", "null"] {
            for fresh in [true, false] {
                for known in [true, false] {
                    let expected_level = if !fresh {
                        "⊥"
                    } else {
                        match (m, s) {
                            ("expected", "valid") => {
                                if known {
                                    "⊤"
                                } else {
                                    "D_NEW"
                                }
                            }
                            ("null", "valid") => "D_AUTH",
                            ("unexpected", "valid") => "D_S",
                            ("expected", _) => "D_M",
                            _ => "⊥",
                        }
                    };
                    let (claim, mut ctx) = shaped_claim(&fx, m, s, fresh, known);
                    let level = judgement(&fx.env, claim, "paper", "paper", &mut ctx).unwrap();
                    assert_eq!(
                        level.name(),
                        expected_level,
                        "table cell (m={m}, s={s}, fresh={fresh}, known={known})"
                    );
                }
            }
        }
    }
    pass("3 (checker proves the published pair; decision table matches cell-for-cell)");
}

// ---------------------------------------------------------------------------
// 4. Pipeline identities

#[test]
fn criterion_04_pipeline_identities() {
    let fx = fixtures::reference();

    for element in fx.world.elements.keys() {
        let admitted = fx.env.admitted_triples(&fx.world, element).unwrap();
        let mut points: Vec<PipelinePoint> = admitted.iter().take(1).cloned().collect();
        let paper = fx.point_paper();
        if admitted.contains(&paper) && !points.contains(&paper) {
            points.push(paper);
        }
        for point in points {
            let mut ctx_direct = fx.ctx.clone();
            let (direct, _) =
                run_pipeline(&fx.world, &fx.env, element, &point, &mut ctx_direct).unwrap();

            let mut ctx_judged = fx.ctx.clone();
            let claim = attest(&fx.world, element, &point.mechanism, &mut ctx_judged).unwrap();
            let judged = judgement(
                &fx.env,
                claim,
                &point.verify_policy,
                &point.decide_policy,
                &mut ctx_judged,
            )
            .unwrap();
            assert_eq!(direct, judged, "judgement∘attest diverged on {element}");

            let mut ctx_tw = fx.ctx.clone();
            let outcome = trustworthy(
                &fx.world,
                &fx.env,
                element,
                &point.mechanism,
                &point.verify_policy,
                &mut ctx_tw,
            )
            .unwrap();
            let decided = decide(&fx.env.decide_policies[&point.decide_policy], &outcome).unwrap();
            assert_eq!(direct, decided, "decide∘trustworthy diverged on {element}");
        }
    }

    // ground ∘ attest = identity, exhaustively.
    let mut ctx = fx.ctx.clone();
    for element in fx.world.elements.keys() {
        for mechanism in fx.world.mechanisms.keys() {
            let claim = attest(&fx.world, element, mechanism, &mut ctx).unwrap();
            assert_eq!(trustkit_core::evidence::ground(&claim), element);
        }
    }

    // Unattestable elements always decide bottom.
    let mut ctx = fx.ctx.clone();
    let (level, _) = run_pipeline(
        &fx.world,
        &fx.env,
        &"dormant1".into(),
        &fx.point_paper(),
        &mut ctx,
    )
    .unwrap();
    assert_eq!(level, fx.env.lattice.bottom());

    // Context identical before and after, modulo the nonce lifecycle.
    let mut ctx = fx.ctx.clone();
    let before = ctx.clone();
    run_pipeline(&fx.world, &fx.env, &"pc1".into(), &fx.point_paper(), &mut ctx).unwrap();
    assert_eq!(ctx.expectations, before.expectations);
    assert_eq!(ctx.key_registry, before.key_registry);
    assert_eq!(ctx.known_elements, before.known_elements);
    assert_eq!(ctx.clock, before.clock);
    assert_eq!(ctx.metadata, before.metadata);
    assert_eq!(ctx.persisted, before.persisted);
    assert_eq!(ctx.nonce_registry, before.nonce_registry);
    pass("4 (pipeline = judgement∘attest = decide∘trustworthy; grounding; zero morphism; Ξ preserved)");
}

// ---------------------------------------------------------------------------
// 5. Forensics failure modes

#[test]
fn criterion_05_forensic_failure_modes() {
    let fx = fixtures::reference();

    let failed = |element: &str| -> BTreeSet<PredicateAtom> {
        let mut ctx = fx.ctx.clone();
        let (_, report) =
            run_pipeline(&fx.world, &fx.env, &element.into(), &fx.point_paper(), &mut ctx)
                .unwrap();
        report.failed_atoms
    };

    assert_eq!(
        failed("pc_impostor"),
        [PredicateAtom::ChiS].into_iter().collect(),
        "impersonation"
    );
    assert_eq!(
        failed("pc_compromised"),
        [PredicateAtom::ChiM].into_iter().collect(),
        "compromise"
    );

    // Replay: a claim whose nonce is already consumed fails exactly ChiI.
    let mut ctx = fx.ctx.clone();
    let claim = attest(&fx.world, &"pc1".into(), &"quote".into(), &mut ctx).unwrap();
    ctx.consume_nonce(&claim.claim_id.nonce);
    let outcome =
        trustkit_core::verdict::verify(&fx.env.verify_policies["paper"], claim, &mut ctx).unwrap();
    let failed_atoms: BTreeSet<PredicateAtom> = outcome
        .atom_values
        .iter()
        .filter(|(_, v)| !**v)
        .map(|(a, _)| a.clone())
        .collect();
    assert_eq!(failed_atoms, [PredicateAtom::ChiI].into_iter().collect());
    assert!(outcome.class.is_error);
    pass("5 (forensics isolates {ChiS}, {ChiM}, {ChiI})");
}

// ---------------------------------------------------------------------------
// 6. Trust potential

#[test]
fn criterion_06_trust_potential() {
    let fx = fixtures::reference();

    let names = |levels: &BTreeSet<trustkit_core::lattice::TrustLevel>| -> BTreeSet<String> {
        levels.iter().map(|l| l.name().to_string()).collect()
    };

    let sensor = fx.env.trust_potential(&fx.world, &"sensor1".into()).unwrap();
    assert_eq!(
        names(&sensor),
        ["D_M", "⊥"].iter().map(|s| s.to_string()).collect()
    );

    let brick = fx.env.trust_potential(&fx.world, &"brick1".into()).unwrap();
    assert_eq!(names(&brick), ["⊥".to_string()].into_iter().collect());
    assert!(matches!(
        fx.env
            .trustable_class(&fx.world, &"brick1".into(), &fx.env.lattice.bottom())
            .unwrap(),
        trustkit_core::capability::TrustableClass::Untrustable
    ));

    let pc = fx.env.trust_potential(&fx.world, &"pc1".into()).unwrap();
    assert!(pc.contains(&fx.env.lattice.top()));
    assert!(matches!(
        fx.env
            .trustable_class(&fx.world, &"pc1".into(), &fx.env.lattice.bottom())
            .unwrap(),
        trustkit_core::capability::TrustableClass::FullyTrustable
    ));

    // Brute-force cross-check: materialize concrete claims per quadrant and
    // run the real pipeline, as in the capability test oracle.
    for (element, expected) in [("sensor1", &sensor), ("brick1", &brick), ("pc1", &pc)] {
        let mut brute: BTreeSet<String> = BTreeSet::new();
        let element_id = ElementId::from(element);
        for point in fx.env.admitted_triples(&fx.world, &element_id).unwrap() {
            let elem = &fx.world.elements[&element_id];
            let mechanism = &fx.world.mechanisms[&point.mechanism];
            let mut measurements = vec![Measurement::NullM];
            let readable: BTreeMap<String, Vec<u8>> = elem
                .state
                .iter()
                .filter(|(name, _)| match mechanism.reads {
                    trustkit_core::evidence::SlotSelector::Integrity => {
                        name.as_str() != "ak_ref"
                            && name.as_str() != "serial"
                            && !name.starts_with("ek_")
                    }
                    trustkit_core::evidence::SlotSelector::SerialOnly => name.as_str() == "serial",
                    trustkit_core::evidence::SlotSelector::None => false,
                })
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if !readable.is_empty() {
                measurements.push(Measurement::values(readable));
            }
            for measurement in &measurements {
                for expect_match in [true, false] {
                    for key_valid in [true, false] {
                        for fresh in [true, false] {
                            for known in [true, false] {
                                let mut ctx = Context::new();
                                if known {
                                    ctx.known_elements.insert(element_id.clone());
                                }
                                if expect_match {
                                    if let Measurement::Values { registers } = measurement {
                                        ctx.expectations
                                            .insert(element_id.clone(), registers.clone());
                                    }
                                } else {
                                    ctx.expectations.insert(
                                        element_id.clone(),
                                        [("other".to_string(), vec![0xff_u8])]
                                            .into_iter()
                                            .collect(),
                                    );
                                }
                                let claim_id = if fresh {
                                    ctx.mint_claim_id()
                                } else {
                                    ClaimId {
                                        nonce: vec![0x51],
                                        timestamp: 0,
                                    }
                                };
                                let signs = mechanism.signs && elem.ak_ref().is_some();
                                let signature = if signs {
                                    let key_ref = if key_valid {
                                        ctx.key_registry
                                            .insert("ak_x".into(), element_id.clone());
                                        "ak_x".to_string()
                                    } else {
                                        "ak_unknown".to_string()
                                    };
                                    Signature::Sig {
                                        key_ref,
                                        payload_digest: measurement.digest(),
                                        nonce: claim_id.nonce.clone(),
                                    }
                                } else {
                                    Signature::NullS
                                };
                                let claim = Claim {
                                    measurement: measurement.clone(),
                                    signature,
                                    claim_id,
                                    grounded_to: element_id.clone(),
                                    mechanism: point.mechanism.clone(),
                                };
                                let level = judgement(
                                    &fx.env,
                                    claim,
                                    &point.verify_policy,
                                    &point.decide_policy,
                                    &mut ctx,
                                )
                                .unwrap();
                                brute.insert(level.name().to_string());
                            }
                        }
                    }
                }
            }
        }
        if brute.is_empty() {
            brute.insert("⊥".to_string());
        }
        assert_eq!(&names(expected), &brute, "oracle mismatch on {element}");
    }
    pass("6 (trust potential: sensor {D_M,⊥}, brick untrustable, PC fully trustable; oracle agrees)");
}

// ---------------------------------------------------------------------------
// 7. Lifecycle

#[test]
fn criterion_07_lifecycle() {
    let fx = fixtures::reference();

    let trace = run_scenario(
        &fixtures::boot_run_shutdown_script(false),
        &fx.world,
        &fx.env,
        &fx.sigmas,
        fx.ctx.clone(),
    )
    .unwrap();
    assert!(trace.ok(), "{trace:?}");
    let levels: Vec<String> = trace
        .steps
        .iter()
        .filter_map(|s| s.level.as_ref().map(|l| l.name().to_string()))
        .collect();
    assert_eq!(levels, vec!["D_AUTH", "⊤", "D_AUTH"]);

    let weak = run_scenario(
        &fixtures::boot_run_shutdown_script(true),
        &fx.world,
        &fx.env,
        &fx.sigmas,
        fx.ctx.clone(),
    )
    .unwrap();
    assert_eq!(weak.assertions_failed(), 1, "{weak:?}");

    // 1000 randomized interleavings; counters obey their monotone rules.
    let pc1 = ElementId::from("pc1");
    let mut rng = StdRng::seed_from_u64(0xc0_4e7e5);
    for _ in 0..1000 {
        let mut steps = Vec::new();
        let mut sim = 0u8;
        for _ in 0..rng.gen_range(1..16) {
            match sim {
                0 => {
                    steps.push(ScenarioStep::Apply {
                        sigma: "power_on".into(),
                    });
                    sim = 1;
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
                        sim = 2;
                    }
                },
                _ => {
                    steps.push(ScenarioStep::PowerCycle);
                    sim = 0;
                }
            }
        }
        let script = ScenarioScript {
            name: "walk".into(),
            subject: pc1.clone(),
            point: Some(fx.point_paper()),
            steps,
        };
        let mut runner =
            ScenarioRunner::new(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
        let mut prev_reset = 0;
        let mut prev_restart = 0;
        while let Some(record) = runner.step() {
            let desc = record.desc;
            let reset = *runner.ctx.reset_counter.get(&pc1).unwrap_or(&0);
            let restart = *runner.ctx.restart_counter.get(&pc1).unwrap_or(&0);
            assert!(reset >= prev_reset, "reset counter decreased");
            match desc.as_str() {
                "power_cycle" => {
                    assert_eq!(reset, prev_reset + 1);
                    assert_eq!(restart, 0);
                }
                "restart" => {
                    assert_eq!(restart, prev_restart + 1);
                    assert_eq!(reset, prev_reset);
                }
                _ => {
                    assert_eq!(restart, prev_restart);
                    assert_eq!(reset, prev_reset);
                }
            }
            prev_reset = reset;
            prev_restart = restart;
        }
    }
    pass("7 (boot-run-shutdown constraint; weak variant fails; counters monotone over 1000 walks)");
}

// ---------------------------------------------------------------------------
// 8. Evil Maid, in-process and over the wire

#[test]
fn criterion_08_evil_maid() {
    let fx = fixtures::reference();

    for (variant, expected) in [
        (EvilMaidVariant::ErrorRouting, "⊥"),
        (EvilMaidVariant::CaseTable, "D_S"),
    ] {
        // In-process.
        let script = evil_maid_fixture(variant);
        let trace = run_scenario(&script, &fx.world, &fx.env, &fx.sigmas, fx.ctx.clone()).unwrap();
        assert!(trace.ok(), "{variant:?}: {trace:?}");
        assert_eq!(trace.final_level.as_ref().unwrap().name(), expected);
        // ChiS held and, in the error routing, the meet law was asserted.
        assert!(trace
            .steps
            .iter()
            .any(|s| s.desc.contains("atom chi_s")
                && matches!(s.assertion, Some(trustkit_core::lifecycle::AssertionOutcome::Pass))));

        // Over the wire: replay the mutation steps, serve the tampered
        // world, and run the staged evaluation remotely.
        let mutation_script = ScenarioScript {
            name: "mutations".into(),
            subject: ElementId::from("pc1"),
            point: script.point.clone(),
            steps: script
                .steps
                .iter()
                .filter(|s| {
                    matches!(
                        s,
                        ScenarioStep::Apply { .. }
                            | ScenarioStep::PowerCycle
                            | ScenarioStep::Tamper { .. }
                    )
                })
                .cloned()
                .collect(),
        };
        let mut runner = ScenarioRunner::new(
            &mutation_script,
            &fx.world,
            &fx.env,
            &fx.sigmas,
            fx.ctx.clone(),
        )
        .unwrap();
        while runner.step().is_some() {}
        let tampered_world = runner.world_view().clone();
        let tampered_ctx = runner.ctx.clone();

        let rig = WireRig::start(tampered_world, fx.env.clone(), tampered_ctx);
        let mut client = rig.client();
        let point = script.point.clone().unwrap();
        let (level, atoms) = staged_wire_eval(&mut client, "pc1", &point);
        assert_eq!(level, expected, "{variant:?} over the wire");
        assert!(atoms[&PredicateAtom::ChiS], "identity survives");
    }

    // The lattice identity asserted by the error-routing script.
    let lattice = &fx.env.lattice;
    let auth = lattice.level("D_AUTH").unwrap();
    assert_eq!(lattice.meet(&auth, &lattice.bottom()).unwrap(), lattice.bottom());
    pass("8 (evil maid: ⊥ under error routing, D_S under the case table, in-process and wire)");
}

// ---------------------------------------------------------------------------
// 9. Composition

#[test]
fn criterion_09_composition() {
    let fx = fixtures::reference();

    let mut ctx = fx.ctx.clone();
    let (level, _) = aggregate_trust(
        &fx.world,
        &fx.env,
        &CompositionView::new("comp_root"),
        &fx.point_paper(),
        &mut ctx,
        AggregationMode::Meet,
    )
    .unwrap();
    assert_eq!(level.name(), "D_M");

    let top = fx.env.lattice.top();
    let view = CompositionView::new("vent_main").with_mediation("vent_gas", top.clone(), "boundary");
    let mut ctx = fx.ctx.clone();
    let (meet_level, _) = aggregate_trust(
        &fx.world,
        &fx.env,
        &view,
        &fx.point_paper(),
        &mut ctx,
        AggregationMode::Meet,
    )
    .unwrap();
    assert_eq!(meet_level, fx.env.lattice.bottom());
    let mut ctx = fx.ctx.clone();
    let (mediated_level, _) = aggregate_trust(
        &fx.world,
        &fx.env,
        &view,
        &fx.point_paper(),
        &mut ctx,
        AggregationMode::Mediated,
    )
    .unwrap();
    assert_eq!(mediated_level, top);

    // Duplication invariance over random trees of up to 15 nodes.
    let mut rng = StdRng::seed_from_u64(0xd0_ab1e);
    for _ in 0..40 {
        let n = rng.gen_range(1..=15);
        let mut world = fx.world.clone();
        let mut ctx_base = fx.ctx.clone();
        for i in 0..n {
            let archetype = match rng.gen_range(0..3) {
                0 => "pc1",
                1 => "sensor1",
                _ => "brick1",
            };
            let id = ElementId::from(format!("node{i}").as_str());
            let mut element = world.elements[&ElementId::from(archetype)].clone();
            element.id = id.clone();
            element.children = Vec::new();
            if archetype == "pc1" {
                element
                    .state
                    .insert("ak_ref".into(), format!("ak_node{i}").into_bytes());
                ctx_base.key_registry.insert(format!("ak_node{i}"), id.clone());
                ctx_base
                    .expectations
                    .insert(id.clone(), fx.ctx.expectations[&ElementId::from("pc1")].clone());
            } else if archetype == "sensor1" {
                ctx_base.expectations.insert(
                    id.clone(),
                    fx.ctx.expectations[&ElementId::from("sensor1")].clone(),
                );
            }
            ctx_base.known_elements.insert(id.clone());
            world.elements.insert(id.clone(), element);
        }
        for i in 1..n {
            let parent = ElementId::from(format!("node{}", (i - 1) / 2).as_str());
            let child = ElementId::from(format!("node{i}").as_str());
            world.elements.get_mut(&parent).unwrap().children.push(child);
        }
        let view = CompositionView::new("node0");
        let mut ctx_a = ctx_base.clone();
        let (before, _) = aggregate_trust(
            &world,
            &fx.env,
            &view,
            &fx.point_paper(),
            &mut ctx_a,
            AggregationMode::Meet,
        )
        .unwrap();
        // Duplicate a random node under a random smaller-index parent.
        if n > 1 {
            let target = rng.gen_range(1..n);
            let parent = rng.gen_range(0..target);
            let child = ElementId::from(format!("node{target}").as_str());
            let parent = ElementId::from(format!("node{parent}").as_str());
            let parent_elem = world.elements.get_mut(&parent).unwrap();
            if !parent_elem.children.contains(&child) {
                parent_elem.children.push(child);
            }
        }
        let mut ctx_b = ctx_base.clone();
        let (after, _) = aggregate_trust(
            &world,
            &fx.env,
            &view,
            &fx.point_paper(),
            &mut ctx_b,
            AggregationMode::Meet,
        )
        .unwrap();
        assert_eq!(before, after, "duplication changed the aggregate");
    }
    pass("9 (meet over {⊤,D_M,⊤} is D_M; ventilator mediation ⊤ vs ⊥; duplication invariant)");
}

// ---------------------------------------------------------------------------
// 10. Transport transparency

#[test]
fn criterion_10_transport_transparency() {
    let fx = fixtures::reference();
    let rig = WireRig::start(fx.world.clone(), fx.env.clone(), fx.ctx.clone());
    let mut client = rig.client();

    let mut compared = 0;
    for element in fx.world.elements.keys() {
        let admitted = fx.env.admitted_triples(&fx.world, element).unwrap();
        let Some(point) = admitted.iter().next().cloned() else {
            continue;
        };
        let (wire_level, wire_atoms) = staged_wire_eval(&mut client, element.as_str(), &point);
        let mut ctx = fx.ctx.clone();
        let (local_level, report) =
            run_pipeline(&fx.world, &fx.env, element, &point, &mut ctx).unwrap();
        assert_eq!(wire_level, local_level.name(), "level on {element}");
        let wire_failed: BTreeSet<PredicateAtom> = wire_atoms
            .iter()
            .filter(|(_, v)| !**v)
            .map(|(a, _)| a.clone())
            .collect();
        assert_eq!(wire_failed, report.failed_atoms, "atoms on {element}");
        compared += 1;
    }
    assert!(compared >= 9, "only {compared} fixtures compared");

    // Replayed attestation response fails freshness.
    let response = client
        .expect_ok(WireMessage::AttestRequest {
            element: "pc1".into(),
            mechanism: "quote".into(),
            nonce: None,
        })
        .unwrap();
    let WireMessage::AttestResponse {
        claim_ref: Some(claim_ref),
        ..
    } = response
    else {
        panic!()
    };
    for round in 0..2 {
        let response = client
            .expect_ok(WireMessage::VerifyRequest {
                claim_ref: claim_ref.clone(),
                verify_policy: "paper".into(),
            })
            .unwrap();
        let WireMessage::VerifyResponse {
            is_error,
            atom_values,
            ..
        } = response
        else {
            panic!()
        };
        if round == 0 {
            assert!(!is_error);
        } else {
            assert!(is_error, "replay must fail");
            assert!(!atom_values[&PredicateAtom::ChiI]);
        }
    }
    pass("10 (wire and in-process agree on every fixture; replay fails freshness)");
}

// ---------------------------------------------------------------------------
// 11. Policy-language round trip

#[test]
fn criterion_11_dsl_round_trip() {
    use trustkit_dsl::{parse, render, SourceDocument};

    // The reference document.
    let path = format!("{}/../../fixtures/reference.trust", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(path).unwrap();
    let parsed = parse(&SourceDocument::new("reference.trust", text));
    assert!(parsed.diagnostics.is_empty());
    let rendered = render(&parsed.model.unwrap());
    let reparsed = parse(&SourceDocument::new("rendered", rendered.clone()));
    assert!(reparsed.diagnostics.is_empty());
    assert_eq!(render(&reparsed.model.unwrap()), rendered);

    // 120 generated models.
    let mut rng = StdRng::seed_from_u64(0xd51_9e4);
    for round in 0..120 {
        let model = random_model(&mut rng);
        let rendered = render(&model);
        let result = parse(&SourceDocument::new("generated", rendered.clone()));
        assert!(
            result.diagnostics.is_empty(),
            "round {round}: {:?}\n{rendered}",
            result.diagnostics
        );
        let re_rendered = render(&result.model.unwrap());
        assert_eq!(rendered, re_rendered, "round {round}");
    }

    // Diagnostics always carry positions.
    let broken = [
        "lattice { }\n",
        "trust-dsl 1\nwibble { }\n",
        "trust-dsl 1\nlattice { colour purple; }\n",
        "trust-dsl 1\nelement e { slot x = hex:zz; }\n",
        "trust-dsl 1\nverify_policy p { case -> x; }\n",
        "trust-dsl 1\nscenario s { step fly; }\n",
    ];
    for text in broken {
        let result = parse(&SourceDocument::new("broken", text));
        assert!(!result.diagnostics.is_empty(), "{text}");
        for diag in &result.diagnostics {
            assert!(diag.line > 0 && diag.col > 0, "positionless: {diag:?}");
        }
    }
    pass("11 (parse∘render round trip on reference and 120 generated models; positioned diagnostics)");
}

fn random_ident(rng: &mut StdRng) -> String {
    let len = rng.gen_range(1..6);
    let mut s = String::new();
    s.push((b'a' + rng.gen_range(0..26)) as char);
    for _ in 1..len {
        let c = match rng.gen_range(0..3) {
            0 => (b'a' + rng.gen_range(0..26)) as char,
            1 => (b'0' + rng.gen_range(0..10)) as char,
            _ => '_',
        };
        s.push(c);
    }
    s
}

fn random_model(rng: &mut StdRng) -> trustkit_dsl::Model {
    use trustkit_dsl::*;

    let mut levels: BTreeSet<String> = BTreeSet::new();
    while levels.len() < rng.gen_range(2..6) {
        levels.insert(random_ident(rng));
    }
    let levels: Vec<String> = levels.into_iter().collect();
    let mut orders = Vec::new();
    for i in 0..levels.len() {
        for j in (i + 1)..levels.len() {
            if rng.gen_bool(0.3) {
                orders.push((levels[i].clone(), levels[j].clone()));
            }
        }
    }
    let lattice = LatticeDecl {
        origin: String::new(),
        pos: Pos::default(),
        levels: levels.clone(),
        orders,
        bottom: Some(levels[0].clone()),
        top: Some(levels[levels.len() - 1].clone()),
    };

    let mut elements = Vec::new();
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for _ in 0..rng.gen_range(0..4) {
        ids.insert(random_ident(rng));
    }
    for id in &ids {
        let mut slots = Vec::new();
        let mut slot_names: BTreeSet<String> = BTreeSet::new();
        for _ in 0..rng.gen_range(0..3) {
            slot_names.insert(random_ident(rng));
        }
        for name in slot_names {
            slots.push(SlotDecl {
                name,
                value: if rng.gen_bool(0.5) {
                    ValueDecl::Hex((0..rng.gen_range(1..5)).map(|_| rng.gen()).collect())
                } else {
                    ValueDecl::Str(random_ident(rng))
                },
                persistence: match rng.gen_range(0..3) {
                    0 => PersistenceDecl::Persistent,
                    1 => PersistenceDecl::Restart,
                    _ => PersistenceDecl::Volatile,
                },
            });
        }
        elements.push(ElementDecl {
            origin: String::new(),
            pos: Pos::default(),
            id: id.clone(),
            attestable: rng.gen_bool(0.8),
            capabilities: {
                let mut caps: BTreeSet<String> = BTreeSet::new();
                for _ in 0..rng.gen_range(0..3) {
                    caps.insert(
                        ["quote", "measure_only", "token_only", "serial_read"]
                            [rng.gen_range(0..4)]
                        .to_string(),
                    );
                }
                caps.into_iter().collect()
            },
            slots,
            children: Vec::new(),
        });
    }

    let mut verify_policies = Vec::new();
    if rng.gen_bool(0.8) {
        let mut cases = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            let atoms = ["chi_s", "chi_m", "chi_i", "chi_null"];
            let mut terms: Vec<ExprDecl> = Vec::new();
            for _ in 0..rng.gen_range(1..4) {
                let atom = ExprDecl::Atom {
                    name: atoms[rng.gen_range(0..4)].to_string(),
                    pos: Pos::default(),
                };
                terms.push(if rng.gen_bool(0.4) {
                    ExprDecl::Not(Box::new(atom))
                } else {
                    atom
                });
            }
            let expr = if terms.len() == 1 {
                terms.pop().unwrap()
            } else if rng.gen_bool(0.7) {
                ExprDecl::And(terms)
            } else {
                ExprDecl::Or(terms)
            };
            cases.push(CaseDecl {
                pos: Pos::default(),
                expr,
                target: random_ident(rng),
            });
        }
        verify_policies.push(VerifyPolicyDecl {
            origin: String::new(),
            pos: Pos::default(),
            name: random_ident(rng),
            classes: vec![
                (random_ident(rng), false),
                ("ERR".to_string(), true),
            ],
            guards: Vec::new(),
            cases,
            default: Some("ERR".to_string()),
        });
    }

    let mut decide_policies = Vec::new();
    if rng.gen_bool(0.8) {
        let mut rules = Vec::new();
        for _ in 0..rng.gen_range(0..4) {
            rules.push(RuleDecl {
                pos: Pos::default(),
                class: random_ident(rng),
                guard: match rng.gen_range(0..4) {
                    0 => Some(GuardSpecDecl::MeasurementNull),
                    1 => Some(GuardSpecDecl::MeasurementPresent),
                    2 => Some(GuardSpecDecl::CtxEquals {
                        key: random_ident(rng),
                        value: random_ident(rng),
                    }),
                    _ => None,
                },
                target: levels[rng.gen_range(0..levels.len())].clone(),
            });
        }
        decide_policies.push(DecidePolicyDecl {
            origin: String::new(),
            pos: Pos::default(),
            name: random_ident(rng),
            rules,
            defaults: Vec::new(),
        });
    }

    let mut scenarios = Vec::new();
    if rng.gen_bool(0.6) && !ids.is_empty() {
        let subject = ids.iter().next().unwrap().clone();
        let mut steps = Vec::new();
        for _ in 0..rng.gen_range(0..5) {
            let step = match rng.gen_range(0..6) {
                0 => StepDecl::Apply {
                    sigma: "power_on".into(),
                },
                1 => StepDecl::PowerCycle,
                2 => StepDecl::Restart,
                3 => StepDecl::Attest { point: None },
                4 => StepDecl::AssertLevel {
                    cmp: ["==", "<=", ">=", "<", ">"][rng.gen_range(0..5)].to_string(),
                    level: levels[rng.gen_range(0..levels.len())].clone(),
                },
                _ => StepDecl::Tamper {
                    slot: random_ident(rng),
                    value: ValueDecl::Hex(vec![rng.gen()]),
                },
            };
            steps.push((step, Pos::default()));
        }
        scenarios.push(ScenarioDecl {
            origin: String::new(),
            pos: Pos::default(),
            name: random_ident(rng),
            subject,
            point: None,
            steps,
        });
    }

    Model {
        lattice: Some(lattice),
        elements,
        context: ContextDecl::default(),
        verify_policies,
        decide_policies,
        rho: RhoDecl::default(),
        sigmas: Vec::new(),
        scenarios,
    }
}
