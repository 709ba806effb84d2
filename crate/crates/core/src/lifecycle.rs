//! Element lifecycle: powered-off and decommissioned states, sigma
//! operations over live elements, restart versus reset semantics, scripted
//! scenarios with trust-level assertions, and operation classification.
//!
//! The powered-off and pre-boot states are isomorphic: neither carries
//! element state. Everything that survives a power cycle lives in the
//! context — persistent slots are written there at power-off and read back
//! at power-on, which is also what makes the evil-maid tampering step
//! expressible: the attacker edits the persisted state while the element
//! does not exist.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::capability::Environment;
use crate::evidence::{Context, Element, ElementId, Persistence, World};
use crate::lattice::{LatticeError, TrustLevel};
use crate::pipeline::{run_pipeline, PipelineError, PipelinePoint};
use crate::verdict::{PredicateAtom, VerdictOutcome};

/// Reserved sigma names for the transitions in and out of existence.
pub const SIGMA_POWER_ON: &str = "power_on";
pub const SIGMA_POWER_OFF: &str = "power_off";

/// Where an element is in its lifecycle. The two ends carry no element
/// state; persisted data lives only in the context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LifecycleState {
    Zero,
    Live { element: Element, phase: String },
    Terminal,
}

impl LifecycleState {
    pub fn phase(&self) -> Option<&str> {
        match self {
            LifecycleState::Live { phase, .. } => Some(phase),
            _ => None,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            LifecycleState::Zero => "zero",
            LifecycleState::Live { .. } => "live",
            LifecycleState::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaClass {
    Idempotent,
    Dangerous,
    Unclassified,
}

/// One declarative edit a sigma operation performs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateEdit {
    SetSlot { slot: String, value: Vec<u8> },
    ClearSlot { slot: String },
    SetPhase { phase: String },
    SetMeta { key: String, value: String },
}

/// A lifecycle operation on live elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmaOp {
    pub name: String,
    pub class: SigmaClass,
    pub effect: Vec<StateEdit>,
}

impl SigmaOp {
    pub fn power_on() -> Self {
        SigmaOp {
            name: SIGMA_POWER_ON.into(),
            class: SigmaClass::Unclassified,
            effect: Vec::new(),
        }
    }

    pub fn power_off() -> Self {
        SigmaOp {
            name: SIGMA_POWER_OFF.into(),
            class: SigmaClass::Unclassified,
            effect: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("sigma `{op}` is not a valid transition from the {from} state")]
    InvalidTransition { op: String, from: &'static str },
    #[error("unknown sigma `{0}`")]
    UnknownSigma(String),
    #[error("unknown scenario subject `{0}`")]
    UnknownSubject(ElementId),
    #[error("scenario has no pipeline point for its attest step")]
    MissingPoint,
    #[error(transparent)]
    Evidence(#[from] crate::evidence::EvidenceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Rebuild the element at power-on: the base definition, with state taken
/// from the context's persisted store when present (volatile and
/// restart-survivable slots do not come back).
fn materialize_boot(base: &Element, ctx: &Context) -> Element {
    let mut element = base.clone();
    if let Some(persisted) = ctx.persisted.get(&base.id) {
        element.state = persisted.clone();
    }
    element.attestable = true;
    element
}

fn persist_slots(element: &Element) -> BTreeMap<String, Vec<u8>> {
    element
        .state
        .iter()
        .filter(|(slot, _)| element.slot_persistence(slot) == Persistence::Persistent)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Apply a sigma operation. `power_on` takes Zero to a live boot state,
/// `power_off` persists the durable slots into the context and ends at
/// Terminal; every other sigma edits a live element in place.
pub fn apply_sigma(
    state: LifecycleState,
    op: &SigmaOp,
    base: &Element,
    ctx: &mut Context,
) -> Result<LifecycleState, LifecycleError> {
    match (op.name.as_str(), state) {
        (SIGMA_POWER_ON, LifecycleState::Zero) => Ok(LifecycleState::Live {
            element: materialize_boot(base, ctx),
            phase: "boot".into(),
        }),
        (SIGMA_POWER_OFF, LifecycleState::Live { element, .. }) => {
            ctx.persisted
                .insert(element.id.clone(), persist_slots(&element));
            Ok(LifecycleState::Terminal)
        }
        (SIGMA_POWER_ON, state) | (SIGMA_POWER_OFF, state) => {
            Err(LifecycleError::InvalidTransition {
                op: op.name.clone(),
                from: state.describe(),
            })
        }
        (_, LifecycleState::Live { mut element, phase }) => {
            let mut phase = phase;
            for edit in &op.effect {
                match edit {
                    StateEdit::SetSlot { slot, value } => {
                        element.state.insert(slot.clone(), value.clone());
                    }
                    StateEdit::ClearSlot { slot } => {
                        element.state.remove(slot);
                    }
                    StateEdit::SetPhase { phase: p } => phase = p.clone(),
                    StateEdit::SetMeta { key, value } => {
                        ctx.metadata.insert(key.clone(), value.clone());
                    }
                }
            }
            Ok(LifecycleState::Live { element, phase })
        }
        (_, state) => Err(LifecycleError::InvalidTransition {
            op: op.name.clone(),
            from: state.describe(),
        }),
    }
}

/// Terminal to Zero: the machine is gone and may come back. Increments the
/// reset counter and zeroes the restart counter.
pub fn power_cycle(
    state: LifecycleState,
    subject: &ElementId,
    ctx: &mut Context,
) -> Result<LifecycleState, LifecycleError> {
    match state {
        LifecycleState::Terminal => {
            *ctx.reset_counter.entry(subject.clone()).or_insert(0) += 1;
            ctx.restart_counter.insert(subject.clone(), 0);
            Ok(LifecycleState::Zero)
        }
        state => Err(LifecycleError::InvalidTransition {
            op: "power_cycle".into(),
            from: state.describe(),
        }),
    }
}

/// Warm reboot of a live element: volatile slots are cleared, persistent and
/// restart-survivable slots carry over, the restart counter increments.
pub fn restart(
    state: LifecycleState,
    subject: &ElementId,
    ctx: &mut Context,
) -> Result<LifecycleState, LifecycleError> {
    match state {
        LifecycleState::Live { mut element, .. } => {
            element
                .state
                .retain(|slot, _| element.persistence.get(slot) != Some(&Persistence::Volatile));
            *ctx.restart_counter.entry(subject.clone()).or_insert(0) += 1;
            Ok(LifecycleState::Live {
                element,
                phase: "boot".into(),
            })
        }
        state => Err(LifecycleError::InvalidTransition {
            op: "restart".into(),
            from: state.describe(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelCmp {
    Eq,
    Leq,
    Geq,
    Lt,
    Gt,
}

impl LevelCmp {
    pub fn symbol(&self) -> &'static str {
        match self {
            LevelCmp::Eq => "==",
            LevelCmp::Leq => "<=",
            LevelCmp::Geq => ">=",
            LevelCmp::Lt => "<",
            LevelCmp::Gt => ">",
        }
    }
}

/// One scripted step of a lifecycle scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioStep {
    Apply { sigma: String },
    PowerCycle,
    Restart,
    /// Privileged offline edit of the subject's persisted state; only legal
    /// while the element does not exist (Zero or Terminal). This is the
    /// attacker's move, not one of the element's own operations.
    Tamper { slot: String, value: Vec<u8> },
    Attest { point: Option<PipelinePoint> },
    AssertLevel { cmp: LevelCmp, level: String },
    AssertAtom { atom: PredicateAtom, expected: bool },
    AssertMeet { a: String, b: String, expect: String },
    /// The boot-run-shutdown constraint: floor ≤ A(boot) < A(run) ≥
    /// A(shutdown), evaluated over the last attestation in each phase.
    AssertPhases {
        floor: String,
        boot: String,
        run: String,
        shutdown: String,
    },
}

/// A lifecycle script over one subject element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioScript {
    pub name: String,
    pub subject: ElementId,
    /// Default point for attest steps that do not name their own.
    pub point: Option<PipelinePoint>,
    pub steps: Vec<ScenarioStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AssertionOutcome {
    Pass,
    Fail { detail: String },
    /// Strict comparison was requested between incomparable levels; neither
    /// pass nor fail is honest.
    Incomparable { a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub desc: String,
    /// Lifecycle phase after the step; absent in Zero/Terminal.
    pub phase: Option<String>,
    /// Decision produced, for attest steps.
    pub level: Option<TrustLevel>,
    pub assertion: Option<AssertionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub scenario: String,
    pub subject: ElementId,
    pub steps: Vec<StepRecord>,
    pub final_level: Option<TrustLevel>,
    /// Set when an invalid transition or pipeline error aborted the run;
    /// the steps up to that point remain.
    pub aborted: Option<String>,
}

impl Trace {
    pub fn assertions(&self) -> impl Iterator<Item = &AssertionOutcome> {
        self.steps.iter().filter_map(|s| s.assertion.as_ref())
    }

    pub fn assertions_passed(&self) -> usize {
        self.assertions()
            .filter(|a| matches!(a, AssertionOutcome::Pass))
            .count()
    }

    pub fn assertions_failed(&self) -> usize {
        self.assertions()
            .filter(|a| !matches!(a, AssertionOutcome::Pass))
            .count()
    }

    pub fn ok(&self) -> bool {
        self.aborted.is_none() && self.assertions_failed() == 0
    }
}

/// Drives one script step by step. The runner owns a copy of the world whose
/// subject element always mirrors the lifecycle state, so attestation steps
/// and external callers (the wire harness) see the same material.
pub struct ScenarioRunner<'a> {
    script: &'a ScenarioScript,
    env: &'a Environment,
    sigmas: &'a BTreeMap<String, SigmaOp>,
    world: World,
    pub ctx: Context,
    base: Element,
    state: LifecycleState,
    phase_levels: BTreeMap<String, TrustLevel>,
    last_level: Option<TrustLevel>,
    last_outcome: Option<VerdictOutcome>,
    records: Vec<StepRecord>,
    cursor: usize,
    aborted: Option<String>,
}

impl<'a> ScenarioRunner<'a> {
    /// Scenarios start from the powered-off Zero state; the world's element
    /// definition is the base the subject boots from.
    pub fn new(
        script: &'a ScenarioScript,
        world: &World,
        env: &'a Environment,
        sigmas: &'a BTreeMap<String, SigmaOp>,
        ctx: Context,
    ) -> Result<Self, LifecycleError> {
        let base = world
            .element(&script.subject)
            .map_err(|_| LifecycleError::UnknownSubject(script.subject.clone()))?
            .clone();
        let mut runner = ScenarioRunner {
            script,
            env,
            sigmas,
            world: world.clone(),
            ctx,
            base,
            state: LifecycleState::Zero,
            phase_levels: BTreeMap::new(),
            last_level: None,
            last_outcome: None,
            records: Vec::new(),
            cursor: 0,
            aborted: None,
        };
        runner.sync_world();
        Ok(runner)
    }

    /// The world as the subject's current lifecycle state presents it.
    pub fn world_view(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &LifecycleState {
        &self.state
    }

    fn sync_world(&mut self) {
        let element = match &self.state {
            LifecycleState::Live { element, .. } => element.clone(),
            // No element exists: same skeleton, unattestable, no state.
            LifecycleState::Zero | LifecycleState::Terminal => {
                let mut ghost = self.base.clone();
                ghost.state.clear();
                ghost.attestable = false;
                ghost
            }
        };
        self.world.elements.insert(self.base.id.clone(), element);
    }

    fn lookup_sigma(&self, name: &str) -> Result<SigmaOp, LifecycleError> {
        match name {
            SIGMA_POWER_ON => Ok(SigmaOp::power_on()),
            SIGMA_POWER_OFF => Ok(SigmaOp::power_off()),
            _ => self
                .sigmas
                .get(name)
                .cloned()
                .ok_or_else(|| LifecycleError::UnknownSigma(name.to_string())),
        }
    }

    fn level(&self, name: &str) -> Result<TrustLevel, LifecycleError> {
        Ok(self.env.lattice.level(name)?)
    }

    fn compare(&self, cmp: LevelCmp, a: &TrustLevel, b: &TrustLevel) -> AssertionOutcome {
        use std::cmp::Ordering::*;
        let ordering = match self.env.lattice.strict_cmp(a, b) {
            Ok(o) => o,
            Err(e) => {
                return AssertionOutcome::Fail {
                    detail: e.to_string(),
                }
            }
        };
        let pass = match (cmp, ordering) {
            (LevelCmp::Eq, Some(Equal)) => true,
            (LevelCmp::Leq, Some(Less | Equal)) => true,
            (LevelCmp::Geq, Some(Greater | Equal)) => true,
            (LevelCmp::Lt, Some(Less)) => true,
            (LevelCmp::Gt, Some(Greater)) => true,
            (_, None) => {
                return AssertionOutcome::Incomparable {
                    a: a.name().to_string(),
                    b: b.name().to_string(),
                }
            }
            _ => false,
        };
        if pass {
            AssertionOutcome::Pass
        } else {
            AssertionOutcome::Fail {
                detail: format!("expected {} {} {}", a, cmp.symbol(), b),
            }
        }
    }

    fn run_assert(&mut self, step: &ScenarioStep) -> Result<AssertionOutcome, LifecycleError> {
        Ok(match step {
            ScenarioStep::AssertLevel { cmp, level } => {
                let target = self.level(level)?;
                match &self.last_level {
                    Some(actual) => self.compare(*cmp, actual, &target),
                    None => AssertionOutcome::Fail {
                        detail: "no attestation has run yet".into(),
                    },
                }
            }
            ScenarioStep::AssertAtom { atom, expected } => match &self.last_outcome {
                Some(outcome) => match outcome.atom_values.get(atom) {
                    Some(actual) if actual == expected => AssertionOutcome::Pass,
                    Some(actual) => AssertionOutcome::Fail {
                        detail: format!("atom {atom} was {actual}, expected {expected}"),
                    },
                    None => AssertionOutcome::Fail {
                        detail: format!("policy does not evaluate atom {atom}"),
                    },
                },
                None => AssertionOutcome::Fail {
                    detail: "no attestation has run yet".into(),
                },
            },
            ScenarioStep::AssertMeet { a, b, expect } => {
                let (a, b, expect) = (self.level(a)?, self.level(b)?, self.level(expect)?);
                match self.env.lattice.meet(&a, &b) {
                    Ok(actual) if actual == expect => AssertionOutcome::Pass,
                    Ok(actual) => AssertionOutcome::Fail {
                        detail: format!("{a} ∧ {b} = {actual}, expected {expect}"),
                    },
                    Err(e) => AssertionOutcome::Fail {
                        detail: e.to_string(),
                    },
                }
            }
            ScenarioStep::AssertPhases {
                floor,
                boot,
                run,
                shutdown,
            } => {
                let floor = self.level(floor)?;
                let lookup = |phase: &str| -> Result<TrustLevel, String> {
                    self.phase_levels
                        .get(phase)
                        .cloned()
                        .ok_or_else(|| format!("phase `{phase}` has no recorded attestation"))
                };
                match (lookup(boot), lookup(run), lookup(shutdown)) {
                    (Ok(boot_lv), Ok(run_lv), Ok(shutdown_lv)) => {
                        let checks = [
                            self.compare(LevelCmp::Geq, &boot_lv, &floor),
                            self.compare(LevelCmp::Lt, &boot_lv, &run_lv),
                            self.compare(LevelCmp::Geq, &run_lv, &shutdown_lv),
                        ];
                        checks
                            .into_iter()
                            .find(|c| !matches!(c, AssertionOutcome::Pass))
                            .unwrap_or(AssertionOutcome::Pass)
                    }
                    (boot_r, run_r, shutdown_r) => AssertionOutcome::Fail {
                        detail: [boot_r.err(), run_r.err(), shutdown_r.err()]
                            .into_iter()
                            .flatten()
                            .collect::<Vec<_>>()
                            .join("; "),
                    },
                }
            }
            _ => unreachable!("run_assert only receives assertion steps"),
        })
    }

    fn describe_step(step: &ScenarioStep) -> String {
        match step {
            ScenarioStep::Apply { sigma } => format!("apply {sigma}"),
            ScenarioStep::PowerCycle => "power_cycle".into(),
            ScenarioStep::Restart => "restart".into(),
            ScenarioStep::Tamper { slot, .. } => format!("tamper {slot}"),
            ScenarioStep::Attest { point } => match point {
                Some(p) => format!("attest {p}"),
                None => "attest".into(),
            },
            ScenarioStep::AssertLevel { cmp, level } => {
                format!("assert level {} {level}", cmp.symbol())
            }
            ScenarioStep::AssertAtom { atom, expected } => {
                format!("assert atom {atom} == {expected}")
            }
            ScenarioStep::AssertMeet { a, b, expect } => {
                format!("assert meet {a} {b} == {expect}")
            }
            ScenarioStep::AssertPhases {
                floor,
                boot,
                run,
                shutdown,
            } => format!("assert phases {floor} <= {boot} < {run} >= {shutdown}"),
        }
    }

    /// Execute the next step, returning its record; `None` once the script
    /// is exhausted or the run aborted.
    pub fn step(&mut self) -> Option<StepRecord> {
        if self.aborted.is_some() || self.cursor >= self.script.steps.len() {
            return None;
        }
        let step = self.script.steps[self.cursor].clone();
        let index = self.cursor;
        self.cursor += 1;
        self.ctx.clock += 1;

        let mut record = StepRecord {
            index,
            desc: Self::describe_step(&step),
            phase: None,
            level: None,
            assertion: None,
        };

        let result: Result<(), LifecycleError> = (|| {
            match &step {
                ScenarioStep::Apply { sigma } => {
                    let op = self.lookup_sigma(sigma)?;
                    let state = std::mem::replace(&mut self.state, LifecycleState::Zero);
                    self.state = apply_sigma(state, &op, &self.base, &mut self.ctx)?;
                    self.sync_world();
                }
                ScenarioStep::PowerCycle => {
                    let state = std::mem::replace(&mut self.state, LifecycleState::Zero);
                    self.state = power_cycle(state, &self.base.id, &mut self.ctx)?;
                    self.sync_world();
                }
                ScenarioStep::Restart => {
                    let state = std::mem::replace(&mut self.state, LifecycleState::Zero);
                    self.state = restart(state, &self.base.id, &mut self.ctx)?;
                    self.sync_world();
                }
                ScenarioStep::Tamper { slot, value } => {
                    if matches!(self.state, LifecycleState::Live { .. }) {
                        return Err(LifecycleError::InvalidTransition {
                            op: "tamper".into(),
                            from: "live",
                        });
                    }
                    let persisted = self
                        .ctx
                        .persisted
                        .entry(self.base.id.clone())
                        .or_insert_with(|| persist_slots(&self.base));
                    persisted.insert(slot.clone(), value.clone());
                }
                ScenarioStep::Attest { point } => {
                    let point = point
                        .clone()
                        .or_else(|| self.script.point.clone())
                        .ok_or(LifecycleError::MissingPoint)?;
                    let (level, report) = run_pipeline(
                        &self.world,
                        self.env,
                        &self.base.id,
                        &point,
                        &mut self.ctx,
                    )?;
                    if let Some(phase) = self.state.phase() {
                        self.phase_levels.insert(phase.to_string(), level.clone());
                    }
                    self.last_level = Some(level.clone());
                    self.last_outcome = Some(report.outcome.clone());
                    record.level = Some(level);
                }
                assertion => {
                    record.assertion = Some(self.run_assert(assertion)?);
                }
            }
            Ok(())
        })();

        if let Err(e) = result {
            self.aborted = Some(e.to_string());
        }
        record.phase = self.state.phase().map(str::to_string);
        self.records.push(record);
        self.records.last().cloned()
    }

    pub fn finish(mut self) -> Trace {
        while self.step().is_some() {}
        Trace {
            scenario: self.script.name.clone(),
            subject: self.script.subject.clone(),
            steps: self.records,
            final_level: self.last_level,
            aborted: self.aborted,
        }
    }
}

/// Execute a script to completion. Deterministic given world and script.
pub fn run_scenario(
    script: &ScenarioScript,
    world: &World,
    env: &Environment,
    sigmas: &BTreeMap<String, SigmaOp>,
    ctx: Context,
) -> Result<Trace, LifecycleError> {
    Ok(ScenarioRunner::new(script, world, env, sigmas, ctx)?.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Declared idempotent but the decision changed.
    NotPreserved,
    /// The operation raised the decision; raising trust by operating is
    /// always reported, whatever the declared class.
    Raised,
    /// Declared dangerous but before/after are incomparable.
    NotMonotone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassificationViolation {
    pub element: ElementId,
    pub before: TrustLevel,
    pub after: TrustLevel,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassificationReport {
    pub op: String,
    pub class: SigmaClass,
    pub violations: Vec<ClassificationViolation>,
}

/// Check a sigma's declared class against its observed effect on the
/// pipeline decision, element by element: idempotent operations must
/// preserve the level, dangerous ones may only lower it, and any operation
/// that raises it is reported.
pub fn classify_check(
    world: &World,
    env: &Environment,
    op: &SigmaOp,
    fixtures: &[ElementId],
    point: &PipelinePoint,
    ctx: &Context,
) -> Result<ClassificationReport, LifecycleError> {
    let mut violations = Vec::new();
    for element in fixtures {
        let mut before_world = world.clone();
        let mut before_ctx = ctx.clone();
        let (before, _) = run_pipeline(&before_world, env, element, point, &mut before_ctx)?;

        // Apply the sigma's edits to a live copy of the element.
        let base = world.element(element)?.clone();
        let state = LifecycleState::Live {
            element: base.clone(),
            phase: "run".into(),
        };
        let mut after_ctx = ctx.clone();
        let after_state = apply_sigma(state, op, &base, &mut after_ctx)?;
        if let LifecycleState::Live { element: edited, .. } = after_state {
            before_world.elements.insert(element.clone(), edited);
        }
        let (after, _) = run_pipeline(&before_world, env, element, point, &mut after_ctx)?;

        let ordering = env.lattice.strict_cmp(&after, &before)?;
        use std::cmp::Ordering::*;
        match (op.class, ordering) {
            (_, Some(Greater)) => violations.push(ClassificationViolation {
                element: element.clone(),
                before,
                after,
                kind: ViolationKind::Raised,
            }),
            (SigmaClass::Idempotent, Some(Equal)) => {}
            (SigmaClass::Idempotent, _) => violations.push(ClassificationViolation {
                element: element.clone(),
                before,
                after,
                kind: ViolationKind::NotPreserved,
            }),
            (SigmaClass::Dangerous, Some(Less | Equal)) => {}
            (SigmaClass::Dangerous, None) => violations.push(ClassificationViolation {
                element: element.clone(),
                before,
                after,
                kind: ViolationKind::NotMonotone,
            }),
            (SigmaClass::Unclassified, _) => {}
        }
    }
    Ok(ClassificationReport {
        op: op.name.clone(),
        class: op.class,
        violations,
    })
}

/// Which verification routing the evil-maid script should exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvilMaidVariant {
    /// The graded case table: a signed claim with wrong measurements lands
    /// in the signature-only class and decides D_S.
    CaseTable,
    /// The strict routing: any measurement mismatch is a procedural error
    /// and decides bottom.
    ErrorRouting,
}

/// The firmware-swap attack against the reference PC: power down, tamper
/// with the persisted firmware digest while the element does not exist, boot
/// and attest. Identity survives in the context, integrity does not.
pub fn evil_maid_fixture(variant: EvilMaidVariant) -> ScenarioScript {
    let (name, point, expected_level) = match variant {
        EvilMaidVariant::CaseTable => (
            "evil_maid_case",
            PipelinePoint::new("quote", "paper", "paper"),
            "D_S",
        ),
        EvilMaidVariant::ErrorRouting => (
            "evil_maid_error",
            PipelinePoint::new("quote", "strict", "strict"),
            "⊥",
        ),
    };
    let mut steps = vec![
        ScenarioStep::Apply {
            sigma: SIGMA_POWER_ON.into(),
        },
        ScenarioStep::Apply {
            sigma: SIGMA_POWER_OFF.into(),
        },
        ScenarioStep::PowerCycle,
        ScenarioStep::Tamper {
            slot: "firmware_digest".into(),
            value: crate::fixtures::EVIL_FIRMWARE.to_vec(),
        },
        ScenarioStep::Apply {
            sigma: SIGMA_POWER_ON.into(),
        },
        ScenarioStep::Attest { point: None },
        ScenarioStep::AssertAtom {
            atom: PredicateAtom::ChiS,
            expected: true,
        },
        ScenarioStep::AssertLevel {
            cmp: LevelCmp::Eq,
            level: expected_level.into(),
        },
    ];
    if variant == EvilMaidVariant::ErrorRouting {
        steps.push(ScenarioStep::AssertMeet {
            a: "D_AUTH".into(),
            b: "⊥".into(),
            expect: "⊥".into(),
        });
    }
    ScenarioScript {
        name: name.into(),
        subject: ElementId::from("pc1"),
        point: Some(point),
        steps,
    }
}
