//! Resolution from the declaration model into core engine types. Every
//! unresolved reference or structural defect becomes a positioned
//! diagnostic; a model with any build error yields nothing.

use std::collections::BTreeMap;
use std::sync::Arc;

use trustkit_core::capability::Environment;
use trustkit_core::decision::{DecideGuard, DecidePolicy, DecideRule};
use trustkit_core::evidence::{Element, ElementId, MechanismId, Persistence, World};
use trustkit_core::lattice::DecisionLattice;
use trustkit_core::lifecycle::{
    LevelCmp, ScenarioScript, ScenarioStep, SigmaClass, SigmaOp, StateEdit,
};
use trustkit_core::pipeline::PipelinePoint;
use trustkit_core::verdict::{BoolExpr, PredicateAtom, ResultClass, VerifyCase, VerifyPolicy};

use crate::model::*;
use crate::{DiagnosticSeverity, ParseDiagnostic};

/// A fully resolved model, ready to run.
#[derive(Debug)]
pub struct BuiltModel {
    pub world: World,
    pub env: Environment,
    pub sigmas: BTreeMap<String, SigmaOp>,
    pub scenarios: BTreeMap<String, ScenarioScript>,
    pub ctx: trustkit_core::evidence::Context,
}

struct Builder<'a> {
    model: &'a Model,
    diags: Vec<ParseDiagnostic>,
}

impl Builder<'_> {
    fn error(&mut self, origin: &str, pos: Pos, message: impl Into<String>) {
        self.diags.push(ParseDiagnostic {
            origin: origin.to_string(),
            line: pos.line,
            col: pos.col,
            severity: DiagnosticSeverity::Error,
            message: message.into(),
        });
    }

    fn build_lattice(&mut self) -> Option<Arc<DecisionLattice>> {
        let Some(decl) = &self.model.lattice else {
            self.diags.push(ParseDiagnostic {
                origin: "<model>".into(),
                line: 1,
                col: 1,
                severity: DiagnosticSeverity::Error,
                message: "no lattice section; a model needs a decision lattice".into(),
            });
            return None;
        };
        let origin = decl.origin.clone();
        let (Some(bottom), Some(top)) = (&decl.bottom, &decl.top) else {
            self.error(&origin, decl.pos, "lattice must declare bottom and top");
            return None;
        };
        let orders: Vec<(&str, &str)> = decl
            .orders
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let levels: Vec<&str> = decl.levels.iter().map(String::as_str).collect();
        match DecisionLattice::new(&levels, &orders, bottom, top) {
            Ok(lattice) => Some(Arc::new(lattice)),
            Err(e) => {
                self.error(&origin, decl.pos, e.to_string());
                None
            }
        }
    }

    fn build_world(&mut self) -> World {
        let mut world = World::new();
        for decl in &self.model.elements {
            let mut element = Element::new(decl.id.as_str());
            element.attestable = decl.attestable;
            for cap in &decl.capabilities {
                element.capabilities.insert(MechanismId::new(cap.as_str()));
            }
            for slot in &decl.slots {
                element.state.insert(slot.name.clone(), slot.value.bytes());
                let persistence = match slot.persistence {
                    PersistenceDecl::Persistent => Persistence::Persistent,
                    PersistenceDecl::Restart => Persistence::RestartSurvivable,
                    PersistenceDecl::Volatile => Persistence::Volatile,
                };
                if persistence != Persistence::Persistent {
                    element.persistence.insert(slot.name.clone(), persistence);
                }
            }
            for child in &decl.children {
                element.children.push(ElementId::new(child.as_str()));
            }
            if let Err(e) = world.insert_element(element) {
                self.error(&decl.origin, decl.pos, e.to_string());
            }
        }
        // Children must resolve.
        for decl in &self.model.elements {
            for child in &decl.children {
                if !self.model.elements.iter().any(|e| &e.id == child) {
                    self.error(
                        &decl.origin,
                        decl.pos,
                        format!("element `{}` references unknown child `{child}`", decl.id),
                    );
                }
            }
        }
        world
    }

    fn build_context(&mut self) -> trustkit_core::evidence::Context {
        let mut ctx = trustkit_core::evidence::Context::new();
        let known_ids: Vec<&str> = self.model.elements.iter().map(|e| e.id.as_str()).collect();
        for expect in &self.model.context.expects {
            if !known_ids.contains(&expect.element.as_str()) {
                self.error(
                    "<context>",
                    expect.pos,
                    format!("expectation references unknown element `{}`", expect.element),
                );
            }
            let entry = ctx
                .expectations
                .entry(ElementId::new(expect.element.as_str()))
                .or_default();
            for (name, value) in &expect.entries {
                entry.insert(name.clone(), value.bytes());
            }
        }
        for (key_ref, element) in &self.model.context.keys {
            ctx.key_registry
                .insert(key_ref.clone(), ElementId::new(element.as_str()));
        }
        for element in &self.model.context.known {
            ctx.known_elements.insert(ElementId::new(element.as_str()));
        }
        for (key, value) in &self.model.context.metas {
            ctx.metadata.insert(key.clone(), value.clone());
        }
        ctx
    }

    fn resolve_expr(&mut self, origin: &str, decl: &VerifyPolicyDecl, expr: &ExprDecl) -> BoolExpr {
        match expr {
            ExprDecl::Atom { name, pos } => {
                let atom = match name.as_str() {
                    "chi_s" => Some(PredicateAtom::ChiS),
                    "chi_m" => Some(PredicateAtom::ChiM),
                    "chi_i" => Some(PredicateAtom::ChiI),
                    "chi_null" => Some(PredicateAtom::ChiNull),
                    other => decl
                        .guards
                        .iter()
                        .find(|g| g.name == other)
                        .map(|g| PredicateAtom::CtxGuard {
                            key: g.key.clone(),
                            expected: g.value.clone(),
                        }),
                };
                match atom {
                    Some(atom) => BoolExpr::Atom(atom),
                    None => {
                        self.error(
                            origin,
                            *pos,
                            format!(
                                "unknown atom `{name}` (built-ins: chi_s, chi_m, chi_i, chi_null; or declare a guard)"
                            ),
                        );
                        BoolExpr::Atom(PredicateAtom::ChiNull)
                    }
                }
            }
            ExprDecl::Not(inner) => BoolExpr::not(self.resolve_expr(origin, decl, inner)),
            ExprDecl::And(terms) => BoolExpr::and(
                terms
                    .iter()
                    .map(|t| self.resolve_expr(origin, decl, t))
                    .collect(),
            ),
            ExprDecl::Or(terms) => BoolExpr::or(
                terms
                    .iter()
                    .map(|t| self.resolve_expr(origin, decl, t))
                    .collect(),
            ),
        }
    }

    fn build_verify_policies(&mut self) -> BTreeMap<String, VerifyPolicy> {
        let mut out = BTreeMap::new();
        for decl in &self.model.verify_policies {
            let origin = decl.origin.clone();
            let classes: Vec<ResultClass> = decl
                .classes
                .iter()
                .map(|(label, is_error)| ResultClass {
                    label: label.clone(),
                    is_error: *is_error,
                })
                .collect();
            let mut cases = Vec::new();
            for case in &decl.cases {
                let condition = self.resolve_expr(&origin, decl, &case.expr);
                if !decl.classes.iter().any(|(label, _)| label == &case.target) {
                    self.error(
                        &origin,
                        case.pos,
                        format!("case targets undeclared class `{}`", case.target),
                    );
                }
                cases.push(VerifyCase {
                    condition,
                    target: case.target.clone(),
                });
            }
            let Some(default) = &decl.default else {
                self.error(
                    &origin,
                    decl.pos,
                    format!("verify_policy `{}` has no default class", decl.name),
                );
                continue;
            };
            out.insert(
                decl.name.clone(),
                VerifyPolicy::new(decl.name.clone(), classes, cases, default.clone()),
            );
        }
        out
    }

    fn build_decide_policies(
        &mut self,
        lattice: &Arc<DecisionLattice>,
    ) -> BTreeMap<String, DecidePolicy> {
        let mut out = BTreeMap::new();
        for decl in &self.model.decide_policies {
            let origin = decl.origin.clone();
            let mut rules = Vec::new();
            let mut broken = false;
            for rule in &decl.rules {
                let target = match lattice.level(&rule.target) {
                    Ok(level) => level,
                    Err(e) => {
                        self.error(&origin, rule.pos, e.to_string());
                        broken = true;
                        continue;
                    }
                };
                let guard = rule.guard.as_ref().map(|g| match g {
                    GuardSpecDecl::CtxEquals { key, value } => DecideGuard::CtxEquals {
                        key: key.clone(),
                        value: value.clone(),
                    },
                    GuardSpecDecl::MeasurementNull => DecideGuard::MeasurementIsNull,
                    GuardSpecDecl::MeasurementPresent => DecideGuard::MeasurementNotNull,
                });
                rules.push(DecideRule {
                    class: rule.class.clone(),
                    guard,
                    target,
                });
            }
            let mut defaults = BTreeMap::new();
            for (class, level) in &decl.defaults {
                match lattice.level(level) {
                    Ok(level) => {
                        defaults.insert(class.clone(), level);
                    }
                    Err(e) => {
                        self.error(&origin, decl.pos, e.to_string());
                        broken = true;
                    }
                }
            }
            if !broken {
                out.insert(
                    decl.name.clone(),
                    DecidePolicy::new(decl.name.clone(), Arc::clone(lattice), rules, defaults),
                );
            }
        }
        out
    }

    fn build_sigmas(&mut self) -> BTreeMap<String, SigmaOp> {
        let mut out = BTreeMap::new();
        for decl in &self.model.sigmas {
            let class = match decl.class.as_str() {
                "idempotent" => SigmaClass::Idempotent,
                "dangerous" => SigmaClass::Dangerous,
                _ => SigmaClass::Unclassified,
            };
            let effect = decl
                .edits
                .iter()
                .map(|edit| match edit {
                    EditDecl::Set { slot, value } => StateEdit::SetSlot {
                        slot: slot.clone(),
                        value: value.bytes(),
                    },
                    EditDecl::Clear { slot } => StateEdit::ClearSlot { slot: slot.clone() },
                    EditDecl::Phase { phase } => StateEdit::SetPhase {
                        phase: phase.clone(),
                    },
                    EditDecl::Meta { key, value } => StateEdit::SetMeta {
                        key: key.clone(),
                        value: value.clone(),
                    },
                })
                .collect();
            out.insert(
                decl.name.clone(),
                SigmaOp {
                    name: decl.name.clone(),
                    class,
                    effect,
                },
            );
        }
        out
    }

    fn parse_point(&mut self, origin: &str, pos: Pos, spec: &str) -> Option<PipelinePoint> {
        match spec.parse::<PipelinePoint>() {
            Ok(point) => Some(point),
            Err(e) => {
                self.error(origin, pos, e);
                None
            }
        }
    }

    fn build_scenarios(
        &mut self,
        sigmas: &BTreeMap<String, SigmaOp>,
    ) -> BTreeMap<String, ScenarioScript> {
        let mut out = BTreeMap::new();
        for decl in &self.model.scenarios {
            let origin = decl.origin.clone();
            if !self.model.elements.iter().any(|e| e.id == decl.subject) {
                self.error(
                    &origin,
                    decl.pos,
                    format!(
                        "scenario `{}` subject `{}` is not a declared element",
                        decl.name, decl.subject
                    ),
                );
            }
            let point = decl
                .point
                .as_ref()
                .and_then(|p| self.parse_point(&origin, decl.pos, p));
            let mut steps = Vec::new();
            for (step, pos) in &decl.steps {
                let step = match step {
                    StepDecl::Apply { sigma } => {
                        if sigma != "power_on"
                            && sigma != "power_off"
                            && !sigmas.contains_key(sigma)
                        {
                            self.error(&origin, *pos, format!("unknown sigma `{sigma}`"));
                        }
                        ScenarioStep::Apply {
                            sigma: sigma.clone(),
                        }
                    }
                    StepDecl::PowerCycle => ScenarioStep::PowerCycle,
                    StepDecl::Restart => ScenarioStep::Restart,
                    StepDecl::Tamper { slot, value } => ScenarioStep::Tamper {
                        slot: slot.clone(),
                        value: value.bytes(),
                    },
                    StepDecl::Attest { point } => ScenarioStep::Attest {
                        point: point
                            .as_ref()
                            .and_then(|p| self.parse_point(&origin, *pos, p)),
                    },
                    StepDecl::AssertLevel { cmp, level } => {
                        let cmp = match cmp.as_str() {
                            "==" => LevelCmp::Eq,
                            "<=" => LevelCmp::Leq,
                            ">=" => LevelCmp::Geq,
                            "<" => LevelCmp::Lt,
                            ">" => LevelCmp::Gt,
                            other => {
                                self.error(&origin, *pos, format!("unknown comparison `{other}`"));
                                LevelCmp::Eq
                            }
                        };
                        ScenarioStep::AssertLevel {
                            cmp,
                            level: level.clone(),
                        }
                    }
                    StepDecl::AssertAtom { atom, expected } => {
                        let atom = match atom.parse::<PredicateAtom>() {
                            Ok(atom) => atom,
                            Err(e) => {
                                self.error(&origin, *pos, e);
                                PredicateAtom::ChiNull
                            }
                        };
                        ScenarioStep::AssertAtom {
                            atom,
                            expected: *expected,
                        }
                    }
                    StepDecl::AssertMeet { a, b, expect } => ScenarioStep::AssertMeet {
                        a: a.clone(),
                        b: b.clone(),
                        expect: expect.clone(),
                    },
                    StepDecl::AssertPhases {
                        floor,
                        boot,
                        run,
                        shutdown,
                    } => ScenarioStep::AssertPhases {
                        floor: floor.clone(),
                        boot: boot.clone(),
                        run: run.clone(),
                        shutdown: shutdown.clone(),
                    },
                };
                steps.push(step);
            }
            out.insert(
                decl.name.clone(),
                ScenarioScript {
                    name: decl.name.clone(),
                    subject: ElementId::new(decl.subject.as_str()),
                    point,
                    steps,
                },
            );
        }
        out
    }

    fn build_rho(&mut self, env: &mut Environment, world: &World) {
        for (pattern, mechanisms) in &self.model.rho.attests {
            let pattern_set = pattern
                .iter()
                .map(|m| MechanismId::new(m.as_str()))
                .collect();
            let mechanism_set: std::collections::BTreeSet<MechanismId> = mechanisms
                .iter()
                .map(|m| MechanismId::new(m.as_str()))
                .collect();
            for mech in pattern.iter().chain(mechanisms.iter()) {
                if !world.mechanisms.contains_key(&MechanismId::new(mech.as_str())) {
                    self.error(
                        "<rho>",
                        Pos::default(),
                        format!("rho attest references unknown mechanism `{mech}`"),
                    );
                }
            }
            env.rho_attest_patterns.push((pattern_set, mechanism_set));
        }
        for (mech, policies) in &self.model.rho.verifies {
            if !world.mechanisms.contains_key(&MechanismId::new(mech.as_str())) {
                self.error(
                    "<rho>",
                    Pos::default(),
                    format!("rho verify references unknown mechanism `{mech}`"),
                );
            }
            for policy in policies {
                if !env.verify_policies.contains_key(policy) {
                    self.error(
                        "<rho>",
                        Pos::default(),
                        format!("rho verify references unknown verify policy `{policy}`"),
                    );
                }
            }
            env.rho_verify_map
                .entry(MechanismId::new(mech.as_str()))
                .or_default()
                .extend(policies.iter().cloned());
        }
        for (vp, policies) in &self.model.rho.decides {
            if !env.verify_policies.contains_key(vp) {
                self.error(
                    "<rho>",
                    Pos::default(),
                    format!("rho decide references unknown verify policy `{vp}`"),
                );
            }
            for policy in policies {
                if !env.decide_policies.contains_key(policy) {
                    self.error(
                        "<rho>",
                        Pos::default(),
                        format!("rho decide references unknown decide policy `{policy}`"),
                    );
                }
            }
            env.rho_decide_map
                .entry(vp.clone())
                .or_default()
                .extend(policies.iter().cloned());
        }
    }
}

/// Resolve a merged model into the engine types.
pub fn build(model: &Model) -> Result<BuiltModel, Vec<ParseDiagnostic>> {
    let mut builder = Builder {
        model,
        diags: Vec::new(),
    };
    let lattice = builder.build_lattice();
    let world = builder.build_world();
    let ctx = builder.build_context();
    let verify_policies = builder.build_verify_policies();
    let Some(lattice) = lattice else {
        return Err(builder.diags);
    };
    let decide_policies = builder.build_decide_policies(&lattice);
    let mut env = Environment::new(lattice);
    env.verify_policies = verify_policies;
    env.decide_policies = decide_policies;
    builder.build_rho(&mut env, &world);
    let sigmas = builder.build_sigmas();
    let scenarios = builder.build_scenarios(&sigmas);

    if builder.diags.is_empty() {
        Ok(BuiltModel {
            world,
            env,
            sigmas,
            scenarios,
            ctx,
        })
    } else {
        Err(builder.diags)
    }
}
