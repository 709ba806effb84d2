//! Canonical rendering. Deterministic: set-like collections (levels,
//! covering pairs, elements, capabilities, context entries) are sorted;
//! order-significant sequences (cases, rules, steps) keep author order.
//! `parse(render(m))` reproduces `m` up to positions, so two models are
//! structurally equal exactly when their renders are byte-identical.

use crate::model::*;
use crate::parser::VERSION_HEADER;

fn value(v: &ValueDecl) -> String {
    match v {
        ValueDecl::Hex(bytes) => format!("hex:{}", hex::encode(bytes)),
        ValueDecl::Str(s) => format!("str:{s}"),
    }
}

pub fn render(model: &Model) -> String {
    let mut out = String::new();
    out.push_str(VERSION_HEADER);
    out.push_str("\n\n");

    if let Some(lattice) = &model.lattice {
        out.push_str("lattice {\n");
        let mut levels = lattice.levels.clone();
        levels.sort();
        for level in levels {
            out.push_str(&format!("  level {level};\n"));
        }
        let mut orders = lattice.orders.clone();
        orders.sort();
        for (lo, hi) in orders {
            out.push_str(&format!("  order {lo} < {hi};\n"));
        }
        if let Some(bottom) = &lattice.bottom {
            out.push_str(&format!("  bottom {bottom};\n"));
        }
        if let Some(top) = &lattice.top {
            out.push_str(&format!("  top {top};\n"));
        }
        out.push_str("}\n\n");
    }

    let mut elements = model.elements.clone();
    elements.sort_by(|a, b| a.id.cmp(&b.id));
    for element in &elements {
        out.push_str(&format!("element {} {{\n", element.id));
        out.push_str(&format!("  attestable {};\n", element.attestable));
        if !element.capabilities.is_empty() {
            let mut caps = element.capabilities.clone();
            caps.sort();
            out.push_str(&format!("  capabilities {};\n", caps.join(" ")));
        }
        let mut slots = element.slots.clone();
        slots.sort_by(|a, b| a.name.cmp(&b.name));
        for slot in &slots {
            let persistence = match slot.persistence {
                PersistenceDecl::Persistent => "",
                PersistenceDecl::Restart => " restart",
                PersistenceDecl::Volatile => " volatile",
            };
            out.push_str(&format!(
                "  slot {} = {}{persistence};\n",
                slot.name,
                value(&slot.value)
            ));
        }
        if !element.children.is_empty() {
            out.push_str(&format!("  children {};\n", element.children.join(" ")));
        }
        out.push_str("}\n\n");
    }

    let ctx = &model.context;
    if !ctx.expects.is_empty() || !ctx.keys.is_empty() || !ctx.known.is_empty() || !ctx.metas.is_empty()
    {
        out.push_str("context {\n");
        let mut expects = ctx.expects.clone();
        expects.sort_by(|a, b| a.element.cmp(&b.element));
        for expect in &expects {
            out.push_str(&format!("  expect {} {{ ", expect.element));
            let mut entries = expect.entries.clone();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            for (name, v) in &entries {
                out.push_str(&format!("{name} = {}; ", value(v)));
            }
            out.push_str("}\n");
        }
        let mut keys = ctx.keys.clone();
        keys.sort();
        for (key_ref, element) in &keys {
            out.push_str(&format!("  key {key_ref} -> {element};\n"));
        }
        if !ctx.known.is_empty() {
            let mut known = ctx.known.clone();
            known.sort();
            known.dedup();
            out.push_str(&format!("  known {};\n", known.join(" ")));
        }
        let mut metas = ctx.metas.clone();
        metas.sort();
        for (key, v) in &metas {
            out.push_str(&format!("  meta {key} = {v};\n"));
        }
        out.push_str("}\n\n");
    }

    let mut verify_policies = model.verify_policies.clone();
    verify_policies.sort_by(|a, b| a.name.cmp(&b.name));
    for policy in &verify_policies {
        out.push_str(&format!("verify_policy {} {{\n", policy.name));
        for (label, is_error) in &policy.classes {
            if *is_error {
                out.push_str(&format!("  error_class {label};\n"));
            } else {
                out.push_str(&format!("  class {label};\n"));
            }
        }
        for guard in &policy.guards {
            out.push_str(&format!(
                "  guard {} = ctx {} {};\n",
                guard.name, guard.key, guard.value
            ));
        }
        for case in &policy.cases {
            out.push_str(&format!("  case {} -> {};\n", expr(&case.expr), case.target));
        }
        if let Some(default) = &policy.default {
            out.push_str(&format!("  default {default};\n"));
        }
        out.push_str("}\n\n");
    }

    let mut decide_policies = model.decide_policies.clone();
    decide_policies.sort_by(|a, b| a.name.cmp(&b.name));
    for policy in &decide_policies {
        out.push_str(&format!("decide_policy {} {{\n", policy.name));
        for rule in &policy.rules {
            let guard = match &rule.guard {
                None => String::new(),
                Some(GuardSpecDecl::MeasurementNull) => " when measurement_null".into(),
                Some(GuardSpecDecl::MeasurementPresent) => " when measurement_present".into(),
                Some(GuardSpecDecl::CtxEquals { key, value }) => {
                    format!(" when ctx {key} = {value}")
                }
            };
            out.push_str(&format!(
                "  rule {}{guard} -> {};\n",
                rule.class, rule.target
            ));
        }
        for (class, level) in &policy.defaults {
            out.push_str(&format!("  default {class} -> {level};\n"));
        }
        out.push_str("}\n\n");
    }

    if !model.rho.attests.is_empty()
        || !model.rho.verifies.is_empty()
        || !model.rho.decides.is_empty()
    {
        out.push_str("rho {\n");
        let mut attests = model.rho.attests.clone();
        for (pattern, mechanisms) in &mut attests {
            pattern.sort();
            mechanisms.sort();
        }
        attests.sort();
        for (pattern, mechanisms) in &attests {
            out.push_str(&format!(
                "  attest {{ {} }} -> {};\n",
                pattern.join(" "),
                mechanisms.join(" ")
            ));
        }
        let mut verifies = model.rho.verifies.clone();
        for (_, policies) in &mut verifies {
            policies.sort();
        }
        verifies.sort();
        for (mech, policies) in &verifies {
            out.push_str(&format!("  verify {mech} -> {};\n", policies.join(" ")));
        }
        let mut decides = model.rho.decides.clone();
        for (_, policies) in &mut decides {
            policies.sort();
        }
        decides.sort();
        for (vp, policies) in &decides {
            out.push_str(&format!("  decide {vp} -> {};\n", policies.join(" ")));
        }
        out.push_str("}\n\n");
    }

    let mut sigmas = model.sigmas.clone();
    sigmas.sort_by(|a, b| a.name.cmp(&b.name));
    for sigma in &sigmas {
        out.push_str(&format!("sigma {} {{\n", sigma.name));
        out.push_str(&format!("  class {};\n", sigma.class));
        for edit in &sigma.edits {
            match edit {
                EditDecl::Set { slot, value: v } => {
                    out.push_str(&format!("  set {slot} = {};\n", value(v)))
                }
                EditDecl::Clear { slot } => out.push_str(&format!("  clear {slot};\n")),
                EditDecl::Phase { phase } => out.push_str(&format!("  phase {phase};\n")),
                EditDecl::Meta { key, value: v } => {
                    out.push_str(&format!("  meta {key} = {v};\n"))
                }
            }
        }
        out.push_str("}\n\n");
    }

    let mut scenarios = model.scenarios.clone();
    scenarios.sort_by(|a, b| a.name.cmp(&b.name));
    for scenario in &scenarios {
        out.push_str(&format!("scenario {} {{\n", scenario.name));
        out.push_str(&format!("  subject {};\n", scenario.subject));
        if let Some(point) = &scenario.point {
            out.push_str(&format!("  point {point};\n"));
        }
        for (step, _) in &scenario.steps {
            let line = match step {
                StepDecl::Apply { sigma } => format!("apply {sigma}"),
                StepDecl::PowerCycle => "power_cycle".into(),
                StepDecl::Restart => "restart".into(),
                StepDecl::Tamper { slot, value: v } => {
                    format!("tamper {slot} = {}", value(v))
                }
                StepDecl::Attest { point } => match point {
                    Some(p) => format!("attest {p}"),
                    None => "attest".into(),
                },
                StepDecl::AssertLevel { cmp, level } => {
                    format!("assert level {cmp} {level}")
                }
                StepDecl::AssertAtom { atom, expected } => {
                    format!("assert atom {atom} == {expected}")
                }
                StepDecl::AssertMeet { a, b, expect } => {
                    format!("assert meet {a} {b} == {expect}")
                }
                StepDecl::AssertPhases {
                    floor,
                    boot,
                    run,
                    shutdown,
                } => format!("assert phases {floor} <= {boot} < {run} >= {shutdown}"),
            };
            out.push_str(&format!("  step {line};\n"));
        }
        out.push_str("}\n\n");
    }

    // Single trailing newline.
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

fn expr(e: &ExprDecl) -> String {
    fn go(e: &ExprDecl, parent: u8, out: &mut String) {
        let prec = match e {
            ExprDecl::Atom { .. } | ExprDecl::Not(_) => 3,
            ExprDecl::And(_) => 2,
            ExprDecl::Or(_) => 1,
        };
        let parens = prec < parent;
        if parens {
            out.push('(');
        }
        match e {
            ExprDecl::Atom { name, .. } => out.push_str(name),
            ExprDecl::Not(inner) => {
                out.push('!');
                go(inner, 3, out);
            }
            ExprDecl::And(terms) => {
                for (i, term) in terms.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" & ");
                    }
                    go(term, 2, out);
                }
            }
            ExprDecl::Or(terms) => {
                for (i, term) in terms.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" | ");
                    }
                    go(term, 1, out);
                }
            }
        }
        if parens {
            out.push(')');
        }
    }
    let mut out = String::new();
    go(e, 0, &mut out);
    out
}
