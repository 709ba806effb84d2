//! Canonical report rendering.
//!
//! Two forms: a human-readable text layout and a structured JSON form with
//! stable field order, so identical inputs produce byte-identical reports.

use serde::Serialize;

use crate::capability::{ExpressibilityReport, TrustableClass};
use crate::composition::NodeBreakdown;
use crate::lattice::{DecisionLattice, TrustLevel};
use crate::lifecycle::{AssertionOutcome, Trace};
use crate::pipeline::{ForensicReport, GapReport, ImplicationOutcome};

/// Structured form: JSON with declaration-ordered keys.
pub fn to_structured<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

/// Canonical lattice description: sorted level names, sorted covering pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatticeReport {
    pub levels: Vec<String>,
    pub covers: Vec<(String, String)>,
    pub bottom: String,
    pub top: String,
}

impl LatticeReport {
    pub fn of(lattice: &DecisionLattice) -> Self {
        LatticeReport {
            levels: lattice.level_names(),
            covers: lattice.covering_pairs(),
            bottom: lattice.bottom().name().to_string(),
            top: lattice.top().name().to_string(),
        }
    }
}

pub fn forensic_text(report: &ForensicReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("element:  {}\n", report.element));
    out.push_str(&format!("point:    {}\n", report.point));
    out.push_str(&format!("class:    {}\n", report.outcome.class.label));
    out.push_str(&format!("decision: {}\n", report.decision));
    out.push_str("atoms:\n");
    for (atom, value) in &report.outcome.atom_values {
        out.push_str(&format!("  {atom} = {value}\n"));
    }
    match report.outcome.matched_case {
        Some(i) => out.push_str(&format!("verify case: {i}\n")),
        None => out.push_str("verify case: default\n"),
    }
    match report.matched_rule {
        Some(i) => out.push_str(&format!("decide rule: {i}\n")),
        None => out.push_str("decide rule: class default\n"),
    }
    out.push_str("narrative:\n");
    for line in &report.narrative {
        out.push_str(&format!("  - {line}\n"));
    }
    out
}

pub fn gap_text(report: &GapReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "gap from {} to {}\n",
        report.current, report.target
    ));
    match &report.implication {
        ImplicationOutcome::Level { level } => {
            out.push_str(&format!("implication: {level}\n"));
        }
        ImplicationOutcome::NoImplication { maximal } => {
            out.push_str(&format!(
                "implication: none (incomparable maximal candidates: {})\n",
                maximal.join(", ")
            ));
        }
    }
    if report.already_satisfied {
        out.push_str("already satisfied: current level reaches the target\n");
        return out;
    }
    if report.paths.is_empty() {
        out.push_str("no decide cell reaches the target level\n");
        return out;
    }
    out.push_str("paths:\n");
    for path in &report.paths {
        out.push_str(&format!(
            "  class `{}` [{}] -> {}\n",
            path.class, path.guard, path.level
        ));
        if path.missing.is_empty() {
            out.push_str("    nothing missing\n");
        } else {
            for need in &path.missing {
                out.push_str(&format!("    missing {need}\n"));
            }
        }
    }
    out
}

pub fn trace_text(trace: &Trace) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "scenario {} (subject {})\n",
        trace.scenario, trace.subject
    ));
    for step in &trace.steps {
        let mut line = format!("  [{:02}] {}", step.index, step.desc);
        if let Some(level) = &step.level {
            line.push_str(&format!(" -> {level}"));
        }
        if let Some(assertion) = &step.assertion {
            match assertion {
                AssertionOutcome::Pass => line.push_str(" [pass]"),
                AssertionOutcome::Fail { detail } => {
                    line.push_str(&format!(" [FAIL: {detail}]"))
                }
                AssertionOutcome::Incomparable { a, b } => {
                    line.push_str(&format!(" [INCOMPARABLE: {a} vs {b}]"))
                }
            }
        }
        if let Some(phase) = &step.phase {
            line.push_str(&format!(" (phase {phase})"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    match &trace.final_level {
        Some(level) => out.push_str(&format!("final decision: {level}\n")),
        None => out.push_str("final decision: none\n"),
    }
    out.push_str(&format!(
        "assertions: {} passed, {} failed\n",
        trace.assertions_passed(),
        trace.assertions_failed()
    ));
    if let Some(reason) = &trace.aborted {
        out.push_str(&format!("aborted: {reason}\n"));
    }
    out
}

pub fn potential_text(
    element: &str,
    lattice: &DecisionLattice,
    potential: &std::collections::BTreeSet<TrustLevel>,
    class: &TrustableClass,
) -> String {
    // Levels in lattice order: bottom-up by how many levels sit below.
    let mut levels: Vec<&TrustLevel> = potential.iter().collect();
    levels.sort_by_key(|level| {
        lattice
            .levels()
            .filter(|other| lattice.leq(other, level).unwrap_or(false))
            .count()
    });
    let mut out = format!("trust potential of {element}: {{");
    out.push_str(
        &levels
            .iter()
            .map(|l| l.name().to_string())
            .collect::<Vec<_>>()
            .join(", "),
    );
    out.push_str("}\n");
    match class {
        TrustableClass::Untrustable => out.push_str("classification: untrustable\n"),
        TrustableClass::FullyTrustable => out.push_str("classification: fully trustable\n"),
        TrustableClass::TrustableWrtBound { maximal } => {
            if maximal.is_empty() {
                out.push_str("classification: bound not reachable\n");
            } else {
                out.push_str(&format!(
                    "classification: trustable up to {{{}}}\n",
                    maximal
                        .iter()
                        .map(|l| l.name().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                ));
            }
        }
    }
    out
}

pub fn expressibility_text(report: &ExpressibilityReport) -> String {
    format!(
        "mechanisms: {}\nverify policies: {}\ndecide policies: {}\nadmitted triples: {}\n",
        report.mechanisms, report.verify_policies, report.decide_policies, report.admitted_triples
    )
}

pub fn breakdown_text(level: &TrustLevel, nodes: &[NodeBreakdown]) -> String {
    let mut out = String::new();
    for node in nodes {
        out.push_str(&"  ".repeat(node.depth));
        out.push_str(&format!("{}: {}", node.element, node.level));
        if node.contribution != node.level {
            out.push_str(&format!(" (mediated to {})", node.contribution));
        }
        if let Some(note) = &node.note {
            out.push_str(&format!(" [{note}]"));
        }
        out.push('\n');
    }
    out.push_str(&format!("aggregate: {level}\n"));
    out
}
