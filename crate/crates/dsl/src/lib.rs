//! The `.trust` policy language: a line-oriented, brace-delimited text form
//! for lattices, worlds, policies, restriction maps, sigma operations and
//! scenarios.
//!
//! Documents start with the version header `trust-dsl 1` and consist of
//! sections; `#` comments run to end of line. One document may hold all
//! sections, or a model may be split across documents and merged. Parsing
//! never panics: every problem becomes a positioned diagnostic, and a
//! document with any error yields no model.

mod build;
mod model;
mod parser;
mod render;

pub use build::{build, BuiltModel};
pub use model::*;
pub use parser::{parse, ParseResult};
pub use render::render;

use serde::Serialize;

/// A source document plus the name it is reported under.
#[derive(Debug, Clone)]
pub struct SourceDocument {
    pub origin: String,
    pub text: String,
}

impl SourceDocument {
    pub fn new(origin: impl Into<String>, text: impl Into<String>) -> Self {
        SourceDocument {
            origin: origin.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticSeverity {
    Warning,
    Error,
}

/// A parse or build problem, always positioned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostic {
    pub origin: String,
    pub line: usize,
    pub col: usize,
    pub severity: DiagnosticSeverity,
    pub message: String,
}

impl std::fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}: {}",
            self.origin,
            self.line,
            self.col,
            match self.severity {
                DiagnosticSeverity::Warning => "warning",
                DiagnosticSeverity::Error => "error",
            },
            self.message
        )
    }
}

/// Merge models parsed from separate documents; duplicate definitions are
/// errors reported at the second occurrence.
pub fn merge(models: Vec<Model>) -> Result<Model, Vec<ParseDiagnostic>> {
    let mut merged = Model::default();
    let mut diags = Vec::new();
    for model in models {
        if let Some(lattice) = model.lattice {
            if merged.lattice.is_some() {
                diags.push(ParseDiagnostic {
                    origin: lattice.origin.clone(),
                    line: lattice.pos.line,
                    col: lattice.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: "duplicate lattice section".into(),
                });
            } else {
                merged.lattice = Some(lattice);
            }
        }
        for element in model.elements {
            if merged.elements.iter().any(|e| e.id == element.id) {
                diags.push(ParseDiagnostic {
                    origin: element.origin.clone(),
                    line: element.pos.line,
                    col: element.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: format!("duplicate element `{}`", element.id),
                });
            } else {
                merged.elements.push(element);
            }
        }
        merged.context.expects.extend(model.context.expects);
        merged.context.keys.extend(model.context.keys);
        merged.context.known.extend(model.context.known);
        merged.context.metas.extend(model.context.metas);
        for policy in model.verify_policies {
            if merged.verify_policies.iter().any(|p| p.name == policy.name) {
                diags.push(ParseDiagnostic {
                    origin: policy.origin.clone(),
                    line: policy.pos.line,
                    col: policy.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: format!("duplicate verify_policy `{}`", policy.name),
                });
            } else {
                merged.verify_policies.push(policy);
            }
        }
        for policy in model.decide_policies {
            if merged.decide_policies.iter().any(|p| p.name == policy.name) {
                diags.push(ParseDiagnostic {
                    origin: policy.origin.clone(),
                    line: policy.pos.line,
                    col: policy.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: format!("duplicate decide_policy `{}`", policy.name),
                });
            } else {
                merged.decide_policies.push(policy);
            }
        }
        merged.rho.attests.extend(model.rho.attests);
        merged.rho.verifies.extend(model.rho.verifies);
        merged.rho.decides.extend(model.rho.decides);
        for sigma in model.sigmas {
            if merged.sigmas.iter().any(|s| s.name == sigma.name) {
                diags.push(ParseDiagnostic {
                    origin: sigma.origin.clone(),
                    line: sigma.pos.line,
                    col: sigma.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: format!("duplicate sigma `{}`", sigma.name),
                });
            } else {
                merged.sigmas.push(sigma);
            }
        }
        for scenario in model.scenarios {
            if merged.scenarios.iter().any(|s| s.name == scenario.name) {
                diags.push(ParseDiagnostic {
                    origin: scenario.origin.clone(),
                    line: scenario.pos.line,
                    col: scenario.pos.col,
                    severity: DiagnosticSeverity::Error,
                    message: format!("duplicate scenario `{}`", scenario.name),
                });
            } else {
                merged.scenarios.push(scenario);
            }
        }
    }
    if diags.is_empty() {
        Ok(merged)
    } else {
        Err(diags)
    }
}
