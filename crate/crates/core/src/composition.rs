//! Composition of elements into systems and aggregate trust.
//!
//! The children relation forms the composition structure; aggregation folds
//! the lattice meet over every node reachable from the root, so the system
//! is only as trusted as its weakest part. Mediation is the boundary case:
//! a node may vouch for its subtree with a floor level, raising each
//! contribution to at least the floor before the meet. Meet over a partial
//! order is the greatest lower bound; a plain minimum is undefined between
//! incomparable levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::capability::{CapabilityError, Environment};
use crate::evidence::{Context, ElementId, EvidenceError, World};
use crate::lattice::{LatticeError, TrustLevel};
use crate::pipeline::{run_pipeline, PipelineError, PipelinePoint};

/// A floor applied to a subtree's contribution by a mediating boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MediationRule {
    pub floor: TrustLevel,
    pub rationale: String,
}

/// A composition rooted at one element; edges derive from element children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionView {
    pub root: ElementId,
    /// Mediation keyed by subtree root: the floor applies to that node and
    /// everything below it (nearest enclosing rule wins).
    pub mediation: BTreeMap<ElementId, MediationRule>,
}

impl CompositionView {
    pub fn new(root: impl Into<String>) -> Self {
        CompositionView {
            root: ElementId::new(root),
            mediation: BTreeMap::new(),
        }
    }

    pub fn with_mediation(
        mut self,
        node: impl Into<String>,
        floor: TrustLevel,
        rationale: impl Into<String>,
    ) -> Self {
        self.mediation.insert(
            ElementId::new(node),
            MediationRule {
                floor,
                rationale: rationale.into(),
            },
        );
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Meet,
    Mediated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeBreakdown {
    pub element: ElementId,
    pub depth: usize,
    /// The node's own pipeline decision.
    pub level: TrustLevel,
    /// What the node contributes to the aggregate (after mediation).
    pub contribution: TrustLevel,
    /// The point used; absent when the node admitted none and contributed
    /// bottom.
    pub point: Option<PipelinePoint>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompositionDiagnostic {
    CycleDetected { path: Vec<ElementId> },
    UnknownChild { parent: ElementId, child: ElementId },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CompositionError {
    #[error("composition cycle through `{0}`")]
    CycleDetected(ElementId),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Cycle and reachability diagnostics for the children relation from a root;
/// empty when it forms a tree or DAG of known elements.
pub fn validate_tree(world: &World, root: &ElementId) -> Vec<CompositionDiagnostic> {
    let mut diags = Vec::new();
    let mut in_progress: Vec<ElementId> = Vec::new();
    let mut done: BTreeSet<ElementId> = BTreeSet::new();
    fn visit(
        world: &World,
        node: &ElementId,
        in_progress: &mut Vec<ElementId>,
        done: &mut BTreeSet<ElementId>,
        diags: &mut Vec<CompositionDiagnostic>,
    ) {
        if done.contains(node) {
            return;
        }
        if in_progress.contains(node) {
            let start = in_progress.iter().position(|n| n == node).unwrap();
            let mut path: Vec<ElementId> = in_progress[start..].to_vec();
            path.push(node.clone());
            diags.push(CompositionDiagnostic::CycleDetected { path });
            return;
        }
        let Ok(element) = world.element(node) else {
            return;
        };
        in_progress.push(node.clone());
        for child in &element.children {
            if world.element(child).is_err() {
                diags.push(CompositionDiagnostic::UnknownChild {
                    parent: node.clone(),
                    child: child.clone(),
                });
                continue;
            }
            visit(world, child, in_progress, done, diags);
        }
        in_progress.pop();
        done.insert(node.clone());
    }
    visit(world, root, &mut in_progress, &mut done, &mut diags);
    diags
}

/// Aggregate trust over the transitive closure of the root's children.
///
/// Each node is evaluated once (shared children in a DAG are not double
/// counted; meet is idempotent so it would not matter anyway). A node where
/// the given point is not admitted falls back to its first admitted triple;
/// a node admitting nothing contributes bottom. In mediated mode the nearest
/// enclosing mediation rule raises contributions to its floor by join.
pub fn aggregate_trust(
    world: &World,
    env: &Environment,
    view: &CompositionView,
    point: &PipelinePoint,
    ctx: &mut Context,
    mode: AggregationMode,
) -> Result<(TrustLevel, Vec<NodeBreakdown>), CompositionError> {
    if let Some(diag) = validate_tree(world, &view.root).into_iter().next() {
        return Err(match diag {
            CompositionDiagnostic::CycleDetected { path } => {
                CompositionError::CycleDetected(path[0].clone())
            }
            CompositionDiagnostic::UnknownChild { child, .. } => {
                CompositionError::Evidence(EvidenceError::UnknownElement(child))
            }
        });
    }
    world.element(&view.root)?;

    let bottom = env.lattice.bottom();
    let mut breakdown: Vec<NodeBreakdown> = Vec::new();
    let mut visited: BTreeSet<ElementId> = BTreeSet::new();
    // Depth-first with explicit stack: (node, depth, active floor).
    let mut stack: Vec<(ElementId, usize, Option<TrustLevel>)> =
        vec![(view.root.clone(), 0, None)];
    while let Some((node, depth, inherited_floor)) = stack.pop() {
        let floor = view
            .mediation
            .get(&node)
            .map(|rule| rule.floor.clone())
            .or(inherited_floor);
        if !visited.insert(node.clone()) {
            continue;
        }

        let admitted = env.admitted_triples(world, &node)?;
        let (level, used_point, note) = if admitted.contains(point) {
            let (level, _) = run_pipeline(world, env, &node, point, ctx)?;
            (level, Some(point.clone()), None)
        } else if let Some(fallback) = admitted.iter().next() {
            let (level, _) = run_pipeline(world, env, &node, fallback, ctx)?;
            (
                level,
                Some(fallback.clone()),
                Some("given point not admitted; used first admitted triple".to_string()),
            )
        } else {
            (
                bottom.clone(),
                None,
                Some("no admitted triples; contributes bottom".to_string()),
            )
        };

        let contribution = match (mode, &floor) {
            (AggregationMode::Mediated, Some(floor)) => env.lattice.join(&level, floor)?,
            _ => level.clone(),
        };
        breakdown.push(NodeBreakdown {
            element: node.clone(),
            depth,
            level,
            contribution,
            point: used_point,
            note,
        });

        let element = world.element(&node)?;
        for child in element.children.iter().rev() {
            stack.push((child.clone(), depth + 1, floor.clone()));
        }
    }

    let mut aggregate: Option<TrustLevel> = None;
    for node in &breakdown {
        aggregate = Some(match aggregate {
            None => node.contribution.clone(),
            Some(acc) => env.lattice.meet(&acc, &node.contribution)?,
        });
    }
    let aggregate = aggregate.expect("root always contributes");
    Ok((aggregate, breakdown))
}
