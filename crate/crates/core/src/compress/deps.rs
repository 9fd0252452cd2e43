//! Residual dependency resolution. Both inputs of an add-junction must drop
//! the same output channels, otherwise a removed filter on one side would be
//! refilled by the other. The structured side's mask is copied to the other
//! side of the junction (one hop only); element-wise actions pass through.

use serde::{Deserialize, Serialize};

use super::prune::Granularity;
use super::{technique_granularity, CompressionAction, CompressionPlan};
use crate::error::{Error, Result};
use crate::model::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedAction {
    pub action: CompressionAction,
    /// Granularity of the layer's own technique.
    pub granularity: Granularity,
    /// Layer whose output-unit mask this layer adopts instead of its own
    /// pruning.
    pub mirror: Option<usize>,
}

impl ResolvedAction {
    pub fn is_mirrored(&self) -> bool {
        self.mirror.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub actions: Vec<ResolvedAction>,
}

impl ResolvedPlan {
    pub fn plan(&self) -> CompressionPlan {
        CompressionPlan::new(self.actions.iter().map(|a| a.action).collect())
    }
}

/// Resolves junction constraints. For every junction the consumer's
/// output-unit mask wins when it has one; otherwise a structured producer
/// imposes its mask on the consumer.
pub fn resolve_dependencies(
    model: &ModelGraph,
    plan: &CompressionPlan,
    ranked_pattern: Granularity,
) -> Result<ResolvedPlan> {
    plan.validate_for(model, 1.0)?;
    let mut actions: Vec<ResolvedAction> = plan
        .actions
        .iter()
        .map(|a| ResolvedAction {
            action: *a,
            granularity: technique_granularity(a.technique, model.layers[a.layer].desc.kind, ranked_pattern),
            mirror: None,
        })
        .collect();
    for j in &model.junctions {
        let (p, c) = (j.producer, j.consumer);
        if model.layers[p].desc.kind != model.layers[c].desc.kind {
            return Err(Error::Graph(format!(
                "junction {p} -> {c} joins layers of different kinds"
            )));
        }
        let structured = |i: usize| {
            let a = &actions[i];
            a.granularity.removes_outputs() && a.action.sparsity > 0.0
        };
        let (src, dst) = if structured(c) {
            (c, p)
        } else if structured(p) {
            (p, c)
        } else {
            continue;
        };
        if actions[src].mirror.is_some() || actions[dst].mirror.is_some() {
            // A layer already tied to another junction keeps that tie.
            continue;
        }
        actions[dst].mirror = Some(src);
    }
    Ok(ResolvedPlan { actions })
}
