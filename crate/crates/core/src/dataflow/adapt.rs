//! Local re-decisions on the push/pull frontier as observed rates drift.

use crate::overlay::{topo_order, Decision, NodeKind, OverlayGraph, OverlayId};

use super::cost::CostModel;
use super::freq::{FrequencyAnnotation, NodeCosts};
use super::{DataflowError, DataflowPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptParams {
    /// Consecutive observations a contradiction must persist for.
    pub window: usize,
    /// Minimum `|w(v)|` as a fraction of `PUSH(v) + PULL(v)`.
    pub margin: f64,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams { window: 3, margin: 0.05 }
    }
}

fn is_pull_frontier(o: &OverlayGraph, plan: &DataflowPlan, v: OverlayId) -> bool {
    o.kind(v) != NodeKind::Writer
        && plan.decision(v) == Decision::Pull
        && o.inputs(v).iter().all(|l| plan.decision(l.node) == Decision::Push)
}

fn is_push_frontier(o: &OverlayGraph, plan: &DataflowPlan, v: OverlayId) -> bool {
    o.kind(v) != NodeKind::Writer
        && plan.decision(v) == Decision::Push
        && o.outputs(v).iter().all(|l| plan.decision(l.node) == Decision::Pull)
}

/// Pull nodes fed only by push nodes, and non-writer push nodes feeding only
/// pull nodes. Flipping one of them alone keeps the plan valid.
pub fn frontier(o: &OverlayGraph, plan: &DataflowPlan) -> Vec<OverlayId> {
    o.ids()
        .filter(|&v| is_pull_frontier(o, plan, v) || is_push_frontier(o, plan, v))
        .collect()
}

/// Flips frontier nodes whose observed weight has contradicted their
/// decision in each of the last `params.window` observations by more than
/// the margin. Returns the new plan, priced under the latest observation.
pub fn adapt(
    o: &OverlayGraph,
    plan: &DataflowPlan,
    observed: &[FrequencyAnnotation],
    cm: &CostModel,
    params: AdaptParams,
) -> Result<DataflowPlan, DataflowError> {
    if params.window == 0 || observed.len() < params.window {
        return Ok(plan.clone());
    }
    let window: Vec<NodeCosts> =
        observed[observed.len() - params.window..].iter().map(|f| NodeCosts::compute(o, f, cm)).collect();
    let contradicts = |v: OverlayId, want_push: bool| {
        window.iter().all(|c| {
            let w = c.weight(v);
            let decisive = w.abs() > params.margin * (c.push(v) + c.pull(v));
            decisive && (w > 0.0) == want_push && w != 0.0
        })
    };
    let order = topo_order(o)?;
    let mut next = plan.clone();
    for &v in &order {
        if is_pull_frontier(o, &next, v) && contradicts(v, true) {
            next.set(v, Decision::Push);
        }
    }
    for &v in order.iter().rev() {
        if is_push_frontier(o, &next, v) && contradicts(v, false) {
            next.set(v, Decision::Pull);
        }
    }
    let latest = window.last().expect("window is non-empty");
    next.reprice(latest);
    Ok(next)
}
