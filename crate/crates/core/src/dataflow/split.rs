//! Partial pre-computation: splicing a push child under a pull node to
//! pre-aggregate its rarely updated inputs.

use crate::overlay::{Decision, NodeKind, OverlayGraph, OverlayId, Sign};

use super::cost::CostModel;
use super::freq::FrequencyAnnotation;
use super::DataflowError;

/// A split `split_nodes` applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub node: OverlayId,
    pub child: OverlayId,
    pub moved: Vec<OverlayId>,
    /// Modeled cost before minus after.
    pub saving: f64,
}

/// Best prefix of `push_freqs` (ascending) to move into a child of a pull
/// node with `degree` inputs read at `pull_freq`, together with its modeled
/// saving. `push_alternative` is the cost of deciding the node push instead,
/// when that is allowed; a split must beat it as well.
pub fn best_prefix(
    push_freqs: &[f64],
    degree: usize,
    pull_freq: f64,
    push_alternative: Option<f64>,
    cm: &CostModel,
) -> Option<(usize, f64)> {
    let baseline = pull_freq * cm.pull_cost(degree as f64);
    let bar = push_alternative.map_or(baseline, |p| p.min(baseline));
    let mut prefix = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in push_freqs.iter().enumerate() {
        prefix += f;
        let l = i + 1;
        if l < 2 || l >= degree {
            continue;
        }
        let cost = prefix * cm.push_cost(l as f64) + pull_freq * cm.pull_cost((degree - l + 1) as f64);
        if cost < bar && best.is_none_or(|(_, c)| cost < c) {
            best = Some((l, cost));
        }
    }
    best.map(|(l, cost)| (l, baseline - cost))
}

/// Splits every pull node whose positive push inputs are worth
/// pre-aggregating. New children are push partials; `freq` is extended to
/// cover them. Decisions already on the overlay are read as the plan.
pub fn split_nodes(
    o: &mut OverlayGraph,
    freq: &mut FrequencyAnnotation,
    cm: &CostModel,
) -> Result<Vec<Split>, DataflowError> {
    let candidates: Vec<OverlayId> = o
        .ids()
        .filter(|&v| o.kind(v) != NodeKind::Writer && o.decision(v) == Decision::Pull)
        .collect();
    let mut splits = Vec::new();
    for v in candidates {
        let degree = o.inputs(v).len();
        let mut pushed: Vec<(f64, OverlayId)> = o
            .inputs(v)
            .iter()
            .filter(|l| l.sign == Sign::Pos && o.decision(l.node) == Decision::Push)
            .map(|l| (freq.push(l.node), l.node))
            .collect();
        pushed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let all_push = pushed.len() == degree;
        let push_alternative = all_push.then(|| freq.push(v) * cm.push_cost(degree as f64));
        let freqs: Vec<f64> = pushed.iter().map(|p| p.0).collect();
        let Some((l, saving)) = best_prefix(&freqs, degree, freq.pull(v), push_alternative, cm) else {
            continue;
        };
        let moved: Vec<OverlayId> = pushed[..l].iter().map(|p| p.1).collect();
        let child = o.add_partial(Decision::Push);
        for &u in &moved {
            o.remove_edge(u, v)?;
            o.add_edge(u, child, Sign::Pos)?;
        }
        o.add_edge(child, v, Sign::Pos)?;
        o.refresh_cover(child);
        freq.set(child, freqs[..l].iter().sum(), freq.pull(v));
        splits.push(Split { node: v, child, moved, saving });
    }
    Ok(splits)
}
