//! Single-pass heuristic planner for when residual components are too large
//! to cut.

use std::collections::BTreeMap;

use crate::overlay::{topo_order, Decision, NodeKind, OverlayError, OverlayGraph, OverlayId};

use super::freq::NodeCosts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Push,
    Pull,
    /// Pull for now; may still be settled either way by a consumer.
    Tentative,
}

/// Walks the overlay from the writers. A node leaning pull is left tentative
/// unless an input already forces pull; a node leaning push settles its
/// tentative inputs together with itself, picking the cheaper side.
/// Ties lean push. Whatever is still tentative at the end becomes pull.
pub fn greedy(o: &OverlayGraph, costs: &NodeCosts) -> Result<BTreeMap<OverlayId, Decision>, OverlayError> {
    let mut state: BTreeMap<OverlayId, State> = BTreeMap::new();
    for v in topo_order(o)? {
        if o.kind(v) == NodeKind::Writer {
            state.insert(v, State::Push);
            continue;
        }
        let inputs: Vec<OverlayId> = o.inputs(v).iter().map(|l| l.node).collect();
        let tentative: Vec<OverlayId> = inputs.iter().copied().filter(|u| state[u] == State::Tentative).collect();
        let leans_pull = costs.push(v) > costs.pull(v);
        let s = if inputs.iter().any(|u| state[u] == State::Pull) {
            State::Pull
        } else if leans_pull {
            if tentative.is_empty() {
                State::Tentative
            } else {
                for u in &tentative {
                    state.insert(*u, State::Pull);
                }
                State::Pull
            }
        } else if tentative.is_empty() {
            State::Push
        } else {
            let group = || tentative.iter().copied().chain([v]);
            let push: f64 = group().map(|u| costs.push(u)).sum();
            let pull: f64 = group().map(|u| costs.pull(u)).sum();
            let settled = if push <= pull { State::Push } else { State::Pull };
            for u in &tentative {
                state.insert(*u, settled);
            }
            settled
        };
        state.insert(v, s);
    }
    Ok(state
        .into_iter()
        .map(|(id, s)| (id, if s == State::Push { Decision::Push } else { Decision::Pull }))
        .collect())
}
