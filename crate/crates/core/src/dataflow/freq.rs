//! Push and pull frequencies and the per-node costs derived from them.

use crate::graph::{Activity, DataGraph, NodeId};
use crate::overlay::{topo_order, NodeKind, OverlayGraph, OverlayId};

use super::cost::CostModel;
use super::DataflowError;

/// Expected eager-update rate (`push`) and on-demand evaluation rate
/// (`pull`) of every overlay node, indexed by overlay id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyAnnotation {
    push: Vec<f64>,
    pull: Vec<f64>,
}

impl FrequencyAnnotation {
    pub fn push(&self, id: OverlayId) -> f64 {
        self.push.get(id.index()).copied().unwrap_or(0.0)
    }

    pub fn pull(&self, id: OverlayId) -> f64 {
        self.pull.get(id.index()).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, id: OverlayId, push: f64, pull: f64) {
        let n = id.index() + 1;
        if self.push.len() < n {
            self.push.resize(n, 0.0);
            self.pull.resize(n, 0.0);
        }
        self.push[id.index()] = push;
        self.pull[id.index()] = pull;
    }
}

/// Frequencies from the activity estimates stored in the data graph.
pub fn annotate_frequencies(o: &OverlayGraph, g: &DataGraph) -> Result<FrequencyAnnotation, DataflowError> {
    annotate_with(o, |v| g.activity(v))
}

/// Propagates writer rates downstream and reader rates upstream.
pub fn annotate_with(
    o: &OverlayGraph,
    activity: impl Fn(NodeId) -> Option<Activity>,
) -> Result<FrequencyAnnotation, DataflowError> {
    let order = topo_order(o)?;
    let mut f = FrequencyAnnotation { push: vec![0.0; o.id_bound()], pull: vec![0.0; o.id_bound()] };
    let rate = |id: OverlayId| {
        let origin = o.node(id).origin.expect("writers and readers have an origin");
        activity(origin).ok_or(DataflowError::MissingActivity(origin))
    };
    for &id in &order {
        f.push[id.index()] = match o.kind(id) {
            NodeKind::Writer => rate(id)?.write,
            _ => o.inputs(id).iter().map(|l| f.push[l.node.index()]).sum(),
        };
    }
    for &id in order.iter().rev() {
        f.pull[id.index()] = match o.kind(id) {
            NodeKind::Reader => rate(id)?.read,
            _ => o.outputs(id).iter().map(|l| f.pull[l.node.index()]).sum(),
        };
    }
    Ok(f)
}

/// Input count used to price a node: in-degree, or the window factor for
/// writers.
fn cost_degree(o: &OverlayGraph, id: OverlayId, cm: &CostModel) -> f64 {
    match o.kind(id) {
        NodeKind::Writer => cm.window_factor,
        _ => o.inputs(id).len() as f64,
    }
}

/// `PULL(v) - PUSH(v)`: the saving from deciding `v` push.
pub fn node_weight(o: &OverlayGraph, v: OverlayId, freq: &FrequencyAnnotation, cm: &CostModel) -> f64 {
    let d = cost_degree(o, v, cm);
    freq.pull(v) * cm.pull_cost(d) - freq.push(v) * cm.push_cost(d)
}

/// `PUSH` and `PULL` of every node, indexed by overlay id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeCosts {
    push: Vec<f64>,
    pull: Vec<f64>,
}

impl NodeCosts {
    pub fn compute(o: &OverlayGraph, freq: &FrequencyAnnotation, cm: &CostModel) -> Self {
        let mut c = NodeCosts { push: vec![0.0; o.id_bound()], pull: vec![0.0; o.id_bound()] };
        for id in o.ids() {
            let d = cost_degree(o, id, cm);
            c.push[id.index()] = freq.push(id) * cm.push_cost(d);
            c.pull[id.index()] = freq.pull(id) * cm.pull_cost(d);
        }
        c
    }

    pub fn push(&self, id: OverlayId) -> f64 {
        self.push[id.index()]
    }

    pub fn pull(&self, id: OverlayId) -> f64 {
        self.pull[id.index()]
    }

    pub fn weight(&self, id: OverlayId) -> f64 {
        self.pull(id) - self.push(id)
    }

    /// Weights of all ids; dead slots are zero.
    pub fn weights(&self) -> Vec<f64> {
        self.push.iter().zip(&self.pull).map(|(h, l)| l - h).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Decision, Mode, Sign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    /// Random layered overlay: writers, partials, readers with random edges.
    fn random_overlay(rng: &mut ChaCha8Rng) -> OverlayGraph {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let mut ids: Vec<OverlayId> = (0..rng.random_range(1..5)).map(|w| o.add_writer(NodeId(w))).collect();
        for _ in 0..rng.random_range(0..5) {
            let p = o.add_partial(Decision::Push);
            for &u in &ids {
                if rng.random_bool(0.5) {
                    o.add_edge(u, p, Sign::Pos).unwrap();
                }
            }
            ids.push(p);
        }
        for r in 0..rng.random_range(1..5) {
            let rid = o.add_reader(NodeId(100 + r), Decision::Push);
            for &u in &ids {
                if rng.random_bool(0.4) {
                    o.add_edge(u, rid, Sign::Pos).unwrap();
                }
            }
        }
        o
    }

    /// Number of distinct paths between every pair, by explicit enumeration.
    fn paths(o: &OverlayGraph, from: OverlayId, to: OverlayId) -> usize {
        if from == to {
            return 1;
        }
        o.outputs(from).iter().map(|l| paths(o, l.node, to)).sum()
    }

    #[test]
    fn both_passes_match_path_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let o = random_overlay(&mut rng);
            let act: BTreeMap<NodeId, Activity> = o
                .ids()
                .filter_map(|id| o.node(id).origin)
                .map(|v| (v, Activity { write: f64::from(v.0 % 7 + 1), read: f64::from(v.0 % 5 + 2) }))
                .collect();
            let f = annotate_with(&o, |v| act.get(&v).copied()).unwrap();
            let writers: BTreeSet<_> = o.writers().collect();
            let readers: BTreeSet<_> = o.readers().collect();
            for id in o.ids() {
                let up: f64 = writers.iter().map(|&(w, wid)| paths(&o, wid, id) as f64 * act[&w].write).sum();
                let down: f64 = readers.iter().map(|&(r, rid)| paths(&o, id, rid) as f64 * act[&r].read).sum();
                assert_eq!(f.push(id), up);
                assert_eq!(f.pull(id), down);
            }
        }
    }

    #[test]
    fn silent_writers_push_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = random_overlay(&mut rng);
        let f = annotate_with(&o, |_| Some(Activity { write: 0.0, read: 1.0 })).unwrap();
        assert!(o.ids().all(|id| f.push(id) == 0.0));
    }

    #[test]
    fn missing_activity_names_node() {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let w = o.add_writer(NodeId(3));
        let r = o.add_reader(NodeId(4), Decision::Push);
        o.add_edge(w, r, Sign::Pos).unwrap();
        let err = annotate_with(&o, |v| (v == NodeId(3)).then_some(Activity::default())).unwrap_err();
        assert_eq!(err, DataflowError::MissingActivity(NodeId(4)));
    }

    #[test]
    fn zero_rates_give_zero_weight() {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let w = o.add_writer(NodeId(0));
        let r = o.add_reader(NodeId(1), Decision::Push);
        o.add_edge(w, r, Sign::Pos).unwrap();
        let f = annotate_with(&o, |_| Some(Activity::default())).unwrap();
        let cm = CostModel::constant_push_linear_pull(1.0);
        assert_eq!(node_weight(&o, r, &f, &cm), 0.0);
    }
}
