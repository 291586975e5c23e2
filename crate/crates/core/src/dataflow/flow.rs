//! Optimal push/pull partition via pruning and s-t minimum cut.
//!
//! Deciding `v` push saves `w(v) = PULL(v) - PUSH(v)`. Pull nodes form the
//! source side of a cut in a network where overlay edges have infinite
//! capacity (so no pull node feeds a push node), a node with `w < 0` hangs
//! off the source with capacity `-w` and a node with `w > 0` feeds the sink
//! with capacity `w`. The cut value is the plan cost minus a constant.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rayon::prelude::*;

use crate::overlay::{Decision, NodeKind, OverlayGraph, OverlayId};

/// Residual capacities at or below this are treated as saturated.
pub const EPS: f64 = 1e-9;

/// Adjacency-list flow network with paired forward/backward arcs.
#[derive(Debug, Clone, Default)]
struct FlowNetwork {
    adj: Vec<Vec<usize>>,
    head: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        FlowNetwork { adj: vec![Vec::new(); n], ..Default::default() }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: f64) {
        debug_assert!(cap > 0.0);
        self.adj[from].push(self.head.len());
        self.head.push(to);
        self.cap.push(cap);
        self.adj[to].push(self.head.len());
        self.head.push(from);
        self.cap.push(0.0);
    }

    /// Edmonds-Karp: augment along shortest residual paths until none is left.
    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        let mut via = vec![usize::MAX; self.adj.len()];
        loop {
            via.fill(usize::MAX);
            let mut queue = VecDeque::from([s]);
            let mut reached = false;
            'bfs: while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.head[e];
                    if v != s && via[v] == usize::MAX && self.cap[e] > EPS {
                        via[v] = e;
                        if v == t {
                            reached = true;
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                }
            }
            if !reached {
                return total;
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = via[v];
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.head[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.head[e ^ 1];
            }
            total += bottleneck;
        }
    }

    /// Nodes reachable from `s` over unsaturated arcs.
    fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.head[e];
                if !seen[v] && self.cap[e] > EPS {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Outcome of the pruning rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pruned {
    /// Nodes whose decision the rules fix.
    pub fixed: BTreeMap<OverlayId, Decision>,
    /// Weakly connected components of what is left, each sorted by id.
    pub components: Vec<Vec<OverlayId>>,
}

impl Pruned {
    pub fn residual_len(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }
}

/// Repeatedly fixes push on source nodes that are writers or have `w > 0`,
/// and pull on sink nodes with `w < 0`, until neither rule applies.
/// `weights` is indexed by overlay id.
pub fn prune(o: &OverlayGraph, weights: &[f64]) -> Pruned {
    let n = o.id_bound();
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for id in o.ids() {
        indeg[id.index()] = o.inputs(id).len();
        outdeg[id.index()] = o.outputs(id).len();
    }
    let mut fixed = BTreeMap::new();
    let pushable = |id: OverlayId| o.kind(id) == NodeKind::Writer || weights[id.index()] > 0.0;
    let pullable = |id: OverlayId| o.kind(id) != NodeKind::Writer && weights[id.index()] < 0.0;
    let mut work: VecDeque<OverlayId> = o.ids().collect();
    while let Some(id) = work.pop_front() {
        if fixed.contains_key(&id) {
            continue;
        }
        if indeg[id.index()] == 0 && pushable(id) {
            fixed.insert(id, Decision::Push);
            for l in o.outputs(id) {
                indeg[l.node.index()] -= 1;
                work.push_back(l.node);
            }
        } else if outdeg[id.index()] == 0 && pullable(id) {
            fixed.insert(id, Decision::Pull);
            for l in o.inputs(id) {
                outdeg[l.node.index()] -= 1;
                work.push_back(l.node);
            }
        }
    }

    let mut component = vec![usize::MAX; n];
    let mut components = Vec::new();
    for root in o.ids().filter(|id| !fixed.contains_key(id)) {
        if component[root.index()] != usize::MAX {
            continue;
        }
        let c = components.len();
        component[root.index()] = c;
        let mut members = vec![root];
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for l in o.inputs(u).iter().chain(o.outputs(u)) {
                let v = l.node;
                if !fixed.contains_key(&v) && component[v.index()] == usize::MAX {
                    component[v.index()] = c;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort();
        components.push(members);
    }
    Pruned { fixed, components }
}

/// Min cut over the subgraph induced by `nodes`. Nodes in `forced_push`
/// are tied to the sink with infinite capacity.
fn min_cut(
    o: &OverlayGraph,
    nodes: &[OverlayId],
    weights: &[f64],
    forced_push: impl Fn(OverlayId) -> bool,
) -> BTreeMap<OverlayId, Decision> {
    let local: HashMap<OverlayId, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let (s, t) = (nodes.len(), nodes.len() + 1);
    let finite: f64 = nodes.iter().map(|id| weights[id.index()].abs()).sum();
    let inf = 1.0 + finite;
    let mut net = FlowNetwork::new(nodes.len() + 2);
    for (i, &id) in nodes.iter().enumerate() {
        let w = weights[id.index()];
        if w < 0.0 {
            net.add_arc(s, i, -w);
        } else if w > 0.0 {
            net.add_arc(i, t, w);
        }
        if forced_push(id) {
            net.add_arc(i, t, inf);
        }
        for l in o.outputs(id) {
            if let Some(&j) = local.get(&l.node) {
                net.add_arc(i, j, inf);
            }
        }
    }
    net.max_flow(s, t);
    let pull_side = net.source_side(s);
    nodes
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, if pull_side[i] { Decision::Pull } else { Decision::Push }))
        .collect()
}

/// Optimal decisions for one residual component.
pub fn solve_component(o: &OverlayGraph, component: &[OverlayId], weights: &[f64]) -> BTreeMap<OverlayId, Decision> {
    min_cut(o, component, weights, |id| o.kind(id) == NodeKind::Writer)
}

/// Prune, then solve the residual components independently.
pub fn solve_optimal(o: &OverlayGraph, weights: &[f64]) -> BTreeMap<OverlayId, Decision> {
    let Pruned { mut fixed, components } = prune(o, weights);
    let solved: Vec<_> = components.par_iter().map(|c| solve_component(o, c, weights)).collect();
    for part in solved {
        fixed.extend(part);
    }
    fixed
}

/// One cut over the whole overlay, without pruning.
pub fn solve_unpruned(o: &OverlayGraph, weights: &[f64]) -> BTreeMap<OverlayId, Decision> {
    let nodes: Vec<OverlayId> = o.ids().collect();
    min_cut(o, &nodes, weights, |id| o.kind(id) == NodeKind::Writer)
}
