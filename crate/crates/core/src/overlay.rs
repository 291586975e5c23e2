//! The aggregation overlay: a signed DAG from writers through partial
//! aggregators to readers, with per-node push/pull decisions.
//!
//! Besides the edge lists (the forward index) the graph keeps, for every
//! "clean" node, the set of writers it aggregates and a reverse index from
//! writer to the clean nodes covering it. A node is clean when all
//! of its in-edges are positive and its coverage is a plain set (no writer
//! counted twice in duplicate-sensitive mode). The set-cover builder and the
//! maintenance code only reuse clean nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{BipartiteGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OverlayId(pub u32);

impl OverlayId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for OverlayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Writer,
    Partial,
    Reader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Push,
    Pull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn factor(self) -> i64 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    DuplicateSensitive,
    DuplicateInsensitive,
}

/// Algebraic properties of an aggregate that decide which overlays are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Caps {
    pub duplicate_insensitive: bool,
    pub subtractable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub node: OverlayId,
    pub sign: Sign,
}

#[derive(Debug, Clone)]
pub struct OverlayNode {
    pub kind: NodeKind,
    /// Data-graph node behind a writer or reader.
    pub origin: Option<NodeId>,
    pub decision: Decision,
    inputs: Vec<Link>,
    outputs: Vec<Link>,
}

impl OverlayNode {
    pub fn inputs(&self) -> &[Link] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Link] {
        &self.outputs
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OverlayError {
    #[error("overlay contains a cycle")]
    Cycle,
    #[error("unknown overlay node {0}")]
    UnknownNode(OverlayId),
    #[error("edge {0} -> {1} already exists")]
    DuplicateEdge(OverlayId, OverlayId),
    #[error("edge {0} -> {1} does not exist")]
    MissingEdge(OverlayId, OverlayId),
    #[error("illegal edge {from} -> {to}: {reason}")]
    IllegalEdge {
        from: OverlayId,
        to: OverlayId,
        reason: &'static str,
    },
    #[error("contribution counter overflow")]
    Overflow,
    #[error("bipartite graph has no edges")]
    EmptyBipartite,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Structure(String),
}

#[derive(Debug, Clone)]
pub struct OverlayGraph {
    mode: Mode,
    nodes: Vec<Option<OverlayNode>>,
    writers: BTreeMap<NodeId, OverlayId>,
    readers: BTreeMap<NodeId, OverlayId>,
    covers: Vec<Option<Vec<NodeId>>>,
    rindex: HashMap<NodeId, BTreeSet<OverlayId>>,
    edge_count: usize,
}

impl PartialEq for OverlayGraph {
    fn eq(&self, other: &Self) -> bool {
        if self.mode != other.mode
            || self.writers != other.writers
            || self.readers != other.readers
            || self.edge_count != other.edge_count
        {
            return false;
        }
        let live = |o: &OverlayGraph| o.ids().collect::<Vec<_>>();
        if live(self) != live(other) {
            return false;
        }
        self.ids().all(|id| {
            let (a, b) = (self.node(id), other.node(id));
            let mut ao = a.outputs.clone();
            let mut bo = b.outputs.clone();
            ao.sort_by_key(|l| (l.node, l.sign == Sign::Neg));
            bo.sort_by_key(|l| (l.node, l.sign == Sign::Neg));
            a.kind == b.kind
                && a.origin == b.origin
                && a.decision == b.decision
                && a.inputs == b.inputs
                && ao == bo
        })
    }
}

impl OverlayGraph {
    pub fn new(mode: Mode) -> Self {
        OverlayGraph {
            mode,
            nodes: Vec::new(),
            writers: BTreeMap::new(),
            readers: BTreeMap::new(),
            covers: Vec::new(),
            rindex: HashMap::new(),
            edge_count: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.rebuild_indexes();
    }

    fn push_node(&mut self, kind: NodeKind, origin: Option<NodeId>, decision: Decision) -> OverlayId {
        let id = OverlayId(self.nodes.len() as u32);
        self.nodes.push(Some(OverlayNode {
            kind,
            origin,
            decision,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }));
        self.covers.push(None);
        id
    }

    /// Writer node for data node `w`, created if missing. Writers are push.
    pub fn add_writer(&mut self, w: NodeId) -> OverlayId {
        if let Some(&id) = self.writers.get(&w) {
            return id;
        }
        let id = self.push_node(NodeKind::Writer, Some(w), Decision::Push);
        self.writers.insert(w, id);
        self.set_cover(id, Some(vec![w]));
        id
    }

    /// Reader node for data node `r`, created if missing.
    pub fn add_reader(&mut self, r: NodeId, decision: Decision) -> OverlayId {
        if let Some(&id) = self.readers.get(&r) {
            return id;
        }
        let id = self.push_node(NodeKind::Reader, Some(r), decision);
        self.readers.insert(r, id);
        self.covers[id.index()] = Some(Vec::new());
        id
    }

    /// Fresh partial aggregator with no edges; its cover is set by
    /// [`refresh_cover`](Self::refresh_cover) once inputs are attached.
    pub fn add_partial(&mut self, decision: Decision) -> OverlayId {
        self.push_node(NodeKind::Partial, None, decision)
    }

    pub fn contains(&self, id: OverlayId) -> bool {
        matches!(self.nodes.get(id.index()), Some(Some(_)))
    }

    /// Panics on a removed or unknown id.
    pub fn node(&self, id: OverlayId) -> &OverlayNode {
        self.nodes[id.index()].as_ref().expect("live overlay node")
    }

    pub fn get(&self, id: OverlayId) -> Option<&OverlayNode> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    fn node_mut(&mut self, id: OverlayId) -> &mut OverlayNode {
        self.nodes[id.index()].as_mut().expect("live overlay node")
    }

    pub fn kind(&self, id: OverlayId) -> NodeKind {
        self.node(id).kind
    }

    pub fn inputs(&self, id: OverlayId) -> &[Link] {
        &self.node(id).inputs
    }

    pub fn outputs(&self, id: OverlayId) -> &[Link] {
        &self.node(id).outputs
    }

    pub fn decision(&self, id: OverlayId) -> Decision {
        self.node(id).decision
    }

    pub fn set_decision(&mut self, id: OverlayId, d: Decision) {
        self.node_mut(id).decision = d;
    }

    /// Live node ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = OverlayId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_some())
            .map(|(i, _)| OverlayId(i as u32))
    }

    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn partial_count(&self) -> usize {
        self.nodes
            .iter()
            .flatten()
            .filter(|n| n.kind == NodeKind::Partial)
            .count()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn negative_edge_count(&self) -> usize {
        self.nodes
            .iter()
            .flatten()
            .map(|n| n.inputs.iter().filter(|l| l.sign == Sign::Neg).count())
            .sum()
    }

    pub fn writer(&self, w: NodeId) -> Option<OverlayId> {
        self.writers.get(&w).copied()
    }

    pub fn reader(&self, r: NodeId) -> Option<OverlayId> {
        self.readers.get(&r).copied()
    }

    pub fn writers(&self) -> impl Iterator<Item = (NodeId, OverlayId)> + '_ {
        self.writers.iter().map(|(&w, &id)| (w, id))
    }

    pub fn readers(&self) -> impl Iterator<Item = (NodeId, OverlayId)> + '_ {
        self.readers.iter().map(|(&r, &id)| (r, id))
    }

    pub fn has_edge(&self, from: OverlayId, to: OverlayId) -> bool {
        self.node(to).inputs.iter().any(|l| l.node == from)
    }

    pub fn edge_sign(&self, from: OverlayId, to: OverlayId) -> Option<Sign> {
        self.node(to)
            .inputs
            .iter()
            .find(|l| l.node == from)
            .map(|l| l.sign)
    }

    /// Adds `from -> to`. Covers are not touched.
    pub fn add_edge(&mut self, from: OverlayId, to: OverlayId, sign: Sign) -> Result<(), OverlayError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(OverlayError::UnknownNode(id));
            }
        }
        let illegal = |reason| OverlayError::IllegalEdge { from, to, reason };
        if from == to {
            return Err(illegal("self edge"));
        }
        if self.kind(from) == NodeKind::Reader {
            return Err(illegal("readers never feed other nodes"));
        }
        if self.kind(to) == NodeKind::Writer {
            return Err(illegal("writers have no inputs"));
        }
        if self.has_edge(from, to) {
            return Err(OverlayError::DuplicateEdge(from, to));
        }
        self.node_mut(to).inputs.push(Link { node: from, sign });
        self.node_mut(from).outputs.push(Link { node: to, sign });
        self.edge_count += 1;
        Ok(())
    }

    pub fn remove_edge(&mut self, from: OverlayId, to: OverlayId) -> Result<Sign, OverlayError> {
        if !self.contains(from) || !self.contains(to) {
            return Err(OverlayError::MissingEdge(from, to));
        }
        let ins = &mut self.node_mut(to).inputs;
        let pos = ins
            .iter()
            .position(|l| l.node == from)
            .ok_or(OverlayError::MissingEdge(from, to))?;
        let sign = ins.remove(pos).sign;
        let outs = &mut self.node_mut(from).outputs;
        let pos = outs.iter().position(|l| l.node == to).expect("mirrored edge");
        outs.remove(pos);
        self.edge_count -= 1;
        Ok(sign)
    }

    /// Removes a node and all incident edges.
    pub fn remove_node(&mut self, id: OverlayId) -> Result<(), OverlayError> {
        if !self.contains(id) {
            return Err(OverlayError::UnknownNode(id));
        }
        let ins: Vec<_> = self.inputs(id).iter().map(|l| l.node).collect();
        for u in ins {
            self.remove_edge(u, id)?;
        }
        let outs: Vec<_> = self.outputs(id).iter().map(|l| l.node).collect();
        for v in outs {
            self.remove_edge(id, v)?;
        }
        self.set_cover(id, None);
        let node = self.nodes[id.index()].take().expect("checked live");
        match node.kind {
            NodeKind::Writer => {
                self.writers.remove(&node.origin.expect("writer origin"));
            }
            NodeKind::Reader => {
                self.readers.remove(&node.origin.expect("reader origin"));
            }
            NodeKind::Partial => {}
        }
        Ok(())
    }

    /// Writers aggregated by a clean node, sorted. `None` for unclean nodes.
    pub fn cover(&self, id: OverlayId) -> Option<&[NodeId]> {
        self.covers.get(id.index()).and_then(|c| c.as_deref())
    }

    /// Clean nodes (readers included) whose cover contains writer `w`.
    pub fn covering(&self, w: NodeId) -> Option<&BTreeSet<OverlayId>> {
        self.rindex.get(&w)
    }

    /// Replaces the stored cover of `id` and updates the reverse index.
    pub fn set_cover(&mut self, id: OverlayId, cover: Option<Vec<NodeId>>) {
        let indexed = self.contains(id);
        if let Some(old) = self.covers[id.index()].take() {
            for w in old {
                if let Some(set) = self.rindex.get_mut(&w) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.rindex.remove(&w);
                    }
                }
            }
        }
        if let Some(c) = &cover {
            if indexed {
                for &w in c {
                    self.rindex.entry(w).or_default().insert(id);
                }
            }
        }
        self.covers[id.index()] = cover;
    }

    /// Cover implied by the current inputs, or `None` if the node is unclean.
    pub fn derived_cover(&self, id: OverlayId) -> Option<Vec<NodeId>> {
        let node = self.node(id);
        if node.kind == NodeKind::Writer {
            return Some(vec![node.origin.expect("writer origin")]);
        }
        let mut all = Vec::new();
        for l in &node.inputs {
            if l.sign == Sign::Neg {
                return None;
            }
            all.extend_from_slice(self.cover(l.node)?);
        }
        all.sort_unstable();
        let before = all.len();
        all.dedup();
        if self.mode == Mode::DuplicateSensitive && all.len() != before {
            return None;
        }
        Some(all)
    }

    pub fn refresh_cover(&mut self, id: OverlayId) {
        let c = self.derived_cover(id);
        self.set_cover(id, c);
    }

    /// Recomputes every cover and the reverse index from the edge lists.
    pub fn rebuild_indexes(&mut self) {
        let order = match topo_order(self) {
            Ok(o) => o,
            Err(_) => return,
        };
        self.rindex.clear();
        for c in self.covers.iter_mut() {
            *c = None;
        }
        for id in order {
            self.refresh_cover(id);
        }
    }

    /// Removes partial nodes with no inputs or no outputs until none remain.
    pub fn collect_garbage(&mut self) -> Vec<OverlayId> {
        let all: Vec<OverlayId> = self.ids().collect();
        self.collect_garbage_from(all)
    }

    /// Like [`OverlayGraph::collect_garbage`], starting from `seeds` only.
    pub fn collect_garbage_from(&mut self, seeds: impl IntoIterator<Item = OverlayId>) -> Vec<OverlayId> {
        let mut queue: VecDeque<OverlayId> = seeds.into_iter().collect();
        let mut removed = Vec::new();
        while let Some(id) = queue.pop_front() {
            if !self.contains(id) || self.kind(id) != NodeKind::Partial {
                continue;
            }
            if self.inputs(id).is_empty() || self.outputs(id).is_empty() {
                let nbrs: Vec<_> = self
                    .inputs(id)
                    .iter()
                    .chain(self.outputs(id))
                    .map(|l| l.node)
                    .collect();
                self.remove_node(id).expect("live node");
                removed.push(id);
                queue.extend(nbrs);
            }
        }
        removed
    }

    /// Partial nodes lacking inputs or outputs.
    pub fn orphans(&self) -> Vec<OverlayId> {
        self.ids()
            .filter(|&id| {
                let n = self.node(id);
                n.kind == NodeKind::Partial && (n.inputs.is_empty() || n.outputs.is_empty())
            })
            .collect()
    }

    pub fn set_all_decisions(&mut self, d: Decision) {
        for n in self.nodes.iter_mut().flatten() {
            n.decision = if n.kind == NodeKind::Writer { Decision::Push } else { d };
        }
    }

    /// Nodes reachable downstream of `id` (excluding `id`).
    pub fn descendants(&self, id: OverlayId) -> BTreeSet<OverlayId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            for l in self.outputs(x) {
                if seen.insert(l.node) {
                    stack.push(l.node);
                }
            }
        }
        seen
    }

    /// Nodes reachable upstream of `id` (excluding `id`).
    pub fn ancestors(&self, id: OverlayId) -> BTreeSet<OverlayId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            for l in self.inputs(x) {
                if seen.insert(l.node) {
                    stack.push(l.node);
                }
            }
        }
        seen
    }

    /// Drops the stored cover of `id` and of everything downstream of it.
    pub fn mark_unclean(&mut self, id: OverlayId) {
        self.set_cover(id, None);
        for d in self.descendants(id) {
            self.set_cover(d, None);
        }
    }

    /// Turns every push node with a pull input into pull, cascading
    /// downstream. Returns the number of flipped nodes.
    pub fn repair_decisions(&mut self) -> Result<usize, OverlayError> {
        let mut flipped = 0;
        for id in topo_order(self)? {
            let n = self.node(id);
            if n.decision == Decision::Push
                && n.inputs.iter().any(|l| self.decision(l.node) == Decision::Pull)
            {
                self.set_decision(id, Decision::Pull);
                flipped += 1;
            }
        }
        Ok(flipped)
    }
}

/// Kahn topological order of live nodes, ties by id.
pub fn topo_order(o: &OverlayGraph) -> Result<Vec<OverlayId>, OverlayError> {
    let mut indeg = vec![0usize; o.id_bound()];
    for id in o.ids() {
        indeg[id.index()] = o.inputs(id).len();
    }
    let mut ready: VecDeque<OverlayId> = o.ids().filter(|id| indeg[id.index()] == 0).collect();
    let mut order = Vec::with_capacity(o.node_count());
    while let Some(id) = ready.pop_front() {
        order.push(id);
        for l in o.outputs(id) {
            let d = &mut indeg[l.node.index()];
            *d -= 1;
            if *d == 0 {
                ready.push_back(l.node);
            }
        }
    }
    if order.len() == o.node_count() {
        Ok(order)
    } else {
        Err(OverlayError::Cycle)
    }
}

/// Identity compilation of `A_G`: one direct edge per bipartite edge.
pub fn trivial_overlay(a: &BipartiteGraph) -> OverlayGraph {
    let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
    for &w in a.writers() {
        o.add_writer(w);
    }
    for (&r, ws) in a.input_lists() {
        let rid = o.add_reader(r, Decision::Push);
        for w in ws {
            let wid = o.writer(*w).expect("writer created");
            o.add_edge(wid, rid, Sign::Pos).expect("fresh edge");
        }
        o.set_cover(rid, Some(ws.clone()));
    }
    o
}

/// `1 - |E(overlay)| / |E(A_G)|`.
pub fn sharing_index(o: &OverlayGraph, a: &BipartiteGraph) -> Result<f64, OverlayError> {
    if a.edge_count() == 0 {
        return Err(OverlayError::EmptyBipartite);
    }
    Ok(1.0 - o.edge_count() as f64 / a.edge_count() as f64)
}

/// Signed per-writer contribution counts of one overlay node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageVector(pub BTreeMap<NodeId, i64>);

impl CoverageVector {
    /// Non-zero entries only.
    pub fn support(&self) -> Vec<NodeId> {
        self.0.iter().filter(|(_, &c)| c != 0).map(|(&w, _)| w).collect()
    }

    /// True when the vector is exactly the 0/1 indicator of `writers`.
    pub fn is_indicator_of(&self, writers: &[NodeId]) -> bool {
        let want: BTreeSet<_> = writers.iter().copied().collect();
        self.0.iter().all(|(w, &c)| c == i64::from(want.contains(w)))
            && want.iter().all(|w| self.0.get(w) == Some(&1))
    }
}

fn add_scaled(acc: &mut BTreeMap<NodeId, i64>, v: &BTreeMap<NodeId, i64>, f: i64) -> Result<(), OverlayError> {
    for (&w, &c) in v {
        let e = acc.entry(w).or_insert(0);
        *e = c
            .checked_mul(f)
            .and_then(|x| e.checked_add(x))
            .ok_or(OverlayError::Overflow)?;
    }
    acc.retain(|_, c| *c != 0);
    Ok(())
}

/// Exact signed contribution counts for node `n` by dynamic programming over
/// its ancestors in topological order.
pub fn coverage(o: &OverlayGraph, n: OverlayId) -> Result<CoverageVector, OverlayError> {
    if !o.contains(n) {
        return Err(OverlayError::UnknownNode(n));
    }
    let mut needed = o.ancestors(n);
    needed.insert(n);
    let mut memo: HashMap<OverlayId, BTreeMap<NodeId, i64>> = HashMap::new();
    for id in topo_order(o)? {
        if !needed.contains(&id) {
            continue;
        }
        let node = o.node(id);
        let mut acc = BTreeMap::new();
        if node.kind == NodeKind::Writer {
            acc.insert(node.origin.expect("writer origin"), 1);
        }
        for l in &node.inputs {
            add_scaled(&mut acc, &memo[&l.node], l.sign.factor())?;
        }
        memo.insert(id, acc);
    }
    Ok(CoverageVector(memo.remove(&n).expect("target computed")))
}

/// Coverage of every node at once (one pass). Insensitive mode clamps
/// counts at 2 since only "none / one / several paths" matters there.
pub fn coverage_all(o: &OverlayGraph) -> Result<HashMap<OverlayId, CoverageVector>, OverlayError> {
    let order = topo_order(o)?;
    let clamp = o.mode() == Mode::DuplicateInsensitive && o.negative_edge_count() == 0;
    let mut memo: HashMap<OverlayId, BTreeMap<NodeId, i64>> = HashMap::with_capacity(order.len());
    for id in order {
        let node = o.node(id);
        let mut acc = BTreeMap::new();
        if node.kind == NodeKind::Writer {
            acc.insert(node.origin.expect("writer origin"), 1);
        }
        for l in &node.inputs {
            add_scaled(&mut acc, &memo[&l.node], l.sign.factor())?;
        }
        if clamp {
            acc.values_mut().for_each(|c| *c = (*c).min(2));
        }
        memo.insert(id, acc);
    }
    Ok(memo.into_iter().map(|(k, v)| (k, CoverageVector(v))).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle,
    WriterHasInput(OverlayId),
    ReaderHasOutput(OverlayId),
    WriterNotPush(OverlayId),
    PushBelowPull { pull: OverlayId, push: OverlayId },
    NegativeEdgeNotSubtractable { from: OverlayId, to: OverlayId },
    NegativeEdgeInsensitiveMode { from: OverlayId, to: OverlayId },
    DuplicatePath { writer: NodeId, reader: NodeId },
    MissingCoverage { writer: NodeId, reader: NodeId },
    SpuriousCoverage { writer: NodeId, reader: NodeId, count: i64 },
    MissingReader(NodeId),
    UnknownReader(NodeId),
    Orphan(OverlayId),
    IndexMismatch(OverlayId),
    Overflow,
}

/// All invariant violations of `o` relative to `a` under `caps`.
pub fn validate(o: &OverlayGraph, a: &BipartiteGraph, caps: Caps) -> Vec<Violation> {
    let mut out = Vec::new();
    if topo_order(o).is_err() {
        out.push(Violation::Cycle);
        return out;
    }
    for id in o.ids() {
        let n = o.node(id);
        match n.kind {
            NodeKind::Writer => {
                if !n.inputs.is_empty() {
                    out.push(Violation::WriterHasInput(id));
                }
                if n.decision != Decision::Push {
                    out.push(Violation::WriterNotPush(id));
                }
            }
            NodeKind::Reader => {
                if !n.outputs.is_empty() {
                    out.push(Violation::ReaderHasOutput(id));
                }
            }
            NodeKind::Partial => {
                if n.inputs.is_empty() || n.outputs.is_empty() {
                    out.push(Violation::Orphan(id));
                }
            }
        }
        for l in &n.inputs {
            if n.decision == Decision::Push && o.decision(l.node) == Decision::Pull {
                out.push(Violation::PushBelowPull { pull: l.node, push: id });
            }
            if l.sign == Sign::Neg {
                if !caps.subtractable {
                    out.push(Violation::NegativeEdgeNotSubtractable { from: l.node, to: id });
                }
                if o.mode() == Mode::DuplicateInsensitive {
                    out.push(Violation::NegativeEdgeInsensitiveMode { from: l.node, to: id });
                }
            }
        }
    }
    for r in a.readers() {
        if o.reader(r).is_none() {
            out.push(Violation::MissingReader(r));
        }
    }
    for (r, _) in o.readers() {
        if !a.is_reader(r) {
            out.push(Violation::UnknownReader(r));
        }
    }
    let cov = match coverage_all(o) {
        Ok(c) => c,
        Err(_) => {
            out.push(Violation::Overflow);
            return out;
        }
    };
    let multi_ok = caps.duplicate_insensitive;
    for (r, rid) in o.readers() {
        let want = a.inputs(r);
        let got = &cov[&rid].0;
        for &w in want {
            match got.get(&w).copied().unwrap_or(0) {
                1 => {}
                c if c >= 2 => {
                    if !multi_ok {
                        out.push(Violation::DuplicatePath { writer: w, reader: r });
                    }
                }
                _ => out.push(Violation::MissingCoverage { writer: w, reader: r }),
            }
        }
        for (&w, &c) in got {
            if c != 0 && want.binary_search(&w).is_err() {
                out.push(Violation::SpuriousCoverage { writer: w, reader: r, count: c });
            }
        }
    }
    let mut fresh = o.clone();
    fresh.rebuild_indexes();
    for id in o.ids() {
        if o.cover(id).is_some() && o.cover(id) != fresh.cover(id) {
            out.push(Violation::IndexMismatch(id));
        }
        if o.kind(id) == NodeKind::Writer && o.writer(o.node(id).origin.unwrap()) != Some(id) {
            out.push(Violation::IndexMismatch(id));
        }
    }
    for (w, set) in &o.rindex {
        for &id in set {
            let ok = o.contains(id)
                && o.cover(id).is_some_and(|c| c.binary_search(w).is_ok());
            if !ok {
                out.push(Violation::IndexMismatch(id));
            }
        }
    }
    for id in o.ids() {
        if let Some(c) = o.cover(id) {
            if c.iter().any(|w| !o.covering(*w).is_some_and(|s| s.contains(&id))) {
                out.push(Violation::IndexMismatch(id));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthProfile {
    /// Longest writer-to-reader path length; 0 for readers without inputs.
    pub per_reader: BTreeMap<NodeId, usize>,
    /// Mean over readers with at least one input.
    pub mean: f64,
    pub max: usize,
}

pub fn depth_profile(o: &OverlayGraph) -> Result<DepthProfile, OverlayError> {
    let mut depth = vec![0usize; o.id_bound()];
    for id in topo_order(o)? {
        depth[id.index()] = o
            .inputs(id)
            .iter()
            .map(|l| depth[l.node.index()] + 1)
            .max()
            .unwrap_or(0);
    }
    let per_reader: BTreeMap<_, _> = o.readers().map(|(r, id)| (r, depth[id.index()])).collect();
    let nonzero: Vec<usize> = per_reader.values().copied().filter(|&d| d > 0).collect();
    let mean = if nonzero.is_empty() {
        0.0
    } else {
        nonzero.iter().sum::<usize>() as f64 / nonzero.len() as f64
    };
    let max = nonzero.iter().copied().max().unwrap_or(0);
    Ok(DepthProfile { per_reader, mean, max })
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Writer => "writer",
            NodeKind::Partial => "partial",
            NodeKind::Reader => "reader",
        })
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Push => "push",
            Decision::Pull => "pull",
        })
    }
}

impl FromStr for Decision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "push" => Ok(Decision::Push),
            "pull" => Ok(Decision::Pull),
            other => Err(format!("unknown decision {other:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::DuplicateSensitive => "duplicate_sensitive",
            Mode::DuplicateInsensitive => "duplicate_insensitive",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duplicate_sensitive" => Ok(Mode::DuplicateSensitive),
            "duplicate_insensitive" => Ok(Mode::DuplicateInsensitive),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Line format: a `mode <mode>` record, then one record per live node:
/// `id kind[:origin] decision [±input ...]`. `#` starts a comment line.
pub fn to_text(o: &OverlayGraph) -> String {
    let mut s = String::new();
    s.push_str("# id kind[:origin] decision inputs\n");
    s.push_str(&format!("mode {}\n", o.mode()));
    for id in o.ids() {
        let n = o.node(id);
        s.push_str(&id.to_string());
        s.push(' ');
        s.push_str(&n.kind.to_string());
        if let Some(origin) = n.origin {
            s.push_str(&format!(":{origin}"));
        }
        s.push(' ');
        s.push_str(&n.decision.to_string());
        for l in &n.inputs {
            s.push(' ');
            s.push(if l.sign == Sign::Pos { '+' } else { '-' });
            s.push_str(&l.node.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn from_text(text: &str) -> Result<OverlayGraph, OverlayError> {
    let perr = |line: usize, reason: String| OverlayError::Parse { line, reason };
    let mut mode = None;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().expect("non-empty line");
        if head == "mode" {
            let m = parts.next().ok_or_else(|| perr(i + 1, "missing mode".into()))?;
            mode = Some(m.parse::<Mode>().map_err(|e| perr(i + 1, e))?);
            continue;
        }
        let id: u32 = head.parse().map_err(|_| perr(i + 1, format!("bad id {head:?}")))?;
        let kind_tok = parts.next().ok_or_else(|| perr(i + 1, "missing kind".into()))?;
        let (kind_s, origin) = match kind_tok.split_once(':') {
            Some((k, o)) => {
                let o: u32 = o.parse().map_err(|_| perr(i + 1, format!("bad origin {o:?}")))?;
                (k, Some(NodeId(o)))
            }
            None => (kind_tok, None),
        };
        let kind = match kind_s {
            "writer" => NodeKind::Writer,
            "partial" => NodeKind::Partial,
            "reader" => NodeKind::Reader,
            other => return Err(perr(i + 1, format!("unknown kind {other:?}"))),
        };
        if (kind == NodeKind::Partial) != origin.is_none() {
            return Err(perr(i + 1, "origin required exactly for writers and readers".into()));
        }
        let dec_tok = parts.next().ok_or_else(|| perr(i + 1, "missing decision".into()))?;
        let decision: Decision = dec_tok.parse().map_err(|e| perr(i + 1, e))?;
        let mut inputs = Vec::new();
        for tok in parts {
            let (sign, rest) = match tok.as_bytes().first() {
                Some(b'+') => (Sign::Pos, &tok[1..]),
                Some(b'-') => (Sign::Neg, &tok[1..]),
                _ => return Err(perr(i + 1, format!("input {tok:?} lacks a sign"))),
            };
            let src: u32 = rest.parse().map_err(|_| perr(i + 1, format!("bad input {tok:?}")))?;
            inputs.push(Link { node: OverlayId(src), sign });
        }
        records.push((i + 1, OverlayId(id), kind, origin, decision, inputs));
    }
    let mode = mode.ok_or_else(|| perr(0, "missing mode record".into()))?;
    let mut o = OverlayGraph::new(mode);
    let bound = records.iter().map(|r| r.1.index() + 1).max().unwrap_or(0);
    o.nodes = vec![None; bound];
    o.covers = vec![None; bound];
    for (line, id, kind, origin, decision, _) in &records {
        if o.nodes[id.index()].is_some() {
            return Err(perr(*line, format!("duplicate id {id}")));
        }
        o.nodes[id.index()] = Some(OverlayNode {
            kind: *kind,
            origin: *origin,
            decision: *decision,
            inputs: Vec::new(),
            outputs: Vec::new(),
        });
        let map = match kind {
            NodeKind::Writer => Some(&mut o.writers),
            NodeKind::Reader => Some(&mut o.readers),
            NodeKind::Partial => None,
        };
        if let (Some(map), Some(origin)) = (map, origin) {
            if map.insert(*origin, *id).is_some() {
                return Err(perr(*line, format!("origin {origin} used twice")));
            }
        }
    }
    for (line, id, _, _, _, inputs) in &records {
        for l in inputs {
            o.add_edge(l.node, *id, l.sign)
                .map_err(|e| perr(*line, e.to_string()))?;
        }
    }
    topo_order(&o)?;
    o.rebuild_indexes();
    Ok(o)
}
