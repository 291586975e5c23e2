//! Incremental overlay repair under structural changes to the data graph.
//!
//! A change is first translated into per-reader input deltas by comparing
//! neighborhoods around its endpoints before and after the change. Additions
//! become direct edges (or a shared aggregator once they pile up), deletions
//! re-cover the reader's surviving writers from the nodes already in place.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::construct::{cover_writers, ConstructError, CoverOptions};
use crate::graph::{neighborhood, DataGraph, GraphError, NodeId, QuerySpec, Timestamp};
use crate::overlay::{coverage, topo_order, Decision, NodeKind, OverlayError, OverlayGraph, OverlayId, Sign};

#[derive(Debug, thiserror::Error)]
pub enum MaintainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("reader {0} is not in the overlay")]
    UnknownReader(NodeId),
    #[error("repair left reader {0} with the wrong coverage")]
    Coverage(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Change {
    AddEdge(NodeId, NodeId),
    RemoveEdge(NodeId, NodeId),
    /// A new node with arcs from `inbound` and to `outbound`.
    AddNode { label: String, inbound: Vec<NodeId>, outbound: Vec<NodeId> },
    RemoveNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureUpdate {
    pub ts: Timestamp,
    pub change: Change,
}

impl StructureUpdate {
    pub fn new(ts: Timestamp, change: Change) -> Self {
        StructureUpdate { ts, change }
    }
}

/// Writers a reader gains and loses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReaderDelta {
    pub reader: NodeId,
    pub added: Vec<NodeId>,
    pub removed: Vec<NodeId>,
}

/// Changed input lists after a structural update, plus readers that
/// appeared or disappeared with a node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeltaList {
    pub entries: Vec<ReaderDelta>,
    pub added_node: Option<NodeId>,
    pub removed_node: Option<NodeId>,
    /// New reader input lists, for verification.
    #[serde(skip)]
    pub targets: BTreeMap<NodeId, Vec<NodeId>>,
}

/// Applies a change to the data graph; returns the id of an added node.
pub fn apply_to_graph(g: &mut DataGraph, change: &Change) -> Result<Option<NodeId>, GraphError> {
    match change {
        Change::AddEdge(u, v) => g.add_edge(*u, *v).map(|_| None),
        Change::RemoveEdge(u, v) => g.remove_edge(*u, *v).map(|_| None),
        Change::AddNode { label, inbound, outbound } => {
            let v = g.add_node(label);
            for &u in inbound {
                g.add_edge(u, v)?;
            }
            for &u in outbound {
                g.add_edge(v, u)?;
            }
            Ok(Some(v))
        }
        Change::RemoveNode(v) => g.remove_node(*v).map(|_| None),
    }
}

/// Nodes within `hops` arcs of `seeds`, ignoring direction.
fn vicinity(g: &DataGraph, seeds: &[NodeId], hops: u32) -> BTreeSet<NodeId> {
    let mut dist: HashMap<NodeId, u32> = HashMap::new();
    let mut queue = VecDeque::new();
    for &s in seeds.iter().filter(|&&s| g.contains(s)) {
        dist.insert(s, 0);
        queue.push_back(s);
    }
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if d == hops {
            continue;
        }
        for &y in g.in_neighbors(x).iter().chain(g.out_neighbors(x)) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(y) {
                e.insert(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist.into_keys().collect()
}

fn endpoints(change: &Change) -> Vec<NodeId> {
    match change {
        Change::AddEdge(u, v) | Change::RemoveEdge(u, v) => vec![*u, *v],
        Change::AddNode { inbound, outbound, .. } => inbound.iter().chain(outbound).copied().collect(),
        Change::RemoveNode(v) => vec![*v],
    }
}

fn inputs_of(g: &DataGraph, q: &QuerySpec, readers: &BTreeSet<NodeId>) -> Result<BTreeMap<NodeId, Vec<NodeId>>, GraphError> {
    readers
        .iter()
        .filter(|&&r| g.contains(r) && q.readers.selects(g, r))
        .map(|&r| Ok((r, neighborhood(g, q, r)?)))
        .collect()
}

/// Applies `change` to `g` and returns the exact reader deltas.
pub fn apply_and_diff(g: &mut DataGraph, q: &QuerySpec, change: &Change) -> Result<DeltaList, GraphError> {
    let seeds = endpoints(change);
    let mut candidates = vicinity(g, &seeds, q.hops);
    let before = inputs_of(g, q, &candidates)?;
    let added = apply_to_graph(g, change)?;
    if let Some(v) = added {
        candidates.extend(vicinity(g, &[v], q.hops));
    }
    let after = inputs_of(g, q, &candidates)?;
    let mut delta = DeltaList {
        added_node: added,
        removed_node: match change {
            Change::RemoveNode(v) => Some(*v),
            _ => None,
        },
        ..Default::default()
    };
    for (&r, now) in &after {
        let old = before.get(&r).map_or(&[][..], Vec::as_slice);
        let (old_set, now_set): (BTreeSet<_>, BTreeSet<_>) = (old.iter().collect(), now.iter().collect());
        let entry = ReaderDelta {
            reader: r,
            added: now_set.difference(&old_set).map(|&&w| w).collect(),
            removed: old_set.difference(&now_set).map(|&&w| w).collect(),
        };
        if !entry.added.is_empty() || !entry.removed.is_empty() {
            delta.entries.push(entry);
        }
        delta.targets.insert(r, now.clone());
    }
    Ok(delta)
}

/// The reader deltas `change` would cause, without touching `g`.
pub fn affected_readers(g: &DataGraph, q: &QuerySpec, change: &Change) -> Result<DeltaList, GraphError> {
    apply_and_diff(&mut g.clone(), q, change)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaintainConfig {
    /// Direct edges a reader may accumulate (or receive at once) before they
    /// are grouped through shared aggregators.
    pub threshold: usize,
    /// Most affected upstream aggregators a deletion repairs in place;
    /// beyond that the reader is rebuilt.
    pub split_limit: usize,
}

impl Default for MaintainConfig {
    fn default() -> Self {
        MaintainConfig { threshold: 8, split_limit: 5 }
    }
}

/// What one update did to the overlay.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MaintainReport {
    pub readers_changed: usize,
    pub direct_edges: usize,
    pub aggregated: usize,
    pub restructured: usize,
    pub split: usize,
    pub rebuilt: usize,
    pub nodes_created: usize,
    pub nodes_removed: usize,
}

/// Overlay maintenance state: the per-reader direct-edge counters.
#[derive(Debug, Clone, Default)]
pub struct Maintainer {
    pub config: MaintainConfig,
    counters: HashMap<NodeId, usize>,
}

const NEW: CoverOptions = CoverOptions { carve: true, new_decision: Decision::Pull };

fn reader_id(o: &OverlayGraph, r: NodeId) -> Result<OverlayId, MaintainError> {
    o.reader(r).ok_or(MaintainError::UnknownReader(r))
}

/// Feeds `r` from nodes covering exactly `writers`, adding a fresh
/// aggregator when more than one node is needed and `group` is set.
fn attach(o: &mut OverlayGraph, rid: OverlayId, writers: &BTreeSet<NodeId>, group: bool) -> Result<(), MaintainError> {
    if writers.is_empty() {
        return Ok(());
    }
    let chosen = cover_writers(o, writers, NEW, |id, _| id == rid)?;
    if group && chosen.len() > 1 {
        let agg = o.add_partial(Decision::Pull);
        for c in chosen {
            o.add_edge(c, agg, Sign::Pos)?;
        }
        o.refresh_cover(agg);
        o.add_edge(agg, rid, Sign::Pos)?;
    } else {
        for c in chosen {
            o.add_edge(c, rid, Sign::Pos)?;
        }
    }
    Ok(())
}

fn detach_all(o: &mut OverlayGraph, rid: OverlayId) -> Result<(), MaintainError> {
    let old: Vec<OverlayId> = o.inputs(rid).iter().map(|l| l.node).collect();
    for u in old {
        o.remove_edge(u, rid)?;
    }
    Ok(())
}

fn set_reader_cover(o: &mut OverlayGraph, rid: OverlayId, writers: &BTreeSet<NodeId>) {
    let clean = o.inputs(rid).iter().all(|l| l.sign == Sign::Pos && o.cover(l.node).is_some());
    o.set_cover(rid, clean.then(|| writers.iter().copied().collect()));
}

impl Maintainer {
    pub fn new(config: MaintainConfig) -> Self {
        Maintainer { config, counters: HashMap::new() }
    }

    pub fn direct_edges(&self, r: NodeId) -> usize {
        self.counters.get(&r).copied().unwrap_or(0)
    }

    /// Applies `u` to the data graph and repairs the overlay. On failure both
    /// are left as they were.
    pub fn apply(
        &mut self,
        g: &mut DataGraph,
        q: &QuerySpec,
        o: &mut OverlayGraph,
        u: &StructureUpdate,
    ) -> Result<(DeltaList, MaintainReport), MaintainError> {
        let mut next = g.clone();
        let delta = apply_and_diff(&mut next, q, &u.change)?;
        let mut work = o.clone();
        let counters = self.counters.clone();
        match self.apply_delta(&mut work, &delta) {
            Ok(report) => {
                *g = next;
                *o = work;
                Ok((delta, report))
            }
            Err(e) => {
                self.counters = counters;
                Err(e)
            }
        }
    }

    /// Repairs the overlay for an already computed delta list.
    pub fn apply_delta(&mut self, o: &mut OverlayGraph, delta: &DeltaList) -> Result<MaintainReport, MaintainError> {
        let bound = o.id_bound();
        let before = o.node_count();
        let mut report = MaintainReport { readers_changed: delta.entries.len(), ..Default::default() };
        if let Some(v) = delta.added_node {
            self.apply_node_addition(o, v, delta.targets.contains_key(&v));
        }
        for entry in &delta.entries {
            if !entry.removed.is_empty() {
                self.apply_edge_del(o, entry, &mut report)?;
            }
            if !entry.added.is_empty() {
                self.apply_edge_add(o, entry, &mut report)?;
            }
        }
        if let Some(v) = delta.removed_node {
            self.apply_node_removal(o, v, &mut report)?;
        }
        o.collect_garbage();
        settle_new_decisions(o, bound)?;
        for (r, want) in &delta.targets {
            verify(o, *r, want)?;
        }
        report.nodes_created = o.ids().filter(|id| id.index() >= bound).count();
        report.nodes_removed = (before + report.nodes_created).saturating_sub(o.node_count());
        Ok(report)
    }

    /// Adds `entry.added` to the reader's inputs.
    pub fn apply_edge_add(
        &mut self,
        o: &mut OverlayGraph,
        entry: &ReaderDelta,
        report: &mut MaintainReport,
    ) -> Result<(), MaintainError> {
        let rid = reader_id(o, entry.reader)?;
        let mut target: BTreeSet<NodeId> = match o.cover(rid) {
            Some(c) => c.iter().copied().collect(),
            None => BTreeSet::new(),
        };
        let was_clean = o.cover(rid).is_some();
        target.extend(entry.added.iter().copied());
        let mut fresh = BTreeSet::new();
        for &w in &entry.added {
            // a writer cancelled by a negative edge comes back by dropping it
            let wid = o.add_writer(w);
            if o.edge_sign(wid, rid) == Some(Sign::Neg) {
                o.remove_edge(wid, rid)?;
            } else {
                fresh.insert(w);
            }
        }
        if fresh.len() > self.config.threshold {
            attach(o, rid, &fresh, true)?;
            report.aggregated += 1;
        } else {
            for &w in &fresh {
                let wid = o.add_writer(w);
                o.add_edge(wid, rid, Sign::Pos)?;
            }
            report.direct_edges += fresh.len();
            *self.counters.entry(entry.reader).or_default() += fresh.len();
        }
        if was_clean {
            set_reader_cover(o, rid, &target);
        }
        if self.direct_edges(entry.reader) > self.config.threshold {
            self.regroup(o, rid)?;
            report.restructured += 1;
        }
        Ok(())
    }

    /// Routes a reader's direct writer inputs through existing aggregators.
    fn regroup(&mut self, o: &mut OverlayGraph, rid: OverlayId) -> Result<(), MaintainError> {
        let r = o.node(rid).origin.expect("reader origin");
        self.counters.remove(&r);
        let direct: BTreeSet<NodeId> = o
            .inputs(rid)
            .iter()
            .filter(|l| l.sign == Sign::Pos && o.kind(l.node) == NodeKind::Writer)
            .map(|l| o.node(l.node).origin.expect("writer origin"))
            .collect();
        if direct.len() < 2 {
            return Ok(());
        }
        let chosen = cover_writers(o, &direct, NEW, |id, _| id == rid)?;
        if chosen.len() >= direct.len() {
            return Ok(());
        }
        for &w in &direct {
            let wid = o.writer(w).expect("writer present");
            o.remove_edge(wid, rid)?;
        }
        for c in chosen {
            o.add_edge(c, rid, Sign::Pos)?;
        }
        Ok(())
    }

    /// Drops `entry.removed` from the reader's inputs, trimming the few
    /// aggregators involved or rebuilding the reader's inputs outright.
    pub fn apply_edge_del(
        &mut self,
        o: &mut OverlayGraph,
        entry: &ReaderDelta,
        report: &mut MaintainReport,
    ) -> Result<(), MaintainError> {
        let rid = reader_id(o, entry.reader)?;
        let gone: BTreeSet<NodeId> = entry.removed.iter().copied().collect();
        let Some(cover) = o.cover(rid).map(<[NodeId]>::to_vec) else {
            return self.rebuild(o, rid, entry, report);
        };
        let remaining: BTreeSet<NodeId> = cover.iter().filter(|w| !gone.contains(w)).copied().collect();
        let touched = o
            .ancestors(rid)
            .into_iter()
            .filter(|&a| o.kind(a) == NodeKind::Partial)
            .filter(|&a| o.cover(a).is_none_or(|c| c.iter().any(|w| gone.contains(w))))
            .count();
        if touched > self.config.split_limit {
            return self.rebuild(o, rid, entry, report);
        }
        let mut regain = BTreeSet::new();
        let hit: Vec<OverlayId> = o
            .inputs(rid)
            .iter()
            .map(|l| l.node)
            .filter(|&u| o.cover(u).is_some_and(|c| c.iter().any(|w| gone.contains(w))))
            .collect();
        for u in hit {
            o.remove_edge(u, rid)?;
            if o.kind(u) == NodeKind::Writer {
                if let Some(c) = self.counters.get_mut(&entry.reader) {
                    *c = c.saturating_sub(1);
                }
            }
            regain.extend(o.cover(u).expect("clean").iter().filter(|w| !gone.contains(w)).copied());
        }
        attach(o, rid, &regain, false)?;
        set_reader_cover(o, rid, &remaining);
        report.split += 1;
        Ok(())
    }

    fn rebuild(
        &mut self,
        o: &mut OverlayGraph,
        rid: OverlayId,
        entry: &ReaderDelta,
        report: &mut MaintainReport,
    ) -> Result<(), MaintainError> {
        let cov = coverage(o, rid)?;
        let gone: BTreeSet<NodeId> = entry.removed.iter().copied().collect();
        let keep: BTreeSet<NodeId> = cov.support().into_iter().filter(|w| !gone.contains(w)).collect();
        detach_all(o, rid)?;
        self.counters.remove(&entry.reader);
        attach(o, rid, &keep, false)?;
        set_reader_cover(o, rid, &keep);
        report.rebuilt += 1;
        Ok(())
    }

    /// A fresh data node gets its writer right away and, when selected, an
    /// empty reader that its delta entry then fills.
    pub fn apply_node_addition(&mut self, o: &mut OverlayGraph, v: NodeId, reader: bool) {
        o.add_writer(v);
        if reader {
            let rid = o.add_reader(v, Decision::Pull);
            o.set_cover(rid, Some(Vec::new()));
        }
    }

    /// Removes both roles of a deleted data node, after the delta entries
    /// have dropped it from every reader that listed it. Readers it still
    /// reaches (through cancelling paths) are rebuilt.
    pub fn apply_node_removal(
        &mut self,
        o: &mut OverlayGraph,
        v: NodeId,
        report: &mut MaintainReport,
    ) -> Result<(), MaintainError> {
        if let Some(rid) = o.reader(v) {
            o.remove_node(rid)?;
            self.counters.remove(&v);
        }
        let Some(wid) = o.writer(v) else {
            return Ok(());
        };
        let reached: Vec<OverlayId> = o
            .descendants(wid)
            .into_iter()
            .filter(|&d| o.kind(d) == NodeKind::Reader)
            .collect();
        for rid in reached {
            let r = o.node(rid).origin.expect("reader origin");
            self.rebuild(o, rid, &ReaderDelta { reader: r, added: Vec::new(), removed: Vec::new() }, report)?;
        }
        o.collect_garbage();
        o.remove_node(wid)?;
        Ok(())
    }
}

/// Nodes created by maintenance push when they feed a push node, pull
/// otherwise; new readers pull. Any push node left below a pull node is
/// then turned pull.
fn settle_new_decisions(o: &mut OverlayGraph, bound: usize) -> Result<(), MaintainError> {
    let order = topo_order(o)?;
    for &id in order.iter().rev() {
        if id.index() < bound || o.kind(id) == NodeKind::Writer {
            continue;
        }
        let d = match o.kind(id) {
            NodeKind::Reader => Decision::Pull,
            _ if o.outputs(id).iter().any(|l| o.decision(l.node) == Decision::Push) => Decision::Push,
            _ => Decision::Pull,
        };
        o.set_decision(id, d);
    }
    o.repair_decisions()?;
    Ok(())
}

fn verify(o: &OverlayGraph, r: NodeId, want: &[NodeId]) -> Result<(), MaintainError> {
    let rid = reader_id(o, r)?;
    let ok = match o.derived_cover(rid) {
        Some(c) => c == want && o.cover(rid) == Some(want),
        None => coverage(o, rid)?.is_indicator_of(want),
    };
    if ok {
        Ok(())
    } else {
        Err(MaintainError::Coverage(r))
    }
}
