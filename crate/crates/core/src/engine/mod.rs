//! Read/write execution over a decided overlay.
//!
//! Writes follow the queueing model: every node-level application of a
//! write's delta is a micro-task on the write pool, guarded by that node's
//! lock, and propagation stops at pull nodes. Reads follow the uni-thread
//! model: the calling thread resolves the reader's pull subtree itself.

mod builtin;
mod uda;

pub use builtin::{builtin_aggregates, evaluate_direct, AggSpec, Builtin, BuiltinState};
pub use uda::{AggValue, Pao, Uda};

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::graph::{NodeId, Timestamp, Value, Window};
use crate::overlay::{topo_order, Decision, Link, NodeKind, OverlayGraph, OverlayId, Sign};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("node {0} is not a writer")]
    NotAWriter(NodeId),
    #[error("node {0} is not a reader")]
    NotAReader(NodeId),
    #[error("out-of-order write on node {node}: ts {ts} < last {last}")]
    OutOfOrder { node: NodeId, ts: Timestamp, last: Timestamp },
    #[error("aggregate {0} is not subtractable")]
    NotSubtractable(String),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteModel {
    /// Node-granular micro-tasks on the write pool.
    Queueing,
    /// The calling thread applies the whole propagation.
    UniThread,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub read_threads: usize,
    pub write_threads: usize,
    pub write_model: WriteModel,
    pub window: Window,
}

impl EngineConfig {
    pub fn single_threaded(window: Window) -> Self {
        EngineConfig {
            read_threads: 1,
            write_threads: 1,
            write_model: WriteModel::UniThread,
            window,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct WriterWindow {
    values: VecDeque<(Timestamp, Value)>,
    last: Option<Timestamp>,
}

/// One value entering (+1) or leaving (-1) a writer's window.
type Delta = Vec<(Value, i64)>;

#[derive(Debug)]
struct Topology {
    kind: Vec<Option<NodeKind>>,
    decision: Vec<Decision>,
    inputs: Vec<Vec<Link>>,
    push_outputs: Vec<Vec<Link>>,
    order: Vec<OverlayId>,
    writer_of: HashMap<NodeId, OverlayId>,
    reader_of: HashMap<NodeId, OverlayId>,
    origin: Vec<Option<NodeId>>,
}

impl Topology {
    fn freeze(o: &OverlayGraph) -> Self {
        let n = o.id_bound();
        let mut t = Topology {
            kind: vec![None; n],
            decision: vec![Decision::Pull; n],
            inputs: vec![Vec::new(); n],
            push_outputs: vec![Vec::new(); n],
            order: topo_order(o).expect("engine requires an acyclic overlay"),
            writer_of: o.writers().collect(),
            reader_of: o.readers().collect(),
            origin: vec![None; n],
        };
        for id in o.ids() {
            let node = o.node(id);
            let i = id.index();
            t.kind[i] = Some(node.kind);
            t.decision[i] = node.decision;
            t.inputs[i] = node.inputs().to_vec();
            t.push_outputs[i] = node
                .outputs()
                .iter()
                .filter(|l| o.decision(l.node) == Decision::Push)
                .copied()
                .collect();
            t.origin[i] = node.origin;
        }
        t
    }
}

pub struct Engine<U: Uda> {
    uda: Arc<U>,
    config: EngineConfig,
    topo: Arc<Topology>,
    paos: Arc<Vec<Mutex<Pao<U::State>>>>,
    windows: HashMap<NodeId, Mutex<WriterWindow>>,
    /// Windows of nodes that stopped being writers, revived if they return.
    dormant: HashMap<NodeId, WriterWindow>,
    write_pool: rayon::ThreadPool,
    read_pool: rayon::ThreadPool,
}

fn pool(threads: usize, name: &'static str) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .thread_name(move |i| format!("{name}-{i}"))
        .build()
        .map_err(|e| EngineError::Config(e.to_string()))
}

impl<U: Uda> Engine<U> {
    /// Installs `overlay` with empty windows.
    pub fn new(overlay: &OverlayGraph, uda: U, config: EngineConfig) -> Result<Self, EngineError> {
        Self::with_windows(overlay, Arc::new(uda), config, HashMap::new())
    }

    fn with_windows(
        overlay: &OverlayGraph,
        uda: Arc<U>,
        config: EngineConfig,
        mut carried: HashMap<NodeId, WriterWindow>,
    ) -> Result<Self, EngineError> {
        if config.read_threads == 0 || config.write_threads == 0 {
            return Err(EngineError::Config("thread counts must be >= 1".into()));
        }
        if overlay.negative_edge_count() > 0 && !uda.caps().subtractable {
            return Err(EngineError::NotSubtractable(uda.name()));
        }
        let topo = Topology::freeze(overlay);
        let paos = (0..overlay.id_bound())
            .map(|_| Mutex::new(Pao::new(uda.initialize())))
            .collect();
        let windows = topo
            .writer_of
            .keys()
            .map(|&w| (w, Mutex::new(carried.remove(&w).unwrap_or_default())))
            .collect();
        carried.retain(|_, w| !w.values.is_empty() || w.last.is_some());
        let engine = Engine {
            write_pool: pool(config.write_threads, "write")?,
            read_pool: pool(config.read_threads, "read")?,
            uda,
            config,
            topo: Arc::new(topo),
            paos: Arc::new(paos),
            windows,
            dormant: carried,
        };
        engine.recompute_push_state()?;
        Ok(engine)
    }

    /// Swaps in a new overlay (an epoch boundary): windows are carried over
    /// by data node and every push PAO is recomputed from scratch. Windows
    /// of nodes that are no longer writers are kept aside, not dropped.
    pub fn rebuild(&self, overlay: &OverlayGraph) -> Result<Self, EngineError> {
        let mut carried = self.dormant.clone();
        carried.extend(self.windows.iter().map(|(&w, m)| (w, m.lock().clone())));
        Self::with_windows(overlay, self.uda.clone(), self.config, carried)
    }

    fn recompute_push_state(&self) -> Result<(), EngineError> {
        for &id in &self.topo.order {
            let i = id.index();
            if self.topo.decision[i] != Decision::Push {
                continue;
            }
            let mut state = self.uda.initialize();
            if self.topo.kind[i] == Some(NodeKind::Writer) {
                let w = self.topo.origin[i].expect("writer origin");
                for &(_, v) in &self.windows[&w].lock().values {
                    self.uda.update(&mut state, None, Some(v));
                }
            } else {
                for l in &self.topo.inputs[i] {
                    let src = self.paos[l.node.index()].lock();
                    match l.sign {
                        Sign::Pos => self.uda.merge(&mut state, &src.state),
                        Sign::Neg => self.uda.unmerge(&mut state, &src.state)?,
                    }
                }
            }
            let mut p = self.paos[i].lock();
            p.state = state;
            p.version += 1;
        }
        Ok(())
    }

    pub fn uda(&self) -> &U {
        &self.uda
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn read_pool(&self) -> &rayon::ThreadPool {
        &self.read_pool
    }

    pub fn write_pool(&self) -> &rayon::ThreadPool {
        &self.write_pool
    }

    pub fn is_writer(&self, v: NodeId) -> bool {
        self.topo.writer_of.contains_key(&v)
    }

    pub fn is_reader(&self, v: NodeId) -> bool {
        self.topo.reader_of.contains_key(&v)
    }

    /// Current in-window values of writer `w` (oldest first).
    pub fn window_values(&self, w: NodeId) -> Vec<Value> {
        self.windows
            .get(&w)
            .map(|m| m.lock().values.iter().map(|&(_, v)| v).collect())
            .unwrap_or_default()
    }

    /// Version counter of an overlay node's PAO.
    pub fn version(&self, id: OverlayId) -> u64 {
        self.paos[id.index()].lock().version
    }

    /// Finalized PAO of a push node as currently materialized.
    pub fn materialized(&self, id: OverlayId) -> AggValue {
        self.uda.finalize(&self.paos[id.index()].lock().state)
    }

    /// Appends `value` to writer `v`'s window and pushes the resulting delta
    /// downstream as far as the push decisions allow. Returns after the
    /// propagation has been applied.
    pub fn write(&self, v: NodeId, ts: Timestamp, value: Value) -> Result<(), EngineError> {
        let wid = *self.topo.writer_of.get(&v).ok_or(EngineError::NotAWriter(v))?;
        let mut win = self.windows[&v].lock();
        if let Some(last) = win.last {
            if ts < last {
                return Err(EngineError::OutOfOrder { node: v, ts, last });
            }
        }
        win.last = Some(ts);
        win.values.push_back((ts, value));
        let mut delta: Delta = vec![(value, 1)];
        match self.config.window {
            Window::Count(c) => {
                while win.values.len() > c as usize {
                    let (_, old) = win.values.pop_front().expect("non-empty");
                    delta.push((old, -1));
                }
            }
            Window::Time(span) => {
                while let Some(&(t, old)) = win.values.front() {
                    if t + span <= ts {
                        win.values.pop_front();
                        delta.push((old, -1));
                    } else {
                        break;
                    }
                }
            }
        }
        self.propagate(wid, delta);
        Ok(())
    }

    /// Drops values that left a time window by `now`; returns how many.
    pub fn expire(&self, now: Timestamp) -> usize {
        let Window::Time(span) = self.config.window else {
            return 0;
        };
        let mut dropped = 0;
        let mut writers: Vec<_> = self.topo.writer_of.iter().map(|(&w, &id)| (w, id)).collect();
        writers.sort_unstable();
        for (w, wid) in writers {
            let mut win = self.windows[&w].lock();
            let mut delta = Delta::new();
            while let Some(&(t, old)) = win.values.front() {
                if t + span <= now {
                    win.values.pop_front();
                    delta.push((old, -1));
                } else {
                    break;
                }
            }
            if !delta.is_empty() {
                dropped += delta.len();
                self.propagate(wid, delta);
            }
        }
        dropped
    }

    fn propagate(&self, writer: OverlayId, delta: Delta) {
        match self.config.write_model {
            WriteModel::UniThread => {
                let mut stack = vec![(writer, 1i64)];
                while let Some((id, sign)) = stack.pop() {
                    apply_delta(&*self.uda, &self.paos[id.index()], &delta, sign);
                    for l in self.topo.push_outputs[id.index()].iter().rev() {
                        stack.push((l.node, sign * l.sign.factor()));
                    }
                }
            }
            WriteModel::Queueing => {
                let delta = Arc::new(delta);
                self.write_pool.scope(|s| {
                    spawn_apply(s, self.uda.clone(), self.topo.clone(), self.paos.clone(), delta, writer, 1);
                });
            }
        }
    }

    /// Resolves reader `r` on the calling thread.
    pub fn read(&self, r: NodeId) -> Result<AggValue, EngineError> {
        let rid = *self.topo.reader_of.get(&r).ok_or(EngineError::NotAReader(r))?;
        let mut acc = self.uda.initialize();
        self.resolve_into(&mut acc, rid, Sign::Pos)?;
        Ok(self.uda.finalize(&acc))
    }

    /// Runs [`read`](Self::read) on the read pool.
    pub fn read_pooled(&self, r: NodeId) -> Result<AggValue, EngineError> {
        self.read_pool.install(|| self.read(r))
    }

    fn resolve_into(&self, acc: &mut U::State, id: OverlayId, sign: Sign) -> Result<(), EngineError> {
        let i = id.index();
        if self.topo.decision[i] == Decision::Push {
            let p = self.paos[i].lock();
            return match sign {
                Sign::Pos => {
                    self.uda.merge(acc, &p.state);
                    Ok(())
                }
                Sign::Neg => self.uda.unmerge(acc, &p.state),
            };
        }
        if sign == Sign::Pos {
            for l in &self.topo.inputs[i] {
                self.resolve_into(acc, l.node, l.sign)?;
            }
            Ok(())
        } else {
            let mut sub = self.uda.initialize();
            for l in &self.topo.inputs[i] {
                self.resolve_into(&mut sub, l.node, l.sign)?;
            }
            self.uda.unmerge(acc, &sub)
        }
    }
}

fn apply_delta<U: Uda>(uda: &U, cell: &Mutex<Pao<U::State>>, delta: &Delta, sign: i64) {
    let mut p = cell.lock();
    let ins: Vec<Value> = delta.iter().filter(|d| d.1 * sign > 0).map(|d| d.0).collect();
    let del: Vec<Value> = delta.iter().filter(|d| d.1 * sign < 0).map(|d| d.0).collect();
    let mut ins = ins.into_iter();
    let mut del = del.into_iter();
    loop {
        match (del.next(), ins.next()) {
            (None, None) => break,
            (old, new) => uda.update(&mut p.state, old, new),
        }
    }
    p.version += 1;
}

fn spawn_apply<'s, U: Uda>(
    scope: &rayon::Scope<'s>,
    uda: Arc<U>,
    topo: Arc<Topology>,
    paos: Arc<Vec<Mutex<Pao<U::State>>>>,
    delta: Arc<Delta>,
    id: OverlayId,
    sign: i64,
) {
    scope.spawn(move |s| {
        apply_delta(&*uda, &paos[id.index()], &delta, sign);
        for l in &topo.push_outputs[id.index()] {
            spawn_apply(
                s,
                uda.clone(),
                topo.clone(),
                paos.clone(),
                delta.clone(),
                l.node,
                sign * l.sign.factor(),
            );
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BipartiteGraph;
    use crate::overlay::{trivial_overlay, Mode};
    use std::collections::BTreeMap;

    fn lists(l: &[(u32, &[u32])]) -> BipartiteGraph {
        BipartiteGraph::from_inputs(
            l.iter()
                .map(|(r, ws)| (NodeId(*r), ws.iter().map(|&w| NodeId(w)).collect()))
                .collect::<BTreeMap<_, _>>(),
        )
    }

    fn shared_overlay(decision: Decision) -> OverlayGraph {
        // p = {0,1,2}; reader 10 = p; reader 11 = p - 2 + 3 (negative edge)
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let ws: Vec<_> = (0..4).map(|w| o.add_writer(NodeId(w))).collect();
        let p = o.add_partial(decision);
        for &w in &ws[..3] {
            o.add_edge(w, p, Sign::Pos).unwrap();
        }
        let r10 = o.add_reader(NodeId(10), decision);
        let r11 = o.add_reader(NodeId(11), decision);
        o.add_edge(p, r10, Sign::Pos).unwrap();
        o.add_edge(p, r11, Sign::Pos).unwrap();
        o.add_edge(ws[2], r11, Sign::Neg).unwrap();
        o.add_edge(ws[3], r11, Sign::Pos).unwrap();
        o.rebuild_indexes();
        o
    }

    #[test]
    fn reads_match_direct_sum_under_both_plans_and_models() {
        for decision in [Decision::Push, Decision::Pull] {
            for model in [WriteModel::UniThread, WriteModel::Queueing] {
                let o = shared_overlay(decision);
                let cfg = EngineConfig {
                    read_threads: 2,
                    write_threads: 3,
                    write_model: model,
                    window: Window::Count(1),
                };
                let e = Engine::new(&o, AggSpec::Sum.build(), cfg).unwrap();
                for (ts, (w, v)) in [(0, 5), (1, 7), (2, 11), (3, 13), (0, 2)].into_iter().enumerate() {
                    e.write(NodeId(w), ts as u64, v).unwrap();
                }
                assert_eq!(e.read(NodeId(10)).unwrap(), AggValue::Int(2 + 7 + 11));
                assert_eq!(e.read(NodeId(11)).unwrap(), AggValue::Int(2 + 7 + 13));
            }
        }
    }

    #[test]
    fn pull_nodes_are_not_touched_by_writes() {
        let o = shared_overlay(Decision::Pull);
        let e = Engine::new(&o, AggSpec::Sum.build(), EngineConfig::single_threaded(Window::Count(1))).unwrap();
        let r = o.reader(NodeId(10)).unwrap();
        let w = o.writer(NodeId(0)).unwrap();
        let (rv, wv) = (e.version(r), e.version(w));
        e.write(NodeId(0), 1, 4).unwrap();
        assert_eq!(e.version(r), rv);
        assert_eq!(e.version(w), wv + 1);
    }

    #[test]
    fn count_window_expires_at_write_time() {
        let a = lists(&[(10, &[0])]);
        let o = trivial_overlay(&a);
        let e = Engine::new(&o, AggSpec::Sum.build(), EngineConfig::single_threaded(Window::Count(2))).unwrap();
        for (ts, v) in [1, 2, 3].into_iter().enumerate() {
            e.write(NodeId(0), ts as u64, v).unwrap();
        }
        assert_eq!(e.window_values(NodeId(0)), vec![2, 3]);
        assert_eq!(e.read(NodeId(10)).unwrap(), AggValue::Int(5));
    }

    #[test]
    fn time_window_expiry() {
        let a = lists(&[(10, &[0, 1])]);
        let o = trivial_overlay(&a);
        let e = Engine::new(&o, AggSpec::Max.build(), EngineConfig::single_threaded(Window::Time(10))).unwrap();
        e.write(NodeId(0), 1, 50).unwrap();
        e.write(NodeId(1), 5, 20).unwrap();
        assert_eq!(e.expire(5), 0);
        assert_eq!(e.read(NodeId(10)).unwrap(), AggValue::Int(50));
        assert_eq!(e.expire(11), 1);
        assert_eq!(e.read(NodeId(10)).unwrap(), AggValue::Int(20));
        assert_eq!(e.expire(15), 1);
        assert_eq!(e.read(NodeId(10)).unwrap(), AggValue::Empty);
    }

    #[test]
    fn rejects_bad_calls() {
        let a = lists(&[(10, &[0])]);
        let o = trivial_overlay(&a);
        let e = Engine::new(&o, AggSpec::Sum.build(), EngineConfig::single_threaded(Window::Count(1))).unwrap();
        assert_eq!(e.write(NodeId(10), 0, 1), Err(EngineError::NotAWriter(NodeId(10))));
        assert_eq!(e.read(NodeId(0)), Err(EngineError::NotAReader(NodeId(0))));
        e.write(NodeId(0), 5, 1).unwrap();
        assert!(matches!(e.write(NodeId(0), 4, 1), Err(EngineError::OutOfOrder { .. })));
        let neg = shared_overlay(Decision::Push);
        assert!(Engine::new(&neg, AggSpec::Max.build(), EngineConfig::single_threaded(Window::Count(1))).is_err());
    }

    #[test]
    fn rebuild_carries_windows() {
        let o = shared_overlay(Decision::Push);
        let e = Engine::new(&o, AggSpec::Sum.build(), EngineConfig::single_threaded(Window::Count(1))).unwrap();
        e.write(NodeId(0), 0, 3).unwrap();
        e.write(NodeId(3), 0, 4).unwrap();
        let mut pulled = o.clone();
        pulled.set_all_decisions(Decision::Pull);
        let e2 = e.rebuild(&pulled).unwrap();
        assert_eq!(e2.read(NodeId(11)).unwrap(), AggValue::Int(7));
        let e3 = e2.rebuild(&o).unwrap();
        assert_eq!(e3.read(NodeId(11)).unwrap(), AggValue::Int(7));
    }

    #[test]
    fn windows_of_former_writers_survive_rebuilds() {
        let o = shared_overlay(Decision::Push);
        let e = Engine::new(&o, AggSpec::Sum.build(), EngineConfig::single_threaded(Window::Count(1))).unwrap();
        e.write(NodeId(3), 0, 4).unwrap();
        let without = trivial_overlay(&lists(&[(10, &[0, 1, 2])]));
        let e2 = e.rebuild(&without).unwrap();
        assert!(!e2.is_writer(NodeId(3)));
        let e3 = e2.rebuild(&o).unwrap();
        assert_eq!(e3.window_values(NodeId(3)), vec![4]);
        assert_eq!(e3.read(NodeId(11)).unwrap(), AggValue::Int(4));
    }
}
