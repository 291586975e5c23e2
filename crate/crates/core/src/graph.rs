//! Data graph, per-node content streams, query specification, and the
//! derived writer/reader incidence graph that every later stage consumes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::engine::AggSpec;

/// Dense node id assigned at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type Timestamp = u64;
pub type Value = i64;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("out-of-order write on node {node}: ts {ts} < last {last}")]
    OutOfOrder {
        node: NodeId,
        ts: Timestamp,
        last: Timestamp,
    },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Estimated event rates of a node (events per unit time).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub write: f64,
    pub read: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// When false every line is treated as a symmetric edge.
    pub directed: bool,
}

/// The evolving base graph. Node ids are never reused after deletion.
#[derive(Debug, Clone, Default)]
pub struct DataGraph {
    labels: Vec<String>,
    by_label: HashMap<String, NodeId>,
    out: Vec<BTreeSet<NodeId>>,
    inn: Vec<BTreeSet<NodeId>>,
    alive: Vec<bool>,
    attrs: Vec<BTreeMap<String, String>>,
    streams: Vec<Vec<(Timestamp, Value)>>,
    activity: Vec<Option<Activity>>,
    edge_count: usize,
}

/// Parse a line-oriented edge list (`u<TAB>v`, `#` comments).
pub fn load_graph<R: BufRead>(source: R, options: LoadOptions) -> Result<DataGraph, GraphError> {
    let mut g = DataGraph::default();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(GraphError::Parse {
                line: i + 1,
                reason: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        if fields[0] == fields[1] {
            return Err(GraphError::SelfLoop(fields[0].to_string()));
        }
        let u = g.intern(fields[0]);
        let v = g.intern(fields[1]);
        g.insert_arc(u, v);
        if !options.directed {
            g.insert_arc(v, u);
        }
    }
    Ok(g)
}

impl DataGraph {
    /// Graph with `n` isolated nodes labelled by their ids.
    pub fn with_nodes(n: usize) -> Self {
        let mut g = DataGraph::default();
        for i in 0..n {
            g.intern(&i.to_string());
        }
        g
    }

    /// Build from directed arcs over `n` nodes; self-loops are rejected.
    pub fn from_arcs(n: usize, arcs: &[(u32, u32)]) -> Result<Self, GraphError> {
        let mut g = Self::with_nodes(n);
        for &(u, v) in arcs {
            g.add_edge(NodeId(u), NodeId(v))?;
        }
        Ok(g)
    }

    fn intern(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.by_label.get(label) {
            return id;
        }
        let id = NodeId(self.labels.len() as u32);
        self.labels.push(label.to_string());
        self.by_label.insert(label.to_string(), id);
        self.out.push(BTreeSet::new());
        self.inn.push(BTreeSet::new());
        self.alive.push(true);
        self.attrs.push(BTreeMap::new());
        self.streams.push(Vec::new());
        self.activity.push(None);
        id
    }

    fn insert_arc(&mut self, u: NodeId, v: NodeId) -> bool {
        if self.out[u.index()].insert(v) {
            self.inn[v.index()].insert(u);
            self.edge_count += 1;
            true
        } else {
            false
        }
    }

    /// Adds a fresh node with the given label; returns the existing id if
    /// the label is already live.
    pub fn add_node(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.by_label.get(label) {
            if self.alive[id.index()] {
                return id;
            }
            self.by_label.remove(label);
        }
        self.intern(label)
    }

    /// Removes a node and its incident arcs.
    pub fn remove_node(&mut self, v: NodeId) -> Result<(), GraphError> {
        self.check(v)?;
        for u in std::mem::take(&mut self.out[v.index()]) {
            self.inn[u.index()].remove(&v);
            self.edge_count -= 1;
        }
        for u in std::mem::take(&mut self.inn[v.index()]) {
            self.out[u.index()].remove(&v);
            self.edge_count -= 1;
        }
        self.alive[v.index()] = false;
        self.by_label.remove(&self.labels[v.index()]);
        Ok(())
    }

    /// Adds the arc `u -> v`; returns whether it was new.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId) -> Result<bool, GraphError> {
        self.check(u)?;
        self.check(v)?;
        if u == v {
            return Err(GraphError::SelfLoop(self.labels[u.index()].clone()));
        }
        Ok(self.insert_arc(u, v))
    }

    /// Removes the arc `u -> v`; returns whether it existed.
    pub fn remove_edge(&mut self, u: NodeId, v: NodeId) -> Result<bool, GraphError> {
        self.check(u)?;
        self.check(v)?;
        if self.out[u.index()].remove(&v) {
            self.inn[v.index()].remove(&u);
            self.edge_count -= 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn check(&self, v: NodeId) -> Result<(), GraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(v))
        }
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.alive.get(v.index()).copied().unwrap_or(false)
    }

    /// Number of live nodes.
    pub fn node_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Upper bound on ids ever assigned.
    pub fn id_bound(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.labels.len())
            .filter(|&i| self.alive[i])
            .map(|i| NodeId(i as u32))
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes()
            .flat_map(move |u| self.out[u.index()].iter().map(move |&v| (u, v)))
    }

    pub fn out_neighbors(&self, v: NodeId) -> &BTreeSet<NodeId> {
        &self.out[v.index()]
    }

    pub fn in_neighbors(&self, v: NodeId) -> &BTreeSet<NodeId> {
        &self.inn[v.index()]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.contains(u) && self.out[u.index()].contains(&v)
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v.index()]
    }

    pub fn id_of(&self, label: &str) -> Option<NodeId> {
        self.by_label.get(label).copied()
    }

    pub fn set_attr(&mut self, v: NodeId, key: &str, value: &str) -> Result<(), GraphError> {
        self.check(v)?;
        self.attrs[v.index()].insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn attr(&self, v: NodeId, key: &str) -> Option<&str> {
        self.attrs[v.index()].get(key).map(String::as_str)
    }

    pub fn set_activity(&mut self, v: NodeId, activity: Activity) -> Result<(), GraphError> {
        self.check(v)?;
        assert!(
            activity.write >= 0.0 && activity.read >= 0.0,
            "activity rates must be non-negative"
        );
        self.activity[v.index()] = Some(activity);
        Ok(())
    }

    pub fn activity(&self, v: NodeId) -> Option<Activity> {
        self.activity.get(v.index()).copied().flatten()
    }

    /// Appends a value to `v`'s stream. Timestamps must be non-decreasing.
    pub fn record_write(&mut self, v: NodeId, ts: Timestamp, value: Value) -> Result<(), GraphError> {
        self.check(v)?;
        let stream = &mut self.streams[v.index()];
        if let Some(&(last, _)) = stream.last() {
            if ts < last {
                return Err(GraphError::OutOfOrder { node: v, ts, last });
            }
        }
        stream.push((ts, value));
        Ok(())
    }

    pub fn stream(&self, v: NodeId) -> &[(Timestamp, Value)] {
        &self.streams[v.index()]
    }
}

/// Which arcs define a neighborhood step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `N(x)` holds nodes `y` with `y -> x`.
    In,
    /// `N(x)` holds nodes `y` with `x -> y`.
    Out,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// The last `n` values of each writer.
    Count(u32),
    /// Values with `ts > now - span`.
    Time(u64),
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Count(n) => write!(f, "count:{n}"),
            Window::Time(t) => write!(f, "time:{t}"),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad window {s:?}; expected count:N or time:T");
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: u64 = n.parse().map_err(|_| bad())?;
        match kind {
            "count" => u32::try_from(n).map(Window::Count).map_err(|_| bad()),
            "time" => Ok(Window::Time(n)),
            _ => Err(bad()),
        }
    }
}

/// Static attribute equality test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrFilter {
    pub key: String,
    pub value: String,
}

impl AttrFilter {
    pub fn new(key: &str, value: &str) -> Self {
        Self {
            key: key.to_string(),
            value: value.to_string(),
        }
    }

    pub fn matches(&self, g: &DataGraph, v: NodeId) -> bool {
        g.attr(v, &self.key) == Some(self.value.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReaderSelect {
    All,
    Attr(AttrFilter),
    Nodes(BTreeSet<NodeId>),
}

impl ReaderSelect {
    pub fn selects(&self, g: &DataGraph, v: NodeId) -> bool {
        match self {
            ReaderSelect::All => true,
            ReaderSelect::Attr(f) => f.matches(g, v),
            ReaderSelect::Nodes(set) => set.contains(&v),
        }
    }
}

/// The aggregate, its window, and the neighborhood it ranges over.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub aggregate: AggSpec,
    pub window: Window,
    pub hops: u32,
    pub direction: Direction,
    pub writer_filter: Option<AttrFilter>,
    pub readers: ReaderSelect,
}

impl QuerySpec {
    /// In-neighbor query over all readers.
    pub fn new(aggregate: AggSpec, window: Window, hops: u32) -> Result<Self, GraphError> {
        let q = QuerySpec {
            aggregate,
            window,
            hops,
            direction: Direction::In,
            writer_filter: None,
            readers: ReaderSelect::All,
        };
        q.check()?;
        Ok(q)
    }

    pub fn check(&self) -> Result<(), GraphError> {
        if self.hops == 0 {
            return Err(GraphError::InvalidQuery("hop count must be >= 1".into()));
        }
        match self.window {
            Window::Count(0) | Window::Time(0) => {
                Err(GraphError::InvalidQuery("window must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_writer_filter(mut self, filter: AttrFilter) -> Self {
        self.writer_filter = Some(filter);
        self
    }

    pub fn with_readers(mut self, readers: ReaderSelect) -> Self {
        self.readers = readers;
        self
    }
}

/// `N(v)`: nodes within `hops` reversed query-direction steps, minus `v`,
/// filtered by the writer predicate. Sorted ascending.
pub fn neighborhood(g: &DataGraph, q: &QuerySpec, v: NodeId) -> Result<Vec<NodeId>, GraphError> {
    g.check(v)?;
    let mut seen = HashMap::new();
    seen.insert(v, 0u32);
    let mut queue = VecDeque::from([v]);
    let mut found = Vec::new();
    while let Some(x) = queue.pop_front() {
        let d = seen[&x];
        if d == q.hops {
            continue;
        }
        let step = |y: NodeId, seen: &mut HashMap<NodeId, u32>, queue: &mut VecDeque<NodeId>, found: &mut Vec<NodeId>| {
            if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(y) {
                e.insert(d + 1);
                queue.push_back(y);
                found.push(y);
            }
        };
        if matches!(q.direction, Direction::In | Direction::Both) {
            for &y in g.in_neighbors(x) {
                step(y, &mut seen, &mut queue, &mut found);
            }
        }
        if matches!(q.direction, Direction::Out | Direction::Both) {
            for &y in g.out_neighbors(x) {
                step(y, &mut seen, &mut queue, &mut found);
            }
        }
    }
    if let Some(filter) = &q.writer_filter {
        found.retain(|&w| filter.matches(g, w));
    }
    found.sort_unstable();
    Ok(found)
}

/// Writer -> reader incidence graph `A_G`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BipartiteGraph {
    writers: BTreeSet<NodeId>,
    inputs: BTreeMap<NodeId, Vec<NodeId>>,
    edge_count: usize,
}

impl BipartiteGraph {
    /// Builds from reader input lists; writers are the union of the lists.
    pub fn from_inputs(inputs: BTreeMap<NodeId, Vec<NodeId>>) -> Self {
        let mut writers = BTreeSet::new();
        let mut edge_count = 0;
        let inputs = inputs
            .into_iter()
            .map(|(r, mut ws)| {
                ws.sort_unstable();
                ws.dedup();
                edge_count += ws.len();
                writers.extend(ws.iter().copied());
                (r, ws)
            })
            .collect();
        BipartiteGraph {
            writers,
            inputs,
            edge_count,
        }
    }

    pub fn writers(&self) -> &BTreeSet<NodeId> {
        &self.writers
    }

    pub fn readers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.keys().copied()
    }

    pub fn reader_count(&self) -> usize {
        self.inputs.len()
    }

    /// Sorted input list of reader `r` (empty if `r` is not a reader).
    pub fn inputs(&self, r: NodeId) -> &[NodeId] {
        self.inputs.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_reader(&self, r: NodeId) -> bool {
        self.inputs.contains_key(&r)
    }

    pub fn input_lists(&self) -> &BTreeMap<NodeId, Vec<NodeId>> {
        &self.inputs
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, w: NodeId, r: NodeId) -> bool {
        self.inputs(r).binary_search(&w).is_ok()
    }

    /// Out-degree of every writer.
    pub fn out_degrees(&self) -> BTreeMap<NodeId, usize> {
        let mut deg: BTreeMap<NodeId, usize> = self.writers.iter().map(|&w| (w, 0)).collect();
        for ws in self.inputs.values() {
            for w in ws {
                *deg.get_mut(w).expect("writer registered") += 1;
            }
        }
        deg
    }
}

/// Derives `A_G`: readers by predicate, writers = union of all `N(r)`.
pub fn derive_bipartite(g: &DataGraph, q: &QuerySpec) -> BipartiteGraph {
    let inputs = g
        .nodes()
        .filter(|&v| q.readers.selects(g, v))
        .map(|r| (r, neighborhood(g, q, r).expect("live node")))
        .collect();
    BipartiteGraph::from_inputs(inputs)
}
