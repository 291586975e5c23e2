//! Workloads: generation, trace files, replay and metrics.
//!
//! Trace files are CSV with the header `ts,kind,node,node2,value`, where
//! `kind` is one of `R`, `W`, `EADD`, `EDEL`, `NADD`, `NDEL` and nodes are
//! numeric ids. `NADD` names the id the new node will receive (ids are
//! never reused, so it is the graph's id bound at that point); its edges
//! follow as `EADD` events.

pub mod bench;
pub mod generate;
pub mod http;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{Activity, NodeId, Timestamp, Value};
use crate::maintain::Change;

pub use bench::{compare, prepare, prepare_decided, run_benchmark, BenchConfig, OverlayChoice, Prepared, RunOutcome};
pub use generate::{gen_shift, gen_zipf, holme_kim, preferential_attachment, random_graph, ShiftWorkload, Workload, ZipfParams};
pub use http::{http_workload, parse_http_trace, HttpTrace, Request};
pub use report::{render, LatencySummary, MetricsReport, OpCount, ReportFormat};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("{0}")]
    Invalid(String),
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Construct(#[from] crate::construct::ConstructError),
    #[error(transparent)]
    Dataflow(#[from] crate::dataflow::DataflowError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "R")]
    Read,
    #[serde(rename = "W")]
    Write,
    #[serde(rename = "EADD")]
    EdgeAdd,
    #[serde(rename = "EDEL")]
    EdgeDel,
    #[serde(rename = "NADD")]
    NodeAdd,
    #[serde(rename = "NDEL")]
    NodeDel,
}

impl EventKind {
    pub const ALL: [EventKind; 6] =
        [EventKind::Read, EventKind::Write, EventKind::EdgeAdd, EventKind::EdgeDel, EventKind::NodeAdd, EventKind::NodeDel];

    pub fn is_structural(self) -> bool {
        !matches!(self, EventKind::Read | EventKind::Write)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Read => "R",
            EventKind::Write => "W",
            EventKind::EdgeAdd => "EADD",
            EventKind::EdgeDel => "EDEL",
            EventKind::NodeAdd => "NADD",
            EventKind::NodeDel => "NDEL",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadEvent {
    pub ts: Timestamp,
    pub kind: EventKind,
    pub node: NodeId,
    pub node2: Option<NodeId>,
    pub value: Option<Value>,
}

impl WorkloadEvent {
    pub fn read(ts: Timestamp, node: NodeId) -> Self {
        WorkloadEvent { ts, kind: EventKind::Read, node, node2: None, value: None }
    }

    pub fn write(ts: Timestamp, node: NodeId, value: Value) -> Self {
        WorkloadEvent { ts, kind: EventKind::Write, node, node2: None, value: Some(value) }
    }

    pub fn structural(ts: Timestamp, change: &Change) -> Self {
        let (kind, node, node2) = match change {
            Change::AddEdge(u, v) => (EventKind::EdgeAdd, *u, Some(*v)),
            Change::RemoveEdge(u, v) => (EventKind::EdgeDel, *u, Some(*v)),
            Change::AddNode { label, .. } => {
                (EventKind::NodeAdd, NodeId(label.parse().expect("numeric label for traced node adds")), None)
            }
            Change::RemoveNode(v) => (EventKind::NodeDel, *v, None),
        };
        WorkloadEvent { ts, kind, node, node2, value: None }
    }

    /// The structural change this event stands for, if any.
    pub fn change(&self) -> Option<Change> {
        let pair = || (self.node, self.node2.expect("edge events carry two nodes"));
        Some(match self.kind {
            EventKind::Read | EventKind::Write => return None,
            EventKind::EdgeAdd => Change::AddEdge(pair().0, pair().1),
            EventKind::EdgeDel => Change::RemoveEdge(pair().0, pair().1),
            EventKind::NodeAdd => Change::AddNode { label: self.node.0.to_string(), inbound: vec![], outbound: vec![] },
            EventKind::NodeDel => Change::RemoveNode(self.node),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    ts: Timestamp,
    kind: String,
    node: u32,
    node2: Option<u32>,
    value: Option<Value>,
}

pub fn write_trace<W: Write>(events: &[WorkloadEvent], sink: W) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(sink);
    for e in events {
        w.serialize(Row { ts: e.ts, kind: e.kind.to_string(), node: e.node.0, node2: e.node2.map(|n| n.0), value: e.value })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace, checking kinds, arities and timestamp order.
pub fn read_trace<R: Read>(source: R) -> Result<Vec<WorkloadEvent>, WorkloadError> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let mut out: Vec<WorkloadEvent> = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row?;
        let bad = |reason: String| WorkloadError::Trace { line, reason };
        let kind: EventKind = row.kind.parse().map_err(bad)?;
        let edge = matches!(kind, EventKind::EdgeAdd | EventKind::EdgeDel);
        if edge != row.node2.is_some() {
            return Err(bad(format!("{kind} takes {} node(s)", if edge { 2 } else { 1 })));
        }
        if (kind == EventKind::Write) != row.value.is_some() {
            return Err(bad("only writes carry a value".into()));
        }
        if out.last().is_some_and(|p| p.ts > row.ts) {
            return Err(bad("timestamps must not decrease".into()));
        }
        out.push(WorkloadEvent { ts: row.ts, kind, node: NodeId(row.node), node2: row.node2.map(NodeId), value: row.value });
    }
    Ok(out)
}

/// Observed per-event rates of every node in `events`.
pub fn observed_activity(events: &[WorkloadEvent]) -> BTreeMap<NodeId, Activity> {
    let mut m: BTreeMap<NodeId, Activity> = BTreeMap::new();
    let n = events.len().max(1) as f64;
    for e in events {
        let a = m.entry(e.node).or_default();
        match e.kind {
            EventKind::Read => a.read += 1.0 / n,
            EventKind::Write => a.write += 1.0 / n,
            _ => {}
        }
    }
    m
}
