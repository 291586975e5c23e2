//! Ego-centric neighborhood aggregates over streaming graphs.
//!
//! A query such as "sum of the latest values written by each node's
//! in-neighbors" is compiled into an aggregation overlay: a DAG from writer
//! nodes through shared partial aggregators to reader nodes. Each overlay
//! node is annotated push (maintained eagerly on writes) or pull (computed on
//! reads), chosen by a min-cut planner over a frequency-based cost model.
//!
//! Module map:
//!
//! - [`graph`]: data graph, content streams, query spec, bipartite derivation.
//! - [`overlay`]: the overlay DAG, validation, coverage, metrics, text format.
//! - [`construct`]: shingle ordering, FP-tree mining (VNM family) and IOB.
//! - [`maintain`]: incremental repair under edge and node changes.
//! - [`dataflow`]: frequencies, cost model, push/pull planning, splitting.
//! - [`engine`]: aggregate interface, built-ins, read/write execution.
//! - [`workload`]: trace generation and replay, metrics, graph generators.

pub mod construct;
pub mod dataflow;
pub mod engine;
pub mod graph;
pub mod maintain;
pub mod overlay;
pub mod workload;

pub use graph::{BipartiteGraph, DataGraph, NodeId, QuerySpec};
pub use overlay::{Caps, Decision, Mode, NodeKind, OverlayGraph, OverlayId, Sign};
