//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's own neighborhood or aggregate code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egoagg::engine::{AggSpec, AggValue};
use egoagg::graph::{Activity, DataGraph, NodeId, Value};
use egoagg::workload::random_graph;

pub const RUNNING_EXAMPLE: &str = include_str!("../data/running_example.tsv");

/// Aggregate of a bag of values, computed from scratch.
pub fn direct(spec: AggSpec, values: &[Value]) -> AggValue {
    match spec {
        AggSpec::Sum => AggValue::Int(values.iter().sum()),
        AggSpec::Count => AggValue::Int(values.len() as i64),
        AggSpec::Min => values.iter().min().map_or(AggValue::Empty, |&v| AggValue::Int(v)),
        AggSpec::Max => values.iter().max().map_or(AggValue::Empty, |&v| AggValue::Int(v)),
        AggSpec::TopK { k, .. } => {
            if values.is_empty() {
                return AggValue::Empty;
            }
            let mut freq: HashMap<Value, u64> = HashMap::new();
            for &v in values {
                *freq.entry(v).or_default() += 1;
            }
            let mut items: Vec<(Value, u64)> = freq.into_iter().collect();
            items.sort_by_key(|&(v, c)| (std::cmp::Reverse(c), v));
            items.truncate(k);
            AggValue::TopK(items)
        }
    }
}

/// In-neighbors within `hops` steps, excluding `r` itself.
pub fn in_ball(g: &DataGraph, r: NodeId, hops: u32) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([r]);
    let mut frontier = vec![r];
    for _ in 0..hops {
        let mut next = Vec::new();
        for x in frontier {
            for &y in g.in_neighbors(x) {
                if seen.insert(y) {
                    next.push(y);
                }
            }
        }
        frontier = next;
    }
    seen.remove(&r);
    seen
}

/// Last-`c` windows of every node that accepted a write.
#[derive(Debug, Clone, Default)]
pub struct Windows {
    pub size: usize,
    pub values: HashMap<NodeId, VecDeque<Value>>,
}

impl Windows {
    pub fn new(size: usize) -> Self {
        Windows { size, values: HashMap::new() }
    }

    pub fn write(&mut self, v: NodeId, x: Value) {
        let w = self.values.entry(v).or_default();
        w.push_back(x);
        if w.len() > self.size {
            w.pop_front();
        }
    }

    pub fn expected(&self, g: &DataGraph, spec: AggSpec, r: NodeId, hops: u32) -> AggValue {
        let vals: Vec<Value> = in_ball(g, r, hops)
            .iter()
            .flat_map(|w| self.values.get(w).into_iter().flatten().copied())
            .collect();
        direct(spec, &vals)
    }
}

/// One graph of the oracle corpus.
pub struct CorpusGraph {
    pub graph: DataGraph,
    pub hops: u32,
    pub window: u32,
    pub activity: BTreeMap<NodeId, Activity>,
    pub writes: Vec<(NodeId, Value)>,
}

/// 50 to 500 nodes with mean degree 3 to 10; one graph in ten uses two
/// hops, kept small so its neighborhoods stay moderate.
pub fn corpus_graph(i: u64) -> CorpusGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ i);
    let two_hop = i % 10 == 9;
    let n = if two_hop { rng.random_range(50..=120) } else { rng.random_range(50..=500) };
    let degree = if two_hop { rng.random_range(3.0..=4.0) } else { rng.random_range(3.0..=10.0) };
    let graph = random_graph(n, degree, i);
    let activity = graph
        .nodes()
        .map(|v| (v, Activity { write: rng.random_range(0.01..1.0), read: rng.random_range(0.01..1.0) }))
        .collect();
    let writes = (0..3 * n)
        .map(|_| (NodeId(rng.random_range(0..n as u32)), rng.random_range(-10..=10)))
        .collect();
    CorpusGraph { graph, hops: if two_hop { 2 } else { 1 }, window: rng.random_range(1..=3), activity, writes }
}
