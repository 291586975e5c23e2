//! Synthetic graphs and Zipfian read/write traces.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::graph::{Activity, DataGraph, NodeId, Value};

use super::{EventKind, WorkloadError, WorkloadEvent};

/// Directed graph with `n * mean_degree` distinct random arcs (no loops).
pub fn random_graph(n: usize, mean_degree: f64, seed: u64) -> DataGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DataGraph::with_nodes(n);
    if n < 2 {
        return g;
    }
    let target = ((n as f64 * mean_degree).round() as usize).min(n * (n - 1));
    while g.edge_count() < target {
        let u = rng.random_range(0..n as u32);
        let v = rng.random_range(0..n as u32);
        if u != v {
            g.add_edge(NodeId(u), NodeId(v)).expect("live nodes");
        }
    }
    g
}

/// Growth with preferential attachment and triad closure: each new node
/// links to `m` existing nodes, the first by degree, each further one either
/// to a neighbor of the previous target (probability `p_triad`) or again by
/// degree. Links are symmetric. `p_triad = 0` is plain preferential
/// attachment.
pub fn holme_kim(n: usize, m: usize, p_triad: f64, seed: u64) -> DataGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DataGraph::with_nodes(n);
    let m = m.max(1);
    // every edge endpoint once: sampling from it is sampling by degree
    let mut ends: Vec<u32> = Vec::new();
    let mut nbrs: Vec<Vec<u32>> = vec![Vec::new(); n];
    let seed_size = (m + 1).min(n);
    for u in 0..seed_size as u32 {
        for v in 0..u {
            link(&mut g, &mut ends, &mut nbrs, u, v);
        }
    }
    for u in seed_size as u32..n as u32 {
        let mut chosen: BTreeSet<u32> = BTreeSet::new();
        let mut last: Option<u32> = None;
        let mut attempts = 0;
        while chosen.len() < m.min(u as usize) && attempts < 50 * m {
            attempts += 1;
            let candidate = match last {
                Some(p) if rng.random_bool(p_triad) && !nbrs[p as usize].is_empty() => {
                    nbrs[p as usize][rng.random_range(0..nbrs[p as usize].len())]
                }
                _ => ends[rng.random_range(0..ends.len())],
            };
            if candidate != u && chosen.insert(candidate) {
                last = Some(candidate);
            }
        }
        for v in chosen {
            link(&mut g, &mut ends, &mut nbrs, u, v);
        }
    }
    g
}

fn link(g: &mut DataGraph, ends: &mut Vec<u32>, nbrs: &mut [Vec<u32>], u: u32, v: u32) {
    g.add_edge(NodeId(u), NodeId(v)).expect("live nodes");
    g.add_edge(NodeId(v), NodeId(u)).expect("live nodes");
    ends.extend([u, v]);
    nbrs[u as usize].push(v);
    nbrs[v as usize].push(u);
}

pub fn preferential_attachment(n: usize, m: usize, seed: u64) -> DataGraph {
    holme_kim(n, m, 0.0, seed)
}

/// Parameters of a Zipfian read/write mix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipfParams {
    pub skew: f64,
    /// Writes per read.
    pub write_read_ratio: f64,
    pub count: usize,
    pub seed: u64,
    /// Rank nodes by descending degree instead of a seeded shuffle.
    pub degree_correlated: bool,
}

impl ZipfParams {
    pub fn new(skew: f64, write_read_ratio: f64, count: usize, seed: u64) -> Self {
        ZipfParams { skew, write_read_ratio, count, seed, degree_correlated: false }
    }

    fn check(&self) -> Result<(), WorkloadError> {
        if !(self.skew > 0.0 && self.skew.is_finite()) {
            return Err(WorkloadError::Invalid(format!("skew must be positive, got {}", self.skew)));
        }
        if !(self.write_read_ratio > 0.0 && self.write_read_ratio.is_finite()) {
            return Err(WorkloadError::Invalid(format!("ratio must be positive, got {}", self.write_read_ratio)));
        }
        Ok(())
    }

    fn write_share(&self) -> f64 {
        self.write_read_ratio / (1.0 + self.write_read_ratio)
    }
}

/// A generated trace with the rates it was drawn from, per event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub events: Vec<WorkloadEvent>,
    pub activity: BTreeMap<NodeId, Activity>,
}

/// Nodes in activity-rank order: a seeded shuffle, or by degree.
fn ranking(g: &DataGraph, nodes: &[NodeId], p: &ZipfParams, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let mut ranked = nodes.to_vec();
    if p.degree_correlated {
        ranked.sort_by_key(|&v| (std::cmp::Reverse(g.in_neighbors(v).len() + g.out_neighbors(v).len()), v));
    } else {
        ranked.shuffle(rng);
    }
    ranked
}

/// Expected per-event read and write rates of every node under a ranking.
fn expected_activity(ranked: &[NodeId], p: &ZipfParams) -> BTreeMap<NodeId, Activity> {
    let weights: Vec<f64> = (1..=ranked.len()).map(|k| (k as f64).powf(-p.skew)).collect();
    let total: f64 = weights.iter().sum();
    let ws = p.write_share();
    ranked
        .iter()
        .zip(&weights)
        .map(|(&v, w)| (v, Activity { write: w / total * ws, read: w / total * (1.0 - ws) }))
        .collect()
}

fn draw(ranked: &[NodeId], p: &ZipfParams, start_ts: u64, rng: &mut ChaCha8Rng) -> Result<Vec<WorkloadEvent>, WorkloadError> {
    let zipf = Zipf::new(ranked.len() as f64, p.skew).map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    let ws = p.write_share();
    Ok((0..p.count)
        .map(|i| {
            let node = ranked[zipf.sample(rng) as usize - 1];
            let ts = start_ts + i as u64;
            if rng.random_bool(ws) {
                let value: Value = rng.random_range(0..1000);
                WorkloadEvent { ts, kind: EventKind::Write, node, node2: None, value: Some(value) }
            } else {
                WorkloadEvent { ts, kind: EventKind::Read, node, node2: None, value: None }
            }
        })
        .collect())
}

/// Reads and writes over `nodes`; both follow the same Zipf popularity, so
/// a node's read rate is its write rate divided by the ratio.
pub fn gen_zipf(g: &DataGraph, nodes: &[NodeId], p: &ZipfParams) -> Result<Workload, WorkloadError> {
    p.check()?;
    if nodes.is_empty() {
        return Ok(Workload::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let ranked = ranking(g, nodes, p, &mut rng);
    let events = draw(&ranked, p, 0, &mut rng)?;
    Ok(Workload { events, activity: expected_activity(&ranked, p) })
}

/// A trace whose popularity and mix change half-way: the second half
/// re-ranks nodes with a fresh shuffle and uses `after_ratio`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftWorkload {
    pub events: Vec<WorkloadEvent>,
    pub shift_at: usize,
    pub before: BTreeMap<NodeId, Activity>,
    pub after: BTreeMap<NodeId, Activity>,
}

pub fn gen_shift(g: &DataGraph, nodes: &[NodeId], p: &ZipfParams, after_ratio: f64) -> Result<ShiftWorkload, WorkloadError> {
    let first = ZipfParams { count: p.count / 2, ..p.clone() };
    let second = ZipfParams {
        count: p.count - p.count / 2,
        write_read_ratio: after_ratio,
        seed: p.seed ^ 0x5A5A_5A5A,
        degree_correlated: false,
        ..p.clone()
    };
    first.check()?;
    second.check()?;
    let a = gen_zipf(g, nodes, &first)?;
    let mut rng = ChaCha8Rng::seed_from_u64(second.seed);
    let ranked = ranking(g, nodes, &second, &mut rng);
    let mut events = a.events;
    let shift_at = events.len();
    events.extend(draw(&ranked, &second, shift_at as u64, &mut rng)?);
    Ok(ShiftWorkload { events, shift_at, before: a.activity, after: expected_activity(&ranked, &second) })
}
