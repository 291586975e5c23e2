//! End-to-end benchmark: derive the query's bipartite graph, build and plan
//! an overlay, then replay a trace against the engine.
//!
//! Reads and writes run on injector threads, each owning the nodes with
//! `id % threads == lane`, so per-node event order is kept. Structural
//! events split the trace into epochs: injectors drain, the maintainer
//! repairs the overlay, and the engine is rebuilt with its windows carried
//! over before replay resumes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use crate::construct::{build_overlay, Algorithm, ConstructionParams};
use crate::dataflow::{annotate_with, decide_with, split_nodes, CostModel, DataflowPlan, FrequencyAnnotation, Method, NodeCosts};
use crate::engine::{AggSpec, AggValue, Builtin, Engine, EngineConfig, WriteModel};
use crate::graph::{derive_bipartite, Activity, BipartiteGraph, DataGraph, NodeId, QuerySpec, Timestamp, Window};
use crate::maintain::{MaintainConfig, Maintainer, StructureUpdate};
use crate::overlay::{depth_profile, sharing_index, trivial_overlay, Decision, OverlayGraph};

use super::report::{LatencySummary, MetricsReport, OpCount};
use super::{EventKind, WorkloadError, WorkloadEvent};

/// The overlay a benchmark runs on: the unshared bipartite graph, or one
/// built by a construction algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlayChoice {
    Trivial,
    Built(Algorithm),
}

impl fmt::Display for OverlayChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OverlayChoice::Trivial => f.write_str("trivial"),
            OverlayChoice::Built(a) => a.fmt(f),
        }
    }
}

impl FromStr for OverlayChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trivial" | "none" => Ok(OverlayChoice::Trivial),
            _ => s.parse().map(OverlayChoice::Built),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub aggregate: AggSpec,
    pub window: Window,
    pub hops: u32,
    pub overlay: OverlayChoice,
    pub method: Method,
    /// Split pull nodes after planning.
    pub split: bool,
    /// Injector threads; also the size of the engine's read and write pools.
    pub threads: usize,
    pub write_model: WriteModel,
    /// Replay one event at a time on a single injector so latencies are not
    /// inflated by contention.
    pub isolated: bool,
    /// Writer input count used by the cost model; derived from the window
    /// when unset.
    pub window_factor: Option<f64>,
    pub construction: ConstructionParams,
    pub maintain: MaintainConfig,
    /// Read every reader once after the trace.
    pub collect_final: bool,
}

impl BenchConfig {
    pub fn new(aggregate: AggSpec, window: Window, hops: u32) -> Self {
        BenchConfig {
            aggregate,
            window,
            hops,
            overlay: OverlayChoice::Built(Algorithm::VnmA),
            method: Method::Optimal,
            split: false,
            threads: 1,
            write_model: WriteModel::UniThread,
            isolated: false,
            window_factor: None,
            construction: ConstructionParams::default(),
            maintain: MaintainConfig::default(),
            collect_final: true,
        }
    }

    pub fn query(&self) -> Result<QuerySpec, WorkloadError> {
        QuerySpec::new(self.aggregate, self.window, self.hops).map_err(|e| WorkloadError::Invalid(e.to_string()))
    }

    pub fn cost_model(&self) -> CostModel {
        let wf = self.window_factor.unwrap_or(match self.window {
            Window::Count(n) => n as f64,
            Window::Time(_) => 1.0,
        });
        CostModel::for_aggregate(self.aggregate, wf)
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            read_threads: self.threads,
            write_threads: self.threads,
            write_model: self.write_model,
            window: self.window,
        }
    }
}

/// A planned overlay ready for replay.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: DataGraph,
    pub query: QuerySpec,
    pub bipartite: BipartiteGraph,
    /// Construction output before planning.
    pub built: OverlayGraph,
    /// The overlay with the plan applied (and split, if requested).
    pub overlay: OverlayGraph,
    pub plan: DataflowPlan,
    pub cost_model: CostModel,
    pub frequencies: FrequencyAnnotation,
    pub activity: BTreeMap<NodeId, Activity>,
    pub overlay_choice: OverlayChoice,
    /// Plan method name, or `file` for an overlay decided elsewhere.
    pub plan_label: String,
    pub phases: BTreeMap<String, f64>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn timed<T>(phases: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *phases.entry(name.to_string()).or_default() += ms(start.elapsed());
    out
}

/// Derives, builds, annotates with `activity` (missing nodes count as
/// idle) and plans.
pub fn prepare(g: &DataGraph, activity: &BTreeMap<NodeId, Activity>, cfg: &BenchConfig) -> Result<Prepared, WorkloadError> {
    if cfg.threads == 0 {
        return Err(WorkloadError::Invalid("thread count must be >= 1".into()));
    }
    let query = cfg.query()?;
    let mut phases = BTreeMap::new();
    let bipartite = timed(&mut phases, "derive", || derive_bipartite(g, &query));
    let built = timed(&mut phases, "construct", || match cfg.overlay {
        OverlayChoice::Trivial => Ok(trivial_overlay(&bipartite)),
        OverlayChoice::Built(algo) => {
            build_overlay(&bipartite, algo, cfg.aggregate.caps(), &cfg.construction).map(|b| b.overlay)
        }
    })?;
    let base = Prepared {
        graph: g.clone(),
        query,
        bipartite,
        overlay: built.clone(),
        built,
        plan: DataflowPlan::default(),
        cost_model: cfg.cost_model(),
        frequencies: FrequencyAnnotation::default(),
        activity: activity.clone(),
        overlay_choice: cfg.overlay,
        plan_label: cfg.method.to_string(),
        phases,
    };
    base.replan(cfg.method, cfg.split)
}

/// Wraps an overlay whose decisions were made elsewhere; `activity` only
/// prices it.
pub fn prepare_decided(
    g: &DataGraph,
    activity: &BTreeMap<NodeId, Activity>,
    cfg: &BenchConfig,
    overlay: OverlayGraph,
) -> Result<Prepared, WorkloadError> {
    let query = cfg.query()?;
    let mut phases = BTreeMap::new();
    let bipartite = timed(&mut phases, "derive", || derive_bipartite(g, &query));
    let cost_model = cfg.cost_model();
    let frequencies = timed(&mut phases, "annotate", || {
        annotate_with(&overlay, |v| Some(activity.get(&v).copied().unwrap_or_default()))
    })?;
    let plan = DataflowPlan::from_overlay(&overlay, &NodeCosts::compute(&overlay, &frequencies, &cost_model));
    plan.check(&overlay)?;
    Ok(Prepared {
        graph: g.clone(),
        query,
        bipartite,
        built: overlay.clone(),
        overlay,
        plan,
        cost_model,
        frequencies,
        activity: activity.clone(),
        overlay_choice: cfg.overlay,
        plan_label: "file".into(),
        phases,
    })
}

impl Prepared {
    /// Plans the construction output again with another method.
    pub fn replan(&self, method: Method, split: bool) -> Result<Prepared, WorkloadError> {
        let mut phases = self.phases.clone();
        phases.retain(|k, _| k == "derive" || k == "construct");
        let activity = &self.activity;
        let mut overlay = self.built.clone();
        let mut freq = timed(&mut phases, "annotate", || {
            annotate_with(&overlay, |v| Some(activity.get(&v).copied().unwrap_or_default()))
        })?;
        let cm = &self.cost_model;
        let mut plan = timed(&mut phases, "decide", || decide_with(&overlay, &freq, cm, method))?;
        plan.apply(&mut overlay);
        if split {
            timed(&mut phases, "split", || split_nodes(&mut overlay, &mut freq, cm))?;
            plan = DataflowPlan::from_overlay(&overlay, &NodeCosts::compute(&overlay, &freq, cm));
        }
        Ok(Prepared { overlay, plan, frequencies: freq, plan_label: method.to_string(), phases, ..self.clone() })
    }

    fn describe(&self, cfg: &BenchConfig) -> MetricsReport {
        let depth = depth_profile(&self.overlay).map(|d| d.mean).unwrap_or(0.0);
        MetricsReport {
            overlay: self.overlay_choice.to_string(),
            plan: self.plan_label.clone(),
            aggregate: cfg.aggregate.to_string(),
            threads: if cfg.isolated { 1 } else { cfg.threads },
            sharing_index: sharing_index(&self.built, &self.bipartite).unwrap_or(0.0),
            mean_depth: depth,
            overlay_nodes: self.overlay.node_count(),
            overlay_edges: self.overlay.edge_count(),
            push_nodes: self.plan.count(Decision::Push),
            pull_nodes: self.plan.count(Decision::Pull),
            plan_cost: self.plan.cost(),
            phases: self.phases.clone(),
            ..Default::default()
        }
    }
}

/// A finished replay.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Final aggregate per reader, when collected.
    pub final_reads: BTreeMap<NodeId, AggValue>,
    /// Overlay after all structural events.
    pub overlay: OverlayGraph,
    pub graph: DataGraph,
}

#[derive(Default)]
struct LaneStats {
    ops: BTreeMap<EventKind, OpCount>,
    reads: Vec<Duration>,
    writes: Vec<Duration>,
}

impl LaneStats {
    fn count(&mut self, kind: EventKind, ok: bool) {
        let c = self.ops.entry(kind).or_default();
        c.emitted += 1;
        if ok {
            c.consumed += 1;
        } else {
            c.rejected += 1;
        }
    }

    fn absorb(&mut self, other: LaneStats) {
        for (k, c) in other.ops {
            let mine = self.ops.entry(k).or_default();
            mine.emitted += c.emitted;
            mine.consumed += c.consumed;
            mine.rejected += c.rejected;
        }
        self.reads.extend(other.reads);
        self.writes.extend(other.writes);
    }
}

fn run_lane(engine: &Engine<Builtin>, events: &[&WorkloadEvent], expire: bool) -> LaneStats {
    let mut stats = LaneStats::default();
    let mut expired_at: Option<Timestamp> = None;
    for e in events {
        let start = Instant::now();
        let ok = match e.kind {
            EventKind::Write => engine.write(e.node, e.ts, e.value.unwrap_or(0)).is_ok(),
            _ => {
                if expire && expired_at < Some(e.ts) {
                    engine.expire(e.ts);
                    expired_at = Some(e.ts);
                }
                engine.read(e.node).is_ok()
            }
        };
        let took = start.elapsed();
        if ok {
            match e.kind {
                EventKind::Write => stats.writes.push(took),
                _ => stats.reads.push(took),
            }
        }
        stats.count(e.kind, ok);
    }
    stats
}

fn replay_segment(engine: &Engine<Builtin>, events: &[WorkloadEvent], lanes: usize, expire: bool) -> LaneStats {
    if lanes == 1 {
        return run_lane(engine, &events.iter().collect::<Vec<_>>(), expire);
    }
    let mut parts: Vec<Vec<&WorkloadEvent>> = vec![Vec::new(); lanes];
    for e in events {
        parts[e.node.index() % lanes].push(e);
    }
    let mut total = LaneStats::default();
    thread::scope(|s| {
        let handles: Vec<_> = parts.iter().map(|p| s.spawn(move || run_lane(engine, p, expire))).collect();
        for h in handles {
            total.absorb(h.join().expect("injector thread panicked"));
        }
    });
    total
}

/// Replays `events` against `p`. Engine and maintenance failures on single
/// events are counted as rejections, not returned as errors.
pub fn run_benchmark(p: &Prepared, events: &[WorkloadEvent], cfg: &BenchConfig) -> Result<RunOutcome, WorkloadError> {
    let lanes = if cfg.isolated { 1 } else { cfg.threads.max(1) };
    let expire = matches!(cfg.window, Window::Time(_));
    let mut report = p.describe(cfg);
    let mut phases = BTreeMap::new();
    let mut graph = p.graph.clone();
    let mut overlay = p.overlay.clone();
    let mut maintainer = Maintainer::new(cfg.maintain);
    let mut engine = timed(&mut phases, "install", || Engine::new(&overlay, cfg.aggregate.build(), cfg.engine_config()))?;

    let mut stats = LaneStats::default();
    let started = Instant::now();
    let mut rest = events;
    while !rest.is_empty() {
        let cut = rest.iter().position(|e| e.kind.is_structural()).unwrap_or(rest.len());
        let (plain, tail) = rest.split_at(cut);
        if !plain.is_empty() {
            let s = timed(&mut phases, "replay", || replay_segment(&engine, plain, lanes, expire));
            stats.absorb(s);
        }
        let end = tail.iter().position(|e| !e.kind.is_structural()).unwrap_or(tail.len());
        let (structural, after) = tail.split_at(end);
        if !structural.is_empty() {
            let start = Instant::now();
            let mut changed = false;
            for e in structural {
                let ok = apply_structural(&mut maintainer, &mut graph, &p.query, &mut overlay, e);
                changed |= ok;
                stats.count(e.kind, ok);
            }
            if changed {
                engine = engine.rebuild(&overlay)?;
            }
            *phases.entry("maintain".to_string()).or_default() += ms(start.elapsed());
        }
        rest = after;
    }
    let wall = started.elapsed();

    let mut final_reads = BTreeMap::new();
    if cfg.collect_final {
        timed(&mut phases, "final_reads", || {
            if let (true, Some(last)) = (expire, events.last()) {
                engine.expire(last.ts);
            }
            for (r, _) in overlay.readers() {
                if let Ok(v) = engine.read(r) {
                    final_reads.insert(r, v);
                }
            }
        });
    }

    report.wall_ms = ms(wall);
    report.read_latency = LatencySummary::from_samples(&mut stats.reads);
    report.write_latency = LatencySummary::from_samples(&mut stats.writes);
    report.ops = stats.ops;
    report.throughput = report.consumed() as f64 / wall.as_secs_f64().max(1e-9);
    report.phases.extend(phases);
    Ok(RunOutcome { report, final_reads, overlay, graph })
}

fn apply_structural(
    m: &mut Maintainer,
    g: &mut DataGraph,
    q: &QuerySpec,
    o: &mut OverlayGraph,
    e: &WorkloadEvent,
) -> bool {
    if e.kind == EventKind::NodeAdd && e.node.index() != g.id_bound() {
        return false;
    }
    if matches!(e.kind, EventKind::EdgeAdd | EventKind::EdgeDel) && e.node2.is_none() {
        return false;
    }
    let Some(change) = e.change() else { return false };
    m.apply(g, q, o, &StructureUpdate::new(e.ts, change)).is_ok()
}

/// Runs every overlay and plan combination over the same trace. Each
/// overlay is built once and re-planned per method.
pub fn compare(
    g: &DataGraph,
    activity: &BTreeMap<NodeId, Activity>,
    events: &[WorkloadEvent],
    base: &BenchConfig,
    overlays: &[OverlayChoice],
    methods: &[Method],
) -> Result<Vec<MetricsReport>, WorkloadError> {
    let mut out = Vec::new();
    for &overlay in overlays {
        let Some((&first, others)) = methods.split_first() else { break };
        let cfg = BenchConfig { overlay, method: first, ..base.clone() };
        let prepared = prepare(g, activity, &cfg)?;
        out.push(run_benchmark(&prepared, events, &cfg)?.report);
        for &method in others {
            let cfg = BenchConfig { method, ..cfg.clone() };
            let p = prepared.replan(method, cfg.split)?;
            out.push(run_benchmark(&p, events, &cfg)?.report);
        }
    }
    Ok(out)
}
