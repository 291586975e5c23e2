//! Randomized checks against the reference implementations in `common`.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use egoagg::construct::{build_overlay, Algorithm, ConstructionParams};
use egoagg::dataflow::{annotate_with, decide_with, CostModel, Method};
use egoagg::engine::{AggSpec, Engine, EngineConfig};
use egoagg::graph::{derive_bipartite, Activity, DataGraph, NodeId, QuerySpec, Window};
use egoagg::overlay::{from_text, to_text, trivial_overlay, validate};
use egoagg::workload::{read_trace, write_trace, EventKind, WorkloadEvent};

use common::Windows;

fn agg() -> impl Strategy<Value = AggSpec> {
    prop_oneof![
        Just(AggSpec::Sum),
        Just(AggSpec::Count),
        Just(AggSpec::Min),
        Just(AggSpec::Max),
        (1usize..5).prop_map(AggSpec::top_k),
    ]
}

fn method() -> impl Strategy<Value = Method> {
    prop_oneof![Just(Method::Optimal), Just(Method::Greedy), Just(Method::AllPush), Just(Method::AllPull)]
}

/// Algorithms whose requirements `spec` meets; `None` is the trivial overlay.
fn algorithms(spec: AggSpec) -> Vec<Option<Algorithm>> {
    let caps = spec.caps();
    let mut v = vec![None, Some(Algorithm::Vnm), Some(Algorithm::VnmA), Some(Algorithm::Iob)];
    if caps.subtractable {
        v.push(Some(Algorithm::VnmN));
    }
    if caps.duplicate_insensitive {
        v.push(Some(Algorithm::VnmD));
    }
    v
}

prop_compose! {
    fn small_graph()(n in 3u32..14)(
        n in Just(n),
        arcs in prop::collection::vec((0..n, 0..n), 0..(n as usize * 4)),
    ) -> DataGraph {
        let arcs: Vec<(u32, u32)> = arcs.into_iter().filter(|(u, v)| u != v).collect();
        DataGraph::from_arcs(n as usize, &arcs).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn engine_matches_direct_aggregation(
        g in small_graph(),
        spec in agg(),
        hops in 1u32..3,
        window in 1u32..4,
        algo_pick in any::<prop::sample::Index>(),
        method in method(),
        rates in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 14),
        writes in prop::collection::vec((0u32..14, -5i64..6), 0..60),
        seed in any::<u64>(),
    ) {
        let q = QuerySpec::new(spec, Window::Count(window), hops).unwrap();
        let a = derive_bipartite(&g, &q);
        let choices = algorithms(spec);
        let mut o = match choices[algo_pick.index(choices.len())] {
            None => trivial_overlay(&a),
            Some(algo) => {
                let params = ConstructionParams { seed, ..ConstructionParams::default() };
                build_overlay(&a, algo, spec.caps(), &params).unwrap().overlay
            }
        };
        let activity: BTreeMap<NodeId, Activity> =
            g.nodes().map(|v| (v, Activity { write: rates[v.index()].0, read: rates[v.index()].1 })).collect();
        let freq = annotate_with(&o, |v| activity.get(&v).copied()).unwrap();
        let plan = decide_with(&o, &freq, &CostModel::for_aggregate(spec, f64::from(window)), method).unwrap();
        plan.apply(&mut o);
        prop_assert!(validate(&o, &a, spec.caps()).is_empty());

        let e = Engine::new(&o, spec.build(), EngineConfig::single_threaded(Window::Count(window))).unwrap();
        let mut oracle = Windows::new(window as usize);
        let n = g.node_count() as u32;
        for (ts, (v, x)) in writes.into_iter().enumerate() {
            let v = NodeId(v % n);
            if e.write(v, ts as u64, x).is_ok() {
                oracle.write(v, x);
            }
        }
        for r in g.nodes() {
            prop_assert_eq!(e.read(r).unwrap(), oracle.expected(&g, spec, r, hops));
        }
    }

    #[test]
    fn overlay_text_round_trips(g in small_graph(), spec in agg(), seed in any::<u64>()) {
        let q = QuerySpec::new(spec, Window::Count(1), 1).unwrap();
        let a = derive_bipartite(&g, &q);
        let params = ConstructionParams { seed, ..ConstructionParams::default() };
        let o = build_overlay(&a, Algorithm::Iob, spec.caps(), &params).unwrap().overlay;
        let text = to_text(&o);
        let back = from_text(&text).unwrap();
        prop_assert_eq!(to_text(&back), text);
        prop_assert!(validate(&back, &a, spec.caps()).is_empty());
    }

    #[test]
    fn trace_round_trips(
        raw in prop::collection::vec((0u64..3, 0usize..6, 0u32..100, 0u32..100, -1000i64..1000), 0..80),
    ) {
        let mut ts = 0;
        let events: Vec<WorkloadEvent> = raw
            .into_iter()
            .map(|(dt, k, u, v, x)| {
                ts += dt;
                let kind = EventKind::ALL[k];
                let edge = matches!(kind, EventKind::EdgeAdd | EventKind::EdgeDel);
                WorkloadEvent {
                    ts,
                    kind,
                    node: NodeId(u),
                    node2: edge.then_some(NodeId(v)),
                    value: (kind == EventKind::Write).then_some(x),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_trace(&events, &mut buf).unwrap();
        prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn specs_round_trip_through_text(spec in agg(), n in 1u32..1000, t in 1u64..100_000) {
        prop_assert_eq!(spec.to_string().parse::<AggSpec>().unwrap(), spec);
        for w in [Window::Count(n), Window::Time(t)] {
            prop_assert_eq!(w.to_string().parse::<Window>().unwrap(), w);
        }
    }
}
