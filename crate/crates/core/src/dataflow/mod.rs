//! Push/pull planning.
//!
//! Each overlay node is either kept up to date on every write (push) or
//! computed when read (pull). A plan is valid when writers push and no pull
//! node feeds a push node. Costs come from per-node update and read rates
//! ([`freq`]) priced by a [`CostModel`]; the optimal plan is a minimum cut
//! ([`flow`]), with a linear-time heuristic ([`greedy`]) as fallback.

pub mod adapt;
pub mod cost;
pub mod flow;
pub mod freq;
pub mod greedy;
pub mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{DataGraph, NodeId};
use crate::overlay::{Decision, NodeKind, OverlayError, OverlayGraph, OverlayId};

pub use adapt::{adapt, frontier, AdaptParams};
pub use cost::{calibrate, CostModel, Curve};
pub use flow::{prune, solve_component, solve_optimal, solve_unpruned, Pruned};
pub use freq::{annotate_frequencies, annotate_with, node_weight, FrequencyAnnotation, NodeCosts};
pub use greedy::greedy;
pub use split::{best_prefix, split_nodes, Split};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DataflowError {
    #[error("no activity estimate for node {0}")]
    MissingActivity(NodeId),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Optimal,
    Greedy,
    AllPush,
    AllPull,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Optimal => "optimal",
            Method::Greedy => "greedy",
            Method::AllPush => "all-push",
            Method::AllPull => "all-pull",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "optimal" => Ok(Method::Optimal),
            "greedy" => Ok(Method::Greedy),
            "all-push" | "all_push" => Ok(Method::AllPush),
            "all-pull" | "all_pull" => Ok(Method::AllPull),
            other => Err(format!("unknown plan method '{other}'")),
        }
    }
}

/// A decision per overlay node and the modeled cost it was priced at.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataflowPlan {
    decisions: BTreeMap<OverlayId, Decision>,
    cost: f64,
}

impl DataflowPlan {
    pub fn new(decisions: BTreeMap<OverlayId, Decision>, costs: &NodeCosts) -> Self {
        let cost = plan_cost(&decisions, costs);
        DataflowPlan { decisions, cost }
    }

    /// The decisions currently stored on the overlay.
    pub fn from_overlay(o: &OverlayGraph, costs: &NodeCosts) -> Self {
        Self::new(o.ids().map(|id| (id, o.decision(id))).collect(), costs)
    }

    pub fn decision(&self, id: OverlayId) -> Decision {
        self.decisions[&id]
    }

    pub fn decisions(&self) -> &BTreeMap<OverlayId, Decision> {
        &self.decisions
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Changes one decision without repricing.
    pub fn set(&mut self, id: OverlayId, d: Decision) {
        self.decisions.insert(id, d);
    }

    pub fn reprice(&mut self, costs: &NodeCosts) {
        self.cost = plan_cost(&self.decisions, costs);
    }

    pub fn count(&self, d: Decision) -> usize {
        self.decisions.values().filter(|&&x| x == d).count()
    }

    /// Writes the decisions onto the overlay.
    pub fn apply(&self, o: &mut OverlayGraph) {
        for (&id, &d) in &self.decisions {
            o.set_decision(id, d);
        }
    }

    /// Checks that every node is decided, writers push and no pull node
    /// feeds a push node.
    pub fn check(&self, o: &OverlayGraph) -> Result<(), DataflowError> {
        for id in o.ids() {
            let Some(&d) = self.decisions.get(&id) else {
                return Err(DataflowError::Invalid(format!("node {id} has no decision")));
            };
            if o.kind(id) == NodeKind::Writer && d != Decision::Push {
                return Err(DataflowError::Invalid(format!("writer {id} is not push")));
            }
            if d == Decision::Push {
                if let Some(l) = o.inputs(id).iter().find(|l| self.decisions.get(&l.node) == Some(&Decision::Pull)) {
                    return Err(DataflowError::Invalid(format!("pull node {} feeds push node {id}", l.node)));
                }
            }
        }
        Ok(())
    }
}

/// Sum of `PUSH` over push nodes and `PULL` over pull nodes.
pub fn plan_cost(decisions: &BTreeMap<OverlayId, Decision>, costs: &NodeCosts) -> f64 {
    decisions
        .iter()
        .map(|(&id, d)| match d {
            Decision::Push => costs.push(id),
            Decision::Pull => costs.pull(id),
        })
        .sum()
}

/// Plans with activity estimates from the data graph.
pub fn decide(o: &OverlayGraph, g: &DataGraph, cm: &CostModel, method: Method) -> Result<DataflowPlan, DataflowError> {
    decide_with(o, &annotate_frequencies(o, g)?, cm, method)
}

pub fn decide_with(
    o: &OverlayGraph,
    freq: &FrequencyAnnotation,
    cm: &CostModel,
    method: Method,
) -> Result<DataflowPlan, DataflowError> {
    let costs = NodeCosts::compute(o, freq, cm);
    let decisions = match method {
        Method::Optimal => solve_optimal(o, &costs.weights()),
        Method::Greedy => greedy(o, &costs)?,
        Method::AllPush => o.ids().map(|id| (id, Decision::Push)).collect(),
        Method::AllPull => o
            .ids()
            .map(|id| (id, if o.kind(id) == NodeKind::Writer { Decision::Push } else { Decision::Pull }))
            .collect(),
    };
    Ok(DataflowPlan::new(decisions, &costs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Activity;
    use crate::overlay::{Mode, Sign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    struct Fixture {
        o: OverlayGraph,
        activity: HashMap<NodeId, Activity>,
        ids: HashMap<&'static str, OverlayId>,
    }

    /// Conflict instance: `i3` prefers push, its heavy reader `s` prefers
    /// pull, and `a` pushes cheaply.
    fn conflict_instance() -> Fixture {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let mut activity = HashMap::new();
        let mut ids = HashMap::new();
        let mut next = 0u32;
        let mut writer = |o: &mut OverlayGraph, rate: f64, act: &mut HashMap<NodeId, Activity>| {
            let v = NodeId(next);
            next += 1;
            act.insert(v, Activity { write: rate, read: 0.0 });
            o.add_writer(v)
        };
        for (name, rate) in [("a", 3.0), ("b", 2.0), ("c", 5.0), ("y", 2.0)] {
            ids.insert(name, writer(&mut o, rate, &mut activity));
        }
        let xs: Vec<OverlayId> = (0..58).map(|_| writer(&mut o, 1.0, &mut activity)).collect();
        let i1 = o.add_partial(Decision::Push);
        let i3 = o.add_partial(Decision::Push);
        o.add_edge(ids["a"], i1, Sign::Pos).unwrap();
        o.add_edge(ids["b"], i1, Sign::Pos).unwrap();
        o.add_edge(i1, i3, Sign::Pos).unwrap();
        o.add_edge(ids["c"], i3, Sign::Pos).unwrap();
        ids.insert("i1", i1);
        ids.insert("i3", i3);
        let readers: [(&str, f64, Vec<OverlayId>); 5] = [
            ("s", 2.0, [i3, ids["y"]].into_iter().chain(xs.iter().copied()).collect()),
            ("m", 1.0, vec![i3, ids["y"]]),
            ("n", 3.0, vec![ids["a"], ids["c"]]),
            ("p", 2.0, vec![ids["a"]]),
            ("q", 2.0, vec![ids["a"], ids["b"]]),
        ];
        for (k, (name, read, inputs)) in readers.into_iter().enumerate() {
            let v = NodeId(1000 + k as u32);
            activity.insert(v, Activity { write: 0.0, read });
            let r = o.add_reader(v, Decision::Push);
            for u in inputs {
                o.add_edge(u, r, Sign::Pos).unwrap();
            }
            ids.insert(name, r);
        }
        Fixture { o, activity, ids }
    }

    fn unit_model() -> CostModel {
        CostModel::constant_push_linear_pull(1.0)
    }

    /// Minimum cost over all valid partitions, by enumeration.
    fn brute_force(o: &OverlayGraph, costs: &NodeCosts) -> f64 {
        let ids: Vec<OverlayId> = o.ids().collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << ids.len()) {
            let d: BTreeMap<OverlayId, Decision> = ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, if mask >> i & 1 == 1 { Decision::Pull } else { Decision::Push }))
                .collect();
            let plan = DataflowPlan::new(d, costs);
            if plan.check(o).is_ok() {
                best = best.min(plan.cost());
            }
        }
        best
    }

    /// Random DAG of at most `max` nodes with random rates and costs.
    fn random_instance(rng: &mut ChaCha8Rng, max: usize) -> (OverlayGraph, FrequencyAnnotation, CostModel) {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let n = rng.random_range(2..=max);
        let writers = rng.random_range(1..=n.div_ceil(3));
        let mut ids: Vec<OverlayId> = (0..writers).map(|w| o.add_writer(NodeId(w as u32))).collect();
        for i in writers..n {
            let reader = rng.random_bool(0.5);
            let v = if reader {
                o.add_reader(NodeId(100 + i as u32), Decision::Push)
            } else {
                o.add_partial(Decision::Push)
            };
            let mut any = false;
            for &u in &ids {
                if o.kind(u) != NodeKind::Reader && rng.random_bool(0.35) {
                    o.add_edge(u, v, Sign::Pos).unwrap();
                    any = true;
                }
            }
            if !any {
                o.add_edge(ids[rng.random_range(0..writers)], v, Sign::Pos).unwrap();
            }
            ids.push(v);
        }
        let act: HashMap<NodeId, Activity> = o
            .ids()
            .filter_map(|id| o.node(id).origin)
            .map(|v| (v, Activity { write: rng.random_range(0.0..10.0), read: rng.random_range(0.0..10.0) }))
            .collect();
        let f = annotate_with(&o, |v| act.get(&v).copied()).unwrap();
        let cm = CostModel {
            push: Curve::constant(rng.random_range(0.5..2.0)),
            pull: Curve::linear(rng.random_range(0.5..2.0)),
            window_factor: rng.random_range(1.0..4.0),
        };
        (o, f, cm)
    }

    #[test]
    fn conflict_instance_frequencies() {
        let fx = conflict_instance();
        let f = annotate_with(&fx.o, |v| fx.activity.get(&v).copied()).unwrap();
        let c = NodeCosts::compute(&fx.o, &f, &unit_model());
        let (i3, s, a) = (fx.ids["i3"], fx.ids["s"], fx.ids["a"]);
        assert_eq!((c.pull(i3), c.push(i3)), (6.0, 10.0));
        assert_eq!((c.pull(s), c.push(s)), (120.0, 70.0));
        assert_eq!((c.push(a), c.pull(a)), (3.0, 10.0));
        assert_eq!(c.weight(i3), -4.0);
        assert_eq!(c.weight(s), 50.0);
        assert_eq!(node_weight(&fx.o, s, &f, &unit_model()), 50.0);
    }

    #[test]
    fn conflict_instance_pruning_and_solution() {
        let fx = conflict_instance();
        let f = annotate_with(&fx.o, |v| fx.activity.get(&v).copied()).unwrap();
        let cm = unit_model();
        let c = NodeCosts::compute(&fx.o, &f, &cm);
        let p = prune(&fx.o, &c.weights());
        assert_eq!(p.fixed[&fx.ids["a"]], Decision::Push);
        let (i3, s) = (fx.ids["i3"], fx.ids["s"]);
        assert!(p.components.iter().any(|comp| comp.contains(&i3) && comp.contains(&s)));

        let plan = decide_with(&fx.o, &f, &cm, Method::Optimal).unwrap();
        plan.check(&fx.o).unwrap();
        // i3 pull forces s pull (cost 6 + 120); i3 push lets s push (10 + 70).
        assert_eq!(plan.decision(i3), Decision::Push);
        assert_eq!(plan.decision(s), Decision::Push);
        assert!((plan.cost() - brute_force_small(&fx.o, &c)).abs() < 1e-9);
        for m in [Method::AllPush, Method::AllPull, Method::Greedy] {
            assert!(plan.cost() <= decide_with(&fx.o, &f, &cm, m).unwrap().cost() + 1e-9);
        }
    }

    /// Exhaustive search over the non-writer nodes only (writers are fixed),
    /// usable when the writer count is large.
    fn brute_force_small(o: &OverlayGraph, costs: &NodeCosts) -> f64 {
        let free: Vec<OverlayId> = o.ids().filter(|&id| o.kind(id) != NodeKind::Writer).collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << free.len()) {
            let mut d: BTreeMap<OverlayId, Decision> = o.ids().map(|id| (id, Decision::Push)).collect();
            for (i, &id) in free.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    d.insert(id, Decision::Pull);
                }
            }
            let plan = DataflowPlan::new(d, costs);
            if plan.check(o).is_ok() {
                best = best.min(plan.cost());
            }
        }
        best
    }

    #[test]
    fn optimal_matches_enumeration_and_unpruned_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let (o, f, cm) = random_instance(&mut rng, 14);
            let c = NodeCosts::compute(&o, &f, &cm);
            let plan = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
            plan.check(&o).unwrap();
            let best = brute_force(&o, &c);
            assert!((plan.cost() - best).abs() < 1e-9, "{} vs {best}", plan.cost());
            let unpruned = DataflowPlan::new(solve_unpruned(&o, &c.weights()), &c);
            assert!((unpruned.cost() - best).abs() < 1e-9);

            // maximizing sum_X w - sum_Y w is minimizing cost
            let total: f64 = o.ids().map(|id| c.push(id) + c.pull(id)).sum();
            let objective: f64 = plan
                .decisions()
                .iter()
                .map(|(&id, d)| if *d == Decision::Push { c.weight(id) } else { -c.weight(id) })
                .sum();
            assert!((objective - (total - 2.0 * plan.cost())).abs() < 1e-6);

            let g = decide_with(&o, &f, &cm, Method::Greedy).unwrap();
            g.check(&o).unwrap();
            assert!(g.cost() >= best - 1e-9);
            for m in [Method::AllPush, Method::AllPull] {
                let b = decide_with(&o, &f, &cm, m).unwrap();
                b.check(&o).unwrap();
                assert!(b.cost() >= best - 1e-9);
            }
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Optimal, Method::Greedy, Method::AllPush, Method::AllPull] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("fastest".parse::<Method>().is_err());
    }

    #[test]
    fn split_strictly_improves_cold_prefix() {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let ws: Vec<OverlayId> = (0..5).map(|i| o.add_writer(NodeId(i))).collect();
        let r = o.add_reader(NodeId(10), Decision::Push);
        for &w in &ws {
            o.add_edge(w, r, Sign::Pos).unwrap();
        }
        o.set_cover(r, Some((0..5).map(NodeId).collect()));
        let act = |v: NodeId| {
            Some(match v.0 {
                0..=3 => Activity { write: 1.0, read: 0.0 },
                4 => Activity { write: 100.0, read: 0.0 },
                _ => Activity { write: 0.0, read: 10.0 },
            })
        };
        let cm = unit_model();
        let mut f = annotate_with(&o, act).unwrap();
        let before = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
        assert_eq!(before.decision(r), Decision::Pull);
        before.apply(&mut o);
        let splits = split_nodes(&mut o, &mut f, &cm).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].moved, ws[..4].to_vec());
        assert_eq!(f, annotate_with(&o, act).unwrap());
        let after = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
        assert!(after.cost() < before.cost(), "{} !< {}", after.cost(), before.cost());
        assert_eq!(o.cover(splits[0].child), Some(&[NodeId(0), NodeId(1), NodeId(2), NodeId(3)][..]));
    }

    #[test]
    fn split_never_hurts_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (mut o, mut f, cm) = random_instance(&mut rng, 16);
            let before = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
            before.apply(&mut o);
            split_nodes(&mut o, &mut f, &cm).unwrap();
            let after = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
            assert!(after.cost() <= before.cost() + 1e-9);
        }
    }

    #[test]
    fn adapt_without_drift_is_a_no_op() {
        let fx = conflict_instance();
        let f = annotate_with(&fx.o, |v| fx.activity.get(&v).copied()).unwrap();
        let cm = unit_model();
        let plan = decide_with(&fx.o, &f, &cm, Method::Optimal).unwrap();
        let next = adapt(&fx.o, &plan, &vec![f; 3], &cm, AdaptParams::default()).unwrap();
        assert_eq!(next, plan);
    }

    #[test]
    fn read_spike_flips_frontier_pull_node() {
        let fx = conflict_instance();
        let cm = unit_model();
        let f = annotate_with(&fx.o, |v| fx.activity.get(&v).copied()).unwrap();
        let plan = decide_with(&fx.o, &f, &cm, Method::Optimal).unwrap();
        let n = fx.ids["n"];
        // n reads {a, c}: PUSH 8 vs PULL 6 at read rate 3, so it pulls
        assert_eq!(plan.decision(n), Decision::Pull);
        assert!(frontier(&fx.o, &plan).contains(&n));
        let spiked = annotate_with(&fx.o, |v| {
            let mut a = fx.activity.get(&v).copied()?;
            if fx.o.reader(v) == Some(n) {
                a.read *= 10.0;
            }
            Some(a)
        })
        .unwrap();
        let short = adapt(&fx.o, &plan, &[f.clone(), spiked.clone()], &cm, AdaptParams::default()).unwrap();
        assert_eq!(short.decision(n), Decision::Pull);
        let window = [f, spiked.clone(), spiked.clone(), spiked.clone()];
        let next = adapt(&fx.o, &plan, &window, &cm, AdaptParams::default()).unwrap();
        assert_eq!(next.decision(n), Decision::Push);
        next.check(&fx.o).unwrap();
        let static_cost = DataflowPlan::new(plan.decisions().clone(), &NodeCosts::compute(&fx.o, &spiked, &cm)).cost();
        assert!(next.cost() < static_cost);
    }

    #[test]
    fn random_adapt_sequences_stay_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (o, f, cm) = random_instance(&mut rng, 16);
            let mut plan = decide_with(&o, &f, &cm, Method::Optimal).unwrap();
            let mut history = Vec::new();
            for _ in 0..8 {
                let act: HashMap<NodeId, Activity> = o
                    .ids()
                    .filter_map(|id| o.node(id).origin)
                    .map(|v| (v, Activity { write: rng.random_range(0.0..10.0), read: rng.random_range(0.0..10.0) }))
                    .collect();
                history.push(annotate_with(&o, |v| act.get(&v).copied()).unwrap());
                let params = AdaptParams { window: rng.random_range(1..3), margin: 0.05 };
                plan = adapt(&o, &plan, &history, &cm, params).unwrap();
                plan.check(&o).unwrap();
            }
        }
    }

    #[test]
    fn read_heavy_and_write_heavy_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (o, _, cm) = random_instance(&mut rng, 16);
        let writes = annotate_with(&o, |_| Some(Activity { write: 20.0, read: 1.0 })).unwrap();
        let plan = decide_with(&o, &writes, &cm, Method::Optimal).unwrap();
        let non_writers: Vec<_> = o.ids().filter(|&id| o.kind(id) != NodeKind::Writer).collect();
        let pulls = non_writers.iter().filter(|&&id| plan.decision(id) == Decision::Pull).count();
        assert!(pulls * 2 > non_writers.len(), "{pulls} of {}", non_writers.len());
    }
}
