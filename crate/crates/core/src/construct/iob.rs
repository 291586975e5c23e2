//! Incremental overlay building: greedy set cover over existing aggregators.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use crate::graph::{BipartiteGraph, NodeId};
use crate::overlay::{Decision, Mode, NodeKind, OverlayError, OverlayGraph, OverlayId, Sign};

use super::shingle::shingle_order;
use super::{stats, BuildOutcome, ConstructError, ConstructionParams};

/// How [`cover_writers`] may use the overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverOptions {
    /// Carve sub-aggregators out of nodes that cover more than needed.
    pub carve: bool,
    /// Decision given to nodes created while carving.
    pub new_decision: Decision,
}

impl Default for CoverOptions {
    fn default() -> Self {
        CoverOptions { carve: true, new_decision: Decision::Push }
    }
}

fn covered(o: &OverlayGraph, id: OverlayId) -> Result<Vec<NodeId>, OverlayError> {
    o.cover(id)
        .map(<[NodeId]>::to_vec)
        .ok_or_else(|| OverlayError::Structure(format!("node {id} has no clean cover")))
}

/// Carving candidates turned down for cost before only exact sub-covers
/// are considered for the rest of the set.
const MAX_REJECTED: usize = 16;

/// Picks nodes whose covers partition `writers`, greedily taking the clean
/// node that covers the most still-uncovered writers (ties: larger cover,
/// then smaller id). Nodes that also cover writers outside the set, and
/// readers, which cannot feed other nodes, are carved when allowed so that
/// the returned nodes cover exactly the requested writers. `skip(id,
/// cover_size)` excludes candidates. Missing writer nodes are created.
pub fn cover_writers(
    o: &mut OverlayGraph,
    writers: &BTreeSet<NodeId>,
    options: CoverOptions,
    skip: impl Fn(OverlayId, usize) -> bool,
) -> Result<Vec<OverlayId>, ConstructError> {
    for &w in writers {
        o.add_writer(w);
    }
    let mut mask = Mask::new(writers);
    let mut left = writers.len();
    let mut chosen = Vec::new();
    let mut rejected: HashSet<OverlayId> = HashSet::new();
    // Overlap of every candidate with `left`, kept current as writers are
    // covered. Nodes created by carving cover only covered writers, apart
    // from straddle remainders, which are simply not considered.
    let mut hits: Vec<usize> = vec![0; o.id_bound()];
    let mut touched: Vec<OverlayId> = Vec::new();
    for w in writers {
        for &v in o.covering(*w).into_iter().flatten() {
            if hits[v.index()] == 0 {
                touched.push(v);
            }
            hits[v.index()] += 1;
        }
    }
    // Max-heap of (overlap, cover size, id) with lazy refresh: overlaps
    // only shrink, so a stale top is pushed back with its current overlap.
    let size_of = |o: &OverlayGraph, v: OverlayId| o.cover(v).map_or(usize::MAX, <[NodeId]>::len);
    let mut heap: BinaryHeap<(usize, usize, Reverse<OverlayId>)> = touched
        .into_iter()
        .filter(|&v| !skip(v, size_of(o, v)))
        .map(|v| (hits[v.index()], size_of(o, v), Reverse(v)))
        .collect();
    while left > 0 {
        let (n, size, Reverse(best)) =
            heap.pop().ok_or_else(|| OverlayError::Structure("no candidate covers the remaining writers".into()))?;
        // collected by an earlier carve, or already used up
        let current = hits[best.index()];
        if current == 0 || !o.contains(best) {
            continue;
        }
        if current < n {
            heap.push((current, size, Reverse(best)));
            continue;
        }
        if n == 1 {
            break; // the rest is best wired directly
        }
        let usable = n == size && o.kind(best) != NodeKind::Reader;
        let carve_allowed = options.carve && rejected.len() < MAX_REJECTED;
        if !carve_allowed && !usable {
            continue;
        }
        let part: Vec<NodeId> = covered(o, best)?.into_iter().filter(|&w| mask.has(w)).collect();
        // Carving that costs more edges than wiring the writers directly is
        // skipped; singleton writers always remain as a fallback.
        if part.len() > 1 && carve_cost_masked(o, best, &part, &mask)? + 1 > part.len() as i64 {
            rejected.insert(best);
            continue;
        }
        for w in &part {
            left -= 1;
            for v in o.covering(*w).into_iter().flatten() {
                // nodes carved during this call lie beyond the table
                if let Some(n) = hits.get_mut(v.index()) {
                    *n -= 1;
                }
            }
        }
        chosen.push(carve_masked(o, best, &part, &mask, options.new_decision)?);
        for &w in &part {
            mask.clear(w);
        }
    }
    chosen.extend(writers.iter().filter(|&&w| mask.has(w)).map(|&w| o.add_writer(w)));
    Ok(chosen)
}

/// Membership table over writer ids.
struct Mask(Vec<bool>);

impl Mask {
    fn new<'a>(writers: impl IntoIterator<Item = &'a NodeId> + Clone) -> Self {
        let len = writers.clone().into_iter().map(|w| w.index() + 1).max().unwrap_or(0);
        let mut m = vec![false; len];
        for w in writers {
            m[w.index()] = true;
        }
        Mask(m)
    }

    fn has(&self, w: NodeId) -> bool {
        self.0.get(w.index()).copied().unwrap_or(false)
    }

    fn clear(&mut self, w: NodeId) {
        if let Some(b) = self.0.get_mut(w.index()) {
            *b = false;
        }
    }
}

/// Inputs of a node sorted by whether their covers lie inside the wanted
/// writers, outside them, or straddle them.
///
/// The helpers below take the wanted set as a mask over all writers still
/// to be covered: for any descendant input `x` of the carved node, the
/// part of `x` to carve out is exactly `cover(x)` restricted to the mask.
struct Sorted {
    inside: Vec<OverlayId>,
    outside: Vec<OverlayId>,
    straddling: Vec<OverlayId>,
}

fn sort_inputs(o: &OverlayGraph, v: OverlayId, wanted: &Mask) -> Result<Sorted, ConstructError> {
    let mut s = Sorted { inside: Vec::new(), outside: Vec::new(), straddling: Vec::new() };
    for l in o.inputs(v) {
        let cover = o
            .cover(l.node)
            .ok_or_else(|| OverlayError::Structure(format!("node {} has no clean cover", l.node)))?;
        let n = cover.iter().filter(|&&w| wanted.has(w)).count();
        if n == 0 {
            s.outside.push(l.node);
        } else if n == cover.len() {
            s.inside.push(l.node);
        } else {
            s.straddling.push(l.node);
        }
    }
    Ok(s)
}

/// Edge delta of `split` on `u`.
fn split_cost(o: &OverlayGraph, u: OverlayId, wanted: &Mask) -> Result<i64, ConstructError> {
    let s = sort_inputs(o, u, wanted)?;
    let mut delta = 0;
    for &x in &s.straddling {
        delta += split_cost(o, x, wanted)?;
    }
    let group = |n: usize| if n > 1 { n as i64 } else { 0 };
    let n_in = s.inside.len() + s.straddling.len();
    let n_out = s.outside.len() + s.straddling.len();
    Ok(delta + group(n_in) + group(n_out) + 2 - o.inputs(u).len() as i64)
}

/// Node aggregating `parts`: the part itself when there is only one.
fn group(o: &mut OverlayGraph, parts: &[OverlayId], decision: Decision) -> Result<OverlayId, ConstructError> {
    if let [one] = parts {
        return Ok(*one);
    }
    let fresh = o.add_partial(decision);
    for &p in parts {
        o.add_edge(p, fresh, Sign::Pos)?;
    }
    o.refresh_cover(fresh);
    Ok(fresh)
}

/// Rewires the straddling node `u` as `in_piece + out_piece`, where the
/// pieces cover the wanted and the other writers of `u`. `u`'s own cover
/// and consumers are unchanged.
fn split(o: &mut OverlayGraph, u: OverlayId, wanted: &Mask, decision: Decision) -> Result<(OverlayId, OverlayId), ConstructError> {
    let s = sort_inputs(o, u, wanted)?;
    let (mut ins, mut outs) = (s.inside, s.outside);
    for &x in &s.straddling {
        let (a, b) = split(o, x, wanted, decision)?;
        ins.push(a);
        outs.push(b);
    }
    let in_piece = group(o, &ins, decision)?;
    let out_piece = group(o, &outs, decision)?;
    let old: Vec<OverlayId> = o.inputs(u).iter().map(|l| l.node).collect();
    if old.len() != 2 || !old.contains(&in_piece) || !old.contains(&out_piece) {
        for x in old {
            o.remove_edge(x, u)?;
        }
        o.add_edge(in_piece, u, Sign::Pos)?;
        o.add_edge(out_piece, u, Sign::Pos)?;
        o.collect_garbage_from(s.straddling.iter().copied());
    }
    Ok((in_piece, out_piece))
}

fn carve_cost_masked(o: &OverlayGraph, v: OverlayId, part: &[NodeId], wanted: &Mask) -> Result<i64, ConstructError> {
    if part.len() == 1 || (o.cover(v) == Some(part) && o.kind(v) != NodeKind::Reader) {
        return Ok(0);
    }
    let s = sort_inputs(o, v, wanted)?;
    let mut delta = 0;
    for &x in &s.straddling {
        delta += split_cost(o, x, wanted)?;
    }
    let n_in = s.inside.len() + s.straddling.len();
    let n_out = s.outside.len() + s.straddling.len();
    let reuse = n_in == 1;
    let fresh = if reuse { 0 } else { n_in as i64 + 1 };
    Ok(delta + fresh + n_out as i64 + i64::from(reuse) - o.inputs(v).len() as i64)
}

fn carve_masked(
    o: &mut OverlayGraph,
    v: OverlayId,
    part: &[NodeId],
    wanted: &Mask,
    decision: Decision,
) -> Result<OverlayId, ConstructError> {
    if o.cover(v).is_none() {
        return Err(OverlayError::Structure(format!("node {v} has no clean cover")).into());
    }
    if o.cover(v) == Some(part) && o.kind(v) != NodeKind::Reader {
        return Ok(v);
    }
    if part.len() == 1 {
        return Ok(o.add_writer(part[0]));
    }
    let s = sort_inputs(o, v, wanted)?;
    let mut ins = s.inside;
    for &x in &s.straddling {
        let (a, b) = split(o, x, wanted, decision)?;
        o.remove_edge(x, v)?;
        if !o.has_edge(b, v) {
            o.add_edge(b, v, Sign::Pos)?;
        }
        ins.push(a);
    }
    let piece = if let [one] = ins[..] {
        if !o.has_edge(one, v) {
            o.add_edge(one, v, Sign::Pos)?;
        }
        one
    } else {
        for &p in &ins {
            if o.has_edge(p, v) {
                o.remove_edge(p, v)?;
            }
        }
        let fresh = group(o, &ins, decision)?;
        o.add_edge(fresh, v, Sign::Pos)?;
        fresh
    };
    o.collect_garbage_from(s.straddling.iter().copied());
    if o.cover(piece) != Some(part) {
        return Err(OverlayError::Structure(format!("carving {v} did not produce the requested cover")).into());
    }
    Ok(piece)
}

/// Edges [`carve`] would add for the same arguments (negative if it saves
/// some), not counting nodes it leaves unused.
pub fn carve_cost(o: &OverlayGraph, v: OverlayId, part: &[NodeId]) -> Result<i64, ConstructError> {
    carve_cost_masked(o, v, part, &Mask::new(part))
}

/// Returns a non-reader node covering exactly `part`, a non-empty sorted
/// subset of the cover of clean node `v`. Otherwise the inputs of `v`
/// covering `part` are moved under a new aggregator that feeds `v`, so that
/// `v`'s coverage and its consumers are unchanged. Inputs that straddle
/// `part` are split in two first.
pub fn carve(o: &mut OverlayGraph, v: OverlayId, part: &[NodeId], decision: Decision) -> Result<OverlayId, ConstructError> {
    carve_masked(o, v, part, &Mask::new(part), decision)
}

/// Adds reader `r` aggregating `inputs`, reusing and carving existing nodes.
pub fn iob_add_reader(
    o: &mut OverlayGraph,
    r: NodeId,
    inputs: &[NodeId],
    options: CoverOptions,
) -> Result<OverlayId, ConstructError> {
    if o.reader(r).is_some() {
        return Err(ConstructError::ReaderExists(r));
    }
    let set: BTreeSet<NodeId> = inputs.iter().copied().collect();
    let chosen = cover_writers(o, &set, options, |_, _| false)?;
    let rid = o.add_reader(r, options.new_decision);
    for c in chosen {
        o.add_edge(c, rid, Sign::Pos)?;
    }
    o.set_cover(rid, Some(set.into_iter().collect()));
    Ok(rid)
}

/// One refinement pass: every partial aggregator whose cover can be
/// assembled from strictly fewer existing nodes is rewired to them.
/// Orphaned nodes are collected. Returns the number of rewired nodes.
pub fn refine(o: &mut OverlayGraph) -> Result<usize, ConstructError> {
    let partials: Vec<OverlayId> = o.ids().filter(|&id| o.kind(id) == NodeKind::Partial).collect();
    let mut rewired = 0;
    for v in partials {
        if !o.contains(v) || o.inputs(v).len() <= 2 {
            continue;
        }
        let Some(cover) = o.cover(v).map(<[NodeId]>::to_vec) else {
            continue;
        };
        let set: BTreeSet<NodeId> = cover.iter().copied().collect();
        // Nodes with the full cover are v itself, its same-cover descendants
        // or duplicates; none of them helps.
        let full = cover.len();
        let options = CoverOptions { carve: false, new_decision: o.decision(v) };
        let chosen = cover_writers(o, &set, options, |_, size| size >= full)?;
        if chosen.len() >= o.inputs(v).len() {
            continue;
        }
        let old: Vec<OverlayId> = o.inputs(v).iter().map(|l| l.node).collect();
        for u in old {
            o.remove_edge(u, v)?;
        }
        for c in chosen {
            o.add_edge(c, v, Sign::Pos)?;
        }
        rewired += 1;
    }
    o.collect_garbage();
    Ok(rewired)
}

/// Builds an overlay by inserting readers in shingle order, then refining
/// until nothing changes or the iteration budget runs out. Every node is
/// push.
pub fn iob_build(a: &BipartiteGraph, params: &ConstructionParams) -> Result<BuildOutcome, ConstructError> {
    params.validate()?;
    let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
    for &w in a.writers() {
        o.add_writer(w);
    }
    for r in shingle_order(a, params.num_hashes, params.seed) {
        iob_add_reader(&mut o, r, a.inputs(r), CoverOptions::default())?;
    }
    o.collect_garbage();
    let mut iterations = vec![stats(&o, a, 1, 0, o.partial_count())];
    for iteration in 2..=params.max_iterations {
        let rewired = refine(&mut o)?;
        iterations.push(stats(&o, a, iteration, 0, rewired));
        if rewired == 0 {
            break;
        }
    }
    Ok(BuildOutcome { overlay: o, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::AggSpec;
    use crate::overlay::{coverage, sharing_index, validate};

    fn ids(xs: &[u32]) -> Vec<NodeId> {
        xs.iter().map(|&x| NodeId(x)).collect()
    }

    fn bip(lists: &[(u32, &[u32])]) -> BipartiteGraph {
        BipartiteGraph::from_inputs(lists.iter().map(|(r, ws)| (NodeId(*r), ids(ws))).collect())
    }

    #[test]
    fn perfect_biclique_shares_one_aggregator() {
        let (m, n) = (5u32, 7u32);
        let ws: Vec<u32> = (0..m).collect();
        let lists: Vec<(u32, &[u32])> = (0..n).map(|r| (100 + r, &ws[..])).collect();
        let a = bip(&lists);
        let out = iob_build(&a, &ConstructionParams::default()).unwrap();
        assert!(validate(&out.overlay, &a, AggSpec::Sum.caps()).is_empty());
        let si = sharing_index(&out.overlay, &a).unwrap();
        let expected = 1.0 - f64::from(m + n) / f64::from(m * n);
        assert!((si - expected).abs() < 1e-12, "{si} vs {expected}");
    }

    #[test]
    fn carving_reuses_the_overlap_of_two_readers() {
        // first reader aggregates {a..g}; the second needs only {a,b,c,d}
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let first = ids(&[1, 2, 3, 4, 5, 6, 7]);
        let r1 = iob_add_reader(&mut o, NodeId(100), &first, CoverOptions::default()).unwrap();
        assert_eq!(o.inputs(r1).len(), 7);
        let r2 = iob_add_reader(&mut o, NodeId(101), &ids(&[1, 2, 3, 4]), CoverOptions::default()).unwrap();
        let shared = o.inputs(r2)[0].node;
        assert_eq!(o.inputs(r2).len(), 1);
        assert_eq!(o.kind(shared), NodeKind::Partial);
        assert!(o.has_edge(shared, r1));
        assert_eq!(o.inputs(r1).len(), 4);
        assert!(coverage(&o, r2).unwrap().is_indicator_of(&ids(&[1, 2, 3, 4])));
        assert!(coverage(&o, r1).unwrap().is_indicator_of(&first));
    }

    #[test]
    fn carving_splits_a_shared_aggregator() {
        // two identical readers share one aggregator; a third reader needs a
        // strict subset of it, which must be carved out and reused
        let a = bip(&[(100, &[1, 2, 3, 4, 5]), (101, &[1, 2, 3, 4, 5])]);
        let mut o = iob_build(&a, &ConstructionParams::default()).unwrap().overlay;
        let shared = o.inputs(o.reader(NodeId(100)).unwrap())[0].node;
        assert_eq!(o.cover(shared).unwrap(), &ids(&[1, 2, 3, 4, 5])[..]);
        let r = iob_add_reader(&mut o, NodeId(102), &ids(&[1, 2, 3, 9]), CoverOptions::default()).unwrap();
        let ins: Vec<_> = o.inputs(r).iter().map(|l| l.node).collect();
        assert_eq!(ins.len(), 2);
        let carved = ins.iter().copied().find(|&x| o.cover(x).unwrap().len() == 3).unwrap();
        assert!(o.has_edge(carved, shared));
        let b = bip(&[(100, &[1, 2, 3, 4, 5]), (101, &[1, 2, 3, 4, 5]), (102, &[1, 2, 3, 9])]);
        assert!(validate(&o, &b, AggSpec::Sum.caps()).is_empty());
    }

    #[test]
    fn straddling_inputs_are_split_without_double_counting() {
        let a = bip(&[(100, &[1, 2, 3, 4]), (101, &[1, 2, 3, 4]), (102, &[1, 2, 3, 4, 5, 6]), (103, &[1, 2, 3, 4, 5, 6])]);
        let mut o = iob_build(&a, &ConstructionParams::default()).unwrap().overlay;
        // {2,3,5} straddles the nested {1,2,3,4} inside {1..6}
        iob_add_reader(&mut o, NodeId(104), &ids(&[2, 3, 5]), CoverOptions::default()).unwrap();
        let b = bip(&[
            (100, &[1, 2, 3, 4]),
            (101, &[1, 2, 3, 4]),
            (102, &[1, 2, 3, 4, 5, 6]),
            (103, &[1, 2, 3, 4, 5, 6]),
            (104, &[2, 3, 5]),
        ]);
        o.collect_garbage();
        let v = validate(&o, &b, AggSpec::Sum.caps());
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn refinement_never_increases_edges() {
        let mut lists: Vec<(u32, Vec<u32>)> = Vec::new();
        for r in 0..40u32 {
            let ws: Vec<u32> = (0..20).filter(|w| (w * 7 + r * 3) % 5 != 0 && (w + r) % 4 != 1).collect();
            lists.push((100 + r, ws));
        }
        let a = BipartiteGraph::from_inputs(lists.iter().map(|(r, ws)| (NodeId(*r), ids(ws))).collect());
        let out = iob_build(&a, &ConstructionParams::default()).unwrap();
        assert!(validate(&out.overlay, &a, AggSpec::Sum.caps()).is_empty());
        assert!(out.iterations.windows(2).all(|w| w[1].edges <= w[0].edges));
        assert!(sharing_index(&out.overlay, &a).unwrap() > 0.0);
    }

    #[test]
    fn second_reader_shares_the_first_readers_inputs() {
        // nodes a..g = 0..6; e reads {a,b,c,d}, g reads {a..f}
        let (a_, b_, c_, d_, e_, f_, g_) = (0, 1, 2, 3, 4, 5, 6);
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        let er = iob_add_reader(&mut o, NodeId(e_), &ids(&[a_, b_, c_, d_]), CoverOptions::default()).unwrap();
        assert!(o.inputs(er).iter().all(|l| o.kind(l.node) == NodeKind::Writer));
        let gr = iob_add_reader(&mut o, NodeId(g_), &ids(&[a_, b_, c_, d_, e_, f_]), CoverOptions::default()).unwrap();
        assert_eq!(o.partial_count(), 1);
        let v1 = o.ids().find(|&x| o.kind(x) == NodeKind::Partial).unwrap();
        assert_eq!(o.cover(v1).unwrap(), &ids(&[a_, b_, c_, d_])[..]);
        assert_eq!(o.inputs(er).iter().map(|l| l.node).collect::<Vec<_>>(), vec![v1]);
        let mut g_inputs: Vec<_> = o.inputs(gr).iter().map(|l| l.node).collect();
        g_inputs.sort();
        let mut expected = vec![v1, o.writer(NodeId(e_)).unwrap(), o.writer(NodeId(f_)).unwrap()];
        expected.sort();
        assert_eq!(g_inputs, expected);
        assert!(o.covering(NodeId(a_)).unwrap().contains(&v1));
    }

    #[test]
    fn duplicate_reader_is_rejected() {
        let mut o = OverlayGraph::new(Mode::DuplicateSensitive);
        iob_add_reader(&mut o, NodeId(9), &ids(&[1]), CoverOptions::default()).unwrap();
        assert_eq!(
            iob_add_reader(&mut o, NodeId(9), &ids(&[1]), CoverOptions::default()),
            Err(ConstructError::ReaderExists(NodeId(9)))
        );
    }
}
