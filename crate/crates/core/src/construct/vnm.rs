//! The VNM family: iterative biclique mining over chunked FP-trees.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::graph::BipartiteGraph;
use crate::overlay::{trivial_overlay, Caps, Decision, Mode, NodeKind, OverlayGraph, OverlayId, Sign};

use super::fptree::{Entry, FpTree, ItemKind, MiningMode};
use super::shingle::{order_by_shingles, rank_by_degree};
use super::{apply_biclique, stats, BuildOutcome, ConstructError, ConstructionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VnmVariant {
    /// Fixed chunk size, exact bicliques.
    Base,
    /// Chunk size adapted between iterations.
    Adaptive,
    /// Adaptive, with negative edges (subtractable aggregates only).
    Negative,
    /// Adaptive, overlapping chunks and reused paths (duplicate-insensitive
    /// aggregates only).
    Duplicate,
}

/// Next chunk size: the smallest `c <= current` such that bicliques with at
/// most `c` targets account for strictly more than `fraction` of the total
/// benefit of those with at most `current` targets. `benefit_by_size` maps a
/// biclique's target count to the summed benefit of such bicliques.
pub fn adapt_chunk(benefit_by_size: &BTreeMap<usize, i64>, current: usize, fraction: f64) -> usize {
    let total: i64 = benefit_by_size.range(..=current).map(|(_, b)| b).sum();
    if total <= 0 {
        return current;
    }
    let threshold = fraction * total as f64;
    let mut acc = 0i64;
    for (&size, &b) in benefit_by_size.range(..=current) {
        acc += b;
        if acc as f64 > threshold {
            return size.max(1);
        }
    }
    current
}

/// Current mining input of a target: direct positive sources that existed
/// when the iteration started, plus (duplicate mode) sources merged away
/// earlier in the run.
fn entry_for(
    o: &OverlayGraph,
    t: OverlayId,
    rank: &HashMap<OverlayId, usize>,
    mined: Option<&BTreeSet<OverlayId>>,
) -> Entry {
    let mut items: Vec<(OverlayId, ItemKind)> = o
        .inputs(t)
        .iter()
        .filter(|l| l.sign == Sign::Pos && rank.contains_key(&l.node))
        .map(|l| (l.node, ItemKind::Direct))
        .collect();
    if let Some(m) = mined {
        items.extend(m.iter().filter(|s| rank.contains_key(s)).map(|&s| (s, ItemKind::Mined)));
    }
    items.sort_by_key(|(s, _)| rank[s]);
    Entry { target: t, items }
}

/// Builds an overlay with the chosen VNM variant. Every node is push.
pub fn run_vnm(
    a: &BipartiteGraph,
    variant: VnmVariant,
    caps: Caps,
    params: &ConstructionParams,
) -> Result<BuildOutcome, ConstructError> {
    params.validate()?;
    let mut o = trivial_overlay(a);
    let mode = match variant {
        VnmVariant::Negative => {
            if !caps.subtractable {
                return Err(ConstructError::Capability("negative edges (not subtractable)"));
            }
            MiningMode::Negative { max_paths: params.max_paths, max_negatives: params.max_negatives }
        }
        VnmVariant::Duplicate => {
            if !caps.duplicate_insensitive {
                return Err(ConstructError::Capability("duplicate paths (not duplicate-insensitive)"));
            }
            o.set_mode(Mode::DuplicateInsensitive);
            MiningMode::Duplicate
        }
        VnmVariant::Base | VnmVariant::Adaptive => MiningMode::Basic,
    };
    let duplicate = mode == MiningMode::Duplicate;
    let mut mined: HashMap<OverlayId, BTreeSet<OverlayId>> = HashMap::new();
    let mut chunk = params.chunk_size;
    let mut iterations = Vec::new();

    for iteration in 1..=params.max_iterations {
        // Frontier snapshot: targets and their source lists at iteration start.
        let mut lists: Vec<(OverlayId, Vec<u32>)> = Vec::new();
        let mut degree: BTreeMap<OverlayId, usize> = BTreeMap::new();
        for id in o.ids() {
            if o.kind(id) == NodeKind::Writer {
                continue;
            }
            let mut srcs: BTreeSet<OverlayId> = o
                .inputs(id)
                .iter()
                .filter(|l| l.sign == Sign::Pos)
                .map(|l| l.node)
                .collect();
            if let Some(m) = mined.get(&id) {
                srcs.extend(m.iter().copied());
            }
            if srcs.len() < 2 {
                continue;
            }
            for &s in &srcs {
                *degree.entry(s).or_default() += 1;
            }
            lists.push((id, srcs.iter().map(|s| s.0).collect()));
        }
        let rank: HashMap<OverlayId, usize> =
            rank_by_degree(degree, params.writer_order).into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        let targets = order_by_shingles(&lists, params.num_hashes, params.seed);

        let step = if duplicate {
            let overlap = (chunk as f64 * f64::from(params.overlap_pct) / 100.0).round() as usize;
            chunk.saturating_sub(overlap).max(1)
        } else {
            chunk
        };
        let mut benefit_by_size: BTreeMap<usize, i64> = BTreeMap::new();
        let mut created = 0;
        let mut start = 0;
        while start < targets.len() {
            let window = &targets[start..(start + chunk).min(targets.len())];
            loop {
                let entries: Vec<Entry> = window
                    .iter()
                    .map(|&t| entry_for(&o, t, &rank, if duplicate { mined.get(&t) } else { None }))
                    .filter(|e| !e.items.is_empty())
                    .collect();
                let can_negate = |s: OverlayId, t: OverlayId| {
                    s != t && !o.has_edge(s, t) && (o.kind(s) == NodeKind::Writer || o.kind(t) == NodeKind::Reader)
                };
                let Some(b) = FpTree::build(&entries, &rank, mode, can_negate).best(params.min_benefit) else {
                    break;
                };
                apply_biclique(&mut o, &b, Decision::Push)?;
                created += 1;
                *benefit_by_size.entry(b.targets.len()).or_default() += b.benefit();
                if duplicate {
                    for &t in &b.targets {
                        let m = mined.entry(t).or_default();
                        m.extend(b.sources.iter().copied());
                    }
                }
            }
            if start + chunk >= targets.len() {
                break;
            }
            start += step;
        }
        iterations.push(stats(&o, a, iteration, chunk, created));
        if created == 0 {
            break;
        }
        if variant != VnmVariant::Base {
            chunk = adapt_chunk(&benefit_by_size, chunk, params.adapt_fraction);
        }
    }
    Ok(BuildOutcome { overlay: o, iterations })
}
