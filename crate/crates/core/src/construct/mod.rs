//! Overlay construction.
//!
//! Two families of builders start from the bipartite graph of a query:
//!
//! - the VNM family repeatedly mines bicliques from FP-trees built over
//!   chunks of shingle-ordered targets and replaces each biclique with a new
//!   partial aggregator ([`vnm`]);
//! - IOB inserts readers one at a time, covering each input list greedily
//!   with existing aggregators and carving sub-aggregators out of larger ones
//!   when needed ([`iob`]).

pub mod fptree;
pub mod iob;
pub mod shingle;
pub mod vnm;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::graph::{BipartiteGraph, NodeId};
use crate::overlay::{Caps, Decision, Mode, NodeKind, OverlayError, OverlayGraph, OverlayId, Sign};

pub use fptree::{FpTree, MiningMode};
pub use iob::{carve, carve_cost, cover_writers, iob_add_reader, iob_build, refine, CoverOptions};
pub use shingle::{shingle_order, sort_writers, WriterOrder};
pub use vnm::{adapt_chunk, run_vnm, VnmVariant};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConstructError {
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("invalid construction parameters: {0}")]
    InvalidParams(String),
    #[error("aggregate does not support {0}")]
    Capability(&'static str),
    #[error("reader {0} already exists in the overlay")]
    ReaderExists(NodeId),
    #[error("biclique does not match the overlay: {0}")]
    BicliqueMismatch(String),
}

/// Tuning knobs shared by the builders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionParams {
    /// Targets per FP-tree in the first iteration.
    pub chunk_size: usize,
    /// Benefit fraction used when adapting the chunk size.
    pub adapt_fraction: f64,
    /// Paths kept per target when inserting with negative edges.
    pub max_paths: usize,
    /// Negative edges allowed per inserted path.
    pub max_negatives: usize,
    /// Chunk overlap in percent for the duplicate-insensitive variant.
    pub overlap_pct: u32,
    pub max_iterations: usize,
    /// Smallest edge saving for which a biclique is materialized.
    pub min_benefit: i64,
    pub num_hashes: usize,
    pub seed: u64,
    /// Writer order within FP-tree paths.
    pub writer_order: WriterOrder,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        ConstructionParams {
            chunk_size: 100,
            adapt_fraction: 0.9,
            max_paths: 2,
            max_negatives: 5,
            overlap_pct: 20,
            max_iterations: 10,
            min_benefit: 1,
            num_hashes: 2,
            seed: 0x5EED,
            writer_order: WriterOrder::Descending,
        }
    }
}

impl ConstructionParams {
    pub fn validate(&self) -> Result<(), ConstructError> {
        let bad = |m: &str| Err(ConstructError::InvalidParams(m.to_string()));
        if self.chunk_size == 0 {
            return bad("chunk size must be positive");
        }
        if !(self.adapt_fraction > 0.0 && self.adapt_fraction <= 1.0) {
            return bad("adapt fraction must lie in (0, 1]");
        }
        if self.max_paths == 0 {
            return bad("at least one path per target");
        }
        if self.overlap_pct >= 100 {
            return bad("overlap must be below 100%");
        }
        if self.max_iterations == 0 || self.num_hashes == 0 {
            return bad("iterations and hash count must be positive");
        }
        if self.min_benefit < 1 {
            return bad("minimum benefit must be at least 1");
        }
        Ok(())
    }
}

/// Statistics after one construction iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub chunk_size: usize,
    /// New aggregators (VNM) or rewired aggregators (IOB refinement).
    pub changes: usize,
    pub edges: usize,
    pub sharing_index: f64,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub overlay: OverlayGraph,
    pub iterations: Vec<IterationStats>,
}

/// A (quasi-)biclique between overlay nodes.
///
/// Every `(source, target)` pair is either an existing positive edge, listed
/// in `negatives` (no edge; compensated by a negative edge), or listed in
/// `reused` (no edge; the target already aggregates the source through an
/// earlier aggregator, duplicate-insensitive mode only).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Biclique {
    pub sources: Vec<OverlayId>,
    pub targets: Vec<OverlayId>,
    pub negatives: Vec<(OverlayId, OverlayId)>,
    pub reused: Vec<(OverlayId, OverlayId)>,
}

impl Biclique {
    /// Net reduction in overlay edges if applied.
    pub fn benefit(&self) -> i64 {
        let l = self.sources.len() as i64;
        let s = self.targets.len() as i64;
        l * s - l - s - 2 * self.negatives.len() as i64 - self.reused.len() as i64
    }
}

/// Replaces the biclique with a new partial aggregator and returns its id.
pub fn apply_biclique(o: &mut OverlayGraph, b: &Biclique, decision: Decision) -> Result<OverlayId, ConstructError> {
    let mismatch = |m: String| Err(ConstructError::BicliqueMismatch(m));
    if b.sources.is_empty() || b.targets.is_empty() {
        return mismatch("empty side".into());
    }
    for &(s, t) in &b.negatives {
        if o.mode() != Mode::DuplicateSensitive {
            return mismatch("negative edges need duplicate-sensitive mode".into());
        }
        if o.has_edge(s, t) || !(o.kind(s) == NodeKind::Writer || o.kind(t) == NodeKind::Reader) {
            return mismatch(format!("negative pair {s} -> {t} not allowed"));
        }
    }
    for &(s, t) in &b.reused {
        if o.mode() != Mode::DuplicateInsensitive || o.has_edge(s, t) {
            return mismatch(format!("reused pair {s} -> {t} not allowed"));
        }
    }
    let special = |s, t| b.negatives.contains(&(s, t)) || b.reused.contains(&(s, t));
    for &t in &b.targets {
        for &s in &b.sources {
            if !special(s, t) && o.edge_sign(s, t) != Some(Sign::Pos) {
                return mismatch(format!("missing edge {s} -> {t}"));
            }
        }
    }

    let p = o.add_partial(decision);
    for &s in &b.sources {
        o.add_edge(s, p, Sign::Pos)?;
    }
    for &t in &b.targets {
        for &s in &b.sources {
            if b.negatives.contains(&(s, t)) {
                o.add_edge(s, t, Sign::Neg)?;
            } else if !b.reused.contains(&(s, t)) {
                o.remove_edge(s, t)?;
            }
        }
        o.add_edge(p, t, Sign::Pos)?;
    }
    o.refresh_cover(p);
    for &(_, t) in &b.negatives {
        if o.cover(t).is_some() {
            o.mark_unclean(t);
        }
    }
    Ok(p)
}

/// Construction algorithm selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    Vnm,
    VnmA,
    VnmN,
    VnmD,
    Iob,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Vnm => "vnm",
            Algorithm::VnmA => "vnma",
            Algorithm::VnmN => "vnmn",
            Algorithm::VnmD => "vnmd",
            Algorithm::Iob => "iob",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "vnm" => Algorithm::Vnm,
            "vnma" => Algorithm::VnmA,
            "vnmn" => Algorithm::VnmN,
            "vnmd" => Algorithm::VnmD,
            "iob" => Algorithm::Iob,
            _ => return Err(format!("unknown algorithm {s:?}; expected vnm|vnma|vnmn|vnmd|iob")),
        })
    }
}

/// Runs the selected builder. Every produced node is push.
pub fn build_overlay(
    a: &BipartiteGraph,
    algorithm: Algorithm,
    caps: Caps,
    params: &ConstructionParams,
) -> Result<BuildOutcome, ConstructError> {
    match algorithm {
        Algorithm::Vnm => run_vnm(a, VnmVariant::Base, caps, params),
        Algorithm::VnmA => run_vnm(a, VnmVariant::Adaptive, caps, params),
        Algorithm::VnmN => run_vnm(a, VnmVariant::Negative, caps, params),
        Algorithm::VnmD => run_vnm(a, VnmVariant::Duplicate, caps, params),
        Algorithm::Iob => iob_build(a, params),
    }
}

pub(crate) fn stats(o: &OverlayGraph, a: &BipartiteGraph, iteration: usize, chunk_size: usize, changes: usize) -> IterationStats {
    let base = a.edge_count().max(1) as f64;
    IterationStats {
        iteration,
        chunk_size,
        changes,
        edges: o.edge_count(),
        sharing_index: 1.0 - o.edge_count() as f64 / base,
    }
}
