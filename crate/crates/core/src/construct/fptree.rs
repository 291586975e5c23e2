//! FP-trees over target input lists and best-biclique mining.
//!
//! Every target's input list, sorted by a global source rank, is inserted as
//! a root path. A tree node `x` at depth `L` whose path is shared by `S`
//! targets is a biclique of `L` sources and `S` targets. Each node records,
//! per target passing through it, how the target relates to the node's
//! source (direct edge, missing edge bridged by a negative edge, or reused
//! through an earlier aggregator) and the running totals of the last two
//! along the path.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::overlay::OverlayId;

use super::Biclique;

/// How a target's input list entry was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    /// A positive edge into the target.
    Direct,
    /// A source already merged into an aggregator feeding the target.
    Mined,
}

/// Relation between a target and the source of one tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Positive,
    Negative,
    Reused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub flag: Flag,
    /// Negative flags on the path from the root down to this node.
    pub negatives: u32,
    /// Reused flags on the path from the root down to this node.
    pub reused: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningMode {
    Basic,
    /// Paths may skip up to `max_negatives` sources per target; each target
    /// is inserted along its `max_paths` most beneficial paths.
    Negative { max_paths: usize, max_negatives: usize },
    /// Lists may contain [`ItemKind::Mined`] entries.
    Duplicate,
}

/// One target's ordered input list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub target: OverlayId,
    pub items: Vec<(OverlayId, ItemKind)>,
}

#[derive(Debug, Clone)]
struct Node {
    source: OverlayId,
    parent: usize,
    depth: usize,
    children: BTreeMap<usize, usize>,
    members: BTreeMap<OverlayId, Membership>,
}

const ROOT: usize = 0;

#[derive(Debug, Clone)]
pub struct FpTree<'r> {
    nodes: Vec<Node>,
    rank: &'r HashMap<OverlayId, usize>,
    mode: MiningMode,
}

#[derive(Debug, Clone, Copy)]
struct State {
    node: usize,
    consumed: usize,
    negatives: u32,
}

impl<'r> FpTree<'r> {
    /// Empty tree; `rank` orders sources and must cover every inserted item.
    pub fn new(rank: &'r HashMap<OverlayId, usize>, mode: MiningMode) -> Self {
        let root = Node {
            source: OverlayId(u32::MAX),
            parent: ROOT,
            depth: 0,
            children: BTreeMap::new(),
            members: BTreeMap::new(),
        };
        FpTree { nodes: vec![root], rank, mode }
    }

    /// Builds a tree from `entries`. `can_negate(source, target)` says
    /// whether a missing pair may be bridged by a negative edge.
    pub fn build(
        entries: &[Entry],
        rank: &'r HashMap<OverlayId, usize>,
        mode: MiningMode,
        can_negate: impl Fn(OverlayId, OverlayId) -> bool,
    ) -> Self {
        let mut t = FpTree::new(rank, mode);
        for e in entries {
            t.insert(e, &can_negate);
        }
        t
    }

    /// Number of tree nodes, root included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Targets whose paths pass through `x`.
    pub fn support(&self, x: usize) -> Vec<OverlayId> {
        self.nodes[x].members.keys().copied().collect()
    }

    /// Targets for which `x`'s source is bridged by a negative edge.
    pub fn negative_support(&self, x: usize) -> Vec<OverlayId> {
        self.flagged(x, Flag::Negative)
    }

    /// Targets for which `x`'s source is reused.
    pub fn mined_support(&self, x: usize) -> Vec<OverlayId> {
        self.flagged(x, Flag::Reused)
    }

    fn flagged(&self, x: usize, flag: Flag) -> Vec<OverlayId> {
        self.nodes[x]
            .members
            .iter()
            .filter(|(_, m)| m.flag == flag)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Sources on the root path of `x`, top-down.
    pub fn path(&self, x: usize) -> Vec<OverlayId> {
        self.path_nodes(x).into_iter().map(|n| self.nodes[n].source).collect()
    }

    fn path_nodes(&self, mut x: usize) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.nodes[x].depth);
        while x != ROOT {
            p.push(x);
            x = self.nodes[x].parent;
        }
        p.reverse();
        p
    }

    fn rank_of(&self, s: OverlayId) -> usize {
        *self.rank.get(&s).expect("ranked source")
    }

    fn child(&mut self, at: usize, source: OverlayId) -> usize {
        let r = self.rank_of(source);
        if let Some(&c) = self.nodes[at].children.get(&r) {
            return c;
        }
        let c = self.nodes.len();
        let depth = self.nodes[at].depth + 1;
        self.nodes.push(Node {
            source,
            parent: at,
            depth,
            children: BTreeMap::new(),
            members: BTreeMap::new(),
        });
        self.nodes[at].children.insert(r, c);
        c
    }

    /// Inserts `items` below `at`, returning the terminal node.
    fn descend(&mut self, mut at: usize, target: OverlayId, items: &[(OverlayId, ItemKind)], neg: u32, mut reused: u32) -> usize {
        for &(s, kind) in items {
            at = self.child(at, s);
            let flag = match kind {
                ItemKind::Direct => Flag::Positive,
                ItemKind::Mined => {
                    reused += 1;
                    Flag::Reused
                }
            };
            self.nodes[at].members.insert(target, Membership { flag, negatives: neg, reused });
        }
        at
    }

    pub fn insert(&mut self, e: &Entry, can_negate: impl Fn(OverlayId, OverlayId) -> bool) {
        match self.mode {
            MiningMode::Basic | MiningMode::Duplicate => {
                self.descend(ROOT, e.target, &e.items, 0, 0);
            }
            MiningMode::Negative { max_paths, max_negatives } => {
                self.insert_negative(e, max_paths, max_negatives as u32, can_negate)
            }
        }
    }

    fn insert_negative(&mut self, e: &Entry, max_paths: usize, max_neg: u32, can_negate: impl Fn(OverlayId, OverlayId) -> bool) {
        let t = e.target;
        let ranks: Vec<usize> = e.items.iter().map(|&(s, _)| self.rank_of(s)).collect();
        let mut candidates: Vec<(i64, u32, usize, usize, State)> = Vec::new();
        let mut queue = VecDeque::from([State { node: ROOT, consumed: 0, negatives: 0 }]);
        let mut visit = 0usize;
        while let Some(st) = queue.pop_front() {
            if st.node != ROOT {
                let n = &self.nodes[st.node];
                let l = n.depth as i64;
                let s = n.members.len() as i64 + 1;
                let negs: i64 = n.members.values().map(|m| i64::from(m.negatives)).sum::<i64>() + i64::from(st.negatives);
                let score = l * s - l - s - 2 * negs;
                candidates.push((score, st.negatives, n.depth, visit, st));
                visit += 1;
            }
            for (&r, &c) in &self.nodes[st.node].children {
                let next = ranks.get(st.consumed).copied();
                if next == Some(r) {
                    queue.push_back(State { node: c, consumed: st.consumed + 1, ..st });
                } else if next.is_none_or(|nr| nr > r)
                    && st.negatives < max_neg
                    && can_negate(self.nodes[c].source, t)
                {
                    queue.push_back(State { negatives: st.negatives + 1, node: c, ..st });
                }
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(b.2.cmp(&a.2)).then(a.3.cmp(&b.3)));

        let mut terminals: Vec<usize> = Vec::new();
        for (_, _, _, _, st) in candidates {
            if terminals.len() == max_paths {
                break;
            }
            let (neg, at) = self.mark_path(st.node, t, &ranks);
            let end = self.descend(at, t, &e.items[st.consumed..], neg, 0);
            if !terminals.contains(&end) {
                terminals.push(end);
            }
        }
        if terminals.is_empty() {
            self.descend(ROOT, t, &e.items, 0, 0);
        }
    }

    /// Records `t` on every node of the root path of `x`, flagging sources
    /// absent from its list as negative. Returns the negative count and `x`.
    fn mark_path(&mut self, x: usize, t: OverlayId, ranks: &[usize]) -> (u32, usize) {
        let mut neg = 0;
        for n in self.path_nodes(x) {
            let r = self.rank_of(self.nodes[n].source);
            let flag = if ranks.binary_search(&r).is_ok() {
                Flag::Positive
            } else {
                neg += 1;
                Flag::Negative
            };
            self.nodes[n].members.insert(t, Membership { flag, negatives: neg, reused: 0 });
        }
        (neg, x)
    }

    fn node_benefit(&self, x: usize) -> i64 {
        let n = &self.nodes[x];
        let l = n.depth as i64;
        let s = n.members.len() as i64;
        let (neg, reused) = n
            .members
            .values()
            .fold((0i64, 0i64), |(a, b), m| (a + i64::from(m.negatives), b + i64::from(m.reused)));
        l * s - l - s - 2 * neg - reused
    }

    /// The tree node with the largest edge saving, if it reaches
    /// `min_benefit`, as a biclique.
    pub fn best(&self, min_benefit: i64) -> Option<Biclique> {
        let (x, benefit) = (1..self.nodes.len())
            .map(|x| (x, self.node_benefit(x)))
            .max_by(|a, b| {
                a.1.cmp(&b.1)
                    .then(self.nodes[a.0].members.len().cmp(&self.nodes[b.0].members.len()))
                    .then(b.0.cmp(&a.0))
            })?;
        if benefit < min_benefit {
            return None;
        }
        let path = self.path_nodes(x);
        let targets: Vec<OverlayId> = self.nodes[x].members.keys().copied().collect();
        let mut b = Biclique {
            sources: path.iter().map(|&n| self.nodes[n].source).collect(),
            targets: targets.clone(),
            ..Default::default()
        };
        for &t in &targets {
            for &n in &path {
                let s = self.nodes[n].source;
                match self.nodes[n].members[&t].flag {
                    Flag::Positive => {}
                    Flag::Negative => b.negatives.push((s, t)),
                    Flag::Reused => b.reused.push((s, t)),
                }
            }
        }
        debug_assert_eq!(b.benefit(), benefit);
        Some(b)
    }
}
