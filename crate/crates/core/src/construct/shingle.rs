//! Min-hash shingles and degree-based writer ordering.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::graph::{BipartiteGraph, NodeId};

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `num_hashes` min-hash values of a set; all `u64::MAX` for an empty set.
pub fn shingles(items: &[u32], num_hashes: usize, seed: u64) -> Vec<u64> {
    (0..num_hashes as u64)
        .map(|j| {
            let salt = mix(seed ^ mix(j.wrapping_add(1)));
            items
                .iter()
                .map(|&x| mix(salt ^ u64::from(x)))
                .min()
                .unwrap_or(u64::MAX)
        })
        .collect()
}

/// Sorts keys lexicographically by the shingle vectors of their item lists,
/// ties by key. Empty lists sort last.
pub fn order_by_shingles<K: Ord + Copy>(lists: &[(K, Vec<u32>)], num_hashes: usize, seed: u64) -> Vec<K> {
    let mut keyed: Vec<(bool, Vec<u64>, K)> = lists
        .iter()
        .map(|(k, items)| (items.is_empty(), shingles(items, num_hashes, seed), *k))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, _, k)| k).collect()
}

/// Readers of `a` in shingle order; readers with no inputs come last.
pub fn shingle_order(a: &BipartiteGraph, num_hashes: usize, seed: u64) -> Vec<NodeId> {
    assert!(num_hashes >= 1, "at least one hash");
    let lists: Vec<(NodeId, Vec<u32>)> = a
        .input_lists()
        .iter()
        .map(|(&r, ws)| (r, ws.iter().map(|w| w.0).collect()))
        .collect();
    order_by_shingles(&lists, num_hashes, seed)
}

/// Direction in which writers are ranked by degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum WriterOrder {
    Ascending,
    /// Frequent writers nearest the FP-tree root, so that readers share
    /// long prefixes.
    #[default]
    Descending,
}

/// Writers ascending by out-degree in `A_G`, ties by id.
pub fn sort_writers(a: &BipartiteGraph) -> Vec<NodeId> {
    rank_by_degree(a.out_degrees(), WriterOrder::Ascending)
}

/// Keys by degree in the given direction, ties by key.
pub(crate) fn rank_by_degree<K: Ord + Copy>(deg: BTreeMap<K, usize>, order: WriterOrder) -> Vec<K> {
    let mut v: Vec<(usize, K)> = deg.into_iter().map(|(k, d)| (d, k)).collect();
    match order {
        WriterOrder::Ascending => v.sort(),
        WriterOrder::Descending => v.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1))),
    }
    v.into_iter().map(|(_, k)| k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bip(lists: &[(u32, &[u32])]) -> BipartiteGraph {
        BipartiteGraph::from_inputs(
            lists
                .iter()
                .map(|(r, ws)| (NodeId(*r), ws.iter().map(|&w| NodeId(w)).collect()))
                .collect(),
        )
    }

    #[test]
    fn identical_sets_are_adjacent() {
        let a = bip(&[(10, &[1, 2, 3]), (11, &[7, 8]), (12, &[1, 2, 3]), (13, &[4, 9]), (14, &[])]);
        let order = shingle_order(&a, 2, 7);
        let p10 = order.iter().position(|&r| r == NodeId(10)).unwrap();
        let p12 = order.iter().position(|&r| r == NodeId(12)).unwrap();
        assert_eq!(p10.abs_diff(p12), 1);
        assert_eq!(*order.last().unwrap(), NodeId(14));
        assert_eq!(order, shingle_order(&a, 2, 7));
    }

    #[test]
    fn equal_degrees_sort_by_id() {
        let a = bip(&[(10, &[3, 1, 2])]);
        assert_eq!(sort_writers(&a), vec![NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn writer_order_is_non_decreasing_in_degree() {
        let a = bip(&[(10, &[1, 2, 3]), (11, &[2, 3]), (12, &[3]), (13, &[3, 4])]);
        let order = sort_writers(&a);
        let deg = a.out_degrees();
        assert!(order.windows(2).all(|p| (deg[&p[0]], p[0]) < (deg[&p[1]], p[1])));
        assert_eq!(order, vec![NodeId(1), NodeId(4), NodeId(2), NodeId(3)]);
    }
}
