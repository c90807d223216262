//! Binomial-tree arithmetic over algorithm ranks `0..s`.
//!
//! Rank 0 is the only root. A rank `r > 0` sits at level `trailing_zeros(r)`
//! and its parent is `r - 2^level`; the root sits at level `B`, the number of
//! bits needed to encode every rank of the group. Children of `r` are
//! `r + 2^k` for `k < level(r)`, clipped at `s`.
//!
//! When ranks fail, the duties of a tree position move to the closest live
//! successor (see [`inherit`]).

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

/// Index of a process inside a group, in `0..s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AlgRank(pub u32);

impl AlgRank {
    pub fn get(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AlgRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for AlgRank {
    fn from(v: u32) -> Self {
        AlgRank(v)
    }
}

/// Size of a group plus the bit width used to encode its ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeShape {
    size: u32,
    bits: u32,
}

impl TreeShape {
    /// Panics if `size == 0`.
    pub fn new(size: u32) -> Self {
        assert!(size >= 1, "tree shape needs at least one rank");
        let bits = bits_for(size);
        TreeShape { size, bits }
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// `B = ceil(log2(max(s, 2)))`.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn contains(&self, r: AlgRank) -> bool {
        r.0 < self.size
    }

    pub fn ranks(&self) -> impl Iterator<Item = AlgRank> {
        (0..self.size).map(AlgRank)
    }

    /// Upper bound on rounds per phase: `ceil(log2 s)`, zero for `s = 1`.
    pub fn depth(&self) -> u32 {
        if self.size <= 1 {
            0
        } else {
            self.bits
        }
    }
}

fn bits_for(size: u32) -> u32 {
    let n = size.max(2);
    // ceil(log2 n) for n >= 2
    32 - (n - 1).leading_zeros()
}

/// Ranks assumed failed, as seen by one process.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FailureSet {
    members: BTreeSet<AlgRank>,
}

impl FailureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, r: AlgRank) -> bool {
        self.members.insert(r)
    }

    pub fn contains(&self, r: AlgRank) -> bool {
        self.members.contains(&r)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = AlgRank> + '_ {
        self.members.iter().copied()
    }
}

impl FromIterator<AlgRank> for FailureSet {
    fn from_iter<I: IntoIterator<Item = AlgRank>>(iter: I) -> Self {
        FailureSet {
            members: iter.into_iter().collect(),
        }
    }
}

impl<'a> FromIterator<&'a u32> for FailureSet {
    fn from_iter<I: IntoIterator<Item = &'a u32>>(iter: I) -> Self {
        iter.into_iter().map(|&r| AlgRank(r)).collect()
    }
}

/// Trailing zeros of `r`, or `B` for the root.
pub fn level(r: AlgRank, shape: TreeShape) -> u32 {
    debug_assert!(shape.contains(r));
    if r.0 == 0 {
        shape.bits()
    } else {
        r.0.trailing_zeros()
    }
}

pub fn parent(r: AlgRank, shape: TreeShape) -> Option<AlgRank> {
    if r.0 == 0 {
        None
    } else {
        Some(AlgRank(r.0 - (1 << level(r, shape))))
    }
}

/// `(k, r + 2^k)` pairs in ascending `k`, the order a gather receives in.
/// Broadcast walks the same list in reverse.
pub fn children(r: AlgRank, shape: TreeShape) -> Vec<(u32, AlgRank)> {
    let lvl = level(r, shape);
    (0..lvl)
        .map(|k| (k, r.0 as u64 + (1u64 << k)))
        .take_while(|&(_, c)| c < shape.size() as u64)
        .map(|(k, c)| (k, AlgRank(c as u32)))
        .collect()
}

/// Ranks whose gather data routes through position `c`.
pub fn subtree_range(c: AlgRank, shape: TreeShape) -> Range<u32> {
    let span = 1u64 << level(c, shape);
    let end = (c.0 as u64 + span).min(shape.size() as u64);
    c.0..end as u32
}

/// The live holder of position `p`: the smallest rank `>= p` outside `failed`.
pub fn inherit(p: AlgRank, failed: &FailureSet, shape: TreeShape) -> Option<AlgRank> {
    (p.0..shape.size())
        .map(AlgRank)
        .find(|r| !failed.contains(*r))
}

/// Positions below `r` whose duties `r` holds: the run of failed ranks
/// immediately preceding it.
pub fn inherited_positions(r: AlgRank, failed: &FailureSet, shape: TreeShape) -> Vec<AlgRank> {
    debug_assert!(shape.contains(r) && !failed.contains(r));
    let mut start = r.0;
    while start > 0 && failed.contains(AlgRank(start - 1)) {
        start -= 1;
    }
    (start..r.0).map(AlgRank).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: u32) -> TreeShape {
        TreeShape::new(n)
    }

    fn f(ranks: &[u32]) -> FailureSet {
        ranks.iter().collect()
    }

    #[test]
    fn bits_match_definition() {
        assert_eq!(s(1).bits(), 1);
        assert_eq!(s(2).bits(), 1);
        assert_eq!(s(3).bits(), 2);
        assert_eq!(s(6).bits(), 3);
        assert_eq!(s(8).bits(), 3);
        assert_eq!(s(9).bits(), 4);
        for n in 1..=300u32 {
            let b = s(n).bits();
            let m = n.max(2) as u64;
            assert!((1u64 << (b - 1)) < m && m <= (1u64 << b), "n={n}");
        }
    }

    #[test]
    fn level_examples() {
        assert_eq!(level(AlgRank(4), s(6)), 2);
        assert_eq!(level(AlgRank(0), s(6)), 3);
        assert_eq!(level(AlgRank(5), s(6)), 0);
    }

    #[test]
    fn parent_examples() {
        assert_eq!(parent(AlgRank(3), s(6)), Some(AlgRank(2)));
        assert_eq!(parent(AlgRank(5), s(6)), Some(AlgRank(4)));
        assert_eq!(parent(AlgRank(0), s(6)), None);
    }

    #[test]
    fn children_examples() {
        assert_eq!(
            children(AlgRank(0), s(6)),
            vec![(0, AlgRank(1)), (1, AlgRank(2)), (2, AlgRank(4))]
        );
        assert_eq!(children(AlgRank(2), s(6)), vec![(0, AlgRank(3))]);
        assert!(children(AlgRank(1), s(6)).is_empty());
        assert!(children(AlgRank(0), s(1)).is_empty());
    }

    #[test]
    fn subtree_examples() {
        assert_eq!(subtree_range(AlgRank(2), s(6)), 2..4);
        assert_eq!(subtree_range(AlgRank(4), s(6)), 4..6);
        assert_eq!(subtree_range(AlgRank(5), s(6)), 5..6);
        assert_eq!(subtree_range(AlgRank(0), s(6)), 0..6);
    }

    #[test]
    fn inherit_examples() {
        assert_eq!(inherit(AlgRank(2), &f(&[2]), s(6)), Some(AlgRank(3)));
        assert_eq!(inherit(AlgRank(4), &f(&[]), s(6)), Some(AlgRank(4)));
        assert_eq!(inherit(AlgRank(5), &f(&[5]), s(6)), None);
    }

    #[test]
    fn inherited_positions_examples() {
        assert_eq!(
            inherited_positions(AlgRank(3), &f(&[2]), s(6)),
            vec![AlgRank(2)]
        );
        assert_eq!(
            inherited_positions(AlgRank(3), &f(&[1, 2]), s(6)),
            vec![AlgRank(1), AlgRank(2)]
        );
        assert!(inherited_positions(AlgRank(4), &f(&[2]), s(6)).is_empty());
    }

    #[test]
    fn tree_is_consistent_up_to_256() {
        for n in 1..=256u32 {
            let sh = s(n);
            for r in sh.ranks() {
                if let Some(p) = parent(r, sh) {
                    let k = level(r, sh);
                    assert!(children(p, sh).contains(&(k, r)), "n={n} r={r}");
                }
                for (_, c) in children(r, sh) {
                    assert_eq!(parent(c, sh), Some(r));
                }
                // every rank reaches the root
                let mut cur = r;
                let mut steps = 0;
                while let Some(p) = parent(cur, sh) {
                    assert!(p < cur);
                    cur = p;
                    steps += 1;
                }
                assert_eq!(cur, AlgRank(0));
                assert!(steps <= sh.bits());
            }
            // s - 1 edges in total
            let edges: usize = sh.ranks().map(|r| children(r, sh).len()).sum();
            assert_eq!(edges as u32, n - 1);
        }
    }

    #[test]
    fn child_subtrees_partition_parent_subtree() {
        for n in 1..=256u32 {
            let sh = s(n);
            for r in sh.ranks() {
                let mut covered = vec![r.0];
                for (_, c) in children(r, sh) {
                    covered.extend(subtree_range(c, sh));
                }
                covered.sort_unstable();
                let expect: Vec<u32> = subtree_range(r, sh).collect();
                assert_eq!(covered, expect, "n={n} r={r}");
            }
        }
    }
}
