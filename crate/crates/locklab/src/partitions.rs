//! Set-partition algebra over party indices.
//!
//! A [`Partition`] groups the parties `{1..m}` into disjoint blocks; parties
//! within a block may measure jointly, parties in different blocks may not.
//! Coalitions, refinement/coarsening, perfect pairings, the pairs-plus-one-
//! triple layouts used for odd m, and exhaustive enumeration all live here.
//!
//! Partitions are kept in a canonical form — each block sorted ascending,
//! blocks ordered by their minimum element — so equality, deduplication and
//! report ordering are well defined.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("party count {0} out of supported range")]
    BadPartyCount(usize),
    #[error("blocks must be disjoint, nonempty, and cover 1..={m}")]
    NotAPartition { m: usize },
    #[error("partition is over {got} parties, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("coalition must have between 2 and m-1 members, got {size} of {m}")]
    BadCoalitionSize { size: usize, m: usize },
    #[error("coalition member {0} outside 1..={1}")]
    MemberOutOfRange(usize, usize),
    #[error("pairings require an even party count, got {0}")]
    OddPartyCount(usize),
    #[error("pairs-plus-triple layouts require odd m >= 5, got {0}")]
    BadOddShape(usize),
    #[error("exhaustive enumeration capped at {max} parties, got {got} (use the unchecked variant to override)")]
    EnumerationGuard { got: usize, max: usize },
    #[error("cannot parse partition from {text:?}: {reason}")]
    Parse { text: String, reason: String },
}

pub type PartitionResult<T> = Result<T, PartitionError>;

/// Exhaustive enumeration guard: Bell(10) = 115975 is the largest party
/// count enumerated by default.
pub const ENUMERATION_LIMIT: usize = 10;

/// Disjoint blocks of party indices covering `{1..m}`, in canonical order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    m: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Build from blocks, validating disjointness and coverage and putting
    /// the result in canonical order.
    pub fn new(m: usize, mut blocks: Vec<Vec<usize>>) -> PartitionResult<Self> {
        if m == 0 {
            return Err(PartitionError::BadPartyCount(0));
        }
        let mut seen = vec![false; m + 1];
        let mut count = 0;
        for block in &mut blocks {
            if block.is_empty() {
                return Err(PartitionError::NotAPartition { m });
            }
            block.sort_unstable();
            for &p in block.iter() {
                if p == 0 || p > m || seen[p] {
                    return Err(PartitionError::NotAPartition { m });
                }
                seen[p] = true;
                count += 1;
            }
        }
        if count != m {
            return Err(PartitionError::NotAPartition { m });
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(Partition { m, blocks })
    }

    /// The discrete partition: every party alone.
    pub fn singletons(m: usize) -> Self {
        Partition {
            m,
            blocks: (1..=m).map(|p| vec![p]).collect(),
        }
    }

    /// The trivial partition: all parties in one block.
    pub fn single_block(m: usize) -> Self {
        Partition {
            m,
            blocks: vec![(1..=m).collect()],
        }
    }

    pub fn num_parties(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_containing(&self, party: usize) -> Option<&[usize]> {
        self.blocks
            .iter()
            .find(|b| b.binary_search(&party).is_ok())
            .map(|b| b.as_slice())
    }

    /// True iff every block of `other` is contained in one of our blocks,
    /// i.e. `self` is coarser than or equal to `other`.
    pub fn is_coarsening_of(&self, other: &Partition) -> PartitionResult<bool> {
        if self.m != other.m {
            return Err(PartitionError::DimensionMismatch {
                got: other.m,
                expected: self.m,
            });
        }
        Ok(other.blocks.iter().all(|q| {
            self.block_containing(q[0])
                .is_some_and(|p| q.iter().all(|x| p.binary_search(x).is_ok()))
        }))
    }

    /// True iff every block of `self` is contained in one of `other`'s.
    pub fn is_refinement_of(&self, other: &Partition) -> PartitionResult<bool> {
        other.is_coarsening_of(self)
    }

    /// All partitions coarser than or equal to `self`, built by partitioning
    /// the blocks themselves and merging.
    pub fn coarsenings(&self) -> Vec<Partition> {
        let k = self.blocks.len();
        enumerate_partitions_unchecked(k)
            .map(|grouping| {
                let blocks = grouping
                    .blocks()
                    .iter()
                    .map(|group| {
                        let mut merged: Vec<usize> = group
                            .iter()
                            .flat_map(|&bi| self.blocks[bi - 1].iter().copied())
                            .collect();
                        merged.sort_unstable();
                        merged
                    })
                    .collect();
                Partition::new(self.m, blocks).expect("merging blocks keeps a valid partition")
            })
            .collect()
    }

    /// Parse `12|3|45` (single digits) or `1,10|2,3` (comma-separated, for
    /// parties above 9). The party count is inferred from coverage.
    pub fn parse(text: &str) -> PartitionResult<Self> {
        let fail = |reason: &str| PartitionError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut blocks = Vec::new();
        let mut total = 0usize;
        for chunk in text.split('|') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                return Err(fail("empty block"));
            }
            let block: Vec<usize> = if text.contains(',') {
                chunk
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| fail("bad party index")))
                    .collect::<Result<_, _>>()?
            } else {
                chunk
                    .chars()
                    .map(|c| {
                        c.to_digit(10)
                            .map(|d| d as usize)
                            .ok_or_else(|| fail("bad party digit"))
                    })
                    .collect::<Result<_, _>>()?
            };
            total += block.len();
            blocks.push(block);
        }
        Partition::new(total, blocks).map_err(|_| fail("blocks do not form a partition of 1..=m"))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comma = self.m > 9;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            for (j, p) in block.iter().enumerate() {
                if comma && j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{p}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Partition({self})")
    }
}

/// A set of collaborating parties. The remaining parties stand alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    pub fn new(mut members: Vec<usize>) -> PartitionResult<Self> {
        members.sort_unstable();
        members.dedup();
        if members.len() < 2 {
            return Err(PartitionError::BadCoalitionSize {
                size: members.len(),
                m: 0,
            });
        }
        Ok(Coalition { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// The partition produced when a coalition collaborates and everyone else
/// stands alone: one block for the coalition, singletons elsewhere.
pub fn induced_partition(m: usize, coalition: &Coalition) -> PartitionResult<Partition> {
    let k = coalition.size();
    if k < 2 || k > m.saturating_sub(1) {
        return Err(PartitionError::BadCoalitionSize { size: k, m });
    }
    for &p in coalition.members() {
        if p == 0 || p > m {
            return Err(PartitionError::MemberOutOfRange(p, m));
        }
    }
    let mut blocks = vec![coalition.members().to_vec()];
    for p in 1..=m {
        if coalition.members().binary_search(&p).is_err() {
            blocks.push(vec![p]);
        }
    }
    Partition::new(m, blocks)
}

/// The smallest party that forms a singleton block, if any.
pub fn singleton_witness(p: &Partition) -> Option<usize> {
    p.blocks()
        .iter()
        .filter(|b| b.len() == 1)
        .map(|b| b[0])
        .min()
}

/// All perfect pairings of `{1..m}` — partitions into blocks of size 2.
///
/// There are (m−1)!! of them; the order is deterministic: the smallest
/// unpaired party is matched with each possible partner in ascending order,
/// recursively.
pub fn pairings(m: usize) -> PartitionResult<Vec<Partition>> {
    if m == 0 || !m.is_multiple_of(2) {
        return Err(PartitionError::OddPartyCount(m));
    }
    let mut out = Vec::new();
    let mut current: Vec<Vec<usize>> = Vec::new();
    let free: Vec<usize> = (1..=m).collect();
    pair_rec(&free, &mut current, &mut out, m);
    Ok(out)
}

fn pair_rec(free: &[usize], current: &mut Vec<Vec<usize>>, out: &mut Vec<Partition>, m: usize) {
    if free.is_empty() {
        out.push(Partition::new(m, current.clone()).expect("pair blocks form a partition"));
        return;
    }
    let first = free[0];
    for i in 1..free.len() {
        let partner = free[i];
        let mut rest = free.to_vec();
        rest.remove(i);
        rest.remove(0);
        current.push(vec![first, partner]);
        pair_rec(&rest, current, out, m);
        current.pop();
    }
}

/// For odd m ≥ 5: all partitions into (m−3)/2 pair blocks plus exactly one
/// triple block. These play the role pairings play for even m.
pub fn odd_canonical_partitions(m: usize) -> PartitionResult<Vec<Partition>> {
    if m.is_multiple_of(2) || m < 5 {
        return Err(PartitionError::BadOddShape(m));
    }
    let mut out = Vec::new();
    // choose the triple, then pair up the rest
    for a in 1..=m {
        for b in (a + 1)..=m {
            for c in (b + 1)..=m {
                let triple = vec![a, b, c];
                let rest: Vec<usize> = (1..=m).filter(|p| !triple.contains(p)).collect();
                let mut current = vec![triple];
                pair_rec(&rest, &mut current, &mut out, m);
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Iterator over all partitions of `{1..m}` in restricted-growth-string
/// order (lexicographic), which is a canonical order with no repeats.
pub struct PartitionIter {
    m: usize,
    rgs: Vec<usize>,
    max: Vec<usize>,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let num_blocks = self.max[self.m - 1].max(self.rgs[self.m - 1]) + 1;
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); num_blocks];
        for (i, &b) in self.rgs.iter().enumerate() {
            blocks[b].push(i + 1);
        }
        let result =
            Partition::new(self.m, blocks).expect("restricted growth string encodes a partition");

        // advance: find the rightmost position that can be incremented
        let mut i = self.m;
        loop {
            if i == 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.rgs[i] <= self.max[i - 1] {
                self.rgs[i] += 1;
                let mx = self.max[i - 1].max(self.rgs[i]);
                self.max[i] = mx;
                for j in (i + 1)..self.m {
                    self.rgs[j] = 0;
                    self.max[j] = mx;
                }
                break;
            }
        }
        Some(result)
    }
}

/// All partitions of `{1..m}`, canonical order, guarded against blowup.
pub fn enumerate_partitions(m: usize) -> PartitionResult<PartitionIter> {
    if m == 0 {
        return Err(PartitionError::BadPartyCount(0));
    }
    if m > ENUMERATION_LIMIT {
        return Err(PartitionError::EnumerationGuard {
            got: m,
            max: ENUMERATION_LIMIT,
        });
    }
    Ok(enumerate_partitions_unchecked(m))
}

/// Unguarded variant of [`enumerate_partitions`] for callers that accept
/// the combinatorial cost.
pub fn enumerate_partitions_unchecked(m: usize) -> PartitionIter {
    PartitionIter {
        m,
        rgs: vec![0; m],
        max: vec![0; m],
        done: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(text: &str) -> Partition {
        Partition::parse(text).unwrap()
    }

    /// Independent Bell-number oracle via the Bell triangle.
    fn bell_number(n: usize) -> u64 {
        let mut row = vec![1u64];
        for _ in 1..n {
            let mut next = vec![*row.last().unwrap()];
            for &x in &row {
                next.push(next.last().unwrap() + x);
            }
            row = next;
        }
        *row.last().unwrap()
    }

    #[test]
    fn construction_and_canonical_order() {
        let p = Partition::new(4, vec![vec![4, 3], vec![2, 1]]).unwrap();
        assert_eq!(p.to_string(), "12|34");
        assert_eq!(p.num_blocks(), 2);

        assert!(Partition::new(4, vec![vec![1, 2], vec![2, 3, 4]]).is_err());
        assert!(Partition::new(4, vec![vec![1, 2]]).is_err());
        assert!(Partition::new(4, vec![vec![1, 2], vec![3, 5]]).is_err());
    }

    #[test]
    fn parse_round_trips() {
        assert_eq!(pt("12|3|45").to_string(), "12|3|45");
        assert_eq!(pt("12|3|45").num_parties(), 5);
        let big = pt("1,10|2,3|4,5|6,7|8,9");
        assert_eq!(big.num_parties(), 10);
        assert_eq!(big.to_string(), "1,10|2,3|4,5|6,7|8,9");
        assert!(Partition::parse("12||3").is_err());
        assert!(Partition::parse("12|33").is_err());
    }

    #[test]
    fn induced_partition_examples() {
        let c = Coalition::new(vec![1, 2, 3]).unwrap();
        assert_eq!(induced_partition(4, &c).unwrap(), pt("123|4"));

        let c = Coalition::new(vec![1, 2]).unwrap();
        assert_eq!(induced_partition(4, &c).unwrap(), pt("12|3|4"));

        let c = Coalition::new(vec![2, 5]).unwrap();
        assert_eq!(induced_partition(6, &c).unwrap(), pt("25|1|3|4|6"));

        let all = Coalition::new(vec![1, 2, 3, 4]).unwrap();
        assert!(induced_partition(4, &all).is_err());
    }

    #[test]
    fn coarsening_examples() {
        assert!(pt("1234").is_coarsening_of(&pt("12|34")).unwrap());
        assert!(!pt("123|456").is_coarsening_of(&pt("12|34|56")).unwrap());
        let p = pt("12|3|4");
        assert!(p.is_coarsening_of(&p).unwrap());
        assert!(pt("123").is_coarsening_of(&pt("12|34")).is_err());
    }

    #[test]
    fn coarsening_is_partial_order_exhaustively_small() {
        for m in 1..=4 {
            let all: Vec<Partition> = enumerate_partitions(m).unwrap().collect();
            for p in &all {
                assert!(p.is_coarsening_of(p).unwrap());
                for q in &all {
                    let pq = p.is_coarsening_of(q).unwrap();
                    let qp = q.is_coarsening_of(p).unwrap();
                    if pq && qp {
                        assert_eq!(p, q);
                    }
                    for r in &all {
                        if pq && q.is_coarsening_of(r).unwrap() {
                            assert!(p.is_coarsening_of(r).unwrap());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pairing_enumeration() {
        let p4 = pairings(4).unwrap();
        assert_eq!(p4, vec![pt("12|34"), pt("13|24"), pt("14|23")]);
        assert_eq!(pairings(2).unwrap().len(), 1);
        assert_eq!(pairings(6).unwrap().len(), 15);
        assert_eq!(pairings(10).unwrap().len(), 945);
        assert!(pairings(5).is_err());

        // brute-force oracle: filter the full enumeration for all-pair blocks
        for m in [2usize, 4, 6] {
            let brute: Vec<Partition> = enumerate_partitions(m)
                .unwrap()
                .filter(|p| p.blocks().iter().all(|b| b.len() == 2))
                .collect();
            let mut listed = pairings(m).unwrap();
            listed.sort();
            let mut brute = brute;
            brute.sort();
            assert_eq!(listed, brute);
        }
    }

    #[test]
    fn odd_canonical_enumeration() {
        let p5 = odd_canonical_partitions(5).unwrap();
        // multinomial count oracle: C(5,3) triples x 1 pairing of the rest
        assert_eq!(p5.len(), 10);
        assert!(p5.contains(&pt("12|345")));
        for p in &p5 {
            let mut sizes: Vec<usize> = p.blocks().iter().map(|b| b.len()).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![2, 3]);
        }

        let p7 = odd_canonical_partitions(7).unwrap();
        // C(7,3) x (3)!! = 35 x 3
        assert_eq!(p7.len(), 105);
        for p in &p7 {
            let mut sizes: Vec<usize> = p.blocks().iter().map(|b| b.len()).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![2, 2, 3]);
        }

        assert!(odd_canonical_partitions(4).is_err());
        assert!(odd_canonical_partitions(3).is_err());
    }

    #[test]
    fn singleton_witness_examples() {
        assert_eq!(singleton_witness(&pt("12|3|4")), Some(3));
        assert_eq!(singleton_witness(&pt("12|34")), None);
        assert_eq!(singleton_witness(&pt("1|2|3|4")), Some(1));
    }

    #[test]
    fn enumeration_counts_match_bell_numbers() {
        assert_eq!(enumerate_partitions(1).unwrap().count(), 1);
        assert_eq!(enumerate_partitions(3).unwrap().count(), 5);
        assert_eq!(enumerate_partitions(4).unwrap().count(), 15);
        for m in 1..=8 {
            let count = enumerate_partitions(m).unwrap().count() as u64;
            assert_eq!(count, bell_number(m), "m={m}");
        }
        assert!(enumerate_partitions(11).is_err());
        assert_eq!(
            enumerate_partitions_unchecked(11).take(3).count(),
            3,
            "unchecked variant bypasses the guard"
        );
    }

    #[test]
    fn enumeration_has_no_repeats() {
        for m in 1..=6 {
            let all: Vec<Partition> = enumerate_partitions(m).unwrap().collect();
            let mut dedup = all.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(all.len(), dedup.len());
        }
    }

    #[test]
    fn induced_partitions_always_have_singletons() {
        // the coalition-security premise: k <= m-1 leaves someone alone
        for m in 3..=8 {
            for mask in 0u32..(1 << m) {
                let members: Vec<usize> =
                    (1..=m).filter(|p| mask & (1 << (p - 1)) != 0).collect();
                let k = members.len();
                if k < 2 || k > m - 1 {
                    continue;
                }
                let coalition = Coalition::new(members).unwrap();
                let induced = induced_partition(m, &coalition).unwrap();
                assert!(singleton_witness(&induced).is_some());
            }
        }
    }

    #[test]
    fn even_block_partitions_coarsen_some_pairing() {
        for m in [2usize, 4, 6, 8] {
            let all_pairings = pairings(m).unwrap();
            for p in enumerate_partitions(m).unwrap() {
                if p.blocks().iter().all(|b| b.len() % 2 == 0) {
                    assert!(
                        all_pairings
                            .iter()
                            .any(|q| p.is_coarsening_of(q).unwrap()),
                        "{p} should coarsen a pairing"
                    );
                }
            }
        }
    }

    #[test]
    fn coarsenings_enumeration() {
        let p = pt("12|34");
        let cs = p.coarsenings();
        assert_eq!(cs.len(), 2);
        assert!(cs.contains(&pt("12|34")));
        assert!(cs.contains(&pt("1234")));

        let singles = Partition::singletons(3);
        assert_eq!(singles.coarsenings().len(), 5);
    }
}
