//! Finite partitions of `{0, .., n-1}` and subset systems.
//!
//! Blocks are always ordered by their least element, so block index `k`
//! is the `k`-th block in that order. Levels are 0-based throughout the
//! API; the text encoding (`"1,3|2|4"`) is 1-based.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Exact rational frequencies are produced up to this ground-set size.
pub const RATIONAL_FREQUENCY_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    block_of: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictMode {
    /// `{B ∩ [m]} \ {∅}`.
    Full,
    /// Like `Full`, then drops every block of size one.
    NonSingleton,
}

impl Partition {
    /// Canonical partition from per-level labels; equal labels share a block.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Self {
        let mut index = std::collections::HashMap::with_capacity(labels.len());
        let mut block_of = Vec::with_capacity(labels.len());
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let k = *index.entry(*l).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            blocks[k].push(i);
            block_of.push(k);
        }
        Self { block_of, blocks }
    }

    fn from_dense_labels(labels: &[usize]) -> Self {
        // labels are small integers; avoids hashing on the hot path
        let mut remap = vec![usize::MAX; labels.iter().copied().max().map_or(0, |m| m + 1)];
        let mut block_of = Vec::with_capacity(labels.len());
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if remap[l] == usize::MAX {
                remap[l] = blocks.len();
                blocks.push(Vec::new());
            }
            let k = remap[l];
            blocks[k].push(i);
            block_of.push(k);
        }
        Self { block_of, blocks }
    }

    /// Validating constructor: blocks must be disjoint, nonempty and cover `0..n`.
    pub fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut labels = vec![usize::MAX; n];
        for (k, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            for &i in b {
                if i >= n {
                    return Err(Error::InvalidPartition(format!("element {} outside ground set of size {n}", i + 1)));
                }
                if labels[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("element {} appears twice", i + 1)));
                }
                labels[i] = k;
            }
        }
        if let Some(i) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidPartition(format!("element {} not covered", i + 1)));
        }
        Ok(Self::from_dense_labels(&labels))
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            block_of: (0..n).collect(),
            blocks: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn one_block(n: usize) -> Self {
        if n == 0 {
            return Self::singletons(0);
        }
        Self {
            block_of: vec![0; n],
            blocks: vec![(0..n).collect()],
        }
    }

    pub fn n(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    /// Index of the block containing level `i`. For the partition of an
    /// event this is the pre-event level of the particle now on level `i`.
    pub fn block_index(&self, i: usize) -> usize {
        self.block_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.block_of
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.block_of[i] == self.block_of[j]
    }

    /// True when every block is a singleton.
    pub fn is_trivial(&self) -> bool {
        self.blocks.len() == self.block_of.len()
    }

    /// Block `i` of the result is the union of the blocks of `outer`
    /// indexed by block `i` of `inner`. Entries of `inner` beyond the
    /// number of blocks of `outer` are ignored.
    pub fn coagulate(outer: &Partition, inner: &Partition) -> Partition {
        assert!(
            inner.n() >= outer.num_blocks(),
            "inner partition must index every block of the outer partition"
        );
        let labels: Vec<usize> = outer.block_of.iter().map(|&j| inner.block_of[j]).collect();
        Self::from_dense_labels(&labels)
    }

    /// `{B ∩ [m] : B ∈ π} \ {∅}`.
    pub fn restrict(&self, m: usize) -> Partition {
        let m = m.min(self.n());
        Self::from_dense_labels(&self.block_of[..m])
    }

    /// Restriction to `[m]` in subset-system form. `NonSingleton` drops
    /// blocks that have size one after restriction.
    pub fn restrict_system(&self, m: usize, mode: RestrictMode) -> SubsetSystem {
        let p = self.restrict(m);
        let blocks = p
            .blocks
            .into_iter()
            .filter(|b| mode == RestrictMode::Full || b.len() > 1)
            .collect();
        SubsetSystem::from_sorted_blocks(p.block_of.len(), blocks)
    }

    /// `{B ∩ [m] : B a block with #B >= 2} \ {∅}`: the subset system an
    /// event partition induces on the first `m` levels.
    pub fn sigma_bar(&self, m: usize) -> SubsetSystem {
        let m = m.min(self.n());
        let blocks = self
            .blocks
            .iter()
            .filter(|b| b.len() >= 2)
            .map(|b| b.iter().copied().filter(|&i| i < m).collect::<Vec<_>>())
            .filter(|b| !b.is_empty())
            .collect();
        SubsetSystem::from_sorted_blocks(m, blocks)
    }

    /// Ultrametric `2^-k`, `k` the least (1-based) level at which the
    /// restrictions differ; 0 when they agree on the whole common ground set.
    pub fn distance(&self, other: &Partition) -> f64 {
        assert_eq!(self.n(), other.n(), "partitions must share the truncation level");
        // canonical labels coincide on a prefix iff the restrictions do
        match self
            .block_of
            .iter()
            .zip(&other.block_of)
            .position(|(a, b)| a != b)
        {
            Some(i) => 2f64.powi(-((i + 1) as i32)),
            None => 0.0,
        }
    }

    pub fn frequencies(&self, separate_dust: bool) -> BlockFrequencies {
        let n = self.n();
        let mut sizes = Vec::new();
        let mut dust = 0usize;
        for b in &self.blocks {
            if separate_dust && b.len() == 1 {
                dust += 1;
            } else {
                sizes.push(b.len());
            }
        }
        BlockFrequencies::from_counts(n, &sizes, dust)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_blocks(f, &self.blocks)
    }
}

fn write_blocks(f: &mut fmt::Formatter<'_>, blocks: &[Vec<usize>]) -> fmt::Result {
    for (k, b) in blocks.iter().enumerate() {
        if k > 0 {
            f.write_str("|")?;
        }
        for (j, i) in b.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", i + 1)?;
        }
    }
    Ok(())
}

fn parse_blocks(s: &str) -> Result<Vec<Vec<usize>>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('|')
        .map(|b| {
            b.split(',')
                .map(|x| {
                    let v: usize = x
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidPartition(format!("bad element {x:?}")))?;
                    if v == 0 {
                        return Err(Error::InvalidPartition("elements are 1-based".into()));
                    }
                    Ok(v - 1)
                })
                .collect()
        })
        .collect()
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let blocks = parse_blocks(s)?;
        let n = blocks.iter().flatten().map(|&i| i + 1).max().unwrap_or(0);
        Partition::from_blocks(n, blocks)
    }
}

/// A system of disjoint nonempty subsets of `{0, .., n-1}`, blocks ordered
/// by least element. Singleton members are meaningful: they mark levels
/// that take part in an event without sharing it with another level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SubsetSystem {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl SubsetSystem {
    pub fn empty(n: usize) -> Self {
        Self { n, blocks: Vec::new() }
    }

    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty subset".into()));
            }
            b.sort_unstable();
            for &i in b.iter() {
                if i >= n || seen[i] {
                    return Err(Error::InvalidPartition(format!(
                        "subset element {} out of range or repeated",
                        i + 1
                    )));
                }
                seen[i] = true;
            }
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { n, blocks })
    }

    /// Blocks must already be sorted internally and by least element.
    pub(crate) fn from_sorted_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Self {
        debug_assert!(blocks.windows(2).all(|w| w[0][0] < w[1][0]));
        Self { n, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// True when some block has at least two elements (the event changes
    /// the level partition).
    pub fn has_merge(&self) -> bool {
        self.blocks.iter().any(|b| b.len() >= 2)
    }

    pub fn involved(&self) -> Vec<bool> {
        let mut v = vec![false; self.n];
        for &i in self.blocks.iter().flatten() {
            v[i] = true;
        }
        v
    }

    /// Equivalence: same blocks of size at least two.
    pub fn equivalent(&self, other: &SubsetSystem) -> bool {
        self.n == other.n
            && self.blocks.iter().filter(|b| b.len() >= 2).eq(other.blocks.iter().filter(|b| b.len() >= 2))
    }

    /// The unique partition of `[n]` equivalent to this system.
    pub fn closure(&self) -> Partition {
        let alpha = self.alpha();
        Partition::from_dense_labels(&alpha)
    }

    /// `alpha[i]`: index of the block of the closure containing level `i`.
    pub fn alpha(&self) -> Vec<usize> {
        let mut alpha = vec![usize::MAX; self.n];
        // non-minimal members of merging blocks take the block of their minimum
        let mut follower = vec![usize::MAX; self.n];
        for b in self.blocks.iter().filter(|b| b.len() >= 2) {
            for &i in &b[1..] {
                follower[i] = b[0];
            }
        }
        let mut next = 0;
        for i in 0..self.n {
            if follower[i] == usize::MAX {
                alpha[i] = next;
                next += 1;
            } else {
                alpha[i] = alpha[follower[i]];
            }
        }
        alpha
    }

    /// `alpha()[i]` without building the whole vector.
    pub fn alpha_of(&self, i: usize) -> usize {
        let mut lead = i;
        for b in self.blocks.iter().filter(|b| b.len() >= 2) {
            if b[1..].contains(&i) {
                lead = b[0];
            }
        }
        let below = self
            .blocks
            .iter()
            .filter(|b| b.len() >= 2)
            .map(|b| b[1..].iter().filter(|&&j| j < lead).count())
            .sum::<usize>();
        lead - below
    }

    /// Number of blocks of the closure.
    pub fn closure_blocks(&self) -> usize {
        self.n - self.blocks.iter().map(|b| b.len().saturating_sub(1)).sum::<usize>()
    }

    /// Least level `j` with `alpha()[j] == a`, if any.
    pub fn first_with_alpha(&self, a: usize) -> Option<usize> {
        if a >= self.closure_blocks() {
            return None;
        }
        // the a-th level (0-based) that is not a non-minimal member of a merging block
        let mut followers: Vec<usize> = self
            .blocks
            .iter()
            .filter(|b| b.len() >= 2)
            .flat_map(|b| b[1..].iter().copied())
            .collect();
        followers.sort_unstable();
        let mut j = a;
        for &f in &followers {
            if f <= j {
                j += 1;
            } else {
                break;
            }
        }
        Some(j)
    }

    /// Restriction `{B ∩ [m]} \ {∅}`, keeping singleton remainders.
    pub fn restrict(&self, m: usize) -> SubsetSystem {
        let m = m.min(self.n);
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.iter().copied().filter(|&i| i < m).collect::<Vec<_>>())
            .filter(|b| !b.is_empty())
            .collect();
        SubsetSystem::from_sorted_blocks(m, blocks)
    }

    pub fn permuted(&self, perm: &[usize]) -> SubsetSystem {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.iter().map(|&i| perm[i]).collect())
            .collect();
        SubsetSystem::new(self.n, blocks).expect("permutation preserves disjointness")
    }

    pub fn union_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

impl fmt::Display for SubsetSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_blocks(f, &self.blocks)
    }
}

/// Parses the text encoding against a known ground-set size.
pub fn parse_subset_system(n: usize, s: &str) -> Result<SubsetSystem> {
    SubsetSystem::new(n, parse_blocks(s)?)
}

/// Every subset system on `[n]`, the empty one first.
pub fn enumerate_subset_systems(n: usize) -> Vec<SubsetSystem> {
    let mut out = Vec::new();
    // label 0 = outside the union; labels 1.. = block ids in order of first use
    let mut labels = vec![0usize; n];
    fn rec(i: usize, used: usize, labels: &mut Vec<usize>, out: &mut Vec<SubsetSystem>) {
        let n = labels.len();
        if i == n {
            let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); used];
            for (j, &l) in labels.iter().enumerate() {
                if l > 0 {
                    blocks[l - 1].push(j);
                }
            }
            out.push(SubsetSystem::from_sorted_blocks(n, blocks));
            return;
        }
        for l in 0..=used + 1 {
            labels[i] = l;
            rec(i + 1, used.max(l), labels, out);
        }
    }
    rec(0, 0, &mut labels, &mut out);
    out
}

/// Every partition of `[n]` in restricted-growth order; the all-singletons
/// partition is last.
pub fn enumerate_partitions(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(i: usize, used: usize, labels: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if i == labels.len() {
            out.push(Partition::from_dense_labels(labels));
            return;
        }
        for l in 0..=used {
            labels[i] = l;
            rec(i + 1, used.max(l + 1), labels, out);
        }
    }
    if n == 0 {
        return vec![Partition::singletons(0)];
    }
    labels[0] = 0;
    rec(1, 1, &mut labels, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactFrequencies {
    pub weights: Vec<Ratio<u64>>,
    pub dust_weight: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFrequencies {
    pub weights: Vec<f64>,
    pub dust_weight: f64,
    /// Present when the ground set has at most [`RATIONAL_FREQUENCY_LIMIT`] elements.
    pub exact: Option<ExactFrequencies>,
}

impl BlockFrequencies {
    pub fn from_counts(n: usize, sizes: &[usize], dust: usize) -> Self {
        if n == 0 {
            return Self {
                weights: Vec::new(),
                dust_weight: 0.0,
                exact: None,
            };
        }
        let nf = n as f64;
        let exact = (n <= RATIONAL_FREQUENCY_LIMIT).then(|| ExactFrequencies {
            weights: sizes.iter().map(|&s| Ratio::new(s as u64, n as u64)).collect(),
            dust_weight: Ratio::new(dust as u64, n as u64),
        });
        Self {
            weights: sizes.iter().map(|&s| s as f64 / nf).collect(),
            dust_weight: dust as f64 / nf,
            exact,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.dust_weight
    }
}

/// Serialized in the 1-based text encoding.
impl serde::Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Partition {
        s.parse().unwrap()
    }

    #[test]
    fn coagulate_examples() {
        assert_eq!(Partition::coagulate(&p("1,3|2|4"), &p("1,2|3")), p("1,2,3|4"));
        let pi = p("1,4|2|3,5");
        assert_eq!(Partition::coagulate(&pi, &Partition::singletons(3)), pi);
        let inner = p("1,3|2|4,5");
        assert_eq!(Partition::coagulate(&Partition::singletons(5), &inner), inner);
    }

    #[test]
    fn restrict_examples() {
        let pi = p("1,4|2,3");
        assert_eq!(pi.restrict(3), p("1|2,3"));
        assert_eq!(pi.restrict_system(3, RestrictMode::NonSingleton).to_string(), "2,3");
        assert_eq!(pi.restrict(4), pi);
        assert_eq!(pi.restrict(0).n(), 0);
        // the event-restriction map keeps remainders of merging blocks
        assert_eq!(pi.sigma_bar(3).to_string(), "1|2,3");
    }

    #[test]
    fn alpha_examples() {
        let s = parse_subset_system(3, "1,2").unwrap();
        assert_eq!(s.alpha()[2], 1);
        let s = SubsetSystem::empty(4);
        assert_eq!(s.alpha(), vec![0, 1, 2, 3]);
        let s = parse_subset_system(4, "1,3").unwrap();
        assert_eq!(s.alpha()[1], 1);
        assert_eq!(s.alpha()[3], 2);
        // singleton members do not move anybody
        let s = parse_subset_system(3, "2").unwrap();
        assert_eq!(s.alpha(), vec![0, 1, 2]);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(p("1,2|3").distance(&p("1,2|3")), 0.0);
        assert_eq!(p("1,2|3").distance(&Partition::singletons(3)), 0.25);
        assert_eq!(p("1|2|3,4").distance(&Partition::singletons(4)), 0.0625);
    }

    #[test]
    fn frequency_examples() {
        let f = Partition::one_block(5).frequencies(false);
        assert_eq!(f.weights, vec![1.0]);
        let f = p("1,2|3|4").frequencies(true);
        assert_eq!(f.weights, vec![0.5]);
        assert_eq!(f.dust_weight, 0.5);
        let f = Partition::singletons(4).frequencies(true);
        assert!(f.weights.is_empty());
        assert_eq!(f.dust_weight, 1.0);
    }

    #[test]
    fn parser_rejects_bad_input() {
        assert!("1,2|2".parse::<Partition>().is_err());
        assert!("1|3".parse::<Partition>().is_err());
        assert!("0|1".parse::<Partition>().is_err());
        assert_eq!(p("3|1,2").to_string(), "1,2|3");
    }

    #[test]
    fn enumeration_counts() {
        // Bell numbers, and Bell(n+1) subset systems
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for n in 1..=5 {
            assert_eq!(enumerate_partitions(n).len(), bell[n]);
            assert_eq!(enumerate_subset_systems(n).len(), bell[n + 1]);
        }
        assert_eq!(enumerate_subset_systems(3).iter().filter(|s| !s.is_empty()).count(), 14);
    }

    // independent oracle: union of outer blocks by explicit set manipulation
    fn coag_oracle(outer: &Partition, inner: &Partition) -> Partition {
        let mut blocks = Vec::new();
        for ib in inner.blocks() {
            let mut b: Vec<usize> = ib
                .iter()
                .filter(|&&j| j < outer.num_blocks())
                .flat_map(|&j| outer.block(j).to_vec())
                .collect();
            b.sort_unstable();
            if !b.is_empty() {
                blocks.push(b);
            }
        }
        Partition::from_blocks(outer.n(), blocks).unwrap()
    }

    fn arb_partition(n: usize) -> impl Strategy<Value = Partition> {
        proptest::collection::vec(0..n, n).prop_map(|l| Partition::from_labels(&l))
    }

    proptest! {
        #[test]
        fn coagulation_matches_oracle_and_is_associative(
            (a, b, c) in (1usize..=6).prop_flat_map(|n| (arb_partition(n), arb_partition(n), arb_partition(n)))
        ) {
            prop_assert_eq!(Partition::coagulate(&a, &b), coag_oracle(&a, &b));
            let left = Partition::coagulate(&Partition::coagulate(&a, &b), &c);
            let right = Partition::coagulate(&a, &Partition::coagulate(&b, &c));
            prop_assert_eq!(left, right);
        }

        #[test]
        fn restriction_commutes_with_coagulation(
            (a, b, m) in (1usize..=6).prop_flat_map(|n| (arb_partition(n), arb_partition(n), 1..=n))
        ) {
            let whole = Partition::coagulate(&a, &b).restrict(m);
            let ra = a.restrict(m);
            // blocks meeting [m] are a prefix of the blocks of `a`
            let rb = b.restrict(ra.num_blocks());
            prop_assert_eq!(whole, Partition::coagulate(&ra, &rb));
        }

        #[test]
        fn alpha_helpers_agree_with_alpha(n in 1usize..=7, pick in any::<u64>()) {
            let all = enumerate_subset_systems(n);
            let s = &all[(pick % all.len() as u64) as usize];
            let alpha = s.alpha();
            prop_assert_eq!(s.closure_blocks(), s.closure().num_blocks());
            for (i, &a) in alpha.iter().enumerate() {
                prop_assert_eq!(s.alpha_of(i), a);
            }
            for a in 0..=n {
                prop_assert_eq!(s.first_with_alpha(a), alpha.iter().position(|&x| x == a));
            }
        }

        #[test]
        fn distance_is_ultrametric(
            (a, b, c) in (1usize..=8).prop_flat_map(|n| (arb_partition(n), arb_partition(n), arb_partition(n)))
        ) {
            prop_assert!(a.distance(&c) <= a.distance(&b).max(b.distance(&c)));
        }

        #[test]
        fn rational_frequencies_sum_to_one(a in (1usize..=40).prop_flat_map(arb_partition), dust in any::<bool>()) {
            let f = a.frequencies(dust);
            let ex = f.exact.unwrap();
            let total = ex.weights.iter().fold(ex.dust_weight, |s, w| s + w);
            prop_assert_eq!(total, Ratio::from_integer(1));
        }
    }
}
