//! The Ξ-coalescent run backwards in time: block-counting paths, trees of
//! a sample in equilibrium, external branches, and Newick export.
//!
//! From a state with `b` blocks, the blocks play the role of the first `b`
//! levels: an event visible at truncation `b` merges the blocks grouped by
//! its subset system. Trees are sampled by running the chain to the most
//! recent common ancestor, which has the law of the two-sided lookdown
//! genealogy at any fixed time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSampler, SamplerMode};
use crate::matrix::DistMatrix;
use crate::partition::{Partition, SubsetSystem};
use crate::rng::SeedSpec;
use crate::xi::{DustClass, Scope, XiMeasure};
use rand_distr::{Distribution, Exp};

/// Upper bound on events simulated for one tree before giving up.
pub const MAX_TREE_EVENTS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CoalescentPath {
    pub n: usize,
    /// Jump times, increasing; `states[k]` holds from `times[k]` on.
    pub times: Vec<f64>,
    /// `states[0]` is the all-singletons partition at time 0.
    pub states: Vec<Partition>,
}

impl CoalescentPath {
    /// State at time `t ≥ 0`.
    pub fn state_at(&self, t: f64) -> &Partition {
        let k = self.times.partition_point(|&s| s <= t);
        &self.states[k.saturating_sub(1)]
    }

    pub fn mrca_time(&self) -> Option<f64> {
        (self.states.last()?.num_blocks() == 1).then(|| *self.times.last().expect("times track states"))
    }
}

fn merge_blocks(state: &Partition, sigma: &SubsetSystem) -> Partition {
    let inner = sigma.closure();
    Partition::coagulate(state, &inner)
}

/// Runs the block-counting chain from `n` singletons until `horizon` or the
/// most recent common ancestor, whichever comes first.
pub fn simulate(xi: &XiMeasure, n: usize, horizon: Option<f64>, seed: SeedSpec) -> Result<CoalescentPath> {
    if n < 2 {
        return Err(Error::InvalidInput("a coalescent needs at least two leaves".into()));
    }
    let mut rng = seed.rng();
    let mut path = CoalescentPath { n, times: vec![0.0], states: vec![Partition::singletons(n)] };
    let mut t = 0.0;
    loop {
        let state = path.states.last().expect("nonempty path");
        let b = state.num_blocks();
        if b == 1 {
            break;
        }
        let sampler = EventSampler::new(xi, b, Scope::ChangesGamma, SamplerMode::Thinning)?;
        if sampler.rate() == 0.0 {
            break;
        }
        t += Exp::new(sampler.rate()).expect("positive rate").sample(&mut rng);
        if horizon.is_some_and(|h| t > h) {
            break;
        }
        let (sigma, _) = sampler.sample(&mut rng);
        let next = merge_blocks(state, &sigma);
        path.times.push(t);
        path.states.push(next);
    }
    Ok(path)
}

/// Genealogy of `n` leaves sampled in equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescentTree {
    pub n: usize,
    /// `ρ_ij`: twice the time back to the common ancestor.
    pub rho: DistMatrix,
    /// External branch lengths.
    pub u: Vec<f64>,
    /// `r_ij = ρ_ij − u_i − u_j` off the diagonal.
    pub r: DistMatrix,
    /// Raw common-ancestor times `T_ij` and first-involvement times, kept so
    /// that branch points can be compared exactly.
    merge_time: DistMatrix,
    involvement: Vec<f64>,
}

impl CoalescentTree {
    /// Builds a tree from the raw times. `merge_time` must be ultrametric
    /// and `involvement[i] ≤ merge_time[i][j]`.
    pub fn from_times(merge_time: DistMatrix, involvement: Vec<f64>) -> Self {
        let n = merge_time.n();
        let rho = DistMatrix::from_fn(n, |i, j| 2.0 * merge_time.get(i, j));
        let r = DistMatrix::from_fn(n, |i, j| {
            let t = merge_time.get(i, j);
            (t - involvement[i]) + (t - involvement[j])
        });
        Self { n, rho, u: involvement.clone(), r, merge_time, involvement }
    }

    pub fn merge_time(&self, i: usize, j: usize) -> f64 {
        self.merge_time.get(i, j)
    }

    pub fn height(&self) -> f64 {
        self.merge_time.max_entry()
    }
}

/// The scope that decides when a lineage counts as involved in an event:
/// any participation when events are finite per lineage, merges otherwise.
pub fn involvement_scope(xi: &XiMeasure) -> Scope {
    match xi.classify_dust() {
        DustClass::Dust => Scope::TouchesLevel,
        DustClass::NoDust => Scope::ChangesGamma,
    }
}

/// Samples the equilibrium genealogy of `n` leaves.
pub fn equilibrium_tree(xi: &XiMeasure, n: usize, seed: SeedSpec) -> Result<CoalescentTree> {
    if n == 0 {
        return Err(Error::InvalidInput("a tree needs at least one leaf".into()));
    }
    if xi.total_mass() <= 0.0 {
        return Err(Error::NoMrca(n));
    }
    let scope = involvement_scope(xi);
    let mut rng = seed.rng();
    let mut blocks: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merge = DistMatrix::zeros(n);
    let mut involvement = vec![f64::NAN; n];
    let mut t = 0.0;
    let mut events = 0usize;
    let mut sampler_cache: Option<(usize, EventSampler<'_>)> = None;
    while blocks.len() > 1 {
        events += 1;
        if events > MAX_TREE_EVENTS {
            return Err(Error::NoMrca(n));
        }
        let b = blocks.len();
        if sampler_cache.as_ref().is_none_or(|(cb, _)| *cb != b) {
            sampler_cache = Some((b, EventSampler::new(xi, b, scope, SamplerMode::Thinning)?));
        }
        let sampler = &sampler_cache.as_ref().expect("sampler cached").1;
        if sampler.rate() == 0.0 {
            return Err(Error::NoMrca(n));
        }
        t += Exp::new(sampler.rate()).expect("positive rate").sample(&mut rng);
        let (sigma, _) = sampler.sample(&mut rng);
        for group in sigma.blocks() {
            for &k in group {
                for &leaf in &blocks[k] {
                    if involvement[leaf].is_nan() {
                        involvement[leaf] = t;
                    }
                }
            }
            for (x, &ka) in group.iter().enumerate() {
                for &kb in &group[x + 1..] {
                    for &i in &blocks[ka] {
                        for &j in &blocks[kb] {
                            merge.set(i, j, t);
                        }
                    }
                }
            }
        }
        if sigma.has_merge() {
            let mut next: Vec<Vec<usize>> = Vec::with_capacity(sigma.closure_blocks());
            let alpha = sigma.alpha();
            for (k, block) in blocks.into_iter().enumerate() {
                if alpha[k] == next.len() {
                    next.push(block);
                } else {
                    next[alpha[k]].extend(block);
                }
            }
            blocks = next;
        }
    }
    if n == 1 {
        involvement[0] = 0.0;
    }
    Ok(CoalescentTree::from_times(merge, involvement))
}

/// External-branch summary of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalBranches {
    /// Sorted external branch lengths.
    pub sorted_u: Vec<f64>,
    pub mean_u: f64,
    /// Leaves related when their external branches end at a common branch
    /// point (`r_ij = 0`).
    pub branchpoints: Partition,
}

pub fn external_branches(tree: &CoalescentTree) -> ExternalBranches {
    let n = tree.n;
    let mut labels: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if labels[i] != i {
            continue;
        }
        for j in (i + 1)..n {
            let t = tree.merge_time.get(i, j);
            if tree.involvement[i] == t && tree.involvement[j] == t {
                labels[j] = i;
            }
        }
    }
    let mut sorted_u = tree.u.clone();
    sorted_u.sort_by(f64::total_cmp);
    let mean_u = sorted_u.iter().sum::<f64>() / n as f64;
    ExternalBranches { sorted_u, mean_u, branchpoints: Partition::from_labels(&labels) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub n: usize,
    pub t: f64,
    pub mean_blocks: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Empirical `p`-quantile (nearest rank on the sorted sample).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// Block counts on a time grid for each sample size.
pub fn block_count_profile(
    xi: &XiMeasure,
    sizes: &[usize],
    grid: &[f64],
    replicates: usize,
    seed: SeedSpec,
) -> Result<Vec<ProfileRow>> {
    let horizon = grid.iter().copied().fold(0.0, f64::max);
    let mut rows = Vec::new();
    for &n in sizes {
        let paths: Vec<CoalescentPath> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| simulate(xi, n, Some(horizon), seed.derive(n as u64).replicate("coalescent", r)))
            .collect::<Result<_>>()?;
        for &t in grid {
            let mut counts: Vec<f64> = paths.iter().map(|p| p.state_at(t).num_blocks() as f64).collect();
            counts.sort_by(f64::total_cmp);
            rows.push(ProfileRow {
                n,
                t,
                mean_blocks: counts.iter().sum::<f64>() / counts.len() as f64,
                q05: quantile(&counts, 0.05),
                q95: quantile(&counts, 0.95),
            });
        }
    }
    Ok(rows)
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("n,t,mean_blocks,q05,q95\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.n, r.t, r.mean_blocks, r.q05, r.q95));
    }
    s
}

/// Outcome of the coming-down-from-infinity probe at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdiProbe {
    pub t: f64,
    pub means: Vec<(usize, f64)>,
    /// Relative growth of the mean block count between the two largest sizes.
    pub last_growth: f64,
    /// Heuristic verdict: growth below `tolerance`.
    pub stabilized: bool,
}

pub fn cdi_probe(rows: &[ProfileRow], t: f64, tolerance: f64) -> Option<CdiProbe> {
    let mut means: Vec<(usize, f64)> = rows.iter().filter(|r| r.t == t).map(|r| (r.n, r.mean_blocks)).collect();
    means.sort_by_key(|m| m.0);
    if means.len() < 2 {
        return None;
    }
    let (a, b) = (means[means.len() - 2].1, means[means.len() - 1].1);
    let last_growth = (b - a) / a;
    Some(CdiProbe { t, means, last_growth, stabilized: last_growth < tolerance })
}

/// Newick text with 1-based leaf labels and branch lengths.
pub fn to_newick(rho: &DistMatrix) -> Result<String> {
    if !rho.is_ultrametric() {
        return Err(Error::InvalidMatrix("Newick export needs an ultrametric matrix".into()));
    }
    fn clade(rho: &DistMatrix, leaves: &[usize], parent_height: f64, out: &mut String) {
        let height = if leaves.len() == 1 {
            0.0
        } else {
            leaves.iter().flat_map(|&i| leaves.iter().map(move |&j| rho.get(i, j))).fold(0.0, f64::max) / 2.0
        };
        if leaves.len() == 1 {
            out.push_str(&(leaves[0] + 1).to_string());
        } else {
            out.push('(');
            let mut rest: Vec<usize> = leaves.to_vec();
            let mut first = true;
            while let Some(&lead) = rest.first() {
                // children: classes of the relation "closer than the node height"
                let (child, others): (Vec<usize>, Vec<usize>) =
                    rest.iter().partition(|&&j| j == lead || (height > 0.0 && rho.get(lead, j) < 2.0 * height));
                if !first {
                    out.push(',');
                }
                first = false;
                clade(rho, &child, height, out);
                rest = others;
            }
            out.push(')');
        }
        if parent_height.is_finite() {
            out.push_str(&format!(":{}", parent_height - height));
        }
    }
    let mut out = String::new();
    let leaves: Vec<usize> = (0..rho.n()).collect();
    clade(rho, &leaves, f64::INFINITY, &mut out);
    out.push(';');
    Ok(out)
}

/// Leaf-to-leaf path lengths of a Newick tree whose leaves are labelled
/// `1..=n`.
pub fn parse_newick(text: &str) -> Result<DistMatrix> {
    struct Node {
        parent: Option<usize>,
        depth: f64,
    }
    let bad = |msg: &str| Error::InvalidInput(format!("newick: {msg}"));
    let s = text.trim().strip_suffix(';').ok_or_else(|| bad("missing ';'"))?;
    let bytes = s.as_bytes();
    let mut nodes = vec![Node { parent: None, depth: 0.0 }];
    let mut leaf_nodes: Vec<(usize, usize)> = Vec::new();
    let mut stack = vec![0usize];
    let mut current = 0usize;
    let mut pos = 0;
    let read_token = |pos: &mut usize| {
        let start = *pos;
        while *pos < bytes.len() && !matches!(bytes[*pos], b'(' | b')' | b',' | b':') {
            *pos += 1;
        }
        s[start..*pos].trim().to_string()
    };
    let mut lengths: Vec<f64> = vec![0.0];
    let mut first = true;
    while pos < bytes.len() {
        match bytes[pos] {
            b'(' => {
                let parent = if first { 0 } else { *stack.last().ok_or_else(|| bad("unbalanced"))? };
                let id = if first {
                    0
                } else {
                    nodes.push(Node { parent: Some(parent), depth: 0.0 });
                    lengths.push(0.0);
                    nodes.len() - 1
                };
                first = false;
                stack.push(id);
                current = id;
                pos += 1;
            }
            b',' => pos += 1,
            b')' => {
                current = stack.pop().ok_or_else(|| bad("unbalanced"))?;
                pos += 1;
                // an internal node label, if any, is ignored
                let _ = read_token(&mut pos);
            }
            b':' => {
                pos += 1;
                let tok = read_token(&mut pos);
                lengths[current] = tok.parse().map_err(|_| bad("bad branch length"))?;
            }
            _ => {
                let tok = read_token(&mut pos);
                let label: usize = tok.parse().map_err(|_| bad("leaf labels must be integers"))?;
                let parent = *stack.last().ok_or_else(|| bad("leaf outside parentheses"))?;
                nodes.push(Node { parent: Some(parent), depth: 0.0 });
                lengths.push(0.0);
                current = nodes.len() - 1;
                leaf_nodes.push((label, current));
            }
        }
    }
    if stack.len() != 1 {
        return Err(bad("unbalanced parentheses"));
    }
    // children always come after their parent
    for k in 1..nodes.len() {
        let p = nodes[k].parent.expect("non-root has a parent");
        nodes[k].depth = nodes[p].depth + lengths[k];
    }
    let n = leaf_nodes.len();
    let mut leaf_of = vec![usize::MAX; n];
    for &(label, node) in &leaf_nodes {
        if label == 0 || label > n || leaf_of[label - 1] != usize::MAX {
            return Err(bad("leaf labels must be 1..=n without repeats"));
        }
        leaf_of[label - 1] = node;
    }
    let ancestors = |mut v: usize| {
        let mut a = vec![v];
        while let Some(p) = nodes[v].parent {
            a.push(p);
            v = p;
        }
        a
    };
    Ok(DistMatrix::from_fn(n, |i, j| {
        let ai = ancestors(leaf_of[i]);
        let aj = ancestors(leaf_of[j]);
        let lca = *ai.iter().find(|v| aj.contains(v)).expect("common root");
        nodes[leaf_of[i]].depth + nodes[leaf_of[j]].depth - 2.0 * nodes[lca].depth
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::tree_checks;

    #[test]
    fn kingman_pair_mrca_mean() {
        let reps = 20_000;
        let mean: f64 = (0..reps)
            .map(|r| simulate(&XiMeasure::kingman(1.0), 2, None, SeedSpec::with_stream(1, r)).unwrap().mrca_time().unwrap())
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 1.0).abs() < 4.0 / (reps as f64).sqrt(), "{mean}");
    }

    #[test]
    fn kingman_merges_pairs() {
        let p = simulate(&XiMeasure::kingman(1.0), 10, None, SeedSpec::new(2)).unwrap();
        assert_eq!(p.states.len(), 10);
        for w in p.states.windows(2) {
            assert_eq!(w[0].num_blocks(), w[1].num_blocks() + 1);
        }
    }

    #[test]
    fn star_single_jump() {
        let p = simulate(&XiMeasure::star(), 7, None, SeedSpec::new(3)).unwrap();
        assert_eq!(p.states.len(), 2);
        assert_eq!(p.states[1], Partition::one_block(7));
        let t = p.mrca_time().unwrap();
        assert_eq!(p.state_at(t * 0.99).num_blocks(), 7);
        assert_eq!(p.state_at(t).num_blocks(), 1);
    }

    #[test]
    fn star_tree() {
        let tree = equilibrium_tree(&XiMeasure::star(), 5, SeedSpec::new(4)).unwrap();
        assert!(tree.u.iter().all(|&u| u == tree.u[0]));
        assert!((0..5).all(|i| (0..5).all(|j| tree.r.get(i, j) == 0.0)));
        let ext = external_branches(&tree);
        assert_eq!(ext.branchpoints, Partition::one_block(5));
    }

    #[test]
    fn kingman_tree_properties() {
        for seed in 0..20 {
            let tree = equilibrium_tree(&XiMeasure::kingman(1.0), 8, SeedSpec::new(seed)).unwrap();
            assert!(tree_checks(&tree.rho).ultrametric);
            for i in 0..8 {
                let min = (0..8).filter(|&j| j != i).map(|j| tree.rho.get(i, j)).fold(f64::INFINITY, f64::min);
                assert!(tree.u[i] <= 0.5 * min);
                assert!(tree.u[i] > 0.0);
            }
        }
        let two = equilibrium_tree(&XiMeasure::kingman(1.0), 2, SeedSpec::new(5)).unwrap();
        assert_eq!(two.u[0], two.rho.get(0, 1) / 2.0);
        assert_eq!(two.u[1], two.u[0]);
    }

    #[test]
    fn dust_tree_branchpoints_are_exact() {
        let xi = XiMeasure::lambda_dirac(0.5, 1.0).unwrap();
        for seed in 0..20 {
            let tree = equilibrium_tree(&xi, 10, SeedSpec::new(seed)).unwrap();
            let ext = external_branches(&tree);
            for i in 0..10 {
                for j in (i + 1)..10 {
                    assert_eq!(ext.branchpoints.same_block(i, j), tree.r.get(i, j) == 0.0);
                }
            }
        }
    }

    #[test]
    fn newick_examples() {
        let two = DistMatrix::from_fn(2, |_, _| 2.0);
        assert_eq!(to_newick(&two).unwrap(), "(1:1,2:1);");
        let star = DistMatrix::from_fn(3, |_, _| 2.5);
        assert_eq!(to_newick(&star).unwrap(), "(1:1.25,2:1.25,3:1.25);");
        let bad = DistMatrix::from_fn(3, |i, j| (i + j) as f64);
        assert!(to_newick(&bad).is_err());
    }

    #[test]
    fn newick_round_trip() {
        for seed in 0..30 {
            let tree = equilibrium_tree(&XiMeasure::kingman(1.0), 9, SeedSpec::new(seed)).unwrap();
            let back = parse_newick(&to_newick(&tree.rho).unwrap()).unwrap();
            assert!(back.max_abs_diff(&tree.rho) < 1e-9);
        }
        let xi = XiMeasure::single_atom(1.0, vec![0.4, 0.3]).unwrap();
        let tree = equilibrium_tree(&xi, 12, SeedSpec::new(1)).unwrap();
        let back = parse_newick(&to_newick(&tree.rho).unwrap()).unwrap();
        assert!(back.max_abs_diff(&tree.rho) < 1e-9);
    }

    #[test]
    fn profiles() {
        let rows = block_count_profile(&XiMeasure::star(), &[6], &[0.0, 50.0], 20, SeedSpec::new(1)).unwrap();
        assert_eq!(rows[0].mean_blocks, 6.0);
        assert_eq!(rows[1].mean_blocks, 1.0);
        assert!(profile_csv(&rows).starts_with("n,t,mean_blocks,q05,q95\n"));
    }

    #[test]
    fn zero_measure_has_no_mrca() {
        assert!(matches!(equilibrium_tree(&XiMeasure::zero(), 3, SeedSpec::new(1)), Err(Error::NoMrca(3))));
    }
}
