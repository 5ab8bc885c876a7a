//! Finite (marked) metric measure spaces and distances between them.
//!
//! The Prohorov distance between two measures on one finite space is exact:
//! `f(ε)`, the least mass a coupling must put on pairs further apart than
//! `ε`, is a step function with steps at the pairwise distances, so the
//! infimum of `{ε : f(ε) ≤ ε}` is `min_k max(d_k, f(d_k))`.
//!
//! The Gromov–Prohorov and Gromov–Hausdorff–Prohorov distances are found
//! the same way on small spaces. For a threshold `ε`, the pairs `(x, x′)`
//! that may be related (marks within `ε`) form the vertices of a graph in
//! which two pairs are adjacent when their distances differ by at most
//! `2ε`; admissible relations are its cliques, and the best relation is a
//! maximal clique carrying the most coupled mass.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::max_coupled_mass;
use crate::matrix::DistMatrix;

/// Largest space size handled by the exact GP/GHP search.
pub const EXACT_MAX_POINTS: usize = 6;

const WEIGHT_TOL: f64 = 1e-12;
const TRIANGLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMMSpace {
    dist: DistMatrix,
    weights: Vec<f64>,
    marks: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceJson {
    dist: Vec<Vec<f64>>,
    w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marks: Option<Vec<f64>>,
}

impl FiniteMMSpace {
    pub fn new(dist: DistMatrix, weights: Vec<f64>, marks: Option<Vec<f64>>) -> Result<Self> {
        let m = dist.n();
        if weights.len() != m {
            return Err(Error::InvalidInput(format!("{} weights for {m} points", weights.len())));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidInput("weights must be a probability vector".into()));
        }
        if let Some(u) = &marks {
            if u.len() != m || u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput("marks must be m nonnegative reals".into()));
            }
        }
        if !dist.is_semimetric(TRIANGLE_TOL) {
            return Err(Error::InvalidMatrix("triangle inequality violated".into()));
        }
        Ok(Self { dist, weights, marks })
    }

    pub fn uniform(dist: DistMatrix) -> Result<Self> {
        let m = dist.n();
        Self::new(dist, vec![1.0 / m as f64; m], None)
    }

    pub fn point() -> Self {
        Self { dist: DistMatrix::zeros(1), weights: vec![1.0], marks: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: SpaceJson = serde_json::from_str(text)?;
        Self::new(DistMatrix::from_rows(j.dist)?, j.w, j.marks)
    }

    pub fn to_json(&self) -> String {
        let m = self.size();
        let j = SpaceJson {
            dist: (0..m).map(|i| self.dist.row(i).to_vec()).collect(),
            w: self.weights.clone(),
            marks: self.marks.clone(),
        };
        serde_json::to_string(&j).expect("space serializes")
    }

    pub fn size(&self) -> usize {
        self.dist.n()
    }

    pub fn dist(&self) -> &DistMatrix {
        &self.dist
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist.get(i, j)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn marks(&self) -> Option<&[f64]> {
        self.marks.as_deref()
    }

    fn mark(&self, i: usize) -> f64 {
        self.marks.as_ref().map_or(0.0, |u| u[i])
    }

    /// The space restricted to points of positive weight.
    pub fn support(&self) -> FiniteMMSpace {
        let keep: Vec<usize> = (0..self.size()).filter(|&i| self.weights[i] > 0.0).collect();
        FiniteMMSpace {
            dist: self.dist.submatrix(&keep),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
            marks: self.marks.as_ref().map(|u| keep.iter().map(|&i| u[i]).collect()),
        }
    }

    pub fn diameter(&self) -> f64 {
        self.dist.max_entry()
    }

    pub fn without_marks(&self) -> FiniteMMSpace {
        FiniteMMSpace { marks: None, ..self.clone() }
    }
}

/// A relation between the points of two spaces.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    /// Every point of both spaces appears in some pair.
    pub fn full_cover(&self, m: usize, m2: usize) -> bool {
        (0..m).all(|i| self.pairs.iter().any(|p| p.0 == i)) && (0..m2).all(|j| self.pairs.iter().any(|p| p.1 == j))
    }
}

/// `dis R = max |d_A(x, y) − d_B(x′, y′)|` over pairs of related pairs; zero
/// for the empty relation.
pub fn distortion(rel: &Correspondence, a: &FiniteMMSpace, b: &FiniteMMSpace) -> f64 {
    let mut worst: f64 = 0.0;
    for &(x, x2) in &rel.pairs {
        for &(y, y2) in &rel.pairs {
            worst = worst.max((a.d(x, y) - b.d(x2, y2)).abs());
        }
    }
    worst
}

/// `min_k max(s_k, g(s_k))` for increasing `s_k` and nonincreasing `g`.
fn min_max_threshold(steps: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    // first index where the step value reaches the deficiency
    let (mut lo, mut hi) = (0usize, steps.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if steps[mid] >= g(steps[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best = f64::INFINITY;
    if lo < steps.len() {
        best = steps[lo];
    }
    if lo > 0 {
        best = best.min(g(steps[lo - 1]));
    }
    best
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Exact Prohorov distance between `p` and `q` on the points of `dist`.
pub fn prohorov_distance(dist: &DistMatrix, p: &[f64], q: &[f64]) -> f64 {
    let m = dist.n();
    assert!(p.len() == m && q.len() == m, "weight vectors must match the space");
    let mut steps = vec![0.0];
    for i in 0..m {
        for j in 0..m {
            steps.push(dist.get(i, j));
        }
    }
    let steps = sorted_unique(steps);
    min_max_threshold(&steps, |eps| (1.0 - max_coupled_mass(p, q, |i, j| dist.get(i, j) <= eps)).max(0.0))
}

/// A distance that is either exact or bracketed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceValue {
    Exact(f64),
    Bounds { lower: f64, upper: f64 },
}

impl DistanceValue {
    pub fn exact(self) -> Option<f64> {
        match self {
            DistanceValue::Exact(v) => Some(v),
            DistanceValue::Bounds { .. } => None,
        }
    }

    pub fn lower(self) -> f64 {
        match self {
            DistanceValue::Exact(v) => v,
            DistanceValue::Bounds { lower, .. } => lower,
        }
    }

    pub fn upper(self) -> f64 {
        match self {
            DistanceValue::Exact(v) => v,
            DistanceValue::Bounds { upper, .. } => upper,
        }
    }
}

struct PairGraph {
    pairs: Vec<(usize, usize)>,
    adj: Vec<u64>,
}

fn pair_graph(a: &FiniteMMSpace, b: &FiniteMMSpace, eps: f64, marked: bool) -> PairGraph {
    let mut pairs = Vec::new();
    for x in 0..a.size() {
        for y in 0..b.size() {
            if !marked || (a.mark(x) - b.mark(y)).abs() <= eps {
                pairs.push((x, y));
            }
        }
    }
    let mut adj = vec![0u64; pairs.len()];
    for (k, &(x, x2)) in pairs.iter().enumerate() {
        for (l, &(y, y2)) in pairs.iter().enumerate() {
            if k != l && (a.d(x, y) - b.d(x2, y2)).abs() <= 2.0 * eps {
                adj[k] |= 1 << l;
            }
        }
    }
    PairGraph { pairs, adj }
}

/// Bron–Kerbosch with pivoting over bitsets.
fn maximal_cliques(adj: &[u64], visit: &mut impl FnMut(u64)) {
    fn rec(adj: &[u64], r: u64, mut p: u64, mut x: u64, visit: &mut impl FnMut(u64)) {
        if p == 0 {
            if x == 0 {
                visit(r);
            }
            return;
        }
        let pivot = (p | x).trailing_zeros() as usize;
        let mut cand = p & !adj[pivot];
        while cand != 0 {
            let v = cand.trailing_zeros() as usize;
            cand &= cand - 1;
            rec(adj, r | (1 << v), p & adj[v], x & adj[v], visit);
            p &= !(1 << v);
            x |= 1 << v;
        }
    }
    let all = if adj.len() == 64 { u64::MAX } else { (1u64 << adj.len()) - 1 };
    rec(adj, 0, all, 0, visit);
}

/// `1 − max F(R)` over admissible relations at threshold `eps`.
fn relation_deficiency(a: &FiniteMMSpace, b: &FiniteMMSpace, eps: f64, marked: bool, cover: bool) -> f64 {
    let g = pair_graph(a, b, eps, marked);
    if g.pairs.is_empty() {
        return f64::INFINITY;
    }
    let (ma, mb) = (a.size(), b.size());
    let mut best = f64::NEG_INFINITY;
    maximal_cliques(&g.adj, &mut |clique| {
        let mut allowed = vec![false; ma * mb];
        let (mut seen_a, mut seen_b) = (0u64, 0u64);
        let mut c = clique;
        while c != 0 {
            let k = c.trailing_zeros() as usize;
            c &= c - 1;
            let (x, y) = g.pairs[k];
            allowed[x * mb + y] = true;
            seen_a |= 1 << x;
            seen_b |= 1 << y;
        }
        if cover && (seen_a.count_ones() as usize != ma || seen_b.count_ones() as usize != mb) {
            return;
        }
        let f = max_coupled_mass(a.weights(), b.weights(), |x, y| allowed[x * mb + y]);
        best = best.max(f);
    });
    if best == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        (1.0 - best).max(0.0)
    }
}

fn thresholds(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool) -> Vec<f64> {
    let mut steps = vec![0.0];
    let (ma, mb) = (a.size(), b.size());
    for x in 0..ma {
        for y in 0..ma {
            for x2 in 0..mb {
                for y2 in 0..mb {
                    steps.push(0.5 * (a.d(x, y) - b.d(x2, y2)).abs());
                }
            }
        }
    }
    if marked {
        for x in 0..ma {
            for y in 0..mb {
                steps.push((a.mark(x) - b.mark(y)).abs());
            }
        }
    }
    sorted_unique(steps)
}

fn exact_search(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool, cover: bool) -> f64 {
    let steps = thresholds(a, b, marked);
    min_max_threshold(&steps, |eps| relation_deficiency(a, b, eps, marked, cover))
}

fn check_marks(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool) -> Result<()> {
    if marked && (a.marks().is_none() || b.marks().is_none()) {
        return Err(Error::InvalidInput("marked comparison needs marks on both spaces".into()));
    }
    Ok(())
}

/// Gromov–Prohorov distance (with the mark band when `marked`): exact for
/// spaces of at most [`EXACT_MAX_POINTS`] points, bounds otherwise.
pub fn gromov_prohorov_small(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool) -> Result<DistanceValue> {
    check_marks(a, b, marked)?;
    if a.size() <= EXACT_MAX_POINTS && b.size() <= EXACT_MAX_POINTS {
        return Ok(DistanceValue::Exact(exact_search(a, b, marked, false)));
    }
    let lower = gp_lower_bound(a, b, marked);
    let upper = relation_upper_bound(a, b, marked, false);
    Ok(DistanceValue::Bounds { lower, upper: upper.max(lower) })
}

/// Gromov–Hausdorff–Prohorov distance over full correspondences.
pub fn ghp_small(a: &FiniteMMSpace, b: &FiniteMMSpace) -> Result<DistanceValue> {
    if a.size() <= EXACT_MAX_POINTS && b.size() <= EXACT_MAX_POINTS {
        return Ok(DistanceValue::Exact(exact_search(a, b, false, true)));
    }
    let lower = gp_lower_bound(a, b, false).max(0.5 * (a.diameter() - b.diameter()).abs());
    let upper = relation_upper_bound(a, b, false, true);
    Ok(DistanceValue::Bounds { lower, upper: upper.max(lower) })
}

/// Pair-distance laws are within Prohorov distance `2ε` and mark laws within
/// `ε` whenever the GP distance is below `ε`; the Lévy distance bounds the
/// Prohorov distance on the line from below.
fn gp_lower_bound(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool) -> f64 {
    let hist = |s: &FiniteMMSpace| {
        let m = s.size();
        let mut h = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                h.push((s.d(i, j), s.weights()[i] * s.weights()[j]));
            }
        }
        h
    };
    let mut lb = 0.5 * levy_distance(&hist(a), &hist(b));
    if marked {
        let marks = |s: &FiniteMMSpace| (0..s.size()).map(|i| (s.mark(i), s.weights()[i])).collect::<Vec<_>>();
        lb = lb.max(levy_distance(&marks(a), &marks(b)));
    }
    lb
}

struct Cdf {
    points: Vec<f64>,
    cum: Vec<f64>,
}

impl Cdf {
    fn new(atoms: &[(f64, f64)]) -> Self {
        let mut v = atoms.to_vec();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut cum = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        for &(_, w) in &v {
            acc += w;
            cum.push(acc);
        }
        Self { points: v.into_iter().map(|x| x.0).collect(), cum }
    }

    fn at(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&p| p <= x);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }
}

/// A lower bound for the Lévy distance between two discrete laws on the line
/// (returned from the infeasible side of a bisection).
fn levy_distance(p: &[(f64, f64)], q: &[(f64, f64)]) -> f64 {
    let (f, g) = (Cdf::new(p), Cdf::new(q));
    let one_sided = |f: &Cdf, g: &Cdf, eps: f64| {
        // sup_x g(x) − f(x + ε) over the breakpoints of both step functions
        g.points.iter().copied().chain(f.points.iter().map(|&x| x - eps)).all(|x| g.at(x) - f.at(x + eps) <= eps)
    };
    let feasible = |eps: f64| one_sided(&f, &g, eps) && one_sided(&g, &f, eps);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if feasible(0.0) {
        return 0.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Value of the best relation found greedily over a sample of thresholds,
/// always including the full product relation.
fn relation_upper_bound(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool, cover: bool) -> f64 {
    let (ma, mb) = (a.size(), b.size());
    let mut all_pairs = Vec::with_capacity(ma * mb);
    for x in 0..ma {
        for y in 0..mb {
            all_pairs.push((x, y));
        }
    }
    let evaluate = |rel: &[(usize, usize)]| {
        let c = Correspondence::new(rel.to_vec());
        let mut eps = 0.5 * distortion(&c, a, b);
        if marked {
            eps = rel.iter().fold(eps, |e, &(x, y)| e.max((a.mark(x) - b.mark(y)).abs()));
        }
        let mut allowed = vec![false; ma * mb];
        for &(x, y) in rel {
            allowed[x * mb + y] = true;
        }
        let f = max_coupled_mass(a.weights(), b.weights(), |x, y| allowed[x * mb + y]);
        eps.max(1.0 - f)
    };
    let mut best = evaluate(&all_pairs);
    if ma * mb > 2500 {
        return best;
    }
    let mut order = all_pairs.clone();
    order.sort_by(|p, q| {
        let wp = a.weights()[p.0].min(b.weights()[p.1]);
        let wq = a.weights()[q.0].min(b.weights()[q.1]);
        wq.total_cmp(&wp)
    });
    let mut candidates: Vec<f64> = all_pairs
        .iter()
        .flat_map(|&(x, x2)| all_pairs.iter().map(move |&(y, y2)| (x, x2, y, y2)))
        .step_by(97)
        .map(|(x, x2, y, y2)| 0.5 * (a.d(x, y) - b.d(x2, y2)).abs())
        .collect();
    candidates.push(0.0);
    for eps in sorted_unique(candidates) {
        let mut rel: Vec<(usize, usize)> = Vec::new();
        for &(x, x2) in &order {
            if marked && (a.mark(x) - b.mark(x2)).abs() > eps {
                continue;
            }
            if rel.iter().all(|&(y, y2)| (a.d(x, y) - b.d(x2, y2)).abs() <= 2.0 * eps) {
                rel.push((x, x2));
            }
        }
        if !rel.is_empty() && (!cover || Correspondence::new(rel.clone()).full_cover(ma, mb)) {
            best = best.min(evaluate(&rel));
        }
    }
    best
}

/// `k` iid draws from the weights; their distance matrix and marks.
pub fn sample_distance_matrix<R: Rng + ?Sized>(
    space: &FiniteMMSpace,
    k: usize,
    rng: &mut R,
) -> (DistMatrix, Option<Vec<f64>>) {
    let pick = WeightedIndex::new(space.weights()).expect("probability weights");
    let idx: Vec<usize> = (0..k).map(|_| pick.sample(rng)).collect();
    let marks = space.marks().map(|u| idx.iter().map(|&i| u[i]).collect());
    (space.dist().submatrix(&idx), marks)
}

/// Distance matrix of `k` distinct indices drawn uniformly from a matrix.
pub fn sample_distinct_submatrix<R: Rng + ?Sized>(
    rho: &DistMatrix,
    marks: Option<&[f64]>,
    k: usize,
    rng: &mut R,
) -> (DistMatrix, Option<Vec<f64>>) {
    let idx = index::sample(rng, rho.n(), k).into_vec();
    (rho.submatrix(&idx), marks.map(|u| idx.iter().map(|&i| u[i]).collect()))
}

/// `υ`: uniform weights on the rows of `rho`, identifying points at
/// distance zero with equal marks.
pub fn finite_space_from_matrix(rho: &DistMatrix, marks: Option<&[f64]>) -> Result<FiniteMMSpace> {
    let k = rho.n();
    if k == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if !rho.is_semimetric(TRIANGLE_TOL) {
        return Err(Error::InvalidMatrix("triangle inequality violated".into()));
    }
    if let Some(u) = marks {
        if u.len() != k {
            return Err(Error::InvalidInput("mark vector has the wrong length".into()));
        }
    }
    let mut rep: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..k {
        let same = rep.iter().position(|&r| rho.get(r, i) == 0.0 && marks.is_none_or(|u| u[r] == u[i]));
        match same {
            Some(c) => weights[c] += 1.0 / k as f64,
            None => {
                rep.push(i);
                weights.push(1.0 / k as f64);
            }
        }
    }
    FiniteMMSpace::new(rho.submatrix(&rep), weights, marks.map(|u| rep.iter().map(|&r| u[r]).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub ultrametric: bool,
    /// `max(r(x,z) − max(r(x,y), r(y,z)))`, clamped at zero.
    pub ultrametric_violation: f64,
    pub four_point: bool,
    /// Worst excess in the four-point condition, clamped at zero.
    pub four_point_violation: f64,
}

pub fn tree_checks(rho: &DistMatrix) -> TreeReport {
    let n = rho.n();
    let d = |i: usize, j: usize| rho.get(i, j);
    let mut uv: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                uv = uv.max(d(x, z) - d(x, y).max(d(y, z)));
            }
        }
    }
    let mut fv: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                for w in 0..n {
                    fv = fv.max(d(x, y) + d(z, w) - (d(x, z) + d(y, w)).max(d(x, w) + d(y, z)));
                }
            }
        }
    }
    TreeReport { ultrametric: uv <= 0.0, ultrametric_violation: uv, four_point: fv <= 0.0, four_point_violation: fv }
}
