//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Each one is written from the defining formula and
//! shares no code with the library algorithms it checks.

#![allow(dead_code)]

use ldtree_core::{DistMatrix, FiniteMMSpace, SubsetSystem};
use rand::Rng;

/// Block index map of the partition generated by a subset system: members
/// of a block with at least two elements share the index of the block's
/// least element; indices are assigned in order of first appearance.
pub fn alpha(sigma: &SubsetSystem) -> Vec<usize> {
    let n = sigma.n();
    let mut leader: Vec<usize> = (0..n).collect();
    for b in sigma.blocks() {
        if b.len() >= 2 {
            let m = *b.iter().min().unwrap();
            for &i in b {
                leader[i] = m;
            }
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if leader[i] == i {
            index[i] = next;
            next += 1;
        }
    }
    (0..n).map(|i| index[leader[i]]).collect()
}

/// `ρ′_ij = ρ_{α(i)α(j)}` off the shared blocks, zero on them.
pub fn iota1(rho: &DistMatrix, alpha: &[usize]) -> DistMatrix {
    let n = rho.n();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if alpha[i] != alpha[j] {
                rows[i][j] = rho.get(alpha[i], alpha[j]);
            }
        }
    }
    DistMatrix::from_rows(rows).unwrap()
}

/// The marked update written out coordinate by coordinate.
pub fn iota2(r: &DistMatrix, u: &[f64], sigma: &SubsetSystem) -> (DistMatrix, Vec<f64>) {
    let n = r.n();
    let a = alpha(sigma);
    let inside: Vec<bool> = (0..n).map(|i| sigma.blocks().iter().any(|b| b.contains(&i))).collect();
    let u2: Vec<f64> = (0..n).map(|i| if inside[i] { 0.0 } else { u[a[i]] }).collect();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if a[i] != a[j] {
                let ui = if inside[i] { u[a[i]] } else { 0.0 };
                let uj = if inside[j] { u[a[j]] } else { 0.0 };
                rows[i][j] = ui + r.get(a[i], a[j]) + uj;
                rows[j][i] = rows[i][j];
            }
        }
    }
    (DistMatrix::from_rows(rows).unwrap(), u2)
}

pub fn compose(r: &DistMatrix, u: &[f64]) -> DistMatrix {
    let n = r.n();
    let (lo, hi) = (|i: usize, j: usize| i.min(j), |i: usize, j: usize| i.max(j));
    let rows = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { u[lo(i, j)] + r.get(i, j) + u[hi(i, j)] }).collect())
        .collect();
    DistMatrix::from_rows(rows).unwrap()
}

/// Canonical labels of a partition given by any labelling: each element
/// gets the position of its class's least element.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    (0..labels.len()).map(|i| (0..labels.len()).find(|&j| labels[j] == labels[i]).unwrap()).collect()
}

/// `Coag(outer, inner)`: elements related iff the (ordered) outer blocks
/// containing them are related by `inner`.
pub fn coag(outer: &[usize], inner: &[usize]) -> Vec<usize> {
    let outer = canonical(outer);
    let mut mins: Vec<usize> = outer.clone();
    mins.sort_unstable();
    mins.dedup();
    let block_of = |i: usize| mins.iter().position(|&m| m == outer[i]).unwrap();
    canonical(&(0..outer.len()).map(|i| inner[block_of(i)]).collect::<Vec<_>>())
}

/// Prohorov distance from Strassen's characterization: the least `ε` with
/// `p(A) ≤ q(A^ε) + ε` for every subset `A`, with closed neighbourhoods.
pub fn prohorov(d: &DistMatrix, p: &[f64], q: &[f64]) -> f64 {
    let n = d.n();
    let deficiency = |eps: f64| -> f64 {
        let mut worst: f64 = 0.0;
        for mask in 1u32..(1 << n) {
            let pa: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| p[i]).sum();
            let qn: f64 = (0..n)
                .filter(|&j| (0..n).any(|i| mask >> i & 1 == 1 && d.get(i, j) <= eps))
                .map(|j| q[j])
                .sum();
            worst = worst.max(pa - qn);
        }
        worst
    };
    let mut thresholds = vec![0.0];
    for i in 0..n {
        for j in 0..n {
            thresholds.push(d.get(i, j));
        }
    }
    thresholds.iter().map(|&e| e.max(deficiency(e))).fold(f64::INFINITY, f64::min)
}

/// Largest mass of a coupling of `p` and `q` supported on `rel`, by Hall's
/// theorem: `1 − max_A (p(A) − q(rel(A)))`.
fn coupled_mass(p: &[f64], q: &[f64], rel: &[(usize, usize)]) -> f64 {
    let m = p.len();
    let mut worst: f64 = 0.0;
    for mask in 1u32..(1 << m) {
        let pa: f64 = (0..m).filter(|&i| mask >> i & 1 == 1).map(|i| p[i]).sum();
        let mut hit = vec![false; q.len()];
        for &(i, j) in rel {
            if mask >> i & 1 == 1 {
                hit[j] = true;
            }
        }
        let qa: f64 = (0..q.len()).filter(|&j| hit[j]).map(|j| q[j]).sum();
        worst = worst.max(pa - qa);
    }
    1.0 - worst
}

/// Gromov–Prohorov (`covering = false`) or Gromov–Hausdorff–Prohorov
/// (`covering = true`) distance by enumerating every relation between the
/// two point sets: `min_R max(½ dis R, mark gap of R, 1 − F(R))`.
pub fn relation_distance(a: &FiniteMMSpace, b: &FiniteMMSpace, marked: bool, covering: bool) -> f64 {
    let (m, k) = (a.size(), b.size());
    assert!(m * k <= 16, "oracle limited to 16 candidate pairs");
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << pairs.len()) {
        let rel: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(e, _)| mask >> e & 1 == 1).map(|(_, &p)| p).collect();
        if covering && !((0..m).all(|i| rel.iter().any(|r| r.0 == i)) && (0..k).all(|j| rel.iter().any(|r| r.1 == j)))
        {
            continue;
        }
        let mut dis: f64 = 0.0;
        for &(x, y) in &rel {
            for &(x2, y2) in &rel {
                dis = dis.max((a.d(x, x2) - b.d(y, y2)).abs());
            }
        }
        let mut gap: f64 = 0.0;
        if marked {
            let (ua, ub) = (a.marks().unwrap(), b.marks().unwrap());
            for &(x, y) in &rel {
                gap = gap.max((ua[x] - ub[y]).abs());
            }
        }
        let deficit = 1.0 - coupled_mass(a.weights(), b.weights(), &rel);
        best = best.min((0.5 * dis).max(gap).max(deficit));
    }
    best
}

/// Points on a coarse grid (so distances tie) or in general position.
pub fn random_metric<R: Rng>(rng: &mut R, n: usize) -> DistMatrix {
    let coarse = rng.random_bool(0.5);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            if coarse {
                (rng.random_range(0..3) as f64, rng.random_range(0..3) as f64)
            } else {
                (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))
            }
        })
        .collect();
    // grid points use the L1 metric, free points the Euclidean one
    let dist = |a: (f64, f64), b: (f64, f64)| {
        if coarse {
            (a.0 - b.0).abs() + (a.1 - b.1).abs()
        } else {
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        }
    };
    let rows = (0..n).map(|i| (0..n).map(|j| dist(pts[i], pts[j])).collect()).collect();
    DistMatrix::from_rows(rows).unwrap()
}

pub fn random_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    w
}

pub fn random_space<R: Rng>(rng: &mut R, n: usize, marked: bool) -> FiniteMMSpace {
    let d = random_metric(rng, n);
    let w = random_weights(rng, n);
    let marks = marked.then(|| (0..n).map(|_| rng.random_range(0.0..1.5)).collect());
    FiniteMMSpace::new(d, w, marks).unwrap()
}

/// `m′ = c − (2 + c)m`, `m(0) = 1`, integrated by classical Runge–Kutta.
pub fn pair_law_ode(c: f64, t: f64) -> f64 {
    let f = |m: f64| c - (2.0 + c) * m;
    let steps = 20_000;
    let h = t / steps as f64;
    let mut m = 1.0;
    for _ in 0..steps {
        let k1 = f(m);
        let k2 = f(m + 0.5 * h * k1);
        let k3 = f(m + 0.5 * h * k2);
        let k4 = f(m + h * k3);
        m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    m
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let step = |s: &[f64], x: f64| s.partition_point(|&v| v <= x) as f64 / s.len() as f64;
    pooled.iter().map(|&x| (step(&sa, x) - step(&sb, x)).abs()).fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}
