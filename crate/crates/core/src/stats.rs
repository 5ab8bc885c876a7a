//! Small statistical toolkit for the verification harness: means with
//! standard errors, the two-sample Kolmogorov–Smirnov test, an
//! energy-distance permutation test, and Gauss–Legendre quadrature.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, count: 0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSe { mean, se: 0.0, count: 1 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe { mean, se: (var / n as f64).sqrt(), count: n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSample {
    pub statistic: f64,
    pub p_value: f64,
}

/// Tail of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (including the usual small-sample correction of the scaling).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TwoSample {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    TwoSample { statistic: d, p_value: kolmogorov_tail(lambda) }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Energy-distance two-sample test on vectors with a permutation p-value.
pub fn energy_test<R: Rng + ?Sized>(a: &[Vec<f64>], b: &[Vec<f64>], permutations: usize, rng: &mut R) -> TwoSample {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let total = pooled.len();
    let mut dist = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let d = euclid(pooled[i], pooled[j]);
            dist[i * total + j] = d;
            dist[j * total + i] = d;
        }
    }
    let stat = |labels: &[bool]| {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for i in 0..total {
            for j in 0..total {
                let d = dist[i * total + j];
                match (labels[i], labels[j]) {
                    (true, true) => xx += d,
                    (false, false) => yy += d,
                    _ => xy += d,
                }
            }
        }
        let (n, m) = (a.len() as f64, b.len() as f64);
        // xy counts each cross pair twice
        xy / (n * m) - xx / (n * n) - yy / (m * m)
    };
    let mut labels: Vec<bool> = (0..total).map(|i| i < a.len()).collect();
    let observed = stat(&labels);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(rng);
        if stat(&labels) >= observed {
            exceed += 1;
        }
    }
    TwoSample { statistic: observed, p_value: (exceed + 1) as f64 / (permutations + 1) as f64 }
}

/// Nodes and weights of the `k`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(k);
    for i in 0..k {
        // Newton iteration from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

/// `∫_a^b f` by a Gauss–Legendre rule.
pub fn integrate(rule: &[(f64, f64)], a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}
