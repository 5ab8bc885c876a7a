//! Named verification suites: exact algebraic identities of the event maps
//! and Monte-Carlo checks of known laws, each producing [`TestReport`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coalescent::equilibrium_tree;
use crate::error::{Error, Result};
use crate::events::generate;
use crate::lookdown::{apply_pi, detect_jumps, evolve_marked_with, evolve_plain_with, default_tracked, MarkedState, PlainState};
use crate::matrix::DistMatrix;
use crate::mmspace::FiniteMMSpace;
use crate::partition::{Partition, SubsetSystem};
use crate::rng::SeedSpec;
use crate::stats::{ks_two_sample, mean_se};
use crate::verify::{
    ancestor_maps, dual_estimates, exchangeability_report, forward_estimates, frequency_uniformity_test,
    martingale_residual, replicate, resampling_test, Check, Coord, Factor, InitialLaw, Piece, ProcessState,
    TestFunction, TestReport,
};
use crate::xi::{Component, DustClass, LambdaFamily, Scope, XiMeasure};

pub const SUITES: &[&str] = &["algebra", "kingman-law", "martingale", "duality", "exchangeability", "equilibrium", "all"];

/// Reports of one suite run, stamped with the library version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub version: String,
    pub suite: String,
    pub seed: SeedSpec,
    pub reports: Vec<TestReport>,
    pub pass: bool,
}

pub fn run_suite(name: &str, seed: SeedSpec) -> Result<SuiteReport> {
    let reports = match name {
        "algebra" => algebra(seed)?,
        "kingman-law" => kingman_law_suite(seed)?,
        "martingale" => martingale_suite(seed)?,
        "duality" => duality_suite(seed)?,
        "exchangeability" => exchangeability_suite(seed)?,
        "equilibrium" => vec![equilibrium_report(10.0, 10_000, seed)?],
        "all" => {
            let mut all = Vec::new();
            for s in SUITES.iter().filter(|&&s| s != "all") {
                all.extend(run_suite(s, seed)?.reports);
            }
            all
        }
        other => return Err(Error::InvalidInput(format!("unknown suite '{other}'"))),
    };
    let pass = reports.iter().all(|r| r.pass);
    Ok(SuiteReport { version: env!("CARGO_PKG_VERSION").to_string(), suite: name.to_string(), seed, reports, pass })
}

/// A random subset system on `[n]`: each level joins one of a few blocks
/// or stays outside.
pub fn random_subset_system<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SubsetSystem {
    let k = rng.random_range(1..=n.max(1));
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        let l = rng.random_range(0..=k);
        if l > 0 {
            blocks[l - 1].push(i);
        }
    }
    SubsetSystem::new(n, blocks.into_iter().filter(|b| !b.is_empty()).collect()).expect("disjoint blocks")
}

/// Largest relative error of `compose∘ι₂(σ) = ι₁(π̄(σ))∘compose` over random
/// marked states and subset systems on up to `max_n` levels.
pub fn commutation_error(trials: usize, max_n: usize, seed: SeedSpec) -> f64 {
    let mut rng = seed.derive(11).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(1..=max_n);
        let r = DistMatrix::from_fn(n, |_, _| rng.random_range(0.0..3.0));
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let state = MarkedState::new(&r, &u, rng.random_range(0.0..5.0)).expect("valid marks");
        let sigma = random_subset_system(n, &mut rng);
        let mut after = state.clone();
        after.apply_sigma(&sigma);
        let lhs = after.compose();
        let rhs = apply_pi(&state.compose(), &sigma.closure());
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (lhs.get(i, j), rhs.get(i, j));
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    worst = worst.max((a - b).abs() / scale);
                }
            }
        }
    }
    worst
}

/// Number of random triples `r < s < t` on which the flow partitions of a
/// simulated path fail `Π_{r,t} = Coag(Π_{s,t}, Π_{r,s})`.
pub fn cocycle_failures(xi: &XiMeasure, n: usize, horizon: f64, trials: usize, seed: SeedSpec) -> Result<usize> {
    let stream = generate(xi, n, (0.0, horizon), Scope::ChangesGamma, seed.derive(1))?;
    let mut rng = seed.derive(2).rng();
    let part = |a: f64, b: f64| Partition::from_labels(&ancestor_maps(&stream, n, a, &[b])[0]);
    let mut failures = 0;
    for _ in 0..trials {
        let mut v = [0.0; 3].map(|_: f64| rng.random_range(0.0..horizon));
        v.sort_by(f64::total_cmp);
        let [r, s, t] = v;
        if part(r, t) != Partition::coagulate(&part(s, t), &part(r, s)) {
            failures += 1;
        }
    }
    Ok(failures)
}

/// Largest `|compose(R_t) − ρ_t|` over the event times of coupled marked and
/// plain evolutions from the zero state.
pub fn marked_plain_discrepancy(xi: &XiMeasure, n: usize, horizon: f64, seed: SeedSpec) -> Result<f64> {
    let stream = generate(xi, n, (0.0, horizon), Scope::TouchesLevel, seed)?;
    let mut marked_path = Vec::new();
    let mut marked = MarkedState::zero(n, 0.0);
    evolve_marked_with(&mut marked, &stream, horizon, |s, _| marked_path.push(s.compose()))?;
    marked_path.push(marked.compose());
    let mut plain_path = Vec::new();
    let mut plain = PlainState::zero(n, 0.0);
    evolve_plain_with(&mut plain, &stream, horizon, |s, _| plain_path.push(s.matrix()))?;
    plain_path.push(plain.matrix());
    Ok(marked_path.iter().zip(&plain_path).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max))
}

/// The dust classification of the reference measures, paired with the
/// expected class.
pub fn dust_table() -> Result<Vec<(String, DustClass, DustClass)>> {
    let mut rows = vec![
        ("kingman".to_string(), XiMeasure::kingman(1.0).classify_dust(), DustClass::NoDust),
        ("dirac(1)".to_string(), XiMeasure::star().classify_dust(), DustClass::Dust),
        ("uniform".to_string(), XiMeasure::family(LambdaFamily::Uniform {})?.classify_dust(), DustClass::NoDust),
    ];
    for (a, b) in [(0.5, 1.5), (1.0, 1.0), (1.5, 0.5), (2.0, 2.0), (0.9, 3.0), (1.1, 0.2)] {
        let got = XiMeasure::family(LambdaFamily::Beta([a, b]))?.classify_dust();
        rows.push((format!("beta({a},{b})"), got, if a > 1.0 { DustClass::Dust } else { DustClass::NoDust }));
    }
    Ok(rows)
}

/// Whether the jump logs of `runs` paths satisfy `Θ_f ⊆ Θ`, `Θ_f ⊆ Θ′` and
/// contain no Kingman event in `Θ`.
pub fn jump_logs_consistent(xi: &XiMeasure, n: usize, horizon: f64, runs: usize, seed: SeedSpec) -> Result<bool> {
    let ok = replicate(seed, "jumps", runs, |s| {
        let stream = generate(xi, n, (0.0, horizon), Scope::ChangesGamma, s)?;
        let log = detect_jumps(&stream, default_tracked(n));
        let kingman_clean = stream
            .events
            .iter()
            .filter(|e| e.origin == Component::Kingman)
            .all(|e| !log.theta.contains(&e.time));
        Ok(log.inclusions_hold() && kingman_clean)
    })?;
    Ok(ok.into_iter().all(|b| b))
}

/// For each replicate: whether `u_i ≤ ½ min_{j≠i} ρ_ij` held at every grid
/// time and level, and the fraction of `(t, i)` where it was strict.
pub fn external_branch_check(
    xi: &XiMeasure,
    n: usize,
    grid: &[f64],
    replicates: usize,
    seed: SeedSpec,
) -> Result<Vec<(bool, f64)>> {
    let horizon = grid.iter().copied().fold(0.0, f64::max);
    replicate(seed, "external-branches", replicates, |s| {
        let stream = generate(xi, n, (0.0, horizon), Scope::TouchesLevel, s)?;
        let mut state = MarkedState::zero(n, 0.0);
        let (mut holds, mut strict, mut total) = (true, 0usize, 0usize);
        for &t in grid {
            let mut at_t = state.clone();
            evolve_marked_with(&mut at_t, &stream, t, |_, _| {})?;
            let anchors = at_t.anchors();
            for i in 0..n {
                let ui = at_t.u(i);
                let mut sibling = false;
                for j in (0..n).filter(|&j| j != i) {
                    // ½ρ_ij − u_i = ½(r_ij + u_j − u_i)
                    let slack = at_t.r(i, j) + at_t.u(j) - ui;
                    if slack < -1e-9 * (1.0 + ui) {
                        holds = false;
                    }
                    if at_t.r(i, j) == 0.0 && anchors[j] == anchors[i] {
                        sibling = true;
                    }
                }
                total += 1;
                if !sibling {
                    strict += 1;
                }
            }
            state = at_t;
        }
        Ok((holds, strict as f64 / total.max(1) as f64))
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

pub fn algebra(seed: SeedSpec) -> Result<Vec<TestReport>> {
    let mut reports = Vec::new();
    let err = commutation_error(1000, 10, seed);
    reports.push(TestReport::new("commutation", seed, 1000, vec![Check::at_most("max relative error", err, 1e-12)]));

    let mut checks = Vec::new();
    for (label, xi) in [("kingman", XiMeasure::kingman(1.0)), ("star", XiMeasure::star())] {
        let f = cocycle_failures(&xi, 50, 1.0, 1000, seed.derive(fnv(label)))?;
        checks.push(Check::at_most(format!("{label} cocycle failures"), f as f64, 0.0));
    }
    reports.push(TestReport::new("cocycle", seed, 1000, checks));

    let xi = XiMeasure::lambda_dirac(0.5, 1.0)?;
    let d = marked_plain_discrepancy(&xi, 20, 10.0, seed.derive(3))?;
    reports.push(TestReport::new("marked-plain-consistency", seed, 1, vec![Check::at_most("max abs error", d, 1e-9)]));

    let table = dust_table()?;
    let checks = table
        .iter()
        .map(|(name, got, want)| Check::holds(name.clone(), got == want, format!("classified as {want:?}")))
        .collect();
    reports.push(TestReport::new("dust-classification", seed, 0, checks));

    let mut checks = Vec::new();
    let models = [
        ("star", XiMeasure::star()),
        ("atom(1/2,1/4)", XiMeasure::single_atom(1.0, vec![0.5, 0.25])?),
        ("kingman+star", XiMeasure::star().with_kingman(1.0)?),
    ];
    for (label, xi) in models {
        let ok = jump_logs_consistent(&xi, 10, 10.0, 100, seed.derive(fnv(label)))?;
        checks.push(Check::holds(format!("{label} jump logs"), ok, "Θ_f ⊆ Θ, Θ_f ⊆ Θ′ proxy, no Kingman event in Θ"));
    }
    reports.push(TestReport::new("jump-classification", seed, 100, checks));
    Ok(reports)
}

fn fnv(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

/// `E[e^{−ρ₁₂(t)}]` for the pair under Kingman with merge rate `c` from
/// `ρ = 0`: `c/(2+c) + (2/(2+c))·e^{−(2+c)t}`.
pub fn kingman_pair_mean(c: f64, t: f64) -> f64 {
    c / (2.0 + c) + 2.0 / (2.0 + c) * (-(2.0 + c) * t).exp()
}

fn pair_decay() -> TestFunction {
    TestFunction::single(2, Coord::Entry(0, 1), Piece::Decay { rate: 1.0 }).expect("valid test function")
}

/// Monte-Carlo `E[e^{−ρ₁₂(t)}]` under Kingman with rate `c`, against the
/// unit-rate closed form.
pub fn kingman_law_report(c: f64, times: &[f64], replicates: usize, seed: SeedSpec) -> Result<TestReport> {
    let init = ProcessState::Plain(PlainState::zero(2, 0.0));
    let est = forward_estimates(&XiMeasure::kingman(c), &init, &pair_decay(), times, replicates, seed)?;
    let checks = times
        .iter()
        .zip(&est)
        .map(|(&t, m)| Check::within_se(format!("E[exp(-rho)] at t={t}"), m.mean, kingman_pair_mean(1.0, t), m.se, 3.0))
        .collect();
    Ok(TestReport::new(format!("kingman-pair-law(rate={c})"), seed, replicates, checks))
}

/// Fraction of independent runs in which the closed-form check rejects the
/// wrongly scaled rate `c`.
pub fn negative_control_power(c: f64, times: &[f64], replicates: usize, runs: usize, seed: SeedSpec) -> Result<f64> {
    let mut rejected = 0;
    for r in 0..runs {
        if !kingman_law_report(c, times, replicates, seed.replicate("negative-control", r as u64))?.pass {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / runs as f64)
}

/// Number of pair-merging events of the two-level process on `(0, horizon]`
/// for each of `runs` seeds.
pub fn pair_event_counts(xi: &XiMeasure, horizon: f64, runs: usize, seed: SeedSpec) -> Result<Vec<usize>> {
    replicate(seed, "pair-events", runs, |s| Ok(generate(xi, 2, (0.0, horizon), Scope::ChangesGamma, s)?.len()))
}

fn kingman_law_suite(seed: SeedSpec) -> Result<Vec<TestReport>> {
    let times = [0.1, 0.5, 1.0, 2.0];
    let mut reports = vec![kingman_law_report(1.0, &times, 10_000, seed.derive(1))?];
    let power = negative_control_power(1.1, &times, 10_000, 20, seed.derive(2))?;
    reports.push(TestReport::new(
        "negative-control(rate=1.1)",
        seed,
        10_000,
        vec![Check::at_least("rejection frequency over 20 runs", power, 0.9)],
    ));
    let mut checks = Vec::new();
    for (label, xi, mass) in [
        ("kingman", XiMeasure::kingman(1.0), 1.0),
        ("kingman(0.5)+atom(1)", XiMeasure::single_atom(1.0, vec![0.6, 0.3])?.with_kingman(0.5)?, 1.5),
    ] {
        let counts = pair_event_counts(&xi, 100.0, 100, seed.derive(fnv(label)))?;
        let mean: f64 = 100.0 * mass;
        let band = 3.0 * mean.sqrt();
        let inside = counts.iter().filter(|&&k| (k as f64 - mean).abs() <= band).count() as f64 / counts.len() as f64;
        checks.push(Check::at_least(format!("{label}: runs with count in mean ± 3 sd"), inside, 0.95));
    }
    reports.push(TestReport::new("pair-event-rate", seed, 100, checks));
    Ok(reports)
}

fn bump(center: f64, radius: f64) -> Piece {
    Piece::Bump { center, radius }
}

fn martingale_suite(seed: SeedSpec) -> Result<Vec<TestReport>> {
    let mut reports = Vec::new();
    let kingman = XiMeasure::kingman(1.0);
    let plain = ProcessState::Plain(PlainState::zero(3, 0.0));
    let plain_fns = [
        TestFunction::single(3, Coord::Entry(0, 1), bump(1.0, 1.0))?,
        TestFunction::new(
            3,
            1.0,
            vec![
                Factor { coord: Coord::Entry(0, 2), piece: bump(1.2, 1.0) },
                Factor { coord: Coord::Entry(1, 2), piece: bump(0.8, 1.2) },
            ],
        )?,
    ];
    for (k, phi) in plain_fns.iter().enumerate() {
        let mut r = martingale_residual(&kingman, &plain, phi, 1.0, 10_000, seed.derive(10 + k as u64))?;
        r.name = format!("martingale-residual kingman n=3 bump {}", k + 1);
        reports.push(r);
    }
    let dirac = XiMeasure::lambda_dirac(0.5, 1.0)?;
    let marked = ProcessState::Marked(MarkedState::zero(3, 0.0));
    let marked_fns = [
        TestFunction::single(3, Coord::Mark(0), bump(0.5, 0.6))?,
        TestFunction::new(
            3,
            1.0,
            vec![
                Factor { coord: Coord::Mark(1), piece: bump(0.4, 0.7) },
                Factor { coord: Coord::Entry(0, 1), piece: bump(0.5, 1.0) },
            ],
        )?,
    ];
    for (k, phi) in marked_fns.iter().enumerate() {
        let mut r = martingale_residual(&dirac, &marked, phi, 1.0, 10_000, seed.derive(20 + k as u64))?;
        r.name = format!("martingale-residual dirac(1/2) n=3 bump {}", k + 1);
        reports.push(r);
    }
    Ok(reports)
}

fn duality_suite(seed: SeedSpec) -> Result<Vec<TestReport>> {
    let two_point = FiniteMMSpace::new(
        DistMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]])?,
        vec![0.5, 0.5],
        Some(vec![0.2, 0.5]),
    )?;
    let cases = [
        (
            "kingman n=2",
            XiMeasure::kingman(1.0),
            InitialLaw::Sampled { space: two_point.without_marks(), n: 2, marked: false },
            TestFunction::single(2, Coord::Entry(0, 1), bump(1.0, 1.0))?,
        ),
        (
            "star n=2 (marked)",
            XiMeasure::star(),
            InitialLaw::Sampled { space: two_point, n: 2, marked: true },
            TestFunction::new(
                2,
                1.0,
                vec![
                    Factor { coord: Coord::Mark(0), piece: Piece::Decay { rate: 1.0 } },
                    Factor { coord: Coord::Entry(0, 1), piece: bump(0.5, 1.0) },
                ],
            )?,
        ),
    ];
    let mut checks = Vec::new();
    for (label, xi, init, phi) in &cases {
        for t in [0.5, 1.0] {
            let p = dual_estimates(xi, init, phi, t, 10_000, seed.derive(fnv(label)).derive(t.to_bits()))?;
            let se = (p.forward.se.powi(2) + p.dual.se.powi(2)).sqrt();
            checks.push(Check::within_se(format!("{label} forward vs dual at t={t}"), p.forward.mean, p.dual.mean, se, 3.0));
        }
    }
    Ok(vec![TestReport::new("dual-consistency", seed, 10_000, checks)])
}

fn exchangeability_suite(seed: SeedSpec) -> Result<Vec<TestReport>> {
    let kingman = XiMeasure::kingman(1.0);
    Ok(vec![
        exchangeability_report(&kingman, 4, 0, 1.0, 4000, seed.derive(1))?,
        exchangeability_report(&kingman, 5, 1, 1.0, 4000, seed.derive(2))?,
        resampling_test(&kingman, 6, 3, 1.0, 300, seed.derive(3))?,
        frequency_uniformity_test(
            &kingman,
            &[50, 100, 200],
            400,
            0,
            0.0,
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            20,
            seed.derive(4),
        )?,
    ])
}

/// `ρ₁₂` at time `t` of the two-level lookdown from the zero matrix.
pub fn lookdown_pair_samples(xi: &XiMeasure, t: f64, replicates: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    replicate(seed, "lookdown-pair", replicates, |s| {
        let stream = generate(xi, 2, (0.0, t), Scope::ChangesGamma, s)?;
        let mut st = PlainState::zero(2, 0.0);
        evolve_plain_with(&mut st, &stream, t, |_, _| {})?;
        Ok(st.rho(0, 1))
    })
}

/// `ρ₁₂` of independent equilibrium trees.
pub fn equilibrium_pair_samples(xi: &XiMeasure, replicates: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    replicate(seed, "equilibrium-pair", replicates, |s| Ok(equilibrium_tree(xi, 2, s)?.rho.get(0, 1)))
}

pub fn equilibrium_report(t: f64, replicates: usize, seed: SeedSpec) -> Result<TestReport> {
    let xi = XiMeasure::kingman(1.0);
    let a = lookdown_pair_samples(&xi, t, replicates, seed.derive(1))?;
    let b = equilibrium_pair_samples(&xi, replicates, seed.derive(2))?;
    let ks = ks_two_sample(&a, &b);
    let m = mean_se(&a);
    let checks = vec![
        Check {
            name: format!("KS lookdown rho12 at t={t} vs equilibrium"),
            estimate: ks.p_value,
            reference: 0.01,
            se: ks.statistic,
            rule: "KS two-sample p-value >= 0.01".into(),
            pass: ks.p_value >= 0.01,
        },
        Check::within_se("mean lookdown rho12", m.mean, 2.0, m.se, 3.0),
    ];
    Ok(TestReport::new("equilibrium", seed, replicates, checks))
}

/// Median over replicates of the strict-inequality fraction, per size, and
/// whether the inequality held everywhere.
pub fn external_branch_ladder(sizes: &[usize], grid: &[f64], replicates: usize, seed: SeedSpec) -> Result<(bool, Vec<f64>)> {
    let xi = XiMeasure::lambda_dirac(0.5, 1.0)?;
    let mut all = true;
    let mut medians = Vec::new();
    for &n in sizes {
        let rows = external_branch_check(&xi, n, grid, replicates, seed.derive(n as u64))?;
        all &= rows.iter().all(|r| r.0);
        medians.push(median(rows.iter().map(|r| r.1).collect()));
    }
    Ok((all, medians))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kingman_pair_mean_solves_its_ode() {
        for c in [1.0, 1.1] {
            let h = 1e-6;
            for t in [0.1, 0.7, 2.0] {
                let d = (kingman_pair_mean(c, t + h) - kingman_pair_mean(c, t - h)) / (2.0 * h);
                assert!((d - (c - (2.0 + c) * kingman_pair_mean(c, t))).abs() < 1e-7);
            }
            assert!((kingman_pair_mean(c, 0.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn algebra_suite_passes() {
        let r = run_suite("algebra", SeedSpec::new(1)).unwrap();
        assert!(r.pass, "{:#?}", r.reports.iter().filter(|r| !r.pass).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("nope", SeedSpec::new(1)).is_err());
    }

    #[test]
    fn external_branch_inequality_small() {
        let (holds, medians) = external_branch_ladder(&[10, 40], &[1.0, 2.0, 3.0], 5, SeedSpec::new(3)).unwrap();
        assert!(holds);
        assert!(medians.iter().all(|m| (0.0..=1.0).contains(m)));
    }
}
