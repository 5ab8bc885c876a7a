//! Exact identities of the event maps and of simulated paths, checked
//! against coordinate-wise reference implementations.

mod oracles;

use ldtree_core::lookdown::{apply_pi, evolve_marked_with, evolve_plain_with};
use ldtree_core::suites::random_subset_system;
use ldtree_core::{generate, DistMatrix, EventStream, MarkedState, PlainState, Scope, SeedSpec, XiMeasure};
use rand::Rng;

#[test]
fn marked_update_and_commutation() {
    let mut rng = SeedSpec::new(201).rng();
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let r = DistMatrix::from_fn(n, |_, _| rng.random_range(0.0..3.0));
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let sigma = random_subset_system(n, &mut rng);
        let mut state = MarkedState::new(&r, &u, 1.5).unwrap();
        state.apply_sigma(&sigma);
        let (r2, u2) = oracles::iota2(&r, &u, &sigma);
        assert!(state.r_matrix().max_abs_diff(&r2) <= 1e-12);
        assert!(state.u_vec().iter().zip(&u2).all(|(a, b)| (a - b).abs() <= 1e-12));
        let lhs = state.compose();
        let rhs = oracles::iota1(&oracles::compose(&r, &u), &oracles::alpha(&sigma));
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + rhs.max_entry()));
        assert_eq!(apply_pi(&oracles::compose(&r, &u), &sigma.closure()), rhs);
    }
}

/// `Π_{a,b}` by tracing every level at time `b` back to time `a`.
fn flow(stream: &EventStream, a: f64, b: f64) -> Vec<usize> {
    let ancestors: Vec<usize> = (0..stream.n)
        .map(|i| {
            stream.events.iter().rev().filter(|e| e.time > a && e.time <= b).fold(i, |l, e| oracles::alpha(&e.sigma)[l])
        })
        .collect();
    oracles::canonical(&ancestors)
}

#[test]
fn flow_partitions_form_a_cocycle() {
    for (xi, seed) in [(XiMeasure::kingman(1.0), 1), (XiMeasure::star(), 2), (XiMeasure::lambda_dirac(0.3, 2.0).unwrap(), 3)] {
        let stream = generate(&xi, 15, (0.0, 3.0), Scope::ChangesGamma, SeedSpec::new(seed)).unwrap();
        let mut rng = SeedSpec::new(seed + 10).rng();
        for _ in 0..100 {
            let mut v = [0.0; 3].map(|_: f64| rng.random_range(0.0..3.0));
            v.sort_by(f64::total_cmp);
            let [r, s, t] = v;
            assert_eq!(flow(&stream, r, t), oracles::coag(&flow(&stream, s, t), &flow(&stream, r, s)));
        }
    }
}

#[test]
fn plain_flow_partition_matches_ancestry() {
    let stream = generate(&XiMeasure::kingman(1.0), 12, (0.0, 2.0), Scope::ChangesGamma, SeedSpec::new(4)).unwrap();
    let mut state = PlainState::zero(12, 0.0);
    evolve_plain_with(&mut state, &stream, 2.0, |_, _| {}).unwrap();
    for s in [0.0, 0.5, 1.0, 1.5, 1.9] {
        assert_eq!(oracles::canonical(state.flow_partition(s).unwrap().labels()), flow(&stream, s, 2.0));
    }
}

#[test]
fn marked_and_plain_paths_agree() {
    let xi = XiMeasure::lambda_dirac(0.5, 1.0).unwrap();
    let stream = generate(&xi, 20, (0.0, 10.0), Scope::TouchesLevel, SeedSpec::new(5)).unwrap();
    let mut marked = Vec::new();
    let mut m = MarkedState::zero(20, 0.0);
    evolve_marked_with(&mut m, &stream, 10.0, |s, _| marked.push(s.compose())).unwrap();
    let mut plain = Vec::new();
    let mut p = PlainState::zero(20, 0.0);
    evolve_plain_with(&mut p, &stream, 10.0, |s, _| plain.push(s.matrix())).unwrap();
    assert_eq!(marked.len(), plain.len());
    for (a, b) in marked.iter().zip(&plain) {
        assert!(a.max_abs_diff(b) <= 1e-9);
    }
    assert!(m.compose().max_abs_diff(&p.matrix()) <= 1e-9);
}
