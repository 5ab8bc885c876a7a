//! Monte-Carlo verification of the lookdown dynamics: generator evaluation on
//! smooth test functions, martingale residuals, the function-valued dual,
//! and two-sample tests for exchangeability, resampling and frequencies.
//!
//! Every estimator draws each replicate from its own seed stream, so results
//! are identical for any number of worker threads. Replicate values are
//! collected in order and reduced sequentially.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{generate, EventStream};
use crate::lookdown::{MarkedState, PlainState};
use crate::matrix::DistMatrix;
use crate::mmspace::{finite_space_from_matrix, sample_distance_matrix, sample_distinct_submatrix, FiniteMMSpace};
use crate::partition::{enumerate_partitions, enumerate_subset_systems, SubsetSystem};
use crate::rng::{SeedSpec, SimRng};
use crate::stats::{energy_test, gauss_legendre, integrate, ks_two_sample, mean_se, MeanSe};
use crate::xi::{DustClass, Rate, Scope, XiMeasure};

/// Largest number of levels for which generators enumerate their jump terms.
pub const GENERATOR_MAX_N: usize = 7;

/// A coordinate read by a test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coord {
    /// The unordered matrix entry `{i, j}`, `i ≠ j`.
    Entry(usize, usize),
    /// The mark `u_i`.
    Mark(usize),
}

impl Coord {
    fn normalized(self) -> Coord {
        match self {
            Coord::Entry(i, j) if i > j => Coord::Entry(j, i),
            c => c,
        }
    }
}

/// A bounded smooth univariate function with bounded derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Piece {
    /// `exp(1 − 1/(1 − z²))` for `z = (x − center)/radius` in `(−1, 1)`,
    /// zero elsewhere; peak value one.
    Bump { center: f64, radius: f64 },
    /// `exp(−rate·x)`, bounded on the nonnegative half-line.
    Decay { rate: f64 },
}

impl Piece {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Piece::Bump { center, radius } => {
                let z = (x - center) / radius;
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - z * z)).exp()
                }
            }
            Piece::Decay { rate } => (-rate * x).exp(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Piece::Bump { center, radius } => {
                let z = (x - center) / radius;
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    let q = 1.0 - z * z;
                    self.value(x) * (-2.0 * z / (q * q)) / radius
                }
            }
            Piece::Decay { rate } => -rate * (-rate * x).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Piece::Bump { center, radius } => center.is_finite() && radius > 0.0 && radius.is_finite(),
            Piece::Decay { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("bad test-function piece {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub coord: Coord,
    pub piece: Piece,
}

/// `φ = scale · Π_k piece_k(coordinate_k)`, reading the first `arity` levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub arity: usize,
    pub scale: f64,
    pub factors: Vec<Factor>,
}

impl TestFunction {
    pub fn new(arity: usize, scale: f64, factors: Vec<Factor>) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::InvalidInput("test-function scale must be finite".into()));
        }
        let mut normalized = Vec::with_capacity(factors.len());
        for f in factors {
            f.piece.validate()?;
            let ok = match f.coord {
                Coord::Entry(i, j) => i != j && i < arity && j < arity,
                Coord::Mark(i) => i < arity,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("coordinate {:?} invalid for arity {arity}", f.coord)));
            }
            normalized.push(Factor { coord: f.coord.normalized(), piece: f.piece });
        }
        Ok(Self { arity, scale, factors: normalized })
    }

    pub fn constant(arity: usize, value: f64) -> Self {
        Self { arity, scale: value, factors: Vec::new() }
    }

    /// A single piece on one coordinate.
    pub fn single(arity: usize, coord: Coord, piece: Piece) -> Result<Self> {
        Self::new(arity, 1.0, vec![Factor { coord, piece }])
    }

    pub fn reads_marks(&self) -> bool {
        self.factors.iter().any(|f| matches!(f.coord, Coord::Mark(_)))
    }

    /// Distinct coordinates read, in first-use order.
    pub fn coords(&self) -> Vec<Coord> {
        let mut out: Vec<Coord> = Vec::new();
        for f in &self.factors {
            if !out.contains(&f.coord) {
                out.push(f.coord);
            }
        }
        out
    }

    pub fn eval_with(&self, value: impl Fn(Coord) -> f64) -> f64 {
        self.factors.iter().fold(self.scale, |acc, f| acc * f.piece.value(value(f.coord)))
    }

    /// `Σ_k weight(coord_k) · ∂_k φ`, the derivative along a drift that moves
    /// every coordinate at the given speed.
    pub fn drift_with(&self, value: impl Fn(Coord) -> f64, weight: impl Fn(Coord) -> f64) -> f64 {
        let vals: Vec<(f64, f64)> = self
            .factors
            .iter()
            .map(|f| {
                let x = value(f.coord);
                (f.piece.value(x), f.piece.derivative(x))
            })
            .collect();
        let mut total = 0.0;
        for (k, f) in self.factors.iter().enumerate() {
            let w = weight(f.coord);
            if w == 0.0 {
                continue;
            }
            let rest: f64 = vals.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, v)| v.0).product();
            total += w * self.scale * vals[k].1 * rest;
        }
        total
    }

    /// Partial derivative with respect to one coordinate.
    pub fn partial_with(&self, value: impl Fn(Coord) -> f64, coord: Coord) -> f64 {
        let c = coord.normalized();
        self.drift_with(value, |d| if d == c { 1.0 } else { 0.0 })
    }
}

/// A state of either lookdown process.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessState {
    Plain(PlainState),
    Marked(MarkedState),
}

impl ProcessState {
    pub fn n(&self) -> usize {
        match self {
            ProcessState::Plain(s) => s.n(),
            ProcessState::Marked(s) => s.n(),
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            ProcessState::Plain(s) => s.time(),
            ProcessState::Marked(s) => s.time(),
        }
    }

    pub fn is_marked(&self) -> bool {
        matches!(self, ProcessState::Marked(_))
    }

    pub fn grow(&mut self, dt: f64) {
        match self {
            ProcessState::Plain(s) => s.grow(dt),
            ProcessState::Marked(s) => s.grow(dt),
        }
    }

    /// `ι₁(closure σ)` on plain states, `ι₂(σ)` on marked states.
    pub fn apply(&mut self, sigma: &SubsetSystem) {
        match self {
            ProcessState::Plain(s) => s.apply_event(sigma),
            ProcessState::Marked(s) => s.apply_sigma(sigma),
        }
    }

    /// `ρ_ij` on plain states; `r_ij` and `u_i` on marked states.
    fn coord(&self, c: Coord) -> f64 {
        match (self, c) {
            (ProcessState::Plain(s), Coord::Entry(i, j)) => s.rho(i, j),
            (ProcessState::Marked(s), Coord::Entry(i, j)) => s.r(i, j),
            (ProcessState::Marked(s), Coord::Mark(i)) => s.u(i),
            (ProcessState::Plain(_), Coord::Mark(_)) => unreachable!("validated by check_function"),
        }
    }

    fn check_function(&self, phi: &TestFunction) -> Result<()> {
        if phi.arity > self.n() {
            return Err(Error::InvalidInput(format!("test function of arity {} on {} levels", phi.arity, self.n())));
        }
        if !self.is_marked() && phi.reads_marks() {
            return Err(Error::InvalidInput("plain states carry no marks".into()));
        }
        Ok(())
    }

    pub fn eval(&self, phi: &TestFunction) -> Result<f64> {
        self.check_function(phi)?;
        Ok(phi.eval_with(|c| self.coord(c)))
    }

    fn eval_unchecked(&self, phi: &TestFunction) -> f64 {
        phi.eval_with(|c| self.coord(c))
    }

    /// Growth part of the generator: matrix entries grow at speed two in
    /// the plain process, marks at speed one in the marked process.
    fn growth_term(&self, phi: &TestFunction) -> f64 {
        let marked = self.is_marked();
        phi.drift_with(
            |c| self.coord(c),
            |c| match (marked, c) {
                (false, Coord::Entry(..)) => 2.0,
                (true, Coord::Mark(_)) => 1.0,
                _ => 0.0,
            },
        )
    }
}

/// `Ω₁` or `Ω₂` at a fixed number of levels, with the jump terms enumerated.
#[derive(Debug, Clone)]
pub struct Generator {
    n: usize,
    marked: bool,
    jumps: Vec<(SubsetSystem, f64)>,
}

impl Generator {
    /// `Ω₁`: one jump term per nontrivial partition of `[n]`.
    pub fn omega1(xi: &XiMeasure, n: usize) -> Result<Self> {
        check_generator_size(n)?;
        let mut jumps = Vec::new();
        for pi in enumerate_partitions(n) {
            if pi.is_trivial() {
                continue;
            }
            let rate = xi.rate_pi(&pi)?;
            if rate > 0.0 {
                let blocks = pi.blocks().iter().filter(|b| b.len() >= 2).cloned().collect();
                jumps.push((SubsetSystem::new(n, blocks)?, rate));
            }
        }
        Ok(Self { n, marked: false, jumps })
    }

    /// `Ω₂`: one jump term per nonempty subset system on `[n]`. Needs a
    /// dust measure, otherwise the rates diverge.
    pub fn omega2(xi: &XiMeasure, n: usize) -> Result<Self> {
        check_generator_size(n)?;
        if xi.classify_dust() == DustClass::NoDust {
            return Err(Error::InfiniteRate("the marked generator needs a measure with dust".into()));
        }
        let mut jumps = Vec::new();
        for sigma in enumerate_subset_systems(n).into_iter().skip(1) {
            match xi.rate_sigma(n, &sigma) {
                Rate::Finite(r) if r > 0.0 => jumps.push((sigma, r)),
                Rate::Finite(_) => {}
                Rate::Infinite => return Err(Error::InfiniteRate(format!("λ for {sigma}"))),
            }
        }
        Ok(Self { n, marked: true, jumps })
    }

    /// The generator matching the kind of `state`.
    pub fn for_state(xi: &XiMeasure, state: &ProcessState) -> Result<Self> {
        if state.is_marked() {
            Self::omega2(xi, state.n())
        } else {
            Self::omega1(xi, state.n())
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Jump terms with positive rate.
    pub fn jumps(&self) -> &[(SubsetSystem, f64)] {
        &self.jumps
    }

    fn check(&self, phi: &TestFunction, state: &ProcessState) -> Result<()> {
        if state.n() != self.n || state.is_marked() != self.marked {
            return Err(Error::InvalidInput(format!(
                "generator on {} levels ({}) applied to a {} state on {} levels",
                self.n,
                if self.marked { "marked" } else { "plain" },
                if state.is_marked() { "marked" } else { "plain" },
                state.n()
            )));
        }
        state.check_function(phi)
    }

    fn jump_term(&self, phi: &TestFunction, state: &ProcessState) -> f64 {
        let here = state.eval_unchecked(phi);
        self.jumps
            .iter()
            .map(|(sigma, rate)| {
                let mut after = state.clone();
                after.apply(sigma);
                rate * (after.eval_unchecked(phi) - here)
            })
            .sum()
    }

    pub fn apply(&self, phi: &TestFunction, state: &ProcessState) -> Result<f64> {
        self.check(phi, state)?;
        Ok(state.growth_term(phi) + self.jump_term(phi, state))
    }
}

fn check_generator_size(n: usize) -> Result<()> {
    if n == 0 || n > GENERATOR_MAX_N {
        return Err(Error::InvalidInput(format!("generators are enumerated for 1..={GENERATOR_MAX_N} levels, got {n}")));
    }
    Ok(())
}

/// `Ω₁φ(ρ)` for a plain matrix, with `n` the arity of `φ`.
pub fn generator_omega1(phi: &TestFunction, rho: &DistMatrix, xi: &XiMeasure) -> Result<f64> {
    if rho.n() < phi.arity {
        return Err(Error::InvalidInput(format!("arity {} exceeds matrix size {}", phi.arity, rho.n())));
    }
    let state = ProcessState::Plain(PlainState::new(&rho.restrict(phi.arity), 0.0));
    Generator::omega1(xi, phi.arity)?.apply(phi, &state)
}

/// `Ω₂φ(r, u)` for a marked state, with `n` the arity of `φ`.
pub fn generator_omega2(phi: &TestFunction, state: &MarkedState, xi: &XiMeasure) -> Result<f64> {
    if state.n() < phi.arity {
        return Err(Error::InvalidInput(format!("arity {} exceeds state size {}", phi.arity, state.n())));
    }
    let u = state.u_vec();
    let restricted = MarkedState::new(&state.r_matrix().restrict(phi.arity), &u[..phi.arity], 0.0)?;
    Generator::omega2(xi, phi.arity)?.apply(phi, &ProcessState::Marked(restricted))
}

/// One named comparison within a report, with the rule that decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub reference: f64,
    pub se: f64,
    pub rule: String,
    pub pass: bool,
}

impl Check {
    /// `|estimate − reference| ≤ k·se`; with zero standard error the two
    /// must agree to `1e-12`.
    pub fn within_se(name: impl Into<String>, estimate: f64, reference: f64, se: f64, k: f64) -> Self {
        let diff = (estimate - reference).abs();
        let pass = if se > 0.0 { diff <= k * se } else { diff <= 1e-12 };
        Self { name: name.into(), estimate, reference, se, rule: format!("|estimate - reference| <= {k} SE"), pass }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), estimate: value, reference: bound, se: 0.0, rule: format!("value <= {bound:e}"), pass: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), estimate: value, reference: bound, se: 0.0, rule: format!("value >= {bound}"), pass: value >= bound }
    }

    pub fn holds(name: impl Into<String>, ok: bool, rule: impl Into<String>) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Self { name: name.into(), estimate: v, reference: 1.0, se: 0.0, rule: rule.into(), pass: ok }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub seed: SeedSpec,
    pub replicates: usize,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl TestReport {
    pub fn new(name: impl Into<String>, seed: SeedSpec, replicates: usize, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { name: name.into(), seed, replicates, checks, pass }
    }
}

/// Runs `f` once per replicate on its own seed stream, in parallel, and
/// returns the results in replicate order.
pub fn replicate<T: Send>(
    seed: SeedSpec,
    label: &str,
    replicates: usize,
    f: impl Fn(SeedSpec) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..replicates as u64).into_par_iter().map(|r| f(seed.replicate(label, r))).collect()
}

fn scope_for(state: &ProcessState) -> Scope {
    if state.is_marked() {
        Scope::TouchesLevel
    } else {
        Scope::ChangesGamma
    }
}

/// Forward estimates of `E[φ(X_t)]` at each of `times` (sorted, relative to
/// the initial state's time), one path per replicate.
pub fn forward_estimates(
    xi: &XiMeasure,
    initial: &ProcessState,
    phi: &TestFunction,
    times: &[f64],
    replicates: usize,
    seed: SeedSpec,
) -> Result<Vec<MeanSe>> {
    initial.check_function(phi)?;
    if times.windows(2).any(|w| w[0] > w[1]) || times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::InvalidInput("observation times must be sorted and nonnegative".into()));
    }
    let t0 = initial.time();
    let horizon = times.last().copied().unwrap_or(0.0);
    let scope = scope_for(initial);
    let rows = replicate(seed, "forward", replicates, |s| {
        let stream = generate(xi, initial.n(), (t0, t0 + horizon), scope, s)?;
        Ok(observe(initial, &stream, phi, times))
    })?;
    Ok((0..times.len()).map(|k| mean_se(&rows.iter().map(|r| r[k]).collect::<Vec<_>>())).collect())
}

fn observe(initial: &ProcessState, stream: &EventStream, phi: &TestFunction, times: &[f64]) -> Vec<f64> {
    let t0 = initial.time();
    let mut x = initial.clone();
    let mut events = stream.events.iter().peekable();
    times
        .iter()
        .map(|&t| {
            while let Some(e) = events.next_if(|e| e.time <= t0 + t) {
                x.grow(e.time - x.time());
                x.apply(&e.sigma);
            }
            let mut y = x.clone();
            y.grow(t0 + t - y.time());
            y.eval_unchecked(phi)
        })
        .collect()
}

/// Longest subinterval handed to one Gauss–Legendre rule.
const QUADRATURE_STEP: f64 = 0.25;
const QUADRATURE_NODES: usize = 8;

/// `φ(X_t) − φ(X_0) − ∫_0^t Ωφ(X_s) ds` along one path. The growth part of
/// `Ωφ` integrates exactly to the change of `φ` between events, so the
/// residual equals the sum of jumps of `φ` minus the integrated jump term,
/// which is computed with a Gauss–Legendre rule on each inter-event interval.
fn path_residual(gen: &Generator, initial: &ProcessState, stream: &EventStream, phi: &TestFunction, t: f64) -> f64 {
    let rule = gauss_legendre(QUADRATURE_NODES);
    let compensator = |x: &ProcessState, len: f64| -> f64 {
        if len <= 0.0 {
            return 0.0;
        }
        let pieces = (len / QUADRATURE_STEP).ceil().max(1.0) as usize;
        let h = len / pieces as f64;
        (0..pieces)
            .map(|p| {
                integrate(&rule, p as f64 * h, (p + 1) as f64 * h, |s| {
                    let mut y = x.clone();
                    y.grow(s);
                    gen.jump_term(phi, &y)
                })
            })
            .sum()
    };
    let end = initial.time() + t;
    let mut x = initial.clone();
    let mut acc = 0.0;
    for e in stream.window(x.time(), end) {
        acc -= compensator(&x, e.time - x.time());
        x.grow(e.time - x.time());
        let before = x.eval_unchecked(phi);
        x.apply(&e.sigma);
        acc += x.eval_unchecked(phi) - before;
    }
    acc - compensator(&x, end - x.time())
}

/// Monte-Carlo estimate of `E[φ(X_t)] − φ(X_0) − ∫_0^t E[Ωφ(X_s)] ds`; the
/// report passes when it is within three standard errors of zero.
pub fn martingale_residual(
    xi: &XiMeasure,
    initial: &ProcessState,
    phi: &TestFunction,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<TestReport> {
    let samples = residual_samples(xi, initial, phi, t, replicates, seed)?;
    let m = mean_se(&samples);
    Ok(TestReport::new(
        "martingale-residual",
        seed,
        replicates,
        vec![Check::within_se(format!("residual at t={t}"), m.mean, 0.0, m.se, 3.0)],
    ))
}

/// Per-path residuals behind [`martingale_residual`].
pub fn residual_samples(
    xi: &XiMeasure,
    initial: &ProcessState,
    phi: &TestFunction,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("negative horizon {t}")));
    }
    let gen = Generator::for_state(xi, initial)?;
    gen.check(phi, initial)?;
    let t0 = initial.time();
    let scope = scope_for(initial);
    replicate(seed, "martingale", replicates, |s| {
        let stream = generate(xi, initial.n(), (t0, t0 + t), scope, s)?;
        Ok(path_residual(&gen, initial, &stream, phi, t))
    })
}

/// Law of the initial state in a duality run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Fixed(ProcessState),
    /// `n` iid draws from a metric measure space; marks become `u`.
    Sampled { space: FiniteMMSpace, n: usize, marked: bool },
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ProcessState> {
        match self {
            InitialLaw::Fixed(s) => Ok(s.clone()),
            InitialLaw::Sampled { space, n, marked } => {
                let (d, marks) = sample_distance_matrix(space, *n, rng);
                if *marked {
                    let u = marks.unwrap_or_else(|| vec![0.0; *n]);
                    Ok(ProcessState::Marked(MarkedState::new(&d, &u, 0.0)?))
                } else {
                    Ok(ProcessState::Plain(PlainState::new(&d, 0.0)))
                }
            }
        }
    }

    fn kind(&self) -> (usize, bool) {
        match self {
            InitialLaw::Fixed(s) => (s.n(), s.is_marked()),
            InitialLaw::Sampled { n, marked, .. } => (*n, *marked),
        }
    }
}

/// Forward and dual estimates of the same expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub t: f64,
    pub forward: MeanSe,
    pub dual: MeanSe,
}

/// `E[φ(X_t)]` with `X_0` drawn from `initial` (forward), against
/// `E[φ_t(X_0)]` for the function-valued dual run on an independent seed.
///
/// The dual moves `φ` by the drift and jumps `φ → φ∘ι(σ)` at the event
/// rates; evaluating `φ_t` at a point applies the recorded operations to it
/// in reverse order.
pub fn dual_estimates(
    xi: &XiMeasure,
    initial: &InitialLaw,
    phi: &TestFunction,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<DualPair> {
    let (n, marked) = initial.kind();
    let scope = if marked { Scope::TouchesLevel } else { Scope::ChangesGamma };
    let forward = replicate(seed.derive(1), "dual-forward", replicates, |s| {
        let mut rng: SimRng = s.derive(0).rng();
        let x0 = initial.sample(&mut rng)?;
        x0.check_function(phi)?;
        let stream = generate(xi, n, (0.0, t), scope, s.derive(1))?;
        Ok(observe(&x0, &stream, phi, &[t])[0])
    })?;
    let dual = replicate(seed.derive(2), "dual-backward", replicates, |s| {
        let mut rng: SimRng = s.derive(0).rng();
        let mut x = initial.sample(&mut rng)?;
        x.check_function(phi)?;
        // dual-time events; the operation at dual time τ acts after the
        // drift over (τ, t] has been applied to the argument
        let ops = generate(xi, n, (0.0, t), scope, s.derive(1))?;
        let mut clock = t;
        for e in ops.events.iter().rev() {
            x.grow(clock - e.time);
            x.apply(&e.sigma);
            clock = e.time;
        }
        x.grow(clock);
        Ok(x.eval_unchecked(phi))
    })?;
    Ok(DualPair { t, forward: mean_se(&forward), dual: mean_se(&dual) })
}

/// Forward and dual estimates agree within three combined standard errors.
pub fn dual_consistency(
    xi: &XiMeasure,
    initial: &InitialLaw,
    phi: &TestFunction,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<TestReport> {
    let p = dual_estimates(xi, initial, phi, t, replicates, seed)?;
    let se = (p.forward.se.powi(2) + p.dual.se.powi(2)).sqrt();
    Ok(TestReport::new(
        "dual-consistency",
        seed,
        replicates,
        vec![Check::within_se(format!("forward vs dual at t={t}"), p.forward.mean, p.dual.mean, se, 3.0)],
    ))
}

/// Plain matrices at time `t` from the zero matrix, one per replicate.
pub fn plain_samples(xi: &XiMeasure, n: usize, t: f64, replicates: usize, seed: SeedSpec) -> Result<Vec<DistMatrix>> {
    replicate(seed, "plain-samples", replicates, |s| {
        let stream = generate(xi, n, (0.0, t), Scope::ChangesGamma, s)?;
        Ok(crate::lookdown::evolve_plain(&PlainState::zero(n, 0.0), &stream, t)?.matrix())
    })
}

/// KS test of `law(ρ_a)` against `law(ρ_b)`, using the first half of the
/// ensemble for `a` and the second half for `b` so the samples are
/// independent. Passes at the 1% level.
pub fn exchangeability_test(matrices: &[DistMatrix], a: (usize, usize), b: (usize, usize)) -> TestReport {
    let half = matrices.len() / 2;
    let xs: Vec<f64> = matrices[..half].iter().map(|m| m.get(a.0, a.1)).collect();
    let ys: Vec<f64> = matrices[half..].iter().map(|m| m.get(b.0, b.1)).collect();
    let ks = ks_two_sample(&xs, &ys);
    let name = format!("entry ({},{}) vs ({},{})", a.0 + 1, a.1 + 1, b.0 + 1, b.1 + 1);
    let check = Check {
        name,
        estimate: ks.p_value,
        reference: 0.01,
        se: ks.statistic,
        rule: "KS two-sample p-value >= 0.01".into(),
        pass: ks.p_value >= 0.01,
    };
    TestReport::new("exchangeability", SeedSpec::new(0), matrices.len(), vec![check])
}

/// `(b, n)`-exchangeability at time `t` from the zero matrix: permutations
/// fixing the first `b` levels leave the law of the matrix unchanged. Checks
/// the entries `(b, b+1)` against `(b+1, b+2)`, and `(0, b)` against
/// `(0, b+1)` when `b ≥ 1`.
pub fn exchangeability_report(
    xi: &XiMeasure,
    n: usize,
    b: usize,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<TestReport> {
    if b + 3 > n {
        return Err(Error::InvalidInput(format!("need at least {} levels for b = {b}", b + 3)));
    }
    let ms = plain_samples(xi, n, t, replicates, seed)?;
    let mut checks = exchangeability_test(&ms, (b, b + 1), (b + 1, b + 2)).checks;
    if b >= 1 {
        checks.extend(exchangeability_test(&ms, (0, b), (0, b + 1)).checks);
    }
    Ok(TestReport::new("exchangeability", seed, replicates, checks))
}

fn upper_triangle(m: &DistMatrix) -> Vec<f64> {
    let n = m.n();
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| m.get(i, j)).collect()
}

/// Resampling identity: a `k×k` matrix resampled from the finite space of an
/// evolved `n×n` matrix (distinct indices) has the law of the leading corner
/// of an independent evolution. Energy-distance test at the 1% level.
pub fn resampling_test(
    xi: &XiMeasure,
    n: usize,
    k: usize,
    t: f64,
    replicates: usize,
    seed: SeedSpec,
) -> Result<TestReport> {
    if k > n {
        return Err(Error::InvalidInput(format!("cannot resample {k} of {n} levels")));
    }
    let evolved = plain_samples(xi, n, t, replicates, seed.derive(1))?;
    let fresh = plain_samples(xi, n, t, replicates, seed.derive(2))?;
    let resampled = evolved
        .iter()
        .enumerate()
        .map(|(r, m)| {
            let space = finite_space_from_matrix(m, None)?;
            debug_assert!(space.size() <= n);
            let mut rng = seed.replicate("resample", r as u64).rng();
            Ok(upper_triangle(&sample_distinct_submatrix(m, None, k, &mut rng).0))
        })
        .collect::<Result<Vec<_>>>()?;
    let corners: Vec<Vec<f64>> = fresh.iter().map(|m| upper_triangle(&m.restrict(k))).collect();
    let mut rng = seed.derive(3).rng();
    let test = energy_test(&resampled, &corners, 199, &mut rng);
    let check = Check {
        name: format!("resampled {k}x{k} vs corner, n={n}, t={t}"),
        estimate: test.p_value,
        reference: 0.01,
        se: test.statistic,
        rule: "energy-distance permutation p-value >= 0.01".into(),
        pass: test.p_value >= 0.01,
    };
    Ok(TestReport::new("resampling", seed, replicates, vec![check]))
}

/// Ancestral levels at time `s` of levels `0..n` at each time of `grid`
/// (sorted, all `≥ s`), from events in `(s, max grid]`.
pub fn ancestor_maps(stream: &EventStream, n: usize, s: f64, grid: &[f64]) -> Vec<Vec<usize>> {
    let mut anc: Vec<usize> = (0..n).collect();
    let mut events = stream.window(s, f64::INFINITY).iter().peekable();
    grid.iter()
        .map(|&t| {
            while let Some(e) = events.next_if(|e| e.time <= t) {
                let sigma = if e.sigma.n() > n { e.sigma.restrict(n) } else { e.sigma.clone() };
                if sigma.has_merge() {
                    let alpha = sigma.alpha();
                    anc = alpha.iter().map(|&a| anc[a]).collect();
                }
            }
            anc.clone()
        })
        .collect()
}

/// Medians over seeds of `sup_t |freq_n − freq_ref|` for each `n` in a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLadder {
    pub ladder: Vec<usize>,
    pub reference: usize,
    pub medians: Vec<f64>,
}

impl FrequencyLadder {
    pub fn strictly_decreasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] < w[0])
    }
}

/// Relative frequency of the block of `Π_{s,t}` containing level `b` among
/// the first `n` levels, compared with the reference truncation on the same
/// (nested) stream.
pub fn frequency_ladder(
    xi: &XiMeasure,
    ladder: &[usize],
    reference: usize,
    b: usize,
    s: f64,
    grid: &[f64],
    seeds: usize,
    seed: SeedSpec,
) -> Result<FrequencyLadder> {
    if ladder.iter().any(|&n| n <= b || n >= reference) {
        return Err(Error::InvalidInput("ladder sizes must lie strictly between b and the reference".into()));
    }
    let horizon = grid.iter().copied().fold(s, f64::max);
    let per_seed = replicate(seed, "frequency", seeds, |sd| {
        let stream = generate(xi, reference, (s, horizon), Scope::ChangesGamma, sd)?;
        let maps = ancestor_maps(&stream, reference, s, grid);
        Ok(ladder
            .iter()
            .map(|&n| {
                maps.iter()
                    .map(|anc| {
                        let freq = |m: usize| anc[..m].iter().filter(|&&a| a == anc[b]).count() as f64 / m as f64;
                        (freq(n) - freq(reference)).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect::<Vec<f64>>())
    })?;
    let medians = (0..ladder.len())
        .map(|k| {
            let mut v: Vec<f64> = per_seed.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            let m = v.len();
            if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            }
        })
        .collect();
    Ok(FrequencyLadder { ladder: ladder.to_vec(), reference, medians })
}

pub fn frequency_uniformity_test(
    xi: &XiMeasure,
    ladder: &[usize],
    reference: usize,
    b: usize,
    s: f64,
    grid: &[f64],
    seeds: usize,
    seed: SeedSpec,
) -> Result<TestReport> {
    let l = frequency_ladder(xi, ladder, reference, b, s, grid, seeds, seed)?;
    let mut checks: Vec<Check> = l
        .ladder
        .iter()
        .zip(&l.medians)
        .map(|(n, m)| Check { name: format!("median sup-difference n={n}"), estimate: *m, reference: 0.0, se: 0.0, rule: "reported".into(), pass: true })
        .collect();
    checks.push(Check::holds("ladder", l.strictly_decreasing(), "medians strictly decreasing in n"));
    Ok(TestReport::new("frequency-uniformity", seed, seeds, checks))
}
