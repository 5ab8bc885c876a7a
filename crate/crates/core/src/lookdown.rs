//! Pathwise evolution of genealogical distances in the lookdown model.
//!
//! Between events every external branch grows at unit speed. At an event
//! with subset system `σ`, level `i` inherits from the pre-event level
//! `α(σ, i)`; levels in `∪σ` are newborn or reproducing and restart their
//! external branch.
//!
//! Both representations avoid floating-point drift where exact comparisons
//! matter: a [`MarkedState`] stores the time at which each external branch
//! last restarted, and a [`PlainState`] stores `ρ_ij − 2t`, which is constant
//! between events and equals `−2τ` for levels whose lines merged at `τ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventStream, ReproductionEvent};
use crate::matrix::DistMatrix;
use crate::partition::{Partition, SubsetSystem};

/// The marked distance matrix `(r, u)` at a time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedState {
    n: usize,
    time: f64,
    /// Time at which the process was started; external branches restarting
    /// no later than this belong to the dust.
    origin: f64,
    /// `u_i = time − anchor_i`.
    anchor: Vec<f64>,
    r: Vec<f64>,
}

impl MarkedState {
    pub fn new(r: &DistMatrix, u: &[f64], time: f64) -> Result<Self> {
        if u.len() != r.n() {
            return Err(Error::InvalidInput(format!("{} marks for {} levels", u.len(), r.n())));
        }
        if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("marks must be finite and nonnegative".into()));
        }
        let n = r.n();
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = r.get(i, j);
            }
        }
        Ok(Self { n, time, origin: time, anchor: u.iter().map(|&x| time - x).collect(), r: flat })
    }

    /// All distances and marks zero.
    pub fn zero(n: usize, time: f64) -> Self {
        Self { n, time, origin: time, anchor: vec![time; n], r: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn u(&self, i: usize) -> f64 {
        self.time - self.anchor[i]
    }

    pub fn u_vec(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.u(i)).collect()
    }

    /// Restart time of each external branch.
    pub fn anchors(&self) -> &[f64] {
        &self.anchor
    }

    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.n + j]
    }

    pub fn r_matrix(&self) -> DistMatrix {
        DistMatrix::from_fn(self.n, |i, j| self.r(i, j))
    }

    /// `ρ_ij = (u_i + r_ij + u_j)·1{i≠j}`.
    pub fn compose(&self) -> DistMatrix {
        DistMatrix::from_fn(self.n, |i, j| self.u(i) + self.r(i, j) + self.u(j))
    }

    pub fn grow(&mut self, dt: f64) {
        assert!(dt >= 0.0, "growth by a negative time");
        self.time += dt;
    }

    fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.time);
        self.time = t;
    }

    /// The event map `ι₂(σ)`.
    pub fn apply_sigma(&mut self, sigma: &SubsetSystem) {
        if sigma.is_empty() {
            return;
        }
        let n = self.n;
        let alpha = sigma.alpha();
        let involved = sigma.involved();
        let u_old: Vec<f64> = (0..n).map(|i| self.u(i)).collect();
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            let (ai, ui) = (alpha[i], if involved[i] { u_old[alpha[i]] } else { 0.0 });
            for j in (i + 1)..n {
                let aj = alpha[j];
                if ai != aj {
                    let uj = if involved[j] { u_old[aj] } else { 0.0 };
                    let v = ui + self.r[ai * n + aj] + uj;
                    r[i * n + j] = v;
                    r[j * n + i] = v;
                }
            }
        }
        let anchor = (0..n).map(|i| if involved[i] { self.time } else { self.anchor[alpha[i]] }).collect();
        self.anchor = anchor;
        self.r = r;
    }

    /// Non-singleton blocks of levels with a common external-branch restart
    /// and zero internal distance, plus the dust: levels whose external
    /// branch reaches back to the start.
    pub fn dust_partition(&self) -> DustPartition {
        let n = self.n;
        let mut labels: Vec<usize> = (0..n).collect();
        let dust: Vec<bool> = self.anchor.iter().map(|&a| a <= self.origin).collect();
        for i in 0..n {
            if dust[i] || labels[i] != i {
                continue;
            }
            for j in (i + 1)..n {
                if !dust[j] && self.anchor[j] == self.anchor[i] && self.r(i, j) == 0.0 {
                    labels[j] = i;
                }
            }
        }
        DustPartition { partition: Partition::from_labels(&labels), dust }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DustPartition {
    pub partition: Partition,
    pub dust: Vec<bool>,
}

impl DustPartition {
    pub fn dust_count(&self) -> usize {
        self.dust.iter().filter(|&&d| d).count()
    }
}

/// The plain distance matrix `ρ` at a time stamp, stored as `ρ_ij − 2t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainState {
    n: usize,
    time: f64,
    offset: Vec<f64>,
}

impl PlainState {
    pub fn new(rho: &DistMatrix, time: f64) -> Self {
        let n = rho.n();
        let mut offset = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    offset[i * n + j] = rho.get(i, j) - 2.0 * time;
                }
            }
        }
        Self { n, time, offset }
    }

    pub fn zero(n: usize, time: f64) -> Self {
        Self::new(&DistMatrix::zeros(n), time)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            2.0 * self.time + self.offset[i * self.n + j]
        }
    }

    pub fn matrix(&self) -> DistMatrix {
        DistMatrix::from_fn(self.n, |i, j| self.rho(i, j))
    }

    pub fn grow(&mut self, dt: f64) {
        assert!(dt >= 0.0, "growth by a negative time");
        self.time += dt;
    }

    fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.time);
        self.time = t;
    }

    /// The event map `ι₁(π)` with `π` given by its block index map.
    fn apply_alpha(&mut self, alpha: &[usize]) {
        let n = self.n;
        let merged = -2.0 * self.time;
        let mut offset = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if alpha[i] == alpha[j] { merged } else { self.offset[alpha[i] * n + alpha[j]] };
                offset[i * n + j] = v;
                offset[j * n + i] = v;
            }
        }
        self.offset = offset;
    }

    pub fn apply_pi(&mut self, pi: &Partition) {
        let alpha: Vec<usize> = (0..self.n).map(|i| pi.block_index(i)).collect();
        self.apply_alpha(&alpha);
    }

    pub fn apply_event(&mut self, sigma: &SubsetSystem) {
        if sigma.has_merge() {
            self.apply_alpha(&sigma.alpha());
        }
    }

    /// `Π_{s,t}`: levels related iff `ρ_ij < 2(t − s)`, i.e. their lines
    /// merged after `s`. Exact, since merged offsets are stored as `−2τ`.
    pub fn flow_partition(&self, s: f64) -> Result<Partition> {
        let n = self.n;
        let threshold = -2.0 * s;
        threshold_partition(n, |i, j| self.offset[i * n + j] < threshold)
    }

    /// Whether `ρ` satisfies the strong triangle inequality, compared exactly
    /// on the offsets.
    pub fn is_ultrametric(&self) -> bool {
        let n = self.n;
        let c = |i: usize, j: usize| if i == j { f64::NEG_INFINITY } else { self.offset[i * n + j] };
        (0..n).all(|i| (0..n).all(|j| i == j || (0..n).all(|k| c(i, j) <= c(i, k).max(c(k, j)))))
    }
}

fn threshold_partition(n: usize, related: impl Fn(usize, usize) -> bool) -> Result<Partition> {
    let mut labels: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if labels[i] != i {
            continue;
        }
        for j in (i + 1)..n {
            if related(i, j) {
                labels[j] = i;
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if related(i, j) != (labels[i] == labels[j]) {
                return Err(Error::Inconsistent(format!(
                    "threshold relation is not transitive at levels {} and {}",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(Partition::from_labels(&labels))
}

/// `ι₁(π)` on a plain matrix: `ρ′_ij = ρ_{α(i)α(j)}`, zero on shared blocks.
pub fn apply_pi(rho: &DistMatrix, pi: &Partition) -> DistMatrix {
    DistMatrix::from_fn(rho.n(), |i, j| {
        let (a, b) = (pi.block_index(i), pi.block_index(j));
        if a == b {
            0.0
        } else {
            rho.get(a, b)
        }
    })
}

/// `ι₂(σ)` as a pure function.
pub fn apply_sigma(state: &MarkedState, sigma: &SubsetSystem) -> MarkedState {
    let mut s = state.clone();
    s.apply_sigma(sigma);
    s
}

/// Flow partition of an arbitrary plain matrix observed at time `t`.
pub fn flow_partition(rho: &DistMatrix, t: f64, s: f64) -> Result<Partition> {
    threshold_partition(rho.n(), |i, j| rho.get(i, j) < 2.0 * (t - s))
}

fn check_coverage(stream: &EventStream, n: usize, from: f64, horizon: f64) -> Result<()> {
    if stream.n < n {
        return Err(Error::InvalidInput(format!("stream has {} levels, state has {n}", stream.n)));
    }
    if from < stream.start || horizon > stream.end || horizon < from {
        return Err(Error::EventOutsideWindow { time: horizon, start: stream.start, end: stream.end });
    }
    Ok(())
}

fn restricted(e: &ReproductionEvent, n: usize, full: usize) -> std::borrow::Cow<'_, SubsetSystem> {
    if n == full {
        std::borrow::Cow::Borrowed(&e.sigma)
    } else {
        std::borrow::Cow::Owned(e.sigma.restrict(n))
    }
}

/// Evolves `state` through the events of `stream` in `(state.time, horizon]`,
/// calling `visit` after every event.
pub fn evolve_marked_with(
    state: &mut MarkedState,
    stream: &EventStream,
    horizon: f64,
    mut visit: impl FnMut(&MarkedState, &ReproductionEvent),
) -> Result<()> {
    check_coverage(stream, state.n, state.time, horizon)?;
    for e in stream.window(state.time, horizon) {
        state.advance_to(e.time);
        state.apply_sigma(&restricted(e, state.n, stream.n));
        visit(state, e);
    }
    state.advance_to(horizon);
    Ok(())
}

pub fn evolve_plain_with(
    state: &mut PlainState,
    stream: &EventStream,
    horizon: f64,
    mut visit: impl FnMut(&PlainState, &ReproductionEvent),
) -> Result<()> {
    check_coverage(stream, state.n, state.time, horizon)?;
    for e in stream.window(state.time, horizon) {
        state.advance_to(e.time);
        state.apply_event(&restricted(e, state.n, stream.n));
        visit(state, e);
    }
    state.advance_to(horizon);
    Ok(())
}

pub fn evolve_marked(initial: &MarkedState, stream: &EventStream, horizon: f64) -> Result<MarkedState> {
    let mut s = initial.clone();
    evolve_marked_with(&mut s, stream, horizon, |_, _| {})?;
    Ok(s)
}

pub fn evolve_plain(initial: &PlainState, stream: &EventStream, horizon: f64) -> Result<PlainState> {
    let mut s = initial.clone();
    evolve_plain_with(&mut s, stream, horizon, |_, _| {})?;
    Ok(s)
}

/// States just after each event and at the horizon.
pub fn evolve_plain_path(initial: &PlainState, stream: &EventStream, horizon: f64) -> Result<Vec<PlainState>> {
    let mut path = Vec::new();
    let mut s = initial.clone();
    evolve_plain_with(&mut s, stream, horizon, |st, _| path.push(st.clone()))?;
    path.push(s);
    Ok(path)
}

pub fn evolve_marked_path(initial: &MarkedState, stream: &EventStream, horizon: f64) -> Result<Vec<MarkedState>> {
    let mut path = Vec::new();
    let mut s = initial.clone();
    evolve_marked_with(&mut s, stream, horizon, |st, _| path.push(st.clone()))?;
    path.push(s);
    Ok(path)
}

/// `A_s(t, i)`: level at time `s` of the ancestor of the individual at
/// level `i` at time `t`.
pub fn ancestral_level(stream: &EventStream, t: f64, i: usize, s: f64) -> usize {
    assert!(s <= t, "ancestor time after the individual");
    stream.window(s, t).iter().rev().fold(i, |l, e| e.sigma.alpha_of(l))
}

/// `D_t(s, i)`: lowest level at time `t` descending from level `i` at time
/// `s`, or `None` once every descendant has left the simulated levels.
pub fn descendant_level(stream: &EventStream, s: f64, i: usize, t: f64) -> Option<usize> {
    assert!(s <= t, "descendant time before the ancestor");
    stream.window(s, t).iter().try_fold(i, |d, e| e.sigma.first_with_alpha(d))
}

/// Genealogical distance between `(s, i)` and `(t, j)`: the time back to the
/// most recent common ancestor summed over both, or through the initial
/// matrix `rho0` (given at `stream.start`) when the lines never meet.
pub fn pair_distance(stream: &EventStream, rho0: &DistMatrix, (s, i): (f64, usize), (t, j): (f64, usize)) -> f64 {
    let ((s, mut a), (t, b)) = if s <= t { ((s, i), (t, j)) } else { ((t, j), (s, i)) };
    let mut b = ancestral_level(stream, t, b, s);
    if a == b {
        return t - s;
    }
    for e in stream.window(stream.start, s).iter().rev() {
        a = e.sigma.alpha_of(a);
        b = e.sigma.alpha_of(b);
        if a == b {
            return s + t - 2.0 * e.time;
        }
    }
    let base = if a == b { 0.0 } else { rho0.get(a, b) };
    (s - stream.start) + (t - stream.start) + base
}

/// Jump times split by the kind of event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpLog {
    /// Large events (not from the Kingman part).
    pub theta: Vec<f64>,
    /// Large events whose frequencies are proper with finite support.
    pub theta_f: Vec<f64>,
    /// Events after which one of the lowest `tracked` levels has no
    /// descendant left among the simulated levels.
    pub theta_prime_proxy: Vec<f64>,
}

impl JumpLog {
    /// The three set relations expected of the logs.
    pub fn inclusions_hold(&self) -> bool {
        let subset = |a: &[f64], b: &[f64]| a.iter().all(|x| b.contains(x));
        subset(&self.theta_f, &self.theta) && subset(&self.theta_f, &self.theta_prime_proxy)
    }
}

/// The default number of tracked levels, `⌈n/2⌉`.
pub fn default_tracked(n: usize) -> usize {
    n.div_ceil(2)
}

pub fn detect_jumps(stream: &EventStream, tracked: usize) -> JumpLog {
    let mut log = JumpLog::default();
    for e in &stream.events {
        if e.is_large() {
            log.theta.push(e.time);
            if e.atom_finite {
                log.theta_f.push(e.time);
            }
        }
        // a pre-event level L keeps a descendant iff L < #blocks of the event partition
        if e.sigma.closure_blocks() < tracked {
            log.theta_prime_proxy.push(e.time);
        }
    }
    log
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportAtom {
    pub weight: f64,
    pub level: usize,
    /// External-branch length attached to the atom, when recorded.
    pub mark: Option<f64>,
}

/// A finitely supported sampling measure on levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSupport {
    pub atoms: Vec<SupportAtom>,
    /// Mass not carried by atoms (the dust, placed on the initial state).
    pub remainder: f64,
}

impl WeightedSupport {
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum::<f64>() + self.remainder
    }
}

/// Mass `1/n` on each of the first `n` levels.
pub fn sampling_uniform(n: usize) -> WeightedSupport {
    WeightedSupport {
        atoms: (0..n).map(|level| SupportAtom { weight: 1.0 / n as f64, level, mark: None }).collect(),
        remainder: 0.0,
    }
}

/// Mass `|B|/n` at the least level of each block `B` of `Π_{s,t}`; within
/// Prohorov distance `2(t − s)` of the uniform sampling measure.
pub fn sampling_flow(state: &PlainState, s: f64) -> Result<WeightedSupport> {
    if !(s < state.time()) {
        return Err(Error::InvalidInput("flow sampling needs s < t".into()));
    }
    let pi = state.flow_partition(s)?;
    let n = pi.n() as f64;
    Ok(WeightedSupport {
        atoms: pi.blocks().iter().map(|b| SupportAtom { weight: b.len() as f64 / n, level: b[0], mark: None }).collect(),
        remainder: 0.0,
    })
}

/// Mass `|B|/n` with mark `u` at each non-singleton non-dust block, and the
/// remaining mass as dust.
pub fn sampling_dust_decomposed(state: &MarkedState) -> WeightedSupport {
    let dp = state.dust_partition();
    let n = state.n() as f64;
    let atoms: Vec<SupportAtom> = dp
        .partition
        .blocks()
        .iter()
        .filter(|b| b.len() >= 2)
        .map(|b| SupportAtom { weight: b.len() as f64 / n, level: b[0], mark: Some(state.u(b[0])) })
        .collect();
    let remainder = 1.0 - atoms.iter().map(|a| a.weight).sum::<f64>();
    WeightedSupport { atoms, remainder }
}
