//! The Poisson point measure of reproduction events, restricted to the
//! first `n` levels and a finite time window.
//!
//! Event times form a homogeneous Poisson process whose rate is the rate of
//! events visible at truncation `n`. Given a time, the originating component
//! of `Ξ` is chosen proportionally to its visible rate, and the event's subset
//! system is drawn from the conditional law of that component's paintbox.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{enumerate_subset_systems, Partition, SubsetSystem};
use crate::rng::{SeedSpec, SimRng};
use crate::xi::{Component, LambdaFamily, Rate, Scope, XiMeasure};

/// Largest truncation for which the enumerated categorical sampler is available.
pub const CATEGORICAL_MAX_N: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionEvent {
    pub time: f64,
    /// `σ̄_n`: the event's blocks intersected with the first `n` levels,
    /// including singleton remainders of blocks that extend beyond them.
    pub sigma: SubsetSystem,
    pub origin: Component,
    /// The originating frequencies are proper with finite support.
    pub atom_finite: bool,
}

impl ReproductionEvent {
    /// `γ̄_n` of the event partition.
    pub fn full_restriction(&self) -> Partition {
        self.sigma.closure()
    }

    /// Whether the event belongs to the large-event part of the measure.
    pub fn is_large(&self) -> bool {
        self.origin != Component::Kingman
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub n: usize,
    pub start: f64,
    pub end: f64,
    pub scope: Scope,
    pub seed: SeedSpec,
    pub events: Vec<ReproductionEvent>,
}

impl EventStream {
    pub fn empty(n: usize, start: f64, end: f64, scope: Scope, seed: SeedSpec) -> Self {
        Self { n, start, end, scope, seed, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The same realisation seen through the first `m ≤ n` levels. Events
    /// that become invisible are dropped, so the result has the law of a
    /// stream generated directly at truncation `m`.
    pub fn restrict(&self, m: usize) -> EventStream {
        assert!(m <= self.n, "cannot restrict to more levels than generated");
        let events = self
            .events
            .iter()
            .filter_map(|e| {
                let sigma = e.sigma.restrict(m);
                visible(&sigma, self.scope).then(|| ReproductionEvent { sigma, ..e.clone() })
            })
            .collect();
        EventStream { n: m, events, ..self.clone() }
    }

    /// Events with times in `(a, b]`.
    pub fn window(&self, a: f64, b: f64) -> &[ReproductionEvent] {
        let lo = self.events.partition_point(|e| e.time <= a);
        let hi = self.events.partition_point(|e| e.time <= b);
        &self.events[lo..hi.max(lo)]
    }

    /// CSV dump: `time,origin,sigma,atom_finite`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,origin,sigma,atom_finite\n");
        for e in &self.events {
            let origin = match e.origin {
                Component::Kingman => "kingman".to_string(),
                Component::Atom(k) => format!("atom({k})"),
                Component::Family => "family".to_string(),
            };
            // the subset-system encoding contains commas, so it is quoted
            out.push_str(&format!("{},{},\"{}\",{}\n", e.time, origin, e.sigma, u8::from(e.atom_finite)));
        }
        out
    }
}

fn visible(sigma: &SubsetSystem, scope: Scope) -> bool {
    match scope {
        Scope::ChangesGamma => sigma.has_merge(),
        Scope::TouchesLevel => !sigma.is_empty(),
    }
}

/// How event subset systems are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Paintbox draws conditioned on visibility by rejection.
    #[default]
    Thinning,
    /// Categorical draw over all subset systems of `[n]` (`n ≤ 8`).
    Categorical,
}

enum Plan {
    Thinning {
        components: Vec<Component>,
        pick: WeightedIndex<f64>,
        family_sizes: Option<(usize, WeightedIndex<f64>)>,
    },
    Categorical {
        table: Vec<(Component, SubsetSystem)>,
        pick: WeightedIndex<f64>,
    },
}

/// Draws the mark of a visible event at truncation `n`.
pub struct EventSampler<'a> {
    xi: &'a XiMeasure,
    n: usize,
    scope: Scope,
    total: f64,
    plan: Option<Plan>,
}

impl<'a> EventSampler<'a> {
    pub fn new(xi: &'a XiMeasure, n: usize, scope: Scope, mode: SamplerMode) -> Result<Self> {
        let mut rates = Vec::new();
        let components = xi.components();
        for &c in &components {
            match xi.component_visible_rate(c, n, scope) {
                Rate::Finite(r) => rates.push(r),
                Rate::Infinite => {
                    return Err(Error::InfiniteRate(format!(
                        "component {c:?} has infinite visible rate at n = {n} in scope {scope:?}"
                    )))
                }
            }
        }
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            return Ok(Self { xi, n, scope, total: 0.0, plan: None });
        }
        let plan = match mode {
            SamplerMode::Thinning => {
                let family_sizes = match xi.family_size_weights(n, scope) {
                    Some(w) if w.iter().any(|&v| v > 0.0) => {
                        let k_min = if scope == Scope::ChangesGamma { 2 } else { 1 };
                        Some((k_min, WeightedIndex::new(&w).expect("positive size weights")))
                    }
                    _ => None,
                };
                Plan::Thinning {
                    pick: WeightedIndex::new(&rates).expect("positive component rates"),
                    components,
                    family_sizes,
                }
            }
            SamplerMode::Categorical => {
                if n > CATEGORICAL_MAX_N {
                    return Err(Error::InvalidInput(format!(
                        "categorical sampling needs n ≤ {CATEGORICAL_MAX_N}, got {n}"
                    )));
                }
                let mut table = Vec::new();
                let mut weights = Vec::new();
                for sigma in enumerate_subset_systems(n).into_iter().filter(|s| visible(s, scope)) {
                    for &c in &components {
                        let r = xi
                            .component_rate_sigma(c, n, &sigma)
                            .finite()
                            .expect("finite visible rate implies finite event rates");
                        if r > 0.0 {
                            table.push((c, sigma.clone()));
                            weights.push(r);
                        }
                    }
                }
                Plan::Categorical { table, pick: WeightedIndex::new(&weights).expect("positive rates") }
            }
        };
        Ok(Self { xi, n, scope, total, plan: Some(plan) })
    }

    /// Total visible rate.
    pub fn rate(&self) -> f64 {
        self.total
    }

    /// Draws `(σ, origin)` for one visible event. Panics if the rate is zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (SubsetSystem, Component) {
        match self.plan.as_ref().expect("sampling from a zero-rate measure") {
            Plan::Categorical { table, pick } => {
                let (c, s) = &table[pick.sample(rng)];
                (s.clone(), *c)
            }
            Plan::Thinning { components, pick, family_sizes } => {
                let c = components[pick.sample(rng)];
                let sigma = match c {
                    Component::Kingman => {
                        let pair = index::sample(rng, self.n, 2);
                        let (a, b) = (pair.index(0), pair.index(1));
                        SubsetSystem::new(self.n, vec![vec![a.min(b), a.max(b)]]).expect("pair")
                    }
                    Component::Atom(k) => {
                        let point = &self.xi.atoms()[k].point;
                        loop {
                            let s = point.paintbox_system(self.n, rng);
                            if visible(&s, self.scope) {
                                break s;
                            }
                        }
                    }
                    Component::Family => {
                        let (k_min, sizes) = family_sizes.as_ref().expect("family weights");
                        let k = k_min + sizes.sample(rng);
                        let mut block = index::sample(rng, self.n, k).into_vec();
                        block.sort_unstable();
                        SubsetSystem::new(self.n, vec![block]).expect("one block")
                    }
                };
                (sigma, c)
            }
        }
    }
}

/// Poisson events with times in `(start, end]` visible at truncation `n`.
pub fn generate(
    xi: &XiMeasure,
    n: usize,
    window: (f64, f64),
    scope: Scope,
    seed: SeedSpec,
) -> Result<EventStream> {
    generate_with(xi, n, window, scope, seed, SamplerMode::Thinning)
}

pub fn generate_with(
    xi: &XiMeasure,
    n: usize,
    (start, end): (f64, f64),
    scope: Scope,
    seed: SeedSpec,
    mode: SamplerMode,
) -> Result<EventStream> {
    if !(start <= end) || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidInput(format!("bad window ({start}, {end}]")));
    }
    let mut stream = EventStream::empty(n, start, end, scope, seed);
    let sampler = EventSampler::new(xi, n, scope, mode)?;
    if sampler.rate() == 0.0 {
        return Ok(stream);
    }
    let mut rng: SimRng = seed.rng();
    let gaps = Exp::new(sampler.rate()).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let mut t = start;
    loop {
        // a zero gap would create simultaneous events; redraw it
        let gap = loop {
            let g: f64 = gaps.sample(&mut rng);
            if t + g > t {
                break g;
            }
        };
        t += gap;
        if t > end {
            break;
        }
        let (sigma, origin) = sampler.sample(&mut rng);
        stream.events.push(ReproductionEvent {
            time: t,
            sigma,
            origin,
            atom_finite: xi.component_is_finite_proper(origin),
        });
    }
    Ok(stream)
}

/// Events on `(-lookback, horizon]`, for genealogies in stationarity.
pub fn generate_two_sided(
    xi: &XiMeasure,
    n: usize,
    lookback: f64,
    horizon: f64,
    scope: Scope,
    seed: SeedSpec,
) -> Result<EventStream> {
    generate(xi, n, (-lookback, horizon), scope, seed)
}

/// Counts of newborn and reproducing levels, and the running sums of squared
/// and total block frequencies over large events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ell: usize,
    pub bin_edges: Vec<f64>,
    /// `N^ℓ` per bin: newborn levels among the first `ℓ`.
    pub newborn: Vec<u64>,
    /// `N^(ℓ)` per bin: levels among the first `ℓ` taking part in an event.
    pub involved: Vec<u64>,
    /// `(t, U(t))` at each large event with known frequencies.
    pub u_path: Vec<(f64, f64)>,
    /// `(t, V(t))` likewise, with `|x|₁` summands.
    pub v_path: Vec<(f64, f64)>,
}

/// `b_ℓ(π) = ℓ − #γ̄_ℓ(π)` from the event's subset system.
pub fn newborn_count(sigma: &SubsetSystem, ell: usize) -> usize {
    sigma.restrict(ell).blocks().iter().map(|b| b.len() - 1).sum()
}

/// `b_(ℓ)(π)`: levels among the first `ℓ` outside singleton blocks of `π`.
pub fn involved_count(sigma: &SubsetSystem, ell: usize) -> usize {
    sigma.restrict(ell).union_size()
}

/// Diagnostics over `bins` equal-width intervals of the stream window.
/// Events from a Beta-type family carry no recorded frequencies and do not
/// enter `U`/`V`.
pub fn event_diagnostics(stream: &EventStream, xi: &XiMeasure, ell: usize, bins: usize) -> Diagnostics {
    let ell = ell.min(stream.n);
    let bins = bins.max(1);
    let width = (stream.end - stream.start) / bins as f64;
    let bin_edges = (0..=bins).map(|k| stream.start + width * k as f64).collect();
    let mut newborn = vec![0u64; bins];
    let mut involved = vec![0u64; bins];
    let (mut u, mut v) = (0.0, 0.0);
    let (mut u_path, mut v_path) = (Vec::new(), Vec::new());
    for e in &stream.events {
        let k = if width > 0.0 {
            (((e.time - stream.start) / width).ceil() as usize).clamp(1, bins) - 1
        } else {
            0
        };
        newborn[k] += newborn_count(&e.sigma, ell) as u64;
        involved[k] += involved_count(&e.sigma, ell) as u64;
        let freqs = match e.origin {
            Component::Atom(a) => {
                let p = &xi.atoms()[a].point;
                Some((p.l2_sq(), p.l1()))
            }
            Component::Family => match xi.lambda_family() {
                Some(LambdaFamily::Dirac(p)) => Some((p * p, p)),
                _ => None,
            },
            Component::Kingman => None,
        };
        if let Some((sq, l1)) = freqs {
            u += sq;
            v += l1;
            u_path.push((e.time, u));
            v_path.push((e.time, v));
        }
    }
    Diagnostics { ell, bin_edges, newborn, involved, u_path, v_path }
}
