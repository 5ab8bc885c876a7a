//! The reproduction measure `Ξ = a·δ₀ + Ξ₀` and the event rates it induces.
//!
//! `Ξ₀` is either a finite list of weighted simplex atoms or one of a few
//! closed-form Λ families (measures concentrated on `x₂ = 0`). The rate of
//! an event whose restriction to the first `n` levels is the subset system
//! `σ` is
//!
//! ```text
//! λ_{n,σ} = ∫ Σ_{i₁..i_ℓ distinct} x_{i₁}^{k₁}..x_{i_ℓ}^{k_ℓ} (1-|x|₁)^{n-Σk} |x|₂⁻² Ξ₀(dx)
//!           + a·1{ℓ=1,k₁=2} + ∞·1{a>0,ℓ=1,k₁=1}
//! ```
//!
//! with `k_m` the block sizes of `σ`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::partition::{Partition, SubsetSystem};

/// Largest atom support for which injective-assignment sums are evaluated.
pub const MAX_ATOM_SUPPORT: usize = 20;

/// A rate that may be infinite. Never produced by float overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Finite(f64),
    Infinite,
}

impl Rate {
    pub fn is_finite(self) -> bool {
        matches!(self, Rate::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Rate::Finite(v) => Some(v),
            Rate::Infinite => None,
        }
    }

    fn add(self, v: f64) -> Rate {
        match self {
            Rate::Finite(x) => Rate::Finite(x + v),
            Rate::Infinite => Rate::Infinite,
        }
    }
}

impl std::ops::Add for Rate {
    type Output = Rate;
    fn add(self, rhs: Rate) -> Rate {
        match rhs {
            Rate::Finite(v) => self.add(v),
            Rate::Infinite => Rate::Infinite,
        }
    }
}

/// A point of the infinite simplex with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    entries: Vec<f64>,
    l1: f64,
    l2_sq: f64,
}

impl SimplexPoint {
    pub fn new(mut entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidModel("simplex entries must be positive".into()));
        }
        entries.sort_by(|a, b| b.total_cmp(a));
        let l1: f64 = entries.iter().sum();
        if l1 > 1.0 + 1e-15 {
            return Err(Error::InvalidModel(format!("simplex point has |x|_1 = {l1} > 1")));
        }
        let l2_sq = entries.iter().map(|x| x * x).sum();
        Ok(Self { entries, l1, l2_sq })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2_sq(&self) -> f64 {
        self.l2_sq
    }

    pub fn dust(&self) -> f64 {
        (1.0 - self.l1).max(0.0)
    }

    /// Proper frequencies with finite support.
    pub fn is_finite_proper(&self) -> bool {
        (self.l1 - 1.0).abs() <= 1e-12
    }

    /// Per-level interval assignment: `Some(k)` for the `k`-th subinterval,
    /// `None` for the dust interval.
    pub fn paint<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Option<usize>> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, &x) in self.entries.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return Some(k);
                    }
                }
                None
            })
            .collect()
    }

    /// The paintbox partition restricted to `n` levels.
    pub fn paintbox_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Partition {
        let paint = self.paint(n, rng);
        let labels: Vec<usize> = paint
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                Some(k) => *k,
                None => self.entries.len() + i,
            })
            .collect();
        Partition::from_labels(&labels)
    }

    /// The event subset system: levels grouped by non-dust subinterval.
    pub fn paintbox_system<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SubsetSystem {
        system_from_paint(n, &self.paint(n, rng))
    }

    /// Σ over injective maps of blocks to atom coordinates of Π x^{k}.
    fn injective_sum(&self, sizes: &[usize]) -> f64 {
        let s = self.entries.len();
        if sizes.len() > s {
            return 0.0;
        }
        // dp over the set of coordinates already used
        let mut dp = vec![0.0f64; 1 << s];
        dp[0] = 1.0;
        for (depth, &k) in sizes.iter().enumerate() {
            let mut next = vec![0.0f64; 1 << s];
            for mask in 0usize..(1 << s) {
                if dp[mask] == 0.0 || mask.count_ones() as usize != depth {
                    continue;
                }
                for (c, &x) in self.entries.iter().enumerate() {
                    if mask & (1 << c) == 0 {
                        next[mask | (1 << c)] += dp[mask] * x.powi(k as i32);
                    }
                }
            }
            dp = next;
        }
        dp.iter().sum()
    }

    /// Probability that no two of `n` paintbox levels share a subinterval.
    fn prob_no_merge(&self, n: usize) -> f64 {
        // elementary symmetric polynomials e_m of the entries
        let s = self.entries.len();
        let mut e = vec![0.0f64; s + 1];
        e[0] = 1.0;
        for &x in &self.entries {
            for m in (1..=s).rev() {
                e[m] += e[m - 1] * x;
            }
        }
        let d = self.dust();
        (0..=n.min(s))
            .map(|m| {
                // C(n,m) m! = n!/(n-m)!
                let falling: f64 = ((n - m + 1)..=n).map(|v| v as f64).product();
                falling * e[m] * d.powi((n - m) as i32)
            })
            .sum()
    }
}

pub(crate) fn system_from_paint(n: usize, paint: &[Option<usize>]) -> SubsetSystem {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in paint.iter().enumerate() {
        if let Some(k) = *p {
            match order.iter().position(|&o| o == k) {
                Some(g) => groups[g].push(i),
                None => {
                    order.push(k);
                    groups.push(vec![i]);
                }
            }
        }
    }
    SubsetSystem::from_sorted_blocks(n, groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub point: SimplexPoint,
}

/// Closed-form Λ measures of total mass one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaFamily {
    Beta([f64; 2]),
    Uniform {},
    Dirac(f64),
}

impl LambdaFamily {
    fn beta_params(self) -> Option<(f64, f64)> {
        match self {
            LambdaFamily::Beta([a, b]) => Some((a, b)),
            LambdaFamily::Uniform {} => Some((1.0, 1.0)),
            LambdaFamily::Dirac(_) => None,
        }
    }

    /// `λ_{n,k} = ∫ x^{k-2} (1-x)^{n-k} Λ(dx)`, in log form.
    fn ln_rate(self, n: usize, k: usize) -> Option<f64> {
        match self.beta_params() {
            Some((a, b)) => {
                let p = a + k as f64 - 2.0;
                if p <= 0.0 {
                    return None;
                }
                Some(ln_beta(p, b + (n - k) as f64) - ln_beta(a, b))
            }
            None => {
                let LambdaFamily::Dirac(p) = self else { unreachable!() };
                let tail = if n == k { 0.0 } else { (n - k) as f64 * (1.0 - p).ln() };
                Some((k as f64 - 2.0) * p.ln() + tail)
            }
        }
    }

    fn rate(self, n: usize, k: usize) -> Rate {
        match self.ln_rate(n, k) {
            Some(l) => Rate::Finite(l.exp()),
            None => Rate::Infinite,
        }
    }

    /// Weights `C(n,k)·λ_{n,k}` for `k` in `k_min..=n`.
    fn size_weights(self, n: usize, k_min: usize) -> Option<Vec<f64>> {
        (k_min..=n)
            .map(|k| self.ln_rate(n, k).map(|l| (ln_binom(n, k) + l).exp()))
            .collect()
    }

    fn is_finite_proper(self) -> bool {
        matches!(self, LambdaFamily::Dirac(p) if p == 1.0)
    }
}

fn ln_binom(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DustClass {
    Dust,
    NoDust,
}

/// Which events are visible at truncation `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Events that change the partition of the first `n` levels.
    ChangesGamma,
    /// Events in which some of the first `n` levels lies in a non-singleton block.
    TouchesLevel,
}

/// Where an event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Kingman,
    Atom(usize),
    Family,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiMeasure {
    kingman: f64,
    atoms: Vec<Atom>,
    family: Option<LambdaFamily>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AtomJson {
    w: f64,
    x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct XiJson {
    #[serde(default)]
    kingman: f64,
    #[serde(default)]
    atoms: Vec<AtomJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<LambdaFamily>,
}

impl XiMeasure {
    pub fn new(kingman: f64, atoms: Vec<Atom>, family: Option<LambdaFamily>) -> Result<Self> {
        if !(kingman >= 0.0) || !kingman.is_finite() {
            return Err(Error::InvalidModel("kingman mass must be finite and nonnegative".into()));
        }
        if family.is_some() && !atoms.is_empty() {
            return Err(Error::InvalidModel("a closed-form family excludes explicit atoms".into()));
        }
        for a in &atoms {
            if !(a.weight > 0.0) || !a.weight.is_finite() {
                return Err(Error::InvalidModel("atom weights must be positive".into()));
            }
            if a.point.entries().is_empty() {
                return Err(Error::InvalidModel("atoms at 0 belong in the kingman mass".into()));
            }
            if a.point.entries().len() > MAX_ATOM_SUPPORT {
                return Err(Error::InvalidModel(format!(
                    "atom support {} exceeds the limit {MAX_ATOM_SUPPORT}",
                    a.point.entries().len()
                )));
            }
        }
        match family {
            Some(LambdaFamily::Beta([a, b])) if !(a > 0.0 && b > 0.0) => {
                return Err(Error::InvalidModel("beta parameters must be positive".into()))
            }
            Some(LambdaFamily::Dirac(p)) if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::InvalidModel("dirac location must lie in (0, 1]".into()))
            }
            _ => {}
        }
        Ok(Self { kingman, atoms, family })
    }

    pub fn zero() -> Self {
        Self { kingman: 0.0, atoms: Vec::new(), family: None }
    }

    pub fn kingman(a: f64) -> Self {
        Self::new(a, Vec::new(), None).expect("valid kingman mass")
    }

    /// `Λ = mass·δ_p`, as a single simplex atom `(p)`.
    pub fn lambda_dirac(p: f64, mass: f64) -> Result<Self> {
        Self::new(
            0.0,
            vec![Atom { weight: mass, point: SimplexPoint::new(vec![p])? }],
            None,
        )
    }

    pub fn star() -> Self {
        Self::lambda_dirac(1.0, 1.0).expect("valid star model")
    }

    pub fn single_atom(weight: f64, x: Vec<f64>) -> Result<Self> {
        Self::new(0.0, vec![Atom { weight, point: SimplexPoint::new(x)? }], None)
    }

    pub fn family(family: LambdaFamily) -> Result<Self> {
        Self::new(0.0, Vec::new(), Some(family))
    }

    pub fn with_kingman(mut self, a: f64) -> Result<Self> {
        self.kingman = a;
        Self::new(self.kingman, self.atoms, self.family)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: XiJson = serde_json::from_str(text)?;
        let atoms = j
            .atoms
            .into_iter()
            .map(|a| Ok(Atom { weight: a.w, point: SimplexPoint::new(a.x)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(j.kingman, atoms, j.family)
    }

    pub fn to_json(&self) -> String {
        let j = XiJson {
            kingman: self.kingman,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson { w: a.weight, x: a.point.entries().to_vec() })
                .collect(),
            family: self.family,
        };
        serde_json::to_string(&j).expect("model serializes")
    }

    pub fn kingman_mass(&self) -> f64 {
        self.kingman
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn lambda_family(&self) -> Option<LambdaFamily> {
        self.family
    }

    pub fn is_zero(&self) -> bool {
        self.kingman == 0.0 && self.atoms.is_empty() && self.family.is_none()
    }

    /// `Ξ(Δ)`, also the rate at which two fixed levels share a block.
    pub fn total_mass(&self) -> f64 {
        self.kingman
            + self.atoms.iter().map(|a| a.weight).sum::<f64>()
            + if self.family.is_some() { 1.0 } else { 0.0 }
    }

    /// Whether events from `component` have proper frequencies with finite support.
    pub fn component_is_finite_proper(&self, component: Component) -> bool {
        match component {
            Component::Kingman => false,
            Component::Atom(k) => self.atoms[k].point.is_finite_proper(),
            Component::Family => self.family.is_some_and(LambdaFamily::is_finite_proper),
        }
    }

    /// `λ_{n,σ}` contributed by one component.
    pub fn component_rate_sigma(&self, component: Component, n: usize, sigma: &SubsetSystem) -> Rate {
        // sorted so that the value depends only on the multiset of sizes
        let mut sizes: Vec<usize> = sigma.blocks().iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        if sizes.is_empty() {
            return Rate::Finite(0.0);
        }
        let covered: usize = sizes.iter().sum();
        debug_assert!(covered <= n);
        match component {
            Component::Kingman => {
                if self.kingman > 0.0 && sizes.len() == 1 {
                    match sizes[0] {
                        1 => Rate::Infinite,
                        2 => Rate::Finite(self.kingman),
                        _ => Rate::Finite(0.0),
                    }
                } else {
                    Rate::Finite(0.0)
                }
            }
            Component::Atom(k) => {
                let a = &self.atoms[k];
                let p = &a.point;
                let v = p.injective_sum(&sizes) * p.dust().powi((n - covered) as i32);
                Rate::Finite(a.weight * v / p.l2_sq())
            }
            Component::Family => match self.family {
                Some(f) if sizes.len() == 1 => f.rate(n, sizes[0]),
                _ => Rate::Finite(0.0),
            },
        }
    }

    pub fn components(&self) -> Vec<Component> {
        let mut c = Vec::new();
        if self.kingman > 0.0 {
            c.push(Component::Kingman);
        }
        c.extend((0..self.atoms.len()).map(Component::Atom));
        if self.family.is_some() {
            c.push(Component::Family);
        }
        c
    }

    /// `λ_{n,σ}`.
    pub fn rate_sigma(&self, n: usize, sigma: &SubsetSystem) -> Rate {
        self.components()
            .into_iter()
            .fold(Rate::Finite(0.0), |acc, c| acc + self.component_rate_sigma(c, n, sigma))
    }

    /// `λ_π`: total rate of events whose restriction to `n` levels is `π`.
    pub fn rate_pi(&self, pi: &Partition) -> Result<f64> {
        if pi.is_trivial() {
            return Err(Error::InvalidInput("rate_pi needs a partition with a non-singleton block".into()));
        }
        let n = pi.n();
        let mut merging: Vec<usize> = pi.blocks().iter().map(Vec::len).filter(|&k| k >= 2).collect();
        merging.sort_unstable_by(|a, b| b.cmp(a));
        let singles = n - merging.iter().sum::<usize>();
        let mut total = 0.0;
        if self.kingman > 0.0 && merging == [2] {
            total += self.kingman;
        }
        for a in &self.atoms {
            total += a.weight * paintbox_restriction_prob(&a.point, &merging, singles) / a.point.l2_sq();
        }
        if let Some(f) = self.family {
            if merging.len() == 1 {
                total += f.rate(n, merging[0]).finite().expect("merging blocks have finite rate");
            }
        }
        Ok(total)
    }

    /// Rate at which one fixed level lies in a non-singleton block.
    pub fn single_level_rate(&self) -> Rate {
        if self.kingman > 0.0 {
            return Rate::Infinite;
        }
        let mut r: f64 = self.atoms.iter().map(|a| a.weight * a.point.l1() / a.point.l2_sq()).sum();
        if let Some(f) = self.family {
            match f.rate(1, 1) {
                Rate::Finite(v) => r += v,
                Rate::Infinite => return Rate::Infinite,
            }
        }
        Rate::Finite(r)
    }

    pub fn classify_dust(&self) -> DustClass {
        if self.single_level_rate().is_finite() {
            DustClass::Dust
        } else {
            DustClass::NoDust
        }
    }

    /// Total rate of events visible at truncation `n` under `scope`.
    pub fn visible_rate(&self, n: usize, scope: Scope) -> Rate {
        self.components()
            .into_iter()
            .fold(Rate::Finite(0.0), |acc, c| acc + self.component_visible_rate(c, n, scope))
    }

    pub fn component_visible_rate(&self, component: Component, n: usize, scope: Scope) -> Rate {
        if n == 0 {
            return Rate::Finite(0.0);
        }
        match (component, scope) {
            (Component::Kingman, Scope::ChangesGamma) => {
                Rate::Finite(self.kingman * (n * (n - 1)) as f64 / 2.0)
            }
            (Component::Kingman, Scope::TouchesLevel) => Rate::Infinite,
            (Component::Atom(k), _) => {
                let a = &self.atoms[k];
                let p = &a.point;
                let hit = match scope {
                    Scope::ChangesGamma => 1.0 - p.prob_no_merge(n),
                    Scope::TouchesLevel => 1.0 - p.dust().powi(n as i32),
                };
                Rate::Finite(a.weight * hit.max(0.0) / p.l2_sq())
            }
            (Component::Family, _) => {
                let f = self.family.expect("family component present");
                let k_min = if scope == Scope::ChangesGamma { 2 } else { 1 };
                match f.size_weights(n, k_min) {
                    Some(w) => Rate::Finite(w.iter().sum()),
                    None => Rate::Infinite,
                }
            }
        }
    }

    /// Block-size weights `C(n,k) λ_{n,k}`, `k = k_min..=n`, of the family component.
    pub(crate) fn family_size_weights(&self, n: usize, scope: Scope) -> Option<Vec<f64>> {
        let k_min = if scope == Scope::ChangesGamma { 2 } else { 1 };
        self.family.and_then(|f| f.size_weights(n, k_min))
    }
}

/// `κ(x, γ̄⁻¹(π))` for a partition with merging block sizes `merging` and
/// `singles` singleton blocks: each merging block takes its own coordinate;
/// each singleton either lands in the dust or in a fresh coordinate.
fn paintbox_restriction_prob(x: &SimplexPoint, merging: &[usize], singles: usize) -> f64 {
    let s = x.entries().len();
    let d = x.dust();
    let mut dp = vec![0.0f64; 1 << s];
    dp[0] = 1.0;
    let steps = merging.iter().map(|&k| (k, false)).chain(std::iter::repeat_n((1, true), singles));
    for (k, may_dust) in steps {
        let mut next = vec![0.0f64; 1 << s];
        for mask in 0usize..(1 << s) {
            let v = dp[mask];
            if v == 0.0 {
                continue;
            }
            if may_dust {
                next[mask] += v * d;
            }
            for (c, &xc) in x.entries().iter().enumerate() {
                if mask & (1 << c) == 0 {
                    next[mask | (1 << c)] += v * xc.powi(k as i32);
                }
            }
        }
        dp = next;
    }
    dp.iter().sum()
}
