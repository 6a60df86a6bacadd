//! Model instances: rate functions with declared bounds, the mutation
//! kernel, the scale parameter `n`, and randomized validation of the
//! standing assumptions.

pub mod json;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::quad::Quadrature;
use crate::rng::rng_from_seed;

/// Trait vector. Inline for dimensions up to two.
pub type TraitVec = SmallVec<[f64; 2]>;

/// `(trait, age) -> value`.
pub type RateFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// `((trait, age), (trait, age)) -> value`, focal individual first.
pub type PairFn = Arc<dyn Fn(&[f64], f64, &[f64], f64) -> f64 + Send + Sync>;
/// `age -> value`.
pub type AgeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `trait -> row-major d×d covariance`.
pub type CovarianceFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

pub fn rate_fn(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> RateFn {
    Arc::new(f)
}

pub fn constant_rate(c: f64) -> RateFn {
    Arc::new(move |_, _| c)
}

/// The closed trait space: an axis-aligned box or all of ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraitDomain {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    AllSpace,
}

impl TraitDomain {
    pub fn interval(lo: f64, hi: f64) -> Self {
        TraitDomain::Box {
            lower: vec![lo],
            upper: vec![hi],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            TraitDomain::AllSpace => x.iter().all(|v| v.is_finite()),
            TraitDomain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if let TraitDomain::Box { lower, upper } = self {
            if lower.len() != d || upper.len() != d {
                return Err(Error::InvalidModel(format!(
                    "trait box has {} / {} bounds for dimension {d}",
                    lower.len(),
                    upper.len()
                )));
            }
            if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                return Err(Error::InvalidModel(
                    "trait box has lower > upper".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The scale parameter `n`: individual weight `1/n`, aging velocity `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct SimScale(u64);

impl SimScale {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("scale n must be at least 1".into()));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<u64> for SimScale {
    type Error = Error;
    fn try_from(n: u64) -> Result<Self> {
        SimScale::new(n)
    }
}

impl From<SimScale> for u64 {
    fn from(s: SimScale) -> u64 {
        s.0
    }
}

/// A nonnegative rate with a declared upper bound.
#[derive(Clone)]
pub struct BoundedRate {
    pub f: RateFn,
    pub bound: f64,
}

impl BoundedRate {
    pub fn zero() -> Self {
        Self {
            f: constant_rate(0.0),
            bound: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], a: f64) -> f64 {
        (self.f)(x, a)
    }
}

/// Upper control on `|r(x, a)|`.
#[derive(Clone)]
pub enum AllometricBound {
    /// `|r| <= r_bar` everywhere.
    Uniform(f64),
    /// `|r(x, a')| <= env(x, a)` for every `a' <= a`; `env` nondecreasing
    /// in age. For allometric rates that grow without bound in age.
    Envelope(RateFn),
}

/// The fast rate `r(x, a)` shared by births and deaths, with its bound and
/// its lower envelope `r_under(a) <= |r(x, a)|`.
#[derive(Clone)]
pub struct Allometric {
    pub f: RateFn,
    pub bound: AllometricBound,
    pub lower: AgeFn,
}

impl Allometric {
    pub fn constant(c: f64) -> Self {
        Self {
            f: constant_rate(c),
            bound: AllometricBound::Uniform(c.abs()),
            lower: Arc::new(move |_| c.abs()),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], a: f64) -> f64 {
        (self.f)(x, a)
    }

    /// Upper bound on `|r(x, a')|` for `a' <= a`.
    #[inline]
    pub fn upper(&self, x: &[f64], a: f64) -> f64 {
        match &self.bound {
            AllometricBound::Uniform(r) => *r,
            AllometricBound::Envelope(env) => env(x, a),
        }
    }

    pub fn uniform_bound(&self) -> Option<f64> {
        match self.bound {
            AllometricBound::Uniform(r) => Some(r),
            AllometricBound::Envelope(_) => None,
        }
    }
}

/// Competition kernel `U((x, a), (y, α))`.
#[derive(Clone)]
pub enum Interaction {
    /// `U` depends on the focal individual only, so the total interaction
    /// is `U(x, a) · mass`.
    FocalOnly { kernel: RateFn, bound: f64 },
    Pairwise { kernel: PairFn, bound: f64 },
}

impl Interaction {
    pub fn none() -> Self {
        Interaction::FocalOnly {
            kernel: constant_rate(0.0),
            bound: 0.0,
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Interaction::FocalOnly { bound, .. } | Interaction::Pairwise { bound, .. } => *bound,
        }
    }

    /// A kernel declared bounded by zero is identically zero.
    pub fn is_zero(&self) -> bool {
        self.bound() == 0.0
    }

    pub fn is_focal_only(&self) -> bool {
        matches!(self, Interaction::FocalOnly { .. })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], a: f64, y: &[f64], alpha: f64) -> f64 {
        match self {
            Interaction::FocalOnly { kernel, .. } => kernel(x, a),
            Interaction::Pairwise { kernel, .. } => kernel(x, a, y, alpha),
        }
    }
}

/// Standard deviation structure of the Gaussian mutation step before the
/// `1/n` variance scaling.
#[derive(Clone)]
pub enum GaussianScale {
    Isotropic(f64),
    PerCoordinate(Vec<f64>),
    Covariance(CovarianceFn),
}

/// Law of the trait increment of a mutant offspring.
#[derive(Clone)]
pub enum MutationKernel {
    /// Centered Gaussian with variance `σ²/n` (or `Σ(x)/n`), conditioned on
    /// the offspring trait landing in the trait domain.
    GaussianConditioned(GaussianScale),
    /// No displacement: mutants carry the parent trait.
    PointMassZero,
}

/// A fully specified model instance.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub trait_dim: usize,
    pub trait_domain: TraitDomain,
    pub birth: BoundedRate,
    pub death: BoundedRate,
    pub allometric: Allometric,
    pub interaction: Interaction,
    pub mutation_prob: RateFn,
    pub mutation: MutationKernel,
    /// Cap on rejection attempts in the conditioned mutation sampler.
    pub max_mutation_attempts: u64,
    /// Largest age searched when locating survival cutoffs.
    pub a_max_search: f64,
    /// JSON description sufficient to rebuild the model, when known.
    pub descriptor: Option<serde_json::Value>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("trait_dim", &self.trait_dim)
            .field("trait_domain", &self.trait_domain)
            .field("b_bar", &self.birth.bound)
            .field("d_bar", &self.death.bound)
            .field("r_bar", &self.allometric.uniform_bound())
            .field("u_bar", &self.interaction.bound())
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Starts a model with every rate identically zero, `p ≡ 0` and a
    /// point-mass mutation kernel.
    pub fn builder(name: impl Into<String>, trait_domain: TraitDomain, trait_dim: usize) -> ModelBuilder {
        ModelBuilder {
            spec: ModelSpec {
                name: name.into(),
                trait_dim,
                trait_domain,
                birth: BoundedRate::zero(),
                death: BoundedRate::zero(),
                allometric: Allometric::constant(0.0),
                interaction: Interaction::none(),
                mutation_prob: constant_rate(0.0),
                mutation: MutationKernel::PointMassZero,
                max_mutation_attempts: 1_000_000,
                a_max_search: 1e4,
                descriptor: None,
            },
        }
    }

    #[inline]
    pub fn birth_rate(&self, x: &[f64], a: f64) -> f64 {
        self.birth.eval(x, a)
    }

    #[inline]
    pub fn death_rate(&self, x: &[f64], a: f64) -> f64 {
        self.death.eval(x, a)
    }

    #[inline]
    pub fn r(&self, x: &[f64], a: f64) -> f64 {
        self.allometric.eval(x, a)
    }

    #[inline]
    pub fn p(&self, x: &[f64], a: f64) -> f64 {
        (self.mutation_prob)(x, a)
    }
}

pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn birth(mut self, f: RateFn, bound: f64) -> Self {
        self.spec.birth = BoundedRate { f, bound };
        self
    }

    pub fn death(mut self, f: RateFn, bound: f64) -> Self {
        self.spec.death = BoundedRate { f, bound };
        self
    }

    pub fn allometric(mut self, a: Allometric) -> Self {
        self.spec.allometric = a;
        self
    }

    pub fn interaction(mut self, i: Interaction) -> Self {
        self.spec.interaction = i;
        self
    }

    pub fn mutation_prob(mut self, p: RateFn) -> Self {
        self.spec.mutation_prob = p;
        self
    }

    pub fn mutation(mut self, k: MutationKernel) -> Self {
        self.spec.mutation = k;
        self
    }

    pub fn max_mutation_attempts(mut self, cap: u64) -> Self {
        self.spec.max_mutation_attempts = cap;
        self
    }

    pub fn a_max_search(mut self, a: f64) -> Self {
        self.spec.a_max_search = a;
        self
    }

    pub fn descriptor(mut self, d: serde_json::Value) -> Self {
        self.spec.descriptor = Some(d);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let s = self.spec;
        if s.trait_dim == 0 {
            return Err(Error::InvalidModel("trait dimension must be positive".into()));
        }
        s.trait_domain.check_dim(s.trait_dim)?;
        let bounds = [
            ("birth", s.birth.bound),
            ("death", s.death.bound),
            ("interaction", s.interaction.bound()),
        ];
        for (name, b) in bounds {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{name} bound must be finite and nonnegative, got {b}"
                )));
            }
        }
        if let AllometricBound::Uniform(r) = s.allometric.bound {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "allometric bound must be finite and nonnegative, got {r}"
                )));
            }
        }
        match &s.mutation {
            MutationKernel::GaussianConditioned(GaussianScale::Isotropic(sigma)) => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::InvalidModel(format!("mutation sigma {sigma} invalid")));
                }
            }
            MutationKernel::GaussianConditioned(GaussianScale::PerCoordinate(v)) => {
                if v.len() != s.trait_dim || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::InvalidModel(
                        "per-coordinate mutation sigmas must match the trait dimension".into(),
                    ));
                }
            }
            _ => {}
        }
        if s.max_mutation_attempts == 0 {
            return Err(Error::InvalidModel("mutation attempt cap must be positive".into()));
        }
        Ok(s)
    }
}

// ---------------------------------------------------------------------------
// validation

/// One offending function, with its worst sampled witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub function: String,
    pub kind: String,
    pub trait_value: Vec<f64>,
    pub age: f64,
    pub value: f64,
    pub bound: f64,
    /// Number of sampled points that violated this condition.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub samples: u64,
    pub seed: u64,
    pub violations: Vec<BoundViolation>,
    pub tail_eps: f64,
    /// Smallest age `A` with `exp(-∫₀ᴬ r_under) <= tail_eps`.
    pub a_tail: Option<f64>,
    pub a_tail_failed: bool,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && !self.a_tail_failed
    }
}

/// Default `ε` for the reported survival cutoff.
pub const VALIDATION_TAIL_EPS: f64 = 1e-6;

/// Spot-checks the declared bounds on `samples` random `(trait, age)`
/// points and locates the survival cutoff of the lower envelope.
pub fn validate(spec: &ModelSpec, samples: u64, rng_seed: u64) -> Result<ValidationReport> {
    let quad = Quadrature::default();
    let a_tail = tail_age(spec, VALIDATION_TAIL_EPS, &quad)?;
    let age_range = a_tail.unwrap_or(50.0).max(1.0);
    let mut rng = rng_from_seed(rng_seed);
    let mut tally = ViolationTally::default();
    let tol = |bound: f64| bound * (1.0 + 1e-12) + 1e-300;

    for _ in 0..samples {
        let x = random_trait(&spec.trait_domain, spec.trait_dim, &mut rng);
        let a = rng.random::<f64>() * age_range;

        let b = finite("birth", spec.birth_rate(&x, a), &x, a)?;
        if b > tol(spec.birth.bound) {
            tally.record("birth", "above declared bound", &x, a, b, spec.birth.bound);
        }
        if b < 0.0 {
            tally.record("birth", "negative", &x, a, b, 0.0);
        }

        let d = finite("death", spec.death_rate(&x, a), &x, a)?;
        if d > tol(spec.death.bound) {
            tally.record("death", "above declared bound", &x, a, d, spec.death.bound);
        }
        if d < 0.0 {
            tally.record("death", "negative", &x, a, d, 0.0);
        }

        let r = finite("allometric", spec.r(&x, a), &x, a)?;
        let r_up = finite("allometric bound", spec.allometric.upper(&x, a), &x, a)?;
        if r.abs() > tol(r_up) {
            tally.record("allometric", "above declared bound", &x, a, r.abs(), r_up);
        }
        let r_low = finite("allometric lower envelope", (spec.allometric.lower)(a), &x, a)?;
        if r_low > r.abs() * (1.0 + 1e-12) + 1e-300 {
            tally.record("allometric lower envelope", "above |r|", &x, a, r_low, r.abs());
        }
        if r_low < 0.0 {
            tally.record("allometric lower envelope", "negative", &x, a, r_low, 0.0);
        }

        let y = random_trait(&spec.trait_domain, spec.trait_dim, &mut rng);
        let alpha = rng.random::<f64>() * age_range;
        let u = finite("interaction", spec.interaction.eval(&x, a, &y, alpha), &x, a)?;
        if u > tol(spec.interaction.bound()) {
            tally.record("interaction", "above declared bound", &x, a, u, spec.interaction.bound());
        }
        if u < 0.0 {
            tally.record("interaction", "negative", &x, a, u, 0.0);
        }

        let p = finite("mutation_prob", spec.p(&x, a), &x, a)?;
        if !(0.0..=1.0).contains(&p) {
            tally.record("mutation_prob", "outside [0, 1]", &x, a, p, 1.0);
        }
    }

    Ok(ValidationReport {
        model: spec.name.clone(),
        samples,
        seed: rng_seed,
        violations: tally.entries,
        tail_eps: VALIDATION_TAIL_EPS,
        a_tail,
        a_tail_failed: a_tail.is_none(),
    })
}

fn finite(function: &'static str, v: f64, x: &[f64], a: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            function,
            trait_value: x.to_vec(),
            age: a,
        })
    }
}

#[derive(Default)]
struct ViolationTally {
    entries: Vec<BoundViolation>,
}

impl ViolationTally {
    fn record(&mut self, function: &str, kind: &str, x: &[f64], a: f64, value: f64, bound: f64) {
        let excess = (value - bound).abs();
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.function == function && e.kind == kind)
        {
            e.count += 1;
            if excess > (e.value - e.bound).abs() {
                e.trait_value = x.to_vec();
                e.age = a;
                e.value = value;
                e.bound = bound;
            }
            return;
        }
        self.entries.push(BoundViolation {
            function: function.into(),
            kind: kind.into(),
            trait_value: x.to_vec(),
            age: a,
            value,
            bound,
            count: 1,
        });
    }
}

/// Uniform on a box; `N(0, 10²)` per coordinate on all of ℝᵈ.
pub fn random_trait<R: Rng + ?Sized>(domain: &TraitDomain, dim: usize, rng: &mut R) -> TraitVec {
    match domain {
        TraitDomain::Box { lower, upper } => lower
            .iter()
            .zip(upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect(),
        TraitDomain::AllSpace => (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                10.0 * z
            })
            .collect::<TraitVec>(),
    }
}

/// Smallest age `A` with `exp(-∫₀ᴬ r_under) <= eps`, or `None` when not
/// reached before `spec.a_max_search`.
pub fn tail_age(spec: &ModelSpec, eps: f64, quad: &Quadrature) -> Result<Option<f64>> {
    let lower = spec.allometric.lower.clone();
    cutoff_age(move |a| lower(a), eps, spec.a_max_search, quad)
}

/// Smallest `A` with `exp(-∫₀ᴬ rate) <= eps`; unit steps, then bisection.
pub(crate) fn cutoff_age(
    rate: impl Fn(f64) -> f64,
    eps: f64,
    a_max: f64,
    quad: &Quadrature,
) -> Result<Option<f64>> {
    let target = -eps.ln();
    if target <= 0.0 {
        return Ok(Some(0.0));
    }
    let step = 1.0;
    let mut lo = 0.0;
    let mut h_lo = 0.0;
    loop {
        if lo >= a_max {
            return Ok(None);
        }
        let hi = (lo + step).min(a_max);
        let h_hi = h_lo + quad.value(&rate, lo, hi)?;
        if !h_hi.is_finite() {
            return Err(Error::NonFinite {
                function: "allometric lower envelope",
                trait_value: vec![],
                age: hi,
            });
        }
        if h_hi >= target {
            // bisection on [lo, hi]
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let h_m = h_lo + quad.value(&rate, lo, m)?;
                if h_m >= target {
                    b = m;
                } else {
                    a = m;
                }
                if b - a <= 1e-13 * b.max(1.0) {
                    break;
                }
            }
            return Ok(Some(b));
        }
        lo = hi;
        h_lo = h_hi;
    }
}

// ---------------------------------------------------------------------------
// mutation

/// Result of one offspring draw.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDraw {
    pub trait_value: TraitVec,
    pub mutated: bool,
}

/// Offspring trait: the parent's with probability `1 - p(x, a)`, otherwise
/// the parent's plus a kernel step scaled by `1/√n` and conditioned (by
/// rejection) on the trait domain.
pub fn sample_offspring_trait<R: Rng + ?Sized>(
    spec: &ModelSpec,
    scale: SimScale,
    parent: &[f64],
    age: f64,
    rng: &mut R,
) -> Result<TraitVec> {
    draw_offspring(spec, scale, parent, age, rng).map(|d| d.trait_value)
}

pub fn draw_offspring<R: Rng + ?Sized>(
    spec: &ModelSpec,
    scale: SimScale,
    parent: &[f64],
    age: f64,
    rng: &mut R,
) -> Result<OffspringDraw> {
    let p = spec.p(parent, age);
    let u: f64 = rng.random();
    if !(u < p) {
        return Ok(OffspringDraw {
            trait_value: TraitVec::from_slice(parent),
            mutated: false,
        });
    }
    let trait_value = match &spec.mutation {
        MutationKernel::PointMassZero => TraitVec::from_slice(parent),
        MutationKernel::GaussianConditioned(g) => {
            conditioned_gaussian_step(spec, g, scale, parent, rng)?
        }
    };
    Ok(OffspringDraw {
        trait_value,
        mutated: true,
    })
}

fn conditioned_gaussian_step<R: Rng + ?Sized>(
    spec: &ModelSpec,
    g: &GaussianScale,
    scale: SimScale,
    parent: &[f64],
    rng: &mut R,
) -> Result<TraitVec> {
    let d = parent.len();
    let inv_sqrt_n = 1.0 / scale.as_f64().sqrt();
    let chol = match g {
        GaussianScale::Covariance(cov) => Some(cholesky(&cov(parent), d)?),
        _ => None,
    };
    let mut z: TraitVec = smallvec::smallvec![0.0; d];
    for _ in 0..spec.max_mutation_attempts {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let child: TraitVec = match (g, &chol) {
            (GaussianScale::Isotropic(s), _) => parent
                .iter()
                .zip(&z)
                .map(|(x, zi)| x + s * inv_sqrt_n * zi)
                .collect(),
            (GaussianScale::PerCoordinate(s), _) => parent
                .iter()
                .zip(&z)
                .zip(s)
                .map(|((x, zi), si)| x + si * inv_sqrt_n * zi)
                .collect(),
            (GaussianScale::Covariance(_), Some(l)) => (0..d)
                .map(|i| {
                    let step: f64 = (0..=i).map(|j| l[i * d + j] * z[j]).sum();
                    parent[i] + inv_sqrt_n * step
                })
                .collect(),
            (GaussianScale::Covariance(_), None) => unreachable!(),
        };
        if spec.trait_domain.contains(&child) {
            return Ok(child);
        }
    }
    Err(Error::DegenerateKernel {
        attempts: spec.max_mutation_attempts,
    })
}

/// Lower Cholesky factor of a row-major symmetric positive semi-definite
/// matrix.
fn cholesky(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if m.len() != d * d {
        return Err(Error::InvalidModel(format!(
            "covariance has {} entries, expected {}",
            m.len(),
            d * d
        )));
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = m[i * d + i] - s;
                if v < -1e-12 * m[i * d + i].abs().max(1.0) {
                    return Err(Error::InvalidModel("covariance is not positive semi-definite".into()));
                }
                l[i * d + i] = v.max(0.0).sqrt();
            } else {
                let djj = l[j * d + j];
                l[i * d + j] = if djj > 0.0 { (m[i * d + j] - s) / djj } else { 0.0 };
            }
        }
    }
    Ok(l)
}

// ---------------------------------------------------------------------------
// survival bound

/// `exp(-∫₀^ℓ n·r_under(n u) du)`: survival function of the lifetime that
/// stochastically dominates every individual's remaining life.
pub fn survival_bound(spec: &ModelSpec, scale: SimScale, elapsed: f64) -> Result<f64> {
    survival_bound_with(spec, scale, elapsed, &Quadrature::default())
}

pub fn survival_bound_with(
    spec: &ModelSpec,
    scale: SimScale,
    elapsed: f64,
    quad: &Quadrature,
) -> Result<f64> {
    if !(elapsed >= 0.0) {
        return Err(Error::Precondition(format!("elapsed time {elapsed} is negative")));
    }
    let n = scale.as_f64();
    let lower = &spec.allometric.lower;
    let h = quad.value(|u| n * lower(n * u), 0.0, elapsed)?;
    Ok((-h).exp())
}
