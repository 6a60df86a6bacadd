//! Stable age density and age-averaged coefficients.
//!
//! For a fixed trait `x`, the stable age density is
//!
//! ```text
//! m̂(x, a) = S(a) / Z,   S(a) = exp(-∫₀ᵃ r(x, α) dα),   Z = ∫₀^∞ S(a) da
//! ```
//!
//! and an averaged coefficient is `ψ̂(x) = ∫ ψ(x, a) m̂(x, a) da`. Ages are
//! truncated at the cutoff `A` where `S(A) = 1e-10`; the tail beyond it is
//! estimated by `S(A)/r(x, A)`, which is exact for constant `r` and an upper
//! bound when `r` is nondecreasing past `A`.
//!
//! The cumulative hazard is checkpointed every age unit, so each evaluation
//! of `S` integrates `r` over less than one unit.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interaction, ModelSpec, TraitDomain, TraitVec};
use crate::population::fmt_f64;
use crate::quad::{Estimate, Quadrature};

/// Survival level defining the age cutoff.
pub const CUTOFF_EPS: f64 = 1e-10;

/// Age-averaged coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    /// `b̂`
    B,
    /// `d̂`
    D,
    /// `r̂`
    R,
    /// `(p·r)^`, the factor in front of the mutation generator.
    Pr,
    /// `Û` for a focal-only kernel.
    U,
}

impl Coefficient {
    pub const ALL: [Coefficient; 5] = [Self::B, Self::D, Self::R, Self::Pr, Self::U];

    pub fn name(self) -> &'static str {
        match self {
            Self::B => "b_hat",
            Self::D => "d_hat",
            Self::R => "r_hat",
            Self::Pr => "pr_hat",
            Self::U => "u_hat",
        }
    }
}

/// `m̂(x, ·)` for one trait.
#[derive(Clone)]
pub struct StableAge<'a> {
    spec: &'a ModelSpec,
    x: TraitVec,
    outer: Quadrature,
    inner: Quadrature,
    /// Cumulative hazard at ages `0, 1, 2, …`.
    checkpoints: Vec<f64>,
    cutoff: f64,
    /// `∫_A^∞ S`, estimated.
    tail: f64,
    z: f64,
}

impl<'a> StableAge<'a> {
    pub fn new(spec: &'a ModelSpec, x: &[f64]) -> Result<Self> {
        Self::with_quadrature(spec, x, Quadrature::default())
    }

    pub fn with_quadrature(spec: &'a ModelSpec, x: &[f64], quad: Quadrature) -> Result<Self> {
        let inner = Quadrature {
            initial_panels: 2,
            ..quad
        };
        let target = -CUTOFF_EPS.ln();
        let r = |a: f64| spec.r(x, a);
        let mut checkpoints = vec![0.0];
        let cutoff = loop {
            let k = checkpoints.len() - 1;
            let lo = k as f64;
            if lo >= spec.a_max_search {
                return Err(Error::HeavyTail {
                    trait_value: x.to_vec(),
                    eps: CUTOFF_EPS,
                    a_max: spec.a_max_search,
                });
            }
            let h_lo = checkpoints[k];
            let h_hi = h_lo + inner.value(r, lo, lo + 1.0)?;
            if !h_hi.is_finite() {
                return Err(Error::NonFinite {
                    function: "allometric",
                    trait_value: x.to_vec(),
                    age: lo + 1.0,
                });
            }
            checkpoints.push(h_hi);
            if h_hi >= target {
                let (mut a, mut b) = (lo, lo + 1.0);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if h_lo + inner.value(r, lo, m)? >= target {
                        b = m;
                    } else {
                        a = m;
                    }
                    if b - a <= 1e-14 * b.max(1.0) {
                        break;
                    }
                }
                break b;
            }
        };
        let mut this = Self {
            spec,
            x: TraitVec::from_slice(x),
            outer: quad,
            inner,
            checkpoints,
            cutoff,
            tail: 0.0,
            z: 1.0,
        };
        let s_cut = this.survival(cutoff)?;
        let r_cut = spec.r(x, cutoff).max((spec.allometric.lower)(cutoff));
        if !(r_cut > 0.0) {
            return Err(Error::HeavyTail {
                trait_value: x.to_vec(),
                eps: CUTOFF_EPS,
                a_max: cutoff,
            });
        }
        this.tail = s_cut / r_cut;
        let body = this.integrate_unnormalized(|_| 1.0, 0.0, cutoff)?;
        this.z = body.value + this.tail;
        Ok(this)
    }

    pub fn trait_value(&self) -> &[f64] {
        &self.x
    }

    /// Age `A` with `S(A) = 1e-10`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `Z = ∫₀^∞ S`.
    pub fn normalizer(&self) -> f64 {
        self.z
    }

    /// Probability mass of `m̂` beyond the cutoff.
    pub fn tail_mass(&self) -> f64 {
        self.tail / self.z
    }

    /// `∫₀ᵃ r(x, α) dα`.
    pub fn hazard(&self, a: f64) -> Result<f64> {
        if a <= 0.0 {
            return Ok(0.0);
        }
        let last = self.checkpoints.len() - 1;
        let k = (a.floor() as usize).min(last);
        let h = self.checkpoints[k] + self.inner.value(|s| self.spec.r(&self.x, s), k as f64, a)?;
        Ok(h)
    }

    pub fn survival(&self, a: f64) -> Result<f64> {
        Ok((-self.hazard(a)?).exp())
    }

    /// `m̂(x, a)`; zero for negative ages.
    pub fn density(&self, a: f64) -> Result<f64> {
        if a < 0.0 {
            return Ok(0.0);
        }
        Ok(self.survival(a)? / self.z)
    }

    /// `∫_lo^hi g(a) S(a) da`, split at integer ages.
    fn integrate_unnormalized(&self, mut g: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> Result<Estimate> {
        let mut est = Estimate {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        };
        if hi <= lo {
            return Ok(est);
        }
        let mut a = lo;
        while a < hi {
            let b = (a.floor() + 1.0).min(hi);
            let k = (a.floor() as usize).min(self.checkpoints.len() - 1);
            let h_k = self.checkpoints[k];
            let k_age = k as f64;
            let mut failed = None;
            let e = self.outer.integrate(
                |s| {
                    match self.inner.value(|u| self.spec.r(&self.x, u), k_age, s) {
                        Ok(h) => g(s) * (-(h_k + h)).exp(),
                        Err(err) => {
                            failed.get_or_insert(err);
                            f64::NAN
                        }
                    }
                },
                a,
                b,
            );
            if let Some(err) = failed {
                return Err(err);
            }
            let e = e?;
            est.value += e.value;
            est.error += e.error;
            est.intervals += e.intervals;
            a = b;
        }
        Ok(est)
    }

    /// `∫_lo^hi g(a) m̂(x, a) da` over `[lo, hi] ∩ [0, A]`.
    pub fn integrate(&self, g: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> Result<Estimate> {
        let e = self.integrate_unnormalized(g, lo.max(0.0), hi.min(self.cutoff))?;
        Ok(Estimate {
            value: e.value / self.z,
            error: e.error / self.z,
            intervals: e.intervals,
        })
    }

    /// `ψ̂(x) = ∫ ψ(x, a) m̂(x, a) da`. Beyond the cutoff `ψ` is taken
    /// constant at `ψ(x, A)`; the reported error adds `|ψ(x, A)|` times the
    /// tail mass.
    pub fn hatted(&self, psi: impl Fn(&[f64], f64) -> f64) -> Result<Estimate> {
        let e = self.integrate(|a| psi(&self.x, a), 0.0, self.cutoff)?;
        let tail = psi(&self.x, self.cutoff) * self.tail_mass();
        Ok(Estimate {
            value: e.value + tail,
            error: e.error + tail.abs(),
            ..e
        })
    }

    /// `∫₀^∞ r m̂ = m̂(x, 0)` with the tail `∫_A^∞ r S = S(A)` added exactly.
    pub fn boundary_flux(&self) -> Result<f64> {
        let body = self.integrate(|a| self.spec.r(&self.x, a), 0.0, self.cutoff)?;
        Ok(body.value + self.survival(self.cutoff)? / self.z)
    }
}

/// `m̂(x, a)` computed from scratch.
pub fn stable_age_density(spec: &ModelSpec, x: &[f64], a: f64) -> Result<f64> {
    StableAge::new(spec, x)?.density(a)
}

/// `ψ̂(x)` computed from scratch.
pub fn hatted(spec: &ModelSpec, psi: impl Fn(&[f64], f64) -> f64, x: &[f64]) -> Result<Estimate> {
    StableAge::new(spec, x)?.hatted(psi)
}

/// One averaged coefficient at an arbitrary trait, recomputed from scratch.
/// `None` for `Û` under a pairwise kernel, which needs a trait measure
/// (see [`averaged_interaction`]).
pub fn coefficient_at(spec: &ModelSpec, c: Coefficient, x: &[f64]) -> Result<Option<f64>> {
    let sa = StableAge::new(spec, x)?;
    let v = match c {
        Coefficient::B => sa.hatted(|x, a| spec.birth_rate(x, a))?,
        Coefficient::D => sa.hatted(|x, a| spec.death_rate(x, a))?,
        Coefficient::R => sa.hatted(|x, a| spec.r(x, a))?,
        Coefficient::Pr => sa.hatted(|x, a| spec.p(x, a) * spec.r(x, a))?,
        Coefficient::U => match &spec.interaction {
            Interaction::FocalOnly { kernel, .. } => sa.hatted(|x, a| kernel(x, a))?,
            Interaction::Pairwise { .. } => return Ok(None),
        },
    };
    Ok(Some(v.value))
}

/// `X̄Û(x) = ∫ Σⱼ wⱼ ∫∫ U((x, a), (yⱼ, α)) m̂(yⱼ, α) m̂(x, a) dα da` for a
/// discrete trait measure `Σⱼ wⱼ δ_yⱼ`.
pub fn averaged_interaction(spec: &ModelSpec, x: &[f64], measure: &[(TraitVec, f64)]) -> Result<f64> {
    let mass: f64 = measure.iter().map(|(_, w)| w).sum();
    if spec.interaction.is_zero() || mass == 0.0 {
        return Ok(0.0);
    }
    let sx = StableAge::new(spec, x)?;
    match &spec.interaction {
        Interaction::FocalOnly { kernel, .. } => Ok(sx.hatted(|x, a| kernel(x, a))?.value * mass),
        Interaction::Pairwise { kernel, .. } => {
            let mut total = 0.0;
            for (y, w) in measure {
                let sy = StableAge::new(spec, y)?;
                let mut failed = None;
                let v = sx.integrate(
                    |a| match sy.hatted(|y, alpha| kernel(x, a, y, alpha)) {
                        Ok(e) => e.value,
                        Err(e) => {
                            failed.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    0.0,
                    sx.cutoff(),
                );
                if let Some(e) = failed {
                    return Err(e);
                }
                total += w * v?.value;
            }
            Ok(total)
        }
    }
}

// ---------------------------------------------------------------------------
// test functions and residuals

/// `ψ(a) = c·(a - l)³(u - a)³` on `[l, u]`, zero elsewhere, scaled to a
/// maximum of 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub lo: f64,
    pub hi: f64,
}

impl Bump {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("bump needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    fn scale(&self) -> f64 {
        let half = 0.5 * (self.hi - self.lo);
        1.0 / half.powi(6)
    }

    pub fn value(&self, a: f64) -> f64 {
        if a <= self.lo || a >= self.hi {
            return 0.0;
        }
        self.scale() * ((a - self.lo) * (self.hi - a)).powi(3)
    }

    pub fn derivative(&self, a: f64) -> f64 {
        if a <= self.lo || a >= self.hi {
            return 0.0;
        }
        let (p, q) = (a - self.lo, self.hi - a);
        self.scale() * 3.0 * p * p * q * q * (q - p)
    }
}

/// Smooth compactly supported age test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    pub bumps: Vec<Bump>,
}

impl TestFunctionFamily {
    /// Six bumps; the first two straddle age 0 so that `ψ(0) ≠ 0`.
    pub fn builtin() -> Self {
        let spans = [(-1.0, 1.0), (-0.5, 2.0), (0.0, 1.0), (0.5, 2.5), (1.0, 4.0), (2.0, 6.0)];
        Self {
            bumps: spans.iter().map(|&(l, u)| Bump { lo: l, hi: u }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub trait_value: Vec<f64>,
    /// `∫ψ'm̂ - ∫ψ r m̂ + ψ(0)∫r m̂`, one per test function.
    pub weak: Vec<f64>,
    pub weak_max: f64,
    /// `max |∂ₐm̂ + r·m̂|` on the age grid (five-point differences).
    pub strong_max: f64,
    /// `|m̂(x, 0) - ∫ r m̂|`.
    pub boundary: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.weak_max.max(self.strong_max).max(self.boundary)
    }
}

const FD_STEP: f64 = 1e-3;
const STRONG_GRID: usize = 200;

/// Residuals of the stationary age equation at trait `x`.
pub fn stationary_residual(spec: &ModelSpec, x: &[f64], family: &TestFunctionFamily) -> Result<ResidualReport> {
    let sa = StableAge::new(spec, x)?;
    let flux = sa.boundary_flux()?;
    let weak = family
        .bumps
        .iter()
        .map(|psi| {
            let d = sa.integrate(|a| psi.derivative(a), psi.lo, psi.hi)?.value;
            let k = sa.integrate(|a| psi.value(a) * spec.r(x, a), psi.lo, psi.hi)?.value;
            Ok(d - k + psi.value(0.0) * flux)
        })
        .collect::<Result<Vec<f64>>>()?;
    let h = FD_STEP;
    let top = sa.cutoff() - 2.0 * h;
    let mut strong_max: f64 = 0.0;
    for j in 0..=STRONG_GRID {
        let a = 2.0 * h + (top - 2.0 * h) * j as f64 / STRONG_GRID as f64;
        let m = |s: f64| sa.density(s);
        let deriv = (m(a - 2.0 * h)? - 8.0 * m(a - h)? + 8.0 * m(a + h)? - m(a + 2.0 * h)?) / (12.0 * h);
        strong_max = strong_max.max((deriv + spec.r(x, a) * m(a)?).abs());
    }
    let boundary = (sa.density(0.0)? - flux).abs();
    Ok(ResidualReport {
        trait_value: x.to_vec(),
        weak_max: weak.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        weak,
        strong_max,
        boundary,
    })
}

/// Weak residuals of an arbitrary age density on `[0, cutoff]`, for
/// negative controls.
pub fn weak_residual_of_density(
    spec: &ModelSpec,
    x: &[f64],
    family: &TestFunctionFamily,
    density: impl Fn(f64) -> f64,
    cutoff: f64,
) -> Result<Vec<f64>> {
    let q = Quadrature::default();
    let flux = q.value(|a| spec.r(x, a) * density(a), 0.0, cutoff)?;
    family
        .bumps
        .iter()
        .map(|psi| {
            let (lo, hi) = (psi.lo.max(0.0), psi.hi.min(cutoff));
            let d = q.value(|a| psi.derivative(a) * density(a), lo, hi)?;
            let k = q.value(|a| psi.value(a) * spec.r(x, a) * density(a), lo, hi)?;
            Ok(d - k + psi.value(0.0) * flux)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Explicit trait grid; otherwise `trait_points` uniform points over
    /// the trait interval.
    pub trait_grid: Option<Vec<f64>>,
    pub trait_points: usize,
    pub age_nodes: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            trait_grid: None,
            trait_points: 101,
            age_nodes: 2001,
        }
    }
}

/// `m̂(x, ·)` tabulated on a uniform age grid over `[0, A]`, with its CDF
/// and the averaged coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitEquilibrium {
    pub x: f64,
    pub z: f64,
    pub cutoff: f64,
    pub tail_mass: f64,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub b_hat: f64,
    pub d_hat: f64,
    pub r_hat: f64,
    pub pr_hat: f64,
    /// Only for focal-only kernels.
    pub u_hat: Option<f64>,
}

impl TraitEquilibrium {
    pub fn age_step(&self) -> f64 {
        self.cutoff / (self.density.len() - 1) as f64
    }

    pub fn age(&self, k: usize) -> f64 {
        k as f64 * self.age_step()
    }

    /// CDF of `m̂(x, ·)` by cubic Hermite interpolation, with the density
    /// as derivative.
    pub fn cdf_at(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        if a >= self.cutoff {
            return 1.0;
        }
        let h = self.age_step();
        let k = ((a / h) as usize).min(self.density.len() - 2);
        let s = (a - k as f64 * h) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.cdf[k] + h10 * h * self.density[k] + h01 * self.cdf[k + 1] + h11 * h * self.density[k + 1]
    }

    pub fn coefficient(&self, c: Coefficient) -> Option<f64> {
        match c {
            Coefficient::B => Some(self.b_hat),
            Coefficient::D => Some(self.d_hat),
            Coefficient::R => Some(self.r_hat),
            Coefficient::Pr => Some(self.pr_hat),
            Coefficient::U => self.u_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTable {
    pub model: String,
    pub traits: Vec<f64>,
    pub rows: Vec<TraitEquilibrium>,
}

impl EquilibriumTable {
    /// Builds the table for a one-dimensional trait; traits in parallel.
    pub fn build(spec: &ModelSpec, opts: &TableOptions) -> Result<Self> {
        if spec.trait_dim != 1 {
            return Err(Error::Precondition(
                "equilibrium tables need a one-dimensional trait".into(),
            ));
        }
        if opts.age_nodes < 2 {
            return Err(Error::Config("age_nodes must be at least 2".into()));
        }
        let traits = match (&opts.trait_grid, &spec.trait_domain) {
            (Some(g), _) => {
                if g.is_empty() || g.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Config("trait grid must be strictly increasing".into()));
                }
                g.clone()
            }
            (None, TraitDomain::Box { lower, upper }) => {
                let k = opts.trait_points.max(1);
                if k == 1 {
                    vec![0.5 * (lower[0] + upper[0])]
                } else {
                    (0..k)
                        .map(|i| lower[0] + (upper[0] - lower[0]) * i as f64 / (k - 1) as f64)
                        .collect()
                }
            }
            (None, TraitDomain::AllSpace) => {
                return Err(Error::Config("an unbounded trait space needs an explicit trait grid".into()))
            }
        };
        let rows = traits
            .par_iter()
            .map(|&x| tabulate_trait(spec, x, opts.age_nodes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: spec.name.clone(),
            traits,
            rows,
        })
    }

    /// Grid index `j` and weight `w` with `x ≈ (1-w)·traits[j] + w·traits[j+1]`,
    /// clamped to the grid.
    pub fn bracket(&self, x: f64) -> (usize, f64) {
        let g = &self.traits;
        if g.len() == 1 || x <= g[0] {
            return (0, 0.0);
        }
        if x >= g[g.len() - 1] {
            return (g.len() - 1, 0.0);
        }
        let j = g.partition_point(|&v| v <= x) - 1;
        (j, (x - g[j]) / (g[j + 1] - g[j]))
    }

    /// Coefficient at trait `x` by four-point Lagrange interpolation on the
    /// trait grid (exact at grid points and for cubics).
    pub fn coefficient(&self, c: Coefficient, x: f64) -> Option<f64> {
        let g = &self.traits;
        let vals: Option<Vec<f64>> = self.rows.iter().map(|r| r.coefficient(c)).collect();
        let vals = vals?;
        if g.len() == 1 {
            return Some(vals[0]);
        }
        if g.len() < 4 {
            let (j, w) = self.bracket(x);
            let k = (j + 1).min(g.len() - 1);
            return Some((1.0 - w) * vals[j] + w * vals[k]);
        }
        let (j, _) = self.bracket(x);
        let start = j.saturating_sub(1).min(g.len() - 4);
        let idx = start..start + 4;
        let mut s = 0.0;
        for i in idx.clone() {
            let mut l = 1.0;
            for m in idx.clone() {
                if m != i {
                    l *= (x - g[m]) / (g[i] - g[m]);
                }
            }
            s += l * vals[i];
        }
        Some(s)
    }

    /// `equilibrium.csv`: `kind=density` rows `(x, a, m_hat)` every
    /// `age_stride` nodes, then one `kind=summary` row per trait.
    pub fn write_csv<W: Write>(&self, w: W, age_stride: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        let blank = String::new;
        for row in &self.rows {
            let stride = age_stride.max(1);
            let last = row.density.len() - 1;
            for k in (0..=last).filter(|k| k % stride == 0 || *k == last) {
                out.write_record([
                    "density".to_string(),
                    fmt_f64(row.x),
                    fmt_f64(row.age(k)),
                    fmt_f64(row.density[k]),
                    blank(),
                    blank(),
                    blank(),
                    blank(),
                    blank(),
                    blank(),
                    blank(),
                ])?;
            }
        }
        for row in &self.rows {
            out.write_record([
                "summary".to_string(),
                fmt_f64(row.x),
                blank(),
                blank(),
                fmt_f64(row.z),
                fmt_f64(row.cutoff),
                fmt_f64(row.b_hat),
                fmt_f64(row.d_hat),
                fmt_f64(row.r_hat),
                fmt_f64(row.pr_hat),
                row.u_hat.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "kind", "x", "a", "m_hat", "Z", "A_tail", "b_hat", "d_hat", "r_hat", "pr_hat", "u_hat",
];

/// One parsed row of `equilibrium.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EquilibriumCsvRow {
    pub kind: String,
    pub x: f64,
    pub a: Option<f64>,
    pub m_hat: Option<f64>,
    #[serde(rename = "Z")]
    pub z: Option<f64>,
    #[serde(rename = "A_tail")]
    pub a_tail: Option<f64>,
    pub b_hat: Option<f64>,
    pub d_hat: Option<f64>,
    pub r_hat: Option<f64>,
    pub pr_hat: Option<f64>,
    pub u_hat: Option<f64>,
}

/// Parses `equilibrium.csv`, rejecting unexpected headers or kinds.
pub fn read_equilibrium_csv<R: Read>(r: R) -> Result<Vec<EquilibriumCsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Config("unexpected equilibrium.csv header".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: EquilibriumCsvRow = rec?;
        let ok = match row.kind.as_str() {
            "density" => row.a.is_some() && row.m_hat.is_some(),
            "summary" => row.z.is_some() && row.b_hat.is_some(),
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!("malformed equilibrium row {row:?}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn tabulate_trait(spec: &ModelSpec, x: f64, nodes: usize) -> Result<TraitEquilibrium> {
    let xs = [x];
    let sa = StableAge::new(spec, &xs)?;
    let a_max = sa.cutoff();
    let h = a_max / (nodes - 1) as f64;
    let mut density = Vec::with_capacity(nodes);
    let mut cdf = Vec::with_capacity(nodes);
    let mut acc = 0.0;
    for k in 0..nodes {
        let a = k as f64 * h;
        density.push(sa.density(a)?);
        if k > 0 {
            acc += sa.integrate(|_| 1.0, (k - 1) as f64 * h, a)?.value;
        }
        cdf.push(acc);
    }
    let hat = |f: &dyn Fn(&[f64], f64) -> f64| sa.hatted(f).map(|e| e.value);
    let u_hat = match &spec.interaction {
        Interaction::FocalOnly { kernel, .. } => Some(hat(&|x, a| kernel(x, a))?),
        Interaction::Pairwise { .. } => None,
    };
    Ok(TraitEquilibrium {
        x,
        z: sa.normalizer(),
        cutoff: a_max,
        tail_mass: sa.tail_mass(),
        density,
        cdf,
        b_hat: hat(&|x, a| spec.birth_rate(x, a))?,
        d_hat: hat(&|x, a| spec.death_rate(x, a))?,
        r_hat: hat(&|x, a| spec.r(x, a))?,
        pr_hat: hat(&|x, a| spec.p(x, a) * spec.r(x, a))?,
        u_hat,
    })
}
