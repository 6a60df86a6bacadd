//! The two registered size-structured logistic models, their closed-form
//! averaged coefficients, and the extinction machinery for the first one:
//! the drift bound `Λ`, the threshold mass `m₀`, the dominating square-root
//! diffusion `Z` and its hitting-time bound.
//!
//! Both models share
//!
//! ```text
//! b(x, a) = x(x₀ - x)e^{-a},  d = d₀,  U = η(x₀ - x)  (focal only)
//! ```
//!
//! with a Gaussian mutation kernel of variance `σ²/n` conditioned on the
//! trait interval. Example 1 has `r ≡ 1` on `[0, x₀]`; example 2 has
//! `r(x, a) = x·a` on `[x₁, x₂] ⊂ (0, x₀)`.
//!
//! The mutation probability `p` is not pinned down by the model
//! description; it defaults to 1.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::Coefficient;
use crate::error::{Error, Result};
use crate::model::{
    constant_rate, rate_fn, Allometric, AllometricBound, GaussianScale, Interaction, ModelSpec,
    MutationKernel, TraitDomain,
};
use crate::rng::{replicate_seed, rng_from_seed};
use crate::simulate::{run_replicates_map, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1Params {
    pub x0: f64,
    pub d0: f64,
    pub eta: f64,
    pub sigma: f64,
    pub p: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            x0: 4.0,
            d0: 0.25,
            eta: 1.7,
            sigma: 1.0,
            p: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example2Params {
    pub x0: f64,
    pub d0: f64,
    pub eta: f64,
    pub sigma: f64,
    pub p: f64,
    pub x1: f64,
    pub x2: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        let e1 = Example1Params::default();
        Self {
            x0: e1.x0,
            d0: e1.d0,
            eta: e1.eta,
            sigma: e1.sigma,
            p: e1.p,
            x1: 0.05,
            x2: 3.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleParams {
    Example1(Example1Params),
    Example2(Example2Params),
}

fn check_common(x0: f64, d0: f64, eta: f64, sigma: f64, p: f64) -> Result<()> {
    let ok = x0 > 0.0
        && x0.is_finite()
        && eta > 0.0
        && eta.is_finite()
        && d0 >= 0.0
        && d0.is_finite()
        && sigma >= 0.0
        && sigma.is_finite()
        && (0.0..=1.0).contains(&p);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "example parameters out of range: x0={x0}, d0={d0}, eta={eta}, sigma={sigma}, p={p}"
        )))
    }
}

/// Largest value of `x(x₀ - x)` over `[lo, hi]`.
fn parabola_max(x0: f64, lo: f64, hi: f64) -> f64 {
    let f = |x: f64| x * (x0 - x);
    if (lo..=hi).contains(&(x0 / 2.0)) {
        f(x0 / 2.0)
    } else {
        f(lo).max(f(hi))
    }
}

fn shared_rates(x0: f64, d0: f64, eta: f64) -> (crate::model::RateFn, crate::model::RateFn, crate::model::RateFn) {
    let birth = rate_fn(move |x, a| {
        let x = x[0];
        if (0.0..=x0).contains(&x) {
            x * (x0 - x) * (-a).exp()
        } else {
            0.0
        }
    });
    let kernel = rate_fn(move |x, _| eta * (x0 - x[0]));
    (birth, constant_rate(d0), kernel)
}

impl ExampleParams {
    pub fn defaults(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Example1(Example1Params::default())),
            2 => Ok(Self::Example2(Example2Params::default())),
            _ => Err(Error::UnknownModel(format!("example{id}"))),
        }
    }

    /// Parameters for example `id` with the fields of `overrides` (a JSON
    /// object, or null) replacing the defaults.
    pub fn with_overrides(id: u8, overrides: &serde_json::Value) -> Result<Self> {
        let v = if overrides.is_null() {
            serde_json::json!({})
        } else {
            overrides.clone()
        };
        let parsed = match id {
            1 => Self::Example1(
                serde_json::from_value(v).map_err(|e| Error::Config(format!("example1 overrides: {e}")))?,
            ),
            2 => Self::Example2(
                serde_json::from_value(v).map_err(|e| Error::Config(format!("example2 overrides: {e}")))?,
            ),
            _ => return Err(Error::UnknownModel(format!("example{id}"))),
        };
        parsed.check()?;
        Ok(parsed)
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Example1(_) => 1,
            Self::Example2(_) => 2,
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            Self::Example1(p) => check_common(p.x0, p.d0, p.eta, p.sigma, p.p),
            Self::Example2(p) => {
                check_common(p.x0, p.d0, p.eta, p.sigma, p.p)?;
                if !(0.0 < p.x1 && p.x1 < p.x2 && p.x2 < p.x0) {
                    return Err(Error::Config(format!(
                        "example2 needs 0 < x1 < x2 < x0, got x1={}, x2={}, x0={}",
                        p.x1, p.x2, p.x0
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn trait_bounds(&self) -> (f64, f64) {
        match *self {
            Self::Example1(p) => (0.0, p.x0),
            Self::Example2(p) => (p.x1, p.x2),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        self.check()?;
        let (lo, hi) = self.trait_bounds();
        let descriptor = serde_json::json!({
            "builtin": format!("example{}", self.id()),
            "overrides": match self {
                Self::Example1(p) => serde_json::to_value(p)?,
                Self::Example2(p) => serde_json::to_value(p)?,
            },
        });
        let builder = |name: &str, x0: f64, d0: f64, eta: f64, sigma: f64, p: f64| {
            let (birth, death, kernel) = shared_rates(x0, d0, eta);
            ModelSpec::builder(name, TraitDomain::interval(lo, hi), 1)
                .birth(birth, parabola_max(x0, lo, hi))
                .death(death, d0)
                .interaction(Interaction::FocalOnly {
                    kernel,
                    bound: eta * (x0 - lo),
                })
                .mutation_prob(constant_rate(p))
                .mutation(MutationKernel::GaussianConditioned(GaussianScale::Isotropic(sigma)))
                .descriptor(descriptor.clone())
        };
        match *self {
            Self::Example1(p) => builder("example1", p.x0, p.d0, p.eta, p.sigma, p.p)
                .allometric(Allometric::constant(1.0))
                .build(),
            Self::Example2(p) => {
                let x1 = p.x1;
                builder("example2", p.x0, p.d0, p.eta, p.sigma, p.p)
                    .allometric(Allometric {
                        f: rate_fn(|x, a| x[0] * a),
                        bound: AllometricBound::Envelope(rate_fn(|x, a| x[0].abs() * a.max(0.0))),
                        lower: Arc::new(move |a| x1 * a),
                    })
                    .build()
            }
        }
    }

    /// Closed-form averaged coefficient at trait `x`.
    pub fn closed_form(&self, which: Coefficient, x: f64) -> f64 {
        match *self {
            Self::Example1(p) => match which {
                Coefficient::B => x * (p.x0 - x) / 2.0,
                Coefficient::D => p.d0,
                Coefficient::R => 1.0,
                Coefficient::Pr => p.p,
                Coefficient::U => p.eta * (p.x0 - x),
            },
            Self::Example2(p) => match which {
                Coefficient::B => x * (p.x0 - x) * birth_factor(x),
                Coefficient::D => p.d0,
                Coefficient::R => (2.0 * x / std::f64::consts::PI).sqrt(),
                Coefficient::Pr => p.p * (2.0 * x / std::f64::consts::PI).sqrt(),
                Coefficient::U => p.eta * (p.x0 - x),
            },
        }
    }
}

/// Built-in model `id ∈ {1, 2}` with optional parameter overrides.
pub fn build_example(id: u8, overrides: &serde_json::Value) -> Result<ModelSpec> {
    ExampleParams::with_overrides(id, overrides)?.build()
}

/// Built-in model by registered name.
pub fn build_named(name: &str, overrides: &serde_json::Value) -> Result<ModelSpec> {
    match name {
        "example1" => build_example(1, overrides),
        "example2" => build_example(2, overrides),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Closed-form coefficient of example `id` under default parameters.
pub fn closed_form_hatted(id: u8, which: Coefficient, x: f64) -> Result<f64> {
    Ok(ExampleParams::defaults(id)?.closed_form(which, x))
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `2·e^{1/(2x)}·Φ(-1/√x)`: example 2's averaged birth rate divided by
/// `x(x₀ - x)`. Example 1's counterpart is `1/2`.
pub fn birth_factor(x: f64) -> f64 {
    // With s = 1/√(2x) the factor is erfcx(s) = e^{s²}erfc(s); the direct
    // product under- and overflows for tiny x.
    let s = 1.0 / (2.0 * x).sqrt();
    if s < 25.0 {
        2.0 * (s * s).exp() * std_normal_cdf(-1.0 / x.sqrt())
    } else {
        // erfcx(s) ~ 1/(s√π) · (1 - 1/(2s²) + 3/(4s⁴) - 15/(8s⁶))
        let s2 = s * s;
        let series = 1.0 - 1.0 / (2.0 * s2) + 3.0 / (4.0 * s2 * s2) - 15.0 / (8.0 * s2 * s2 * s2);
        series / (s * std::f64::consts::PI.sqrt())
    }
}

// ---------------------------------------------------------------------------
// extinction machinery

/// Dominating-diffusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominationConfig {
    pub model: Example1Params,
    pub zeta: f64,
    /// Ceiling `M` for the exit time `ρ_M`.
    pub ceiling: f64,
    /// Euler step.
    pub dt: f64,
    /// Initial mass `z`.
    pub z: f64,
    /// `Z` at or below this level is absorbed at 0.
    pub absorb: f64,
    /// `false` drops the Brownian term.
    pub noise: bool,
    /// Paths still inside `(m₀, M)` at this time are censored.
    pub max_time: f64,
}

impl Default for DominationConfig {
    fn default() -> Self {
        Self {
            model: Example1Params::default(),
            zeta: 0.1,
            ceiling: 1e4,
            dt: 1e-4,
            z: 1.0,
            absorb: 1e-6,
            noise: true,
            max_time: 1e3,
        }
    }
}

impl DominationConfig {
    /// `m₀ = (x₀(x₀+ζ)/2 - d₀) / (η(2d₀/x₀ - ζ))`.
    pub fn m0(&self) -> f64 {
        let p = &self.model;
        (p.x0 * (p.x0 + self.zeta) / 2.0 - p.d0) / (p.eta * (2.0 * p.d0 / p.x0 - self.zeta))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.model;
        check_common(p.x0, p.d0, p.eta, p.sigma, p.p)?;
        let zeta_max = (2.0 * p.d0 / p.x0).min(1.0);
        if !(self.zeta > 0.0 && self.zeta < zeta_max) {
            return Err(Error::Config(format!(
                "zeta must lie in (0, {zeta_max}), got {}",
                self.zeta
            )));
        }
        let m0 = self.m0();
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(Error::Config(format!("m0 = {m0} is not positive")));
        }
        if !(self.ceiling > self.z.max(m0)) {
            return Err(Error::Config(format!(
                "ceiling M = {} must exceed max(z, m0) = {}",
                self.ceiling,
                self.z.max(m0)
            )));
        }
        if !(self.dt > 0.0 && self.max_time > 0.0 && self.z >= 0.0 && self.absorb >= 0.0) {
            return Err(Error::Config("dt, max_time must be positive; z, absorb nonnegative".into()));
        }
        Ok(())
    }

    /// Drift of `Z` at level `z`.
    pub fn drift(&self, z: f64) -> f64 {
        let p = &self.model;
        let pull = -self.zeta * p.x0 / 2.0 * z;
        if z <= self.m0() {
            pull + self.m0() * (p.x0 * (p.x0 + self.zeta) / 2.0 - p.d0)
        } else {
            pull
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaBound {
    pub lambda: f64,
    pub bound: f64,
}

/// `Λ(x, Z) = x(x₀-x)/2 - (d₀ + η(x₀-x)Z)` and its piecewise majorant
/// `-ζx₀/2·𝟙{Z ≥ m₀} + (x₀²/2 - d₀)·𝟙{Z ≤ m₀}`. At `Z = m₀` both terms
/// apply.
pub fn lambda_bound(cfg: &DominationConfig, x: f64, z: f64) -> LambdaBound {
    let p = &cfg.model;
    let lambda = x * (p.x0 - x) / 2.0 - (p.d0 + p.eta * (p.x0 - x) * z);
    let m0 = cfg.m0();
    let mut bound = 0.0;
    if z >= m0 {
        bound += -cfg.zeta * p.x0 / 2.0;
    }
    if z <= m0 {
        bound += p.x0 * p.x0 / 2.0 - p.d0;
    }
    LambdaBound { lambda, bound }
}

/// Hitting and exit times of one Euler path of `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationPath {
    /// First time `Z ≤ m₀`.
    pub tau_m0: Option<f64>,
    /// Absorption time.
    pub tau_0: Option<f64>,
    /// First time `Z ≥ M`.
    pub rho_m: Option<f64>,
    pub final_t: f64,
    pub final_z: f64,
    pub steps: u64,
    /// Steps whose untruncated update fell below `-absorb`.
    pub negative_excursions: u64,
    pub warnings: Vec<String>,
    /// `(t, Z)` every `record_every` steps, when requested.
    pub path: Vec<(f64, f64)>,
}

/// Euler–Maruyama with full truncation for
/// `dZ = (-ζx₀/2·Z + m₀(x₀(x₀+ζ)/2 - d₀)𝟙{Z ≤ m₀})dt + √(2Z)dB`, run to
/// `horizon` or absorption.
pub fn dominating_diffusion(cfg: &DominationConfig, horizon: f64, seed: u64) -> Result<DominationPath> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok(run_z(cfg, horizon, &mut rng, false, None))
}

/// As [`dominating_diffusion`], keeping every `record_every`-th state.
pub fn dominating_diffusion_path(
    cfg: &DominationConfig,
    horizon: f64,
    seed: u64,
    record_every: usize,
) -> Result<DominationPath> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok(run_z(cfg, horizon, &mut rng, false, Some(record_every.max(1))))
}

fn run_z<R: Rng + ?Sized>(
    cfg: &DominationConfig,
    horizon: f64,
    rng: &mut R,
    stop_at_exit: bool,
    record_every: Option<usize>,
) -> DominationPath {
    let m0 = cfg.m0();
    let sqrt_dt = cfg.dt.sqrt();
    let mut z = cfg.z;
    let mut out = DominationPath {
        tau_m0: None,
        tau_0: None,
        rho_m: None,
        final_t: 0.0,
        final_z: z,
        steps: 0,
        negative_excursions: 0,
        warnings: Vec::new(),
        path: Vec::new(),
    };
    let mut t = 0.0;
    let mark = |t: f64, z: f64, out: &mut DominationPath| {
        if out.tau_m0.is_none() && z <= m0 {
            out.tau_m0 = Some(t);
        }
        if out.rho_m.is_none() && z >= cfg.ceiling {
            out.rho_m = Some(t);
        }
        if out.tau_0.is_none() && z <= cfg.absorb {
            out.tau_0 = Some(t);
        }
    };
    if z <= cfg.absorb {
        z = 0.0;
    }
    mark(0.0, z, &mut out);
    if record_every.is_some() {
        out.path.push((0.0, z));
    }
    while t < horizon && out.tau_0.is_none() {
        if stop_at_exit && (out.tau_m0.is_some() || out.rho_m.is_some()) {
            break;
        }
        let zp = z.max(0.0);
        let mut next = z + cfg.drift(zp) * cfg.dt;
        if cfg.noise {
            let xi: f64 = rng.sample(StandardNormal);
            next += (2.0 * zp).sqrt() * sqrt_dt * xi;
        }
        out.steps += 1;
        t = out.steps as f64 * cfg.dt;
        if next < -cfg.absorb {
            out.negative_excursions += 1;
        }
        z = if next <= cfg.absorb { 0.0 } else { next };
        mark(t, z, &mut out);
        if let Some(k) = record_every {
            if out.steps.is_multiple_of(k as u64) || out.tau_0.is_some() {
                out.path.push((t, z));
            }
        }
    }
    if out.negative_excursions > 0 {
        out.warnings.push(format!(
            "{} Euler updates fell below -{:e}; consider a smaller step",
            out.negative_excursions, cfg.absorb
        ));
    }
    out.final_t = t;
    out.final_z = z;
    out
}

/// Monte-Carlo check of `m₀·E_z[τ_{m₀} ∧ ρ_M] ≤ 2z/(ζx₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingBoundReport {
    pub config: DominationConfig,
    pub m0: f64,
    pub z: f64,
    /// `2z/(ζx₀)`.
    pub bound: f64,
    /// `m₀ · mean(τ_{m₀} ∧ ρ_M)`.
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub replicates: u64,
    /// Paths that neither reached `m₀` nor `M` before `max_time`; counted
    /// at `max_time`.
    pub censored: u64,
    pub upper_ci_within_bound: bool,
    pub lower_ci_within_bound: bool,
    /// `z ≤ m₀`: the stopping time is 0 and the bound holds trivially.
    pub trivial: bool,
    pub seed: u64,
}

pub fn hitting_bound_check(cfg: &DominationConfig, replicates: u64, seed: u64) -> Result<HittingBoundReport> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    let m0 = cfg.m0();
    let bound = 2.0 * cfg.z / (cfg.zeta * cfg.model.x0);
    let times: Vec<(f64, bool)> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(replicate_seed(seed, k));
            let p = run_z(cfg, cfg.max_time, &mut rng, true, None);
            let stop = match (p.tau_m0, p.rho_m) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            match stop {
                Some(s) => (s, false),
                None => (p.final_t, true),
            }
        })
        .collect();
    let vals: Vec<f64> = times.iter().map(|(s, _)| m0 * s).collect();
    let (mean, var) = mean_var(&vals);
    let se = (var / vals.len() as f64).sqrt();
    let half = 1.96 * se;
    Ok(HittingBoundReport {
        config: *cfg,
        m0,
        z: cfg.z,
        bound,
        estimate: mean,
        std_error: se,
        ci_lower: mean - half,
        ci_upper: mean + half,
        replicates,
        censored: times.iter().filter(|(_, c)| *c).count() as u64,
        upper_ci_within_bound: mean + half <= bound,
        lower_ci_within_bound: mean - half <= bound,
        trivial: cfg.z <= m0,
        seed,
    })
}

pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

// ---------------------------------------------------------------------------
// extinction studies

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionRecord {
    pub example_id: String,
    pub seed: u64,
    pub extinction_time: Option<f64>,
    pub horizon: f64,
}

impl ExtinctionRecord {
    /// Extinction time, or the horizon for a censored run.
    pub fn time_or_horizon(&self) -> f64 {
        self.extinction_time.unwrap_or(self.horizon)
    }
}

/// Runs `replicates` simulations and records when each went extinct.
pub fn extinction_study(
    label: &str,
    spec: &ModelSpec,
    cfg: &SimConfig,
    replicates: u64,
) -> Result<Vec<ExtinctionRecord>> {
    let mut lean = cfg.clone();
    lean.record_snapshots = false;
    lean.mass_recording = crate::simulate::MassRecording::None;
    run_replicates_map(spec, &lean, replicates, |traj| ExtinctionRecord {
        example_id: label.to_string(),
        seed: traj.seed,
        extinction_time: traj.extinction_time,
        horizon: lean.horizon,
    })
}

/// Median of extinction times with censored runs counted at the horizon
/// (their true time is larger, so the median is a lower bound when any
/// censored run reaches the middle).
pub fn median_extinction_time(records: &[ExtinctionRecord]) -> f64 {
    let mut t: Vec<f64> = records.iter().map(ExtinctionRecord::time_or_horizon).collect();
    median(&mut t)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `example_id,seed,extinction_time,censored,horizon`; a censored run
/// reports the horizon as its time.
pub fn write_extinction_csv<W: Write>(records: &[ExtinctionRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["example_id", "seed", "extinction_time", "censored", "horizon"])?;
    for r in records {
        out.write_record([
            r.example_id.clone(),
            r.seed.to_string(),
            format!("{:?}", r.time_or_horizon()),
            (r.extinction_time.is_none() as u8).to_string(),
            format!("{:?}", r.horizon),
        ])?;
    }
    out.flush()?;
    Ok(())
}
