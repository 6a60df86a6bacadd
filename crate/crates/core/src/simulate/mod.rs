//! Time evolution of a [`Population`].
//!
//! [`simulate_exact`] is an event-driven thinning algorithm and is exact in
//! law. [`simulate_discretized`] is a fixed-step scheme with per-individual
//! Bernoulli trials, kept for comparison with fixed-step simulations.
//! [`run_replicates`] runs independent replicates in parallel with seeds
//! derived from the configured seed, so results do not depend on the
//! number of threads.

mod discrete;
mod exact;
mod fenwick;
pub mod io;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, SimScale, TraitVec};
use crate::population::{MeasureSample, Population};
use crate::rng::{replicate_seed, SimRng};

pub use discrete::simulate_discretized;
pub use exact::simulate_exact;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    #[default]
    Exact,
    Discretized { dt: f64 },
}

/// Law of the initial traits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraitLaw {
    Point { value: Vec<f64> },
    /// Uniform on a box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

/// Law of the initial ages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeLaw {
    #[default]
    Zero,
    Point { age: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub count: u64,
    pub traits: TraitLaw,
    #[serde(default)]
    pub ages: AgeLaw,
}

impl InitialCondition {
    pub fn at_trait(count: u64, x: &[f64]) -> Self {
        Self {
            count,
            traits: TraitLaw::Point { value: x.to_vec() },
            ages: AgeLaw::Zero,
        }
    }
}

/// What to record of the mass process.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MassRecording {
    /// After every accepted event (exact) or every step (discretized).
    #[default]
    EveryEvent,
    /// On the grid `0, dt, 2dt, …`.
    Grid { dt: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    /// Defaults to `horizon / 100`.
    #[serde(default)]
    pub snapshot_cadence: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    pub n: SimScale,
    pub initial: InitialCondition,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mass_recording: MassRecording,
    #[serde(default = "yes")]
    pub record_snapshots: bool,
    /// Age span covered by one envelope window when the allometric rate has
    /// no uniform bound.
    #[serde(default = "default_window")]
    pub envelope_window: f64,
}

fn yes() -> bool {
    true
}

fn default_window() -> f64 {
    0.5
}

impl SimConfig {
    pub fn new(horizon: f64, n: u64, initial: InitialCondition, seed: u64) -> Result<Self> {
        Ok(Self {
            horizon,
            snapshot_cadence: None,
            scheme: Scheme::Exact,
            n: SimScale::new(n)?,
            initial,
            seed,
            mass_recording: MassRecording::EveryEvent,
            record_snapshots: true,
            envelope_window: default_window(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if let Some(c) = self.snapshot_cadence {
            if !(c > 0.0) {
                return Err(Error::Config(format!("snapshot cadence must be positive, got {c}")));
            }
        }
        if let Scheme::Discretized { dt } = self.scheme {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("step dt must be positive, got {dt}")));
            }
        }
        if let MassRecording::Grid { dt } = self.mass_recording {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("mass grid step must be positive, got {dt}")));
            }
        }
        if !(self.envelope_window > 0.0) {
            return Err(Error::Config("envelope window must be positive".into()));
        }
        Ok(())
    }

    pub fn cadence(&self) -> f64 {
        self.snapshot_cadence.unwrap_or(self.horizon / 100.0)
    }

    /// `0, c, 2c, …` up to the horizon, plus the horizon itself.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let c = self.cadence();
        let k_max = (self.horizon / c + 1e-9).floor() as u64;
        let mut v: Vec<f64> = (0..=k_max).map(|k| k as f64 * c).collect();
        if let Some(&last) = v.last() {
            if self.horizon - last > 1e-9 * self.horizon {
                v.push(self.horizon);
            } else if let Some(l) = v.last_mut() {
                *l = l.min(self.horizon);
            }
        }
        v
    }

    /// Copy with the seed of replicate `k`.
    pub fn for_replicate(&self, k: u64) -> Self {
        Self {
            seed: replicate_seed(self.seed, k),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCounters {
    pub proposals: u64,
    pub births: u64,
    pub deaths: u64,
    pub mutations: u64,
    pub rejections: u64,
    pub window_rebuilds: u64,
}

/// Mass path as `(t, count)`; mass is `count / n`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MassSeries {
    pub t: Vec<f64>,
    pub count: Vec<u64>,
}

impl MassSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, count: usize) {
        self.t.push(t);
        self.count.push(count as u64);
    }

    pub fn mass(&self, n: SimScale) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = n.as_f64();
        self.t.iter().zip(&self.count).map(move |(t, c)| (*t, *c as f64 / n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub n: SimScale,
    pub horizon: f64,
    pub trait_dim: usize,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<MeasureSample>,
    pub mass: MassSeries,
    pub counters: EventCounters,
    pub extinction_time: Option<f64>,
    pub initial_count: u64,
    pub final_count: u64,
}

impl Trajectory {
    pub fn is_extinct(&self) -> bool {
        self.extinction_time.is_some()
    }

    /// Index of the snapshot nearest to `t`.
    pub fn nearest_snapshot(&self, t: f64) -> Option<usize> {
        self.snapshot_times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&MeasureSample> {
        self.nearest_snapshot(t).map(|i| &self.snapshots[i])
    }

    /// Mass at time `t`, from the snapshot nearest to `t`.
    pub fn mass_at(&self, t: f64) -> Option<f64> {
        self.snapshot_at(t).map(|s| s.total_mass)
    }
}

/// Dispatches on the configured scheme.
pub fn simulate(spec: &ModelSpec, cfg: &SimConfig) -> Result<Trajectory> {
    match cfg.scheme {
        Scheme::Exact => simulate_exact(spec, cfg),
        Scheme::Discretized { .. } => simulate_discretized(spec, cfg),
    }
}

/// `count` replicates; replicate `k` runs with seed
/// `replicate_seed(cfg.seed, k)`. Output order is replicate order.
pub fn run_replicates(spec: &ModelSpec, cfg: &SimConfig, count: u64) -> Result<Vec<Trajectory>> {
    run_replicates_map(spec, cfg, count, |t| t)
}

/// As [`run_replicates`], reducing each trajectory with `f` as soon as it
/// completes so that only the reductions are kept in memory.
pub fn run_replicates_map<T, F>(spec: &ModelSpec, cfg: &SimConfig, count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Trajectory) -> T + Sync + Send,
{
    if count == 0 {
        return Err(Error::Config("replicate count must be at least 1".into()));
    }
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|k| simulate(spec, &cfg.for_replicate(k)).map(&f))
        .collect()
}

// ---------------------------------------------------------------------------
// shared plumbing

pub(crate) fn initial_population(spec: &ModelSpec, cfg: &SimConfig, rng: &mut SimRng) -> Result<Population> {
    let ic = &cfg.initial;
    let d = spec.trait_dim;
    let mut members: Vec<(TraitVec, f64)> = Vec::with_capacity(ic.count as usize);
    for _ in 0..ic.count {
        let x: TraitVec = match &ic.traits {
            TraitLaw::Point { value } => TraitVec::from_slice(value),
            TraitLaw::Uniform { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::Config("initial trait box has the wrong dimension".into()));
                }
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                    .collect()
            }
        };
        if x.len() != d || !spec.trait_domain.contains(&x) {
            return Err(Error::Config(format!(
                "initial trait {x:?} is outside the trait domain {:?}",
                spec.trait_domain
            )));
        }
        let a = match ic.ages {
            AgeLaw::Zero => 0.0,
            AgeLaw::Point { age } => age,
            AgeLaw::Exponential { rate } => {
                let e = Exp::new(rate).map_err(|e| Error::Config(format!("age law: {e}")))?;
                e.sample(rng)
            }
        };
        members.push((x, a));
    }
    Population::from_ages(cfg.n, 0.0, members)
}

/// Snapshot and mass bookkeeping shared by both schemes. State is piecewise
/// constant between changes, so every record with time before a change is
/// taken from the state just before it.
pub(crate) struct Recorder {
    trait_dim: usize,
    weight: f64,
    times: Vec<f64>,
    next_snap: usize,
    snaps: Vec<MeasureSample>,
    mode: MassRecording,
    grid_k: u64,
    horizon: f64,
    record_snapshots: bool,
    pub mass: MassSeries,
}

impl Recorder {
    pub fn new(spec: &ModelSpec, cfg: &SimConfig, pop: &Population) -> Self {
        let times = if cfg.record_snapshots {
            cfg.snapshot_times()
        } else {
            Vec::new()
        };
        let mut r = Self {
            trait_dim: spec.trait_dim,
            weight: 1.0 / cfg.n.as_f64(),
            snaps: Vec::with_capacity(times.len()),
            times,
            next_snap: 0,
            mode: cfg.mass_recording,
            grid_k: 0,
            horizon: cfg.horizon,
            record_snapshots: cfg.record_snapshots,
            mass: MassSeries::default(),
        };
        if matches!(r.mode, MassRecording::EveryEvent) {
            r.mass.push(0.0, pop.len());
        }
        r
    }

    /// Emits every record strictly before `t`.
    #[inline]
    pub fn before(&mut self, pop: &Population, t: f64) {
        while self.next_snap < self.times.len() && self.times[self.next_snap] < t {
            let s = self.times[self.next_snap];
            self.snaps.push(self.sample(pop, s));
            self.next_snap += 1;
        }
        if let MassRecording::Grid { dt } = self.mode {
            loop {
                let g = self.grid_k as f64 * dt;
                if g >= t || g > self.horizon * (1.0 + 1e-12) {
                    break;
                }
                self.mass.push(g, pop.len());
                self.grid_k += 1;
            }
        }
    }

    #[inline]
    pub fn after(&mut self, pop: &Population, t: f64) {
        if let MassRecording::EveryEvent = self.mode {
            self.mass.push(t, pop.len());
        }
    }

    fn sample(&self, pop: &Population, t: f64) -> MeasureSample {
        if pop.is_empty() {
            MeasureSample::empty(t, self.trait_dim, self.weight)
        } else {
            pop.sample_at(t)
        }
    }

    /// Emits the records up to and including the horizon.
    pub fn finish(mut self, pop: &Population) -> (Vec<f64>, Vec<MeasureSample>, MassSeries) {
        let h = self.horizon;
        self.before(pop, h * (1.0 + 1e-12) + f64::MIN_POSITIVE);
        debug_assert!(!self.record_snapshots || self.snaps.len() == self.times.len());
        (self.times, self.snaps, self.mass)
    }
}
