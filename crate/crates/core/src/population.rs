//! The weighted point measure `Xⁿ_t = (1/n) Σ δ_(xᵢ, aᵢ)`.
//!
//! Individuals store their birth time, not their age. The age of individual
//! `i` at clock `t` is `n·(t - birth_timeᵢ)`, so aging costs nothing and
//! snapshots at arbitrary times are consistent. An initial cohort with age
//! `a₀` is encoded by `birth_time = clock - a₀/n`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interaction, ModelSpec, SimScale, TraitVec};

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub trait_value: TraitVec,
    pub birth_time: f64,
}

#[derive(Debug, Clone)]
pub struct Population {
    individuals: Vec<Individual>,
    scale: SimScale,
    clock: f64,
}

impl Population {
    pub fn new(scale: SimScale, clock: f64) -> Self {
        Self {
            individuals: Vec::new(),
            scale,
            clock,
        }
    }

    /// Builds a population from `(trait, age)` pairs observed at `clock`.
    pub fn from_ages(
        scale: SimScale,
        clock: f64,
        members: impl IntoIterator<Item = (TraitVec, f64)>,
    ) -> Result<Self> {
        let n = scale.as_f64();
        let mut pop = Self::new(scale, clock);
        for (x, a) in members {
            if !(a >= 0.0) {
                return Err(Error::Precondition(format!("initial age {a} is negative")));
            }
            pop.push(x, clock - a / n);
        }
        Ok(pop)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    #[inline]
    pub fn scale(&self) -> SimScale {
        self.scale
    }

    #[inline]
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Moves the clock forward; ages advance implicitly.
    #[inline]
    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.clock);
        self.clock = t;
    }

    /// `⟨Xⁿ, 1⟩ = count / n`.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.len() as f64 / self.scale.as_f64()
    }

    #[inline]
    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    #[inline]
    pub fn age_at(&self, ind: &Individual, t: f64) -> f64 {
        self.scale.as_f64() * (t - ind.birth_time)
    }

    #[inline]
    pub fn age(&self, i: usize) -> f64 {
        self.age_at(&self.individuals[i], self.clock)
    }

    #[inline]
    pub fn push(&mut self, trait_value: TraitVec, birth_time: f64) {
        self.individuals.push(Individual {
            trait_value,
            birth_time,
        });
    }

    /// Removes individual `i`; the last individual takes its slot.
    #[inline]
    pub fn swap_remove(&mut self, i: usize) -> Individual {
        self.individuals.swap_remove(i)
    }

    /// Read-only view at the current clock.
    pub fn sample(&self) -> MeasureSample {
        self.sample_at(self.clock)
    }

    /// View of the current individuals with ages evaluated at time `t`.
    pub fn sample_at(&self, t: f64) -> MeasureSample {
        let d = self.individuals.first().map_or(0, |i| i.trait_value.len());
        let mut traits = Vec::with_capacity(d * self.len());
        let mut ages = Vec::with_capacity(self.len());
        for ind in &self.individuals {
            traits.extend_from_slice(&ind.trait_value);
            ages.push(self.age_at(ind, t));
        }
        MeasureSample {
            t,
            trait_dim: d,
            traits,
            ages,
            weight: 1.0 / self.scale.as_f64(),
            total_mass: self.mass(),
        }
    }
}

/// `⟨Xⁿ, f⟩ = (1/n) Σ f(xᵢ, aᵢ)` at the population clock.
pub fn pair(pop: &Population, mut f: impl FnMut(&[f64], f64) -> f64) -> f64 {
    let s: f64 = pop
        .individuals()
        .iter()
        .map(|ind| f(&ind.trait_value, pop.age_at(ind, pop.clock())))
        .sum();
    s / pop.scale().as_f64()
}

/// `XU(x, a) = (1/n) Σ U((x, a), (xᵢ, aᵢ))`. Focal-only kernels use
/// `U(x, a) · mass`.
pub fn interaction_total(pop: &Population, spec: &ModelSpec, x: &[f64], a: f64) -> f64 {
    match &spec.interaction {
        Interaction::FocalOnly { kernel, .. } => {
            if pop.is_empty() {
                0.0
            } else {
                kernel(x, a) * pop.mass()
            }
        }
        Interaction::Pairwise { kernel, .. } => {
            let t = pop.clock();
            let s: f64 = pop
                .individuals()
                .iter()
                .map(|ind| kernel(x, a, &ind.trait_value, pop.age_at(ind, t)))
                .sum();
            s / pop.scale().as_f64()
        }
    }
}

/// `N·[(n·r̄ + b̄) + (n·r̄ + d̄ + Ū·N/n)]`: a majorant of the summed birth and
/// death rates. Under an age-dependent envelope, `r̄` is replaced by each
/// individual's envelope at its current age.
pub fn total_event_rate_bound(pop: &Population, spec: &ModelSpec) -> f64 {
    let count = pop.len() as f64;
    if count == 0.0 {
        return 0.0;
    }
    let n = pop.scale().as_f64();
    let fixed = spec.birth.bound + spec.death.bound + spec.interaction.bound() * count / n;
    match spec.allometric.uniform_bound() {
        Some(r_bar) => count * (2.0 * n * r_bar + fixed),
        None => {
            let env: f64 = (0..pop.len())
                .map(|i| spec.allometric.upper(&pop.individuals()[i].trait_value, pop.age(i)))
                .sum();
            2.0 * n * env + count * fixed
        }
    }
}

/// Exact summed rate `Σᵢ [n·r + b] + [n·r + d + XU]`; quadratic for
/// pairwise kernels.
pub fn total_event_rate(pop: &Population, spec: &ModelSpec) -> f64 {
    let n = pop.scale().as_f64();
    (0..pop.len())
        .map(|i| {
            let x = &pop.individuals()[i].trait_value;
            let a = pop.age(i);
            let r = spec.r(x, a);
            (n * r + spec.birth_rate(x, a))
                + (n * r + spec.death_rate(x, a) + interaction_total(pop, spec, x, a))
        })
        .sum()
}

/// Serialized view of a population: equal-weight atoms at `(trait, age)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub t: f64,
    pub trait_dim: usize,
    /// Row-major `len × trait_dim`.
    pub traits: Vec<f64>,
    pub ages: Vec<f64>,
    pub weight: f64,
    pub total_mass: f64,
}

impl MeasureSample {
    pub fn empty(t: f64, trait_dim: usize, weight: f64) -> Self {
        Self {
            t,
            trait_dim,
            traits: Vec::new(),
            ages: Vec::new(),
            weight,
            total_mass: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn trait_of(&self, i: usize) -> &[f64] {
        &self.traits[i * self.trait_dim..(i + 1) * self.trait_dim]
    }

    /// `(trait, age, weight)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64, f64)> + '_ {
        (0..self.len()).map(move |i| (self.trait_of(i), self.ages[i], self.weight))
    }

    /// `∫ f dXⁿ`.
    pub fn pair(&self, mut f: impl FnMut(&[f64], f64) -> f64) -> f64 {
        let s: f64 = (0..self.len()).map(|i| f(self.trait_of(i), self.ages[i])).sum();
        s * self.weight
    }

    /// CSV with header `t,trait_1..trait_d,age,weight`, one row per atom.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::header(self.trait_dim))?;
        let mut row: Vec<String> = Vec::with_capacity(self.trait_dim + 3);
        for (x, a, wt) in self.iter() {
            row.clear();
            row.push(fmt_f64(self.t));
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(a));
            row.push(fmt_f64(wt));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn header(trait_dim: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=trait_dim).map(|k| format!("trait_{k}")));
        h.push("age".into());
        h.push("weight".into());
        h
    }

    /// Reads the CSV written by [`MeasureSample::write_csv`]. An empty body
    /// yields an empty sample at time `t_if_empty` and the given weight.
    pub fn read_csv<R: Read>(r: R, t_if_empty: f64, weight_if_empty: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let d = headers.len().checked_sub(3).ok_or_else(|| {
            Error::Config(format!("snapshot header has {} columns", headers.len()))
        })?;
        if headers.iter().collect::<Vec<_>>() != Self::header(d) {
            return Err(Error::Config(format!("unexpected snapshot header {headers:?}")));
        }
        let mut s = Self::empty(t_if_empty, d, weight_if_empty);
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad snapshot value: {e}")))?;
            s.t = vals[0];
            s.traits.extend_from_slice(&vals[1..=d]);
            s.ages.push(vals[d + 1]);
            s.weight = vals[d + 2];
        }
        // weight is 1/n; divide by the recovered n as `Population::mass` does
        s.total_mass = s.len() as f64 / (1.0 / s.weight).round();
        Ok(s)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
