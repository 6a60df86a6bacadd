//! Event-driven thinning.
//!
//! Each individual carries a birth majorant `β = n·r̄ + b̄` and a death
//! majorant `δ = n·r̄ + d̄ + Ū·N/n`. Candidate events arrive at total rate
//! `N·(β + δ)`; the candidate individual and event type are drawn from the
//! majorants and accepted with probability true rate / majorant. The
//! majorant depends only on `N`, so it is refreshed after every accepted
//! event at no cost.
//!
//! When `r` has no uniform bound (it grows with age), time is cut into
//! windows spanning a fixed age increment. At the start of a window each
//! individual gets `ρᵢ = env(xᵢ, age at window end)`, which bounds `|r|` for
//! the whole window, and candidates for the `r` part are drawn from a
//! Fenwick tree over the `ρᵢ`. A candidate time falling past the window end
//! is discarded and the clock moved to the window end, which is exact by
//! memorylessness.

use rand::Rng;
use rand_distr::Exp1;

use super::fenwick::Fenwick;
use super::{initial_population, EventCounters, Recorder, Scheme, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{draw_offspring, AllometricBound, ModelSpec, RateFn};
use crate::population::{interaction_total, Population};
use crate::rng::{rng_from_seed, SimRng};

/// Exact simulation over `[0, cfg.horizon]`, stopping early at extinction.
pub fn simulate_exact(spec: &ModelSpec, cfg: &SimConfig) -> Result<Trajectory> {
    if !matches!(cfg.scheme, Scheme::Exact) {
        return Err(Error::Config("simulate_exact needs scheme = exact".into()));
    }
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut pop = initial_population(spec, cfg, &mut rng)?;
    let mut rec = Recorder::new(spec, cfg, &pop);
    let mut counters = EventCounters::default();
    let initial_count = pop.len() as u64;

    let mut run = Run {
        spec,
        cfg,
        pop: &mut pop,
        rec: &mut rec,
        counters: &mut counters,
        rng: &mut rng,
    };
    let extinction_time = if initial_count == 0 {
        Some(0.0)
    } else {
        match &spec.allometric.bound {
            AllometricBound::Uniform(r_bar) => run.uniform(*r_bar)?,
            AllometricBound::Envelope(env) => run.envelope(env)?,
        }
    };

    let (snapshot_times, snapshots, mass) = rec.finish(&pop);
    Ok(Trajectory {
        seed: cfg.seed,
        n: cfg.n,
        horizon: cfg.horizon,
        trait_dim: spec.trait_dim,
        snapshot_times,
        snapshots,
        mass,
        counters,
        extinction_time,
        initial_count,
        final_count: pop.len() as u64,
    })
}

struct Run<'a> {
    spec: &'a ModelSpec,
    cfg: &'a SimConfig,
    pop: &'a mut Population,
    rec: &'a mut Recorder,
    counters: &'a mut EventCounters,
    rng: &'a mut SimRng,
}

#[cold]
fn bad_rate(what: &str, rate: f64, cap: f64, x: &[f64], a: f64) -> Error {
    if rate.is_nan() || rate.is_infinite() {
        Error::InvalidModel(format!("{what} rate is {rate} at trait {x:?}, age {a}"))
    } else if rate < 0.0 {
        Error::InvalidModel(format!("negative {what} rate {rate} at trait {x:?}, age {a}"))
    } else {
        Error::BoundViolation(format!(
            "{what} rate {rate} exceeds its majorant {cap} at trait {x:?}, age {a}"
        ))
    }
}

/// Acceptance ratio `rate / cap` must lie in `[0, 1]`.
#[inline]
fn check(what: &str, rate: f64, cap: f64, x: &[f64], a: f64) -> Result<()> {
    if rate >= 0.0 && rate <= cap * (1.0 + 1e-12) {
        Ok(())
    } else {
        Err(bad_rate(what, rate, cap, x, a))
    }
}

impl Run<'_> {
    fn give_birth(&mut self, i: usize, a: f64, t: f64) -> Result<()> {
        self.rec.before(self.pop, t);
        let parent = &self.pop.individuals()[i].trait_value;
        let child = draw_offspring(self.spec, self.cfg.n, parent, a, self.rng)?;
        self.counters.births += 1;
        self.counters.mutations += child.mutated as u64;
        self.pop.push(child.trait_value, t);
        self.rec.after(self.pop, t);
        Ok(())
    }

    fn kill(&mut self, i: usize, t: f64) {
        self.rec.before(self.pop, t);
        self.pop.swap_remove(i);
        self.counters.deaths += 1;
        self.rec.after(self.pop, t);
    }

    /// Returns the extinction time, if extinction happens before the horizon.
    fn uniform(&mut self, r_bar: f64) -> Result<Option<f64>> {
        let spec = self.spec;
        let n = self.cfg.n.as_f64();
        let horizon = self.cfg.horizon;
        let birth_cap = n * r_bar + spec.birth.bound;
        let death_fixed = n * r_bar + spec.death.bound;
        let u_bar = spec.interaction.bound();
        let mut t = 0.0;
        loop {
            let count = self.pop.len();
            if count == 0 {
                return Ok(Some(t));
            }
            let death_cap = death_fixed + u_bar * count as f64 / n;
            let per = birth_cap + death_cap;
            let total = per * count as f64;
            if !total.is_finite() {
                return Err(Error::InvalidModel(format!("event-rate majorant is {total}")));
            }
            if total <= 0.0 {
                return Ok(None);
            }
            let e: f64 = self.rng.sample(Exp1);
            t += e / total;
            if t > horizon {
                return Ok(None);
            }
            self.counters.proposals += 1;
            self.pop.advance_to(t);
            let i = self.rng.random_range(0..count);
            let u = self.rng.random::<f64>() * per;
            let x = &self.pop.individuals()[i].trait_value;
            let a = self.pop.age(i);
            let nr = n * spec.r(x, a);
            if u < birth_cap {
                let rate = nr + spec.birth_rate(x, a);
                check("birth", rate, birth_cap, x, a)?;
                if u < rate {
                    self.give_birth(i, a, t)?;
                } else {
                    self.counters.rejections += 1;
                }
            } else {
                let rate = nr + spec.death_rate(x, a) + interaction_total(self.pop, spec, x, a);
                check("death", rate, death_cap, x, a)?;
                if u - birth_cap < rate {
                    self.kill(i, t);
                } else {
                    self.counters.rejections += 1;
                }
            }
        }
    }

    fn envelope(&mut self, env: &RateFn) -> Result<Option<f64>> {
        let spec = self.spec;
        let n = self.cfg.n.as_f64();
        let horizon = self.cfg.horizon;
        let span = self.cfg.envelope_window / n;
        let (b_bar, d_bar, u_bar) = (spec.birth.bound, spec.death.bound, spec.interaction.bound());

        let mut t = 0.0;
        let mut window_end = span;
        let mut rho: Vec<f64> = Vec::with_capacity(2 * self.pop.len());
        let mut sum_rho = fill_envelope(self.pop, env, window_end, &mut rho)?;
        let mut tree = Fenwick::from_weights(&rho);

        loop {
            let count = self.pop.len();
            if count == 0 {
                return Ok(Some(t));
            }
            let fixed = b_bar + d_bar + u_bar * count as f64 / n;
            let r_total = 2.0 * n * sum_rho;
            let total = r_total + count as f64 * fixed;
            if !total.is_finite() {
                return Err(Error::InvalidModel(format!("event-rate majorant is {total}")));
            }
            let next = if total > 0.0 {
                let e: f64 = self.rng.sample(Exp1);
                t + e / total
            } else {
                f64::INFINITY
            };
            if next > window_end {
                if window_end >= horizon {
                    return Ok(None);
                }
                t = window_end;
                self.pop.advance_to(t);
                window_end = t + span;
                sum_rho = fill_envelope(self.pop, env, window_end, &mut rho)?;
                tree.rebuild(&rho);
                self.counters.window_rebuilds += 1;
                continue;
            }
            if next > horizon {
                return Ok(None);
            }
            t = next;
            self.counters.proposals += 1;
            self.pop.advance_to(t);

            let u = self.rng.random::<f64>() * total;
            let (i, is_birth) = if u < r_total {
                let i = tree.find(u / (2.0 * n), count);
                (i, self.rng.random::<f64>() < 0.5)
            } else {
                let i = self.rng.random_range(0..count);
                (i, self.rng.random::<f64>() * fixed < b_bar)
            };
            let x = &self.pop.individuals()[i].trait_value;
            let a = self.pop.age(i);
            let nr = n * spec.r(x, a);
            let n_rho = n * rho[i];
            let (rate, cap) = if is_birth {
                (nr + spec.birth_rate(x, a), n_rho + b_bar)
            } else {
                (
                    nr + spec.death_rate(x, a) + interaction_total(self.pop, spec, x, a),
                    n_rho + d_bar + u_bar * count as f64 / n,
                )
            };
            check(if is_birth { "birth" } else { "death" }, rate, cap, x, a)?;
            if self.rng.random::<f64>() * cap >= rate {
                self.counters.rejections += 1;
                continue;
            }
            if is_birth {
                self.give_birth(i, a, t)?;
                let child = &self.pop.individuals()[count].trait_value;
                let r_child = env(child, n * (window_end - t));
                if !(r_child >= 0.0 && r_child.is_finite()) {
                    return Err(Error::InvalidModel(format!("allometric envelope is {r_child}")));
                }
                rho.push(r_child);
                sum_rho += r_child;
                if rho.len() > tree.capacity() {
                    tree.rebuild(&rho);
                } else {
                    tree.add(count, r_child);
                }
            } else {
                let last = count - 1;
                let (r_i, r_last) = (rho[i], rho[last]);
                tree.add(i, r_last - r_i);
                tree.add(last, -r_last);
                rho.swap_remove(i);
                sum_rho -= r_i;
                self.kill(i, t);
            }
        }
    }
}

/// `ρᵢ = env(xᵢ, age at window_end)`; returns `Σ ρᵢ`.
fn fill_envelope(pop: &Population, env: &RateFn, window_end: f64, rho: &mut Vec<f64>) -> Result<f64> {
    rho.clear();
    let mut s = 0.0;
    for ind in pop.individuals() {
        let v = env(&ind.trait_value, pop.age_at(ind, window_end));
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "allometric envelope is {v} at trait {:?}",
                ind.trait_value
            )));
        }
        rho.push(v);
        s += v;
    }
    Ok(s)
}
