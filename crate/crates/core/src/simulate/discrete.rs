//! Fixed-step scheme.
//!
//! Over each step `[t, t + Δt]`, with every rate and the interaction frozen
//! at `t`, each individual independently dies with probability
//! `(n·r + d + XU)·Δt` and, if it survived, gives birth with probability
//! `(n·r + b)·Δt`. Deaths are applied before births; newborns are born at
//! the step end, with age 0 there. A probability reaching 1 is an error, as
//! is `Δt·(n·r̄ + max(b̄, d̄ + Ū·N/n)) ≥ 1` when `r̄` exists.

use rand::Rng;

use super::{initial_population, EventCounters, Recorder, Scheme, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{draw_offspring, ModelSpec, TraitVec};
use crate::population::interaction_total;
use crate::rng::rng_from_seed;

pub fn simulate_discretized(spec: &ModelSpec, cfg: &SimConfig) -> Result<Trajectory> {
    let Scheme::Discretized { dt } = cfg.scheme else {
        return Err(Error::Config("simulate_discretized needs scheme = discretized".into()));
    };
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut pop = initial_population(spec, cfg, &mut rng)?;
    let mut rec = Recorder::new(spec, cfg, &pop);
    let mut counters = EventCounters::default();
    let initial_count = pop.len() as u64;
    let n = cfg.n.as_f64();
    let r_bar = spec.allometric.uniform_bound();

    let mut extinction_time = if pop.is_empty() { Some(0.0) } else { None };
    let steps = (cfg.horizon / dt * (1.0 + 1e-12)).floor() as u64;
    let mut dying: Vec<usize> = Vec::new();
    let mut newborns: Vec<TraitVec> = Vec::new();

    for k in 1..=steps {
        if pop.is_empty() {
            break;
        }
        let count = pop.len();
        if let Some(r_bar) = r_bar {
            let worst = dt
                * (n * r_bar + spec.birth.bound.max(spec.death.bound + spec.interaction.bound() * count as f64 / n));
            if worst >= 1.0 {
                return Err(Error::StepSize(format!(
                    "dt·(n·r̄ + max(b̄, d̄ + Ū·N/n)) = {worst:.4} ≥ 1 with N = {count}; use dt < {:.3e}",
                    dt / worst
                )));
            }
        }

        dying.clear();
        newborns.clear();
        for i in 0..count {
            let x = &pop.individuals()[i].trait_value;
            let a = pop.age(i);
            let nr = n * spec.r(x, a);
            let p_death = (nr + spec.death_rate(x, a) + interaction_total(&pop, spec, x, a)) * dt;
            let p_birth = (nr + spec.birth_rate(x, a)) * dt;
            for (what, p) in [("death", p_death), ("birth", p_birth)] {
                if !(p >= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "{what} probability {p} at trait {x:?}, age {a}"
                    )));
                }
                if p >= 1.0 {
                    return Err(Error::StepSize(format!(
                        "{what} probability {p:.4} ≥ 1 at trait {x:?}, age {a}; reduce dt"
                    )));
                }
            }
            counters.proposals += 1;
            if rng.random::<f64>() < p_death {
                dying.push(i);
            } else if rng.random::<f64>() < p_birth {
                let child = draw_offspring(spec, cfg.n, x, a, &mut rng)?;
                counters.mutations += child.mutated as u64;
                newborns.push(child.trait_value);
            }
        }

        let t_end = k as f64 * dt;
        rec.before(&pop, t_end);
        pop.advance_to(t_end);
        for &i in dying.iter().rev() {
            pop.swap_remove(i);
        }
        counters.deaths += dying.len() as u64;
        counters.births += newborns.len() as u64;
        for x in newborns.drain(..) {
            pop.push(x, t_end);
        }
        rec.after(&pop, t_end);
        if pop.is_empty() {
            extinction_time = Some(t_end);
        }
    }

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
