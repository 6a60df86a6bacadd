//! Simulation of trait- and age-structured birth-death particle systems and
//! checks of their large-population limit.
//!
//! A population at scale `n` is the point measure `Xⁿ = (1/n) Σ δ_(xᵢ, aᵢ)`
//! over traits `x` and ages `a`. Individuals age at speed `n`, give birth
//! at rate `n·r(x, a) + b(x, a)` and die at rate
//! `n·r(x, a) + d(x, a) + ∫U dXⁿ`. As `n → ∞` the ages equilibrate to the
//! stable age density `m̂(x, ·)` and the trait marginal follows a
//! superprocess with age-averaged coefficients.
//!
//! ```
//! use tapsim::examples::build_example;
//! use tapsim::simulate::{simulate, InitialCondition, SimConfig};
//!
//! let spec = build_example(1, &serde_json::Value::Null).unwrap();
//! let cfg = SimConfig::new(0.05, 100, InitialCondition::at_trait(100, &[1.5]), 7).unwrap();
//! let traj = simulate(&spec, &cfg).unwrap();
//! assert_eq!(
//!     traj.counters.births as i64 - traj.counters.deaths as i64,
//!     traj.final_count as i64 - traj.initial_count as i64,
//! );
//! ```

pub mod equilibrium;
pub mod error;
pub mod examples;
pub mod expr;
pub mod limitdiag;
pub mod model;
pub mod population;
pub mod quad;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

/// The guide's chapters, compiled as doctests so their snippets stay
/// current.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/examples.md")]
    mod examples {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
pub use model::{ModelSpec, SimScale, TraitDomain, TraitVec};
pub use population::{MeasureSample, Population};
pub use simulate::{simulate, SimConfig, Trajectory};
