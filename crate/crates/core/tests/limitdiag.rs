use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde_json::Value;
use tapsim::equilibrium::{EquilibriumTable, TableOptions};
use tapsim::examples::build_example;
use tapsim::limitdiag::{
    averaging_ks, cumulant_solve, laplace_crosscheck, laplace_precondition, laplace_sample, laplace_summary,
    martingale_check, occupation_measure, sample_ks, CumulantGrid, CumulantProblem, Generator, MartingaleOptions,
    TraitFunction,
};
use tapsim::model::{Allometric, ModelSpec, TraitDomain};
use tapsim::rng::rng_from_seed;
use tapsim::simulate::{run_replicates, simulate, InitialCondition, MassRecording, SimConfig};
use tapsim::{Error, MeasureSample};

fn critical() -> ModelSpec {
    ModelSpec::builder("critical", TraitDomain::interval(0.0, 1.0), 1)
        .allometric(Allometric::constant(1.0))
        .build()
        .unwrap()
}

fn table(spec: &ModelSpec, grid: Vec<f64>) -> EquilibriumTable {
    EquilibriumTable::build(
        spec,
        &TableOptions {
            trait_grid: Some(grid),
            ..TableOptions::default()
        },
    )
    .unwrap()
}

fn example1_table() -> EquilibriumTable {
    table(&build_example(1, &Value::Null).unwrap(), (0..=40).map(|k| k as f64 * 0.1).collect())
}

#[test]
fn ks_of_a_sample_from_the_stable_density() {
    let t = example1_table();
    let mut rng = rng_from_seed(17);
    let k = 100_000;
    let mut traits = Vec::with_capacity(k);
    let mut ages = Vec::with_capacity(k);
    for _ in 0..k {
        traits.push(rng.random_range(0.5..3.5));
        ages.push(Exp1.sample(&mut rng));
    }
    let s = MeasureSample {
        t: 0.0,
        trait_dim: 1,
        traits,
        ages,
        weight: 1e-3,
        total_mass: 100.0,
    };
    let ks = sample_ks(&t, &s).unwrap().unwrap();
    assert!(ks.statistic < 0.02, "{ks:?}");
    assert_eq!(ks.points, k);
}

#[test]
fn ks_at_time_zero_is_near_one() {
    let spec = build_example(1, &Value::Null).unwrap();
    let cfg = SimConfig::new(0.01, 1000, InitialCondition::at_trait(1000, &[1.5]), 3).unwrap();
    let trajs = run_replicates(&spec, &cfg, 3).unwrap();
    let r = averaging_ks(&trajs, &example1_table(), 0.0, &[0.0, 4.0]).unwrap();
    assert!(r.pooled.statistic > 0.99, "{r:?}");
    assert_eq!(r.replicates, 3);
    assert_eq!(r.bins.len(), 1);
}

#[test]
fn empty_trait_bin_is_flagged() {
    let spec = build_example(1, &Value::Null).unwrap();
    let cfg = SimConfig::new(0.05, 100, InitialCondition::at_trait(100, &[1.5]), 3).unwrap();
    let trajs = run_replicates(&spec, &cfg, 2).unwrap();
    let r = averaging_ks(&trajs, &example1_table(), 0.05, &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(r.bins.iter().any(|b| b.skipped && b.ks.is_none()));
    assert!(r.bins.iter().any(|b| !b.skipped));
}

#[test]
fn zero_function_gives_zero_martingale() {
    let spec = build_example(1, &Value::Null).unwrap();
    let mut cfg = SimConfig::new(0.2, 200, InitialCondition::at_trait(200, &[1.5]), 9).unwrap();
    cfg.snapshot_cadence = Some(0.02);
    let trajs = run_replicates(&spec, &cfg, 4).unwrap();
    let opts = MartingaleOptions::new(vec![0.1, 0.2], Generator::Laplacian { sigma: 1.0 });
    let f = TraitFunction::constant(0.0);
    let rep = martingale_check(&trajs, &example1_table(), &f, &opts).unwrap();
    for p in &rep.points {
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.empirical_variance, 0.0);
        assert_eq!(p.z, 0.0);
    }
    assert!(!rep.warnings.is_empty());
}

#[test]
fn dropping_the_drift_is_detected() {
    let spec = build_example(1, &Value::Null).unwrap();
    let mut cfg = SimConfig::new(1.0, 1000, InitialCondition::at_trait(1000, &[1.5]), 77).unwrap();
    cfg.snapshot_cadence = Some(0.01);
    cfg.mass_recording = MassRecording::None;
    let trajs = run_replicates(&spec, &cfg, 40).unwrap();
    let mut opts = MartingaleOptions::new(vec![0.25, 0.5, 1.0], Generator::Laplacian { sigma: 1.0 });
    opts.drop_drift = true;
    let rep = martingale_check(&trajs, &example1_table(), &TraitFunction::constant(1.0), &opts).unwrap();
    let z: Vec<f64> = rep.points.iter().map(|p| p.z.abs()).collect();
    assert!(z[2] > 3.0, "{z:?}");
    assert!(z[0] < z[2], "{z:?}");
}

#[test]
fn martingale_needs_matching_snapshot_times() {
    let spec = critical();
    let cfg = SimConfig::new(1.0, 10, InitialCondition::at_trait(10, &[0.5]), 1).unwrap();
    let trajs = run_replicates(&spec, &cfg, 2).unwrap();
    let tab = table(&spec, vec![0.0, 0.5, 1.0]);
    let opts = MartingaleOptions::new(vec![0.333], Generator::None);
    let err = martingale_check(&trajs, &tab, &TraitFunction::constant(1.0), &opts).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn occupation_of_a_constant_population() {
    let spec = ModelSpec::builder("still", TraitDomain::interval(0.0, 1.0), 1).build().unwrap();
    let mut cfg = SimConfig::new(2.5, 10, InitialCondition::at_trait(7, &[0.2]), 1).unwrap();
    cfg.snapshot_cadence = Some(0.3);
    let g = occupation_measure(&simulate(&spec, &cfg).unwrap()).unwrap();
    assert!((g.total_mass() - 2.5 * 0.7).abs() < 1e-12);
    assert!((g.pair(|_, _, _| 1.0) - 2.5 * 0.7).abs() < 1e-12);
    // ages grow at speed n = 10 from zero
    assert!((g.pair(|_, _, a| a) - 0.7 * 10.0 * 2.5 * 2.5 / 2.0).abs() < 1e-9);
}

#[test]
fn occupation_matches_mass_series_trapezoid() {
    let spec = build_example(1, &Value::Null).unwrap();
    let mut cfg = SimConfig::new(0.5, 1000, InitialCondition::at_trait(1000, &[1.5]), 5).unwrap();
    cfg.snapshot_cadence = Some(0.01);
    cfg.mass_recording = MassRecording::Grid { dt: 0.01 };
    let traj = simulate(&spec, &cfg).unwrap();
    let g = occupation_measure(&traj).unwrap();
    let pts: Vec<(f64, f64)> = traj.mass.mass(traj.n).collect();
    assert_eq!(pts.len(), traj.snapshot_times.len());
    let direct: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    assert!((g.pair(|_, _, _| 1.0) - direct).abs() < 1e-12, "{} vs {direct}", g.total_mass());
}

#[test]
fn occupation_age_tail_approaches_exponential() {
    let spec = build_example(1, &Value::Null).unwrap();
    let mut cfg = SimConfig::new(1.0, 1000, InitialCondition::at_trait(1000, &[1.5]), 8).unwrap();
    cfg.snapshot_cadence = Some(0.01);
    cfg.mass_recording = MassRecording::None;
    let trajs = run_replicates(&spec, &cfg, 10).unwrap();
    let (mut old, mut all) = (0.0, 0.0);
    for tr in &trajs {
        let g = occupation_measure(tr).unwrap();
        // skip the initial layer: the first few percent of [0, 1] are still age-zero cohorts
        old += g.pair(|s, _, a| if s >= 0.1 && a > 1.0 { 1.0 } else { 0.0 });
        all += g.pair(|s, _, _| if s >= 0.1 { 1.0 } else { 0.0 });
    }
    let frac = old / all;
    assert!((frac - (-1.0f64).exp()).abs() < 0.05, "{frac}");
}

#[test]
fn occupation_needs_two_snapshots() {
    let cfg = SimConfig::new(1.0, 10, InitialCondition::at_trait(3, &[0.5]), 1).unwrap();
    let mut traj = simulate(&critical(), &cfg).unwrap();
    traj.snapshot_times.truncate(1);
    traj.snapshots.truncate(1);
    assert!(matches!(occupation_measure(&traj), Err(Error::Precondition(_))));
}

fn grid(horizon: f64, steps: usize) -> CumulantGrid {
    CumulantGrid {
        horizon,
        time_steps: steps,
        record_every: steps / 10,
    }
}

#[test]
fn riccati_closed_form_over_time() {
    let p = CumulantProblem::constant(vec![0.0, 0.5, 1.0], 1.0, 0.0);
    let sol = cumulant_solve(&p, &TraitFunction::constant(2.0), &grid(1.0, 10_000)).unwrap();
    for (t, row) in sol.times.iter().zip(&sol.u) {
        let exact = 2.0 / (1.0 + 2.0 * t);
        assert!(row.iter().all(|u| (u - exact).abs() < 1e-6), "t={t}");
    }
    assert!((sol.u[sol.time_index(1.0).unwrap()][0] - 2.0 / 3.0).abs() < 1e-6);
    assert_eq!(sol.boundary, "neumann");
}

#[test]
fn cumulant_trivial_cases() {
    let p = CumulantProblem::constant(vec![0.0, 0.5, 1.0], 1.0, 0.0);
    let sol = cumulant_solve(&p, &TraitFunction::constant(0.0), &grid(1.0, 100)).unwrap();
    assert!(sol.u.iter().flatten().all(|u| *u == 0.0));

    let f0 = TraitFunction::parse("1 + x*x", 1).unwrap();
    let p = CumulantProblem::constant(vec![0.0, 0.25, 0.5, 1.0], 0.0, 0.0);
    let sol = cumulant_solve(&p, &f0, &grid(3.0, 100)).unwrap();
    for row in &sol.u {
        for (x, u) in sol.traits.iter().zip(row) {
            assert_eq!(*u, 1.0 + x * x);
        }
    }
}

#[test]
fn cumulant_rejects_negative_start() {
    let p = CumulantProblem::constant(vec![0.0, 1.0], 1.0, 0.0);
    let err = cumulant_solve(&p, &TraitFunction::constant(-1.0), &grid(1.0, 100)).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn cumulant_csv_header() {
    let p = CumulantProblem::constant(vec![0.0, 1.0], 1.0, 0.0);
    let sol = cumulant_solve(&p, &TraitFunction::constant(1.0), &grid(1.0, 100)).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,x,u\n"));
    assert_eq!(text.lines().count(), 1 + sol.times.len() * 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cumulant_stays_positive_and_decreases(
        c in 0.0f64..0.2,
        r in 0.0f64..3.0,
        a in 0.0f64..2.0,
        k in 0.5f64..6.0,
    ) {
        let traits: Vec<f64> = (0..41).map(|j| j as f64 * 0.05).collect();
        let p = CumulantProblem::constant(traits, r, c);
        let f0 = TraitFunction::new("bump", move |x: &[f64]| a * (1.0 + (k * x[0]).cos()));
        let sol = cumulant_solve(&p, &f0, &grid(0.5, 2000)).unwrap();
        prop_assert!(sol.u.iter().flatten().all(|u| *u >= 0.0));
        if c == 0.0 {
            for w in sol.u.windows(2) {
                prop_assert!(w[0].iter().zip(&w[1]).all(|(u0, u1)| u1 <= u0));
            }
        }
        // the sup norm never grows: the maximum principle survives the scheme
        let m0 = sol.u[0].iter().cloned().fold(0.0, f64::max);
        prop_assert!(sol.u.iter().flatten().all(|u| *u <= m0 + 1e-12));
    }
}

fn laplace_setup(t: f64) -> (ModelSpec, EquilibriumTable, Vec<tapsim::Trajectory>) {
    let spec = critical();
    let tab = table(&spec, vec![0.0, 0.5, 1.0]);
    let mut cfg = SimConfig::new(t.max(0.1), 100, InitialCondition::at_trait(100, &[0.5]), 21).unwrap();
    cfg.mass_recording = MassRecording::None;
    let trajs = run_replicates(&spec, &cfg, 20).unwrap();
    (spec, tab, trajs)
}

#[test]
fn laplace_with_zero_function_is_one() {
    let (spec, tab, trajs) = laplace_setup(0.1);
    let f0 = TraitFunction::constant(0.0);
    let sol = cumulant_solve(&CumulantProblem::from_table(&tab, Generator::None), &f0, &grid(0.1, 100)).unwrap();
    let c = laplace_crosscheck(&spec, &tab, &trajs, &sol, &f0, 0.1).unwrap();
    assert_eq!(c.estimate, 1.0);
    assert_eq!(c.prediction, 1.0);
    assert!(c.within_3se);
}

#[test]
fn laplace_at_time_zero_is_the_initial_condition() {
    let (_, tab, trajs) = laplace_setup(0.1);
    let f0 = TraitFunction::parse("2 + x", 1).unwrap();
    let sol = cumulant_solve(&CumulantProblem::from_table(&tab, Generator::None), &f0, &grid(0.1, 100)).unwrap();
    let samples: Vec<_> = trajs.iter().map(|tr| laplace_sample(tr, &sol, &f0, 0.0).unwrap()).collect();
    let c = laplace_summary(&samples, &f0, 0.0).unwrap();
    assert!((c.estimate - (-2.5f64).exp()).abs() < 1e-12);
    assert!((c.estimate - c.prediction).abs() < 1e-12);
    assert!(c.std_error < 1e-12);
}

#[test]
fn laplace_needs_an_interaction_free_model() {
    let spec = build_example(1, &Value::Null).unwrap();
    let err = laplace_precondition(&spec, &example1_table()).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
    let (spec, tab, _) = laplace_setup(0.1);
    laplace_precondition(&spec, &tab).unwrap();
}
