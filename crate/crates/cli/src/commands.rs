use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use tapsim::equilibrium::{EquilibriumTable, TableOptions};
use tapsim::examples::{
    build_example, extinction_study, hitting_bound_check, median_extinction_time, write_extinction_csv,
    DominationConfig,
};
use tapsim::limitdiag::{
    averaging_ks_samples, cumulant_solve, laplace_crosscheck, martingale_sample, martingale_summary,
    CumulantGrid, CumulantProblem, DiagnosticsReport, Generator, MartingaleOptions, TraitFunction,
};
use tapsim::model::TraitDomain;
use tapsim::simulate::io::{read_trajectory, write_trajectory, TrajectoryMeta};
use tapsim::simulate::{InitialCondition, MassRecording, SimConfig};
use tapsim::{MeasureSample, ModelSpec, Trajectory};

use crate::args::{model_sigma, output_dir, parse_list, write_json, ModelArgs, SimArgs};
use crate::error::{out_err, CliError, CliResult};

fn csv_file(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(out_err)?))
}

fn write_one(dir: &Path, spec: &ModelSpec, cfg: &SimConfig, replicate: Option<u64>, t: &Trajectory) -> CliResult<()> {
    let meta = TrajectoryMeta::new("simulate", spec.descriptor.as_ref(), cfg, replicate, t);
    write_trajectory(dir, t, &meta).map_err(out_err)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// With more than one replicate, replicate k goes to `rep_<k>/`.
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let (spec, cfg) = a.sim.resolve(&a.model)?;
    if a.replicates == 0 {
        return Err(CliError::usage("--replicates must be positive"));
    }
    let dir = output_dir(&a.out, "simulate")?;
    if a.replicates == 1 {
        let t = tapsim::simulate(&spec, &cfg)?;
        return write_one(&dir, &spec, &cfg, None, &t);
    }
    (0..a.replicates).into_par_iter().try_for_each(|k| {
        let t = tapsim::simulate(&spec, &cfg.for_replicate(k))?;
        write_one(&dir.join(format!("rep_{k}")), &spec, &cfg, Some(k), &t)
    })
}

// ---------------------------------------------------------------------------
// equilibrium

#[derive(Debug, Args)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Explicit comma-separated trait grid.
    #[arg(long)]
    pub traits: Option<String>,
    #[arg(long, default_value_t = 101)]
    pub trait_points: usize,
    #[arg(long, default_value_t = 2001)]
    pub age_nodes: usize,
    /// Write every k-th age node.
    #[arg(long, default_value_t = 1)]
    pub age_stride: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn build_table(spec: &ModelSpec, traits: Option<&str>, trait_points: usize, age_nodes: usize) -> CliResult<EquilibriumTable> {
    let opts = TableOptions {
        trait_grid: traits.map(parse_list).transpose()?,
        trait_points,
        age_nodes,
    };
    Ok(EquilibriumTable::build(spec, &opts)?)
}

pub fn equilibrium(a: &EquilibriumArgs) -> CliResult<()> {
    let spec = a.model.resolve(None)?;
    let table = build_table(&spec, a.traits.as_deref(), a.trait_points, a.age_nodes)?;
    let dir = output_dir(&a.out, "equilibrium")?;
    table.write_csv(csv_file(&dir, "equilibrium.csv")?, a.age_stride).map_err(out_err)?;
    write_json(
        &dir.join("meta.json"),
        &json!({
            "command": "equilibrium",
            "model": spec.descriptor,
            "traits": table.traits,
            "age_nodes": a.age_nodes,
            "age_stride": a.age_stride,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    None,
    Laplacian,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    /// Motion generator of the limit (default: Laplacian when the model has
    /// an isotropic Gaussian mutation kernel).
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArg>,
    /// Mutation standard deviation for the Laplacian (default: the model's).
    #[arg(long)]
    pub sigma: Option<f64>,
}

impl GeneratorArgs {
    fn resolve(&self, spec: &ModelSpec) -> CliResult<Generator> {
        let sigma = self.sigma.or_else(|| model_sigma(spec));
        match (self.generator, sigma) {
            (Some(GeneratorArg::None), _) => Ok(Generator::None),
            (Some(GeneratorArg::Laplacian), None) => {
                Err(CliError::usage("--generator laplacian needs --sigma for this model"))
            }
            (_, Some(sigma)) => Ok(Generator::Laplacian { sigma }),
            (None, None) => Ok(Generator::None),
        }
    }
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 50)]
    pub replicates: u64,
    /// Martingale times, comma separated (default: half the horizon and the horizon).
    #[arg(long)]
    pub times: Option<String>,
    /// Martingale test functions as expressions in x; repeatable.
    #[arg(long = "function", default_values_t = vec!["1".to_string()])]
    pub functions: Vec<String>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Leave the drift out of the martingale (negative control).
    #[arg(long)]
    pub drop_drift: bool,
    /// Times of the averaging checks (default: 0.5, or the horizon if earlier).
    #[arg(long)]
    pub ks_times: Option<String>,
    /// Trait bin edges of the averaging checks (default: four equal bins).
    #[arg(long)]
    pub trait_bins: Option<String>,
    #[arg(long, default_value_t = 101)]
    pub trait_points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-replicate reductions kept by `diagnose`.
struct Reduced {
    snapshots: Vec<MeasureSample>,
    martingale: Vec<tapsim::Result<tapsim::limitdiag::MartingaleSample>>,
}

pub fn diagnose(a: &DiagnoseArgs) -> CliResult<()> {
    let (spec, cfg) = a.sim.resolve(&a.model)?;
    if a.replicates < 2 {
        return Err(CliError::usage("diagnose needs at least two replicates"));
    }
    let h = cfg.horizon;
    let times = match &a.times {
        Some(s) => parse_list(s)?,
        None => cfg
            .snapshot_times()
            .into_iter()
            .filter(|t| (t - h / 2.0).abs() < 1e-9 * h.max(1.0) || *t == h)
            .collect::<Vec<_>>(),
    };
    let times = if times.is_empty() { vec![h] } else { times };
    let ks_times = match &a.ks_times {
        Some(s) => parse_list(s)?,
        None => vec![0.5f64.min(h)],
    };
    let bins = match &a.trait_bins {
        Some(s) => parse_list(s)?,
        None => match &spec.trait_domain {
            TraitDomain::Box { lower, upper } if lower.len() == 1 => {
                (0..=4).map(|k| lower[0] + (upper[0] - lower[0]) * k as f64 / 4.0).collect()
            }
            _ => Vec::new(),
        },
    };
    let generator = a.generator.resolve(&spec)?;
    let fns = a
        .functions
        .iter()
        .map(|s| TraitFunction::parse(s, spec.trait_dim))
        .collect::<tapsim::Result<Vec<_>>>()?;
    let table = build_table(&spec, None, a.trait_points, 2001)?;
    let dir = output_dir(&a.out, "diagnose")?;

    let mut opts = MartingaleOptions::new(times, generator);
    opts.drop_drift = a.drop_drift;
    let mut report = DiagnosticsReport::new(
        &spec.name,
        json!({ "model": spec.descriptor, "simulation": cfg, "martingale": opts, "ks_times": ks_times, "trait_bins": bins }),
        a.replicates as usize,
    );
    let martingale_ok = table.rows.iter().all(|r| r.u_hat.is_some());
    if !martingale_ok {
        report
            .warnings
            .push("martingale check skipped: it needs a focal-only or zero interaction".into());
    }

    let reduced = tapsim::simulate::run_replicates_map(&spec, &cfg, a.replicates, |tr| Reduced {
        snapshots: ks_times
            .iter()
            .filter_map(|t| tr.snapshot_at(*t).cloned())
            .collect(),
        martingale: if martingale_ok {
            fns.iter().map(|f| martingale_sample(&tr, &table, f, &opts)).collect()
        } else {
            Vec::new()
        },
    })?;

    for (j, &t) in ks_times.iter().enumerate() {
        let snaps: Vec<&MeasureSample> = reduced.iter().filter_map(|r| r.snapshots.get(j)).collect();
        match averaging_ks_samples(&snaps, &table, t, &bins) {
            Ok(r) => report.averaging.push(r),
            Err(tapsim::Error::Precondition(msg)) => report.warnings.push(msg),
            Err(e) => return Err(e.into()),
        }
    }
    if martingale_ok {
        for (i, f) in fns.iter().enumerate() {
            let samples = reduced
                .iter()
                .map(|r| match &r.martingale[i] {
                    Ok(s) => Ok(s.clone()),
                    Err(e) => Err(CliError::usage(e.to_string())),
                })
                .collect::<CliResult<Vec<_>>>()?;
            let m = martingale_summary(&samples, f, &opts)?;
            report.warnings.extend(m.warnings.iter().cloned());
            report.martingale.push(m);
        }
    }
    write_json(&dir.join("diagnostics.json"), &report)
}

// ---------------------------------------------------------------------------
// cumulant

#[derive(Debug, Args)]
pub struct CumulantArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial condition f0 as an expression in x.
    #[arg(long, default_value = "1")]
    pub f0: String,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub record_every: usize,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 101)]
    pub trait_points: usize,
    /// Trajectory directory (one run, or `rep_*` subdirectories) for the
    /// Laplace cross-check.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Time of the cross-check (default: the horizon).
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_runs(dir: &Path) -> CliResult<Vec<(Trajectory, TrajectoryMeta)>> {
    if dir.join("meta.json").is_file() {
        return Ok(vec![read_trajectory(dir)?]);
    }
    let mut subdirs: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let k = name.strip_prefix("rep_")?.parse().ok()?;
            e.path().join("meta.json").is_file().then(|| (k, e.path()))
        })
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(CliError::usage(format!("no trajectories under {}", dir.display())));
    }
    subdirs
        .iter()
        .map(|(_, p)| read_trajectory(p).map_err(CliError::from))
        .collect()
}

pub fn cumulant(a: &CumulantArgs) -> CliResult<()> {
    let runs = match &a.trajectories {
        Some(d) => read_runs(d)?,
        None => Vec::new(),
    };
    let spec = a.model.resolve(runs.first().map(|r| &r.1.model))?;
    let generator = a.generator.resolve(&spec)?;
    let f0 = TraitFunction::parse(&a.f0, spec.trait_dim)?;
    let table = build_table(&spec, None, a.trait_points, 2001)?;
    let grid = CumulantGrid {
        horizon: a.horizon,
        time_steps: a.steps,
        record_every: a.record_every,
    };
    let sol = cumulant_solve(&CumulantProblem::from_table(&table, generator), &f0, &grid)?;
    let dir = output_dir(&a.out, "cumulant")?;
    sol.write_csv(csv_file(&dir, "cumulant.csv")?).map_err(out_err)?;
    write_json(
        &dir.join("meta.json"),
        &json!({
            "command": "cumulant",
            "model": spec.descriptor,
            "f0": a.f0,
            "grid": grid,
            "dt": sol.dt,
            "generator": sol.generator,
            "boundary": sol.boundary,
            "scheme": sol.scheme,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    if !runs.is_empty() {
        let t = a.t.unwrap_or(a.horizon);
        let trajs: Vec<Trajectory> = runs.into_iter().map(|r| r.0).collect();
        let cmp = laplace_crosscheck(&spec, &table, &trajs, &sol, &f0, t)?;
        write_json(&dir.join("laplace.json"), &cmp)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// extinction

#[derive(Debug, Args)]
pub struct ExtinctionArgs {
    #[arg(long, default_value_t = 50)]
    pub replicates: u64,
    #[arg(long, default_value_t = 6.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1000)]
    pub n: u64,
    /// Initial count (default n).
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long = "trait", default_value_t = 1.5)]
    pub trait_value: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub zeta: f64,
    /// Initial mass of the dominating diffusion in units of m0.
    #[arg(long, default_value_t = 1.5)]
    pub z_factor: f64,
    #[arg(long, default_value_t = 1000)]
    pub hit_replicates: u64,
    /// Euler step of the dominating diffusion.
    #[arg(long, default_value_t = 1e-4)]
    pub euler_dt: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn extinction(a: &ExtinctionArgs) -> CliResult<()> {
    let count = a.count.unwrap_or(a.n);
    let cfg = SimConfig::new(a.horizon, a.n, InitialCondition::at_trait(count, &[a.trait_value]), a.seed)?;
    let mut dom = DominationConfig {
        zeta: a.zeta,
        dt: a.euler_dt,
        ..DominationConfig::default()
    };
    dom.z = a.z_factor * dom.m0();
    dom.validate()?;
    let dir = output_dir(&a.out, "extinction")?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    for id in [1u8, 2] {
        let spec = build_example(id, &Value::Null)?;
        let recs = extinction_study(&spec.name, &spec, &cfg, a.replicates)?;
        let before2 = recs.iter().filter(|r| r.extinction_time.is_some_and(|t| t < 2.0)).count();
        summary.push(json!({
            "example_id": spec.name,
            "replicates": recs.len(),
            "median_extinction_time": median_extinction_time(&recs),
            "extinct_before_t2": before2,
            "censored": recs.iter().filter(|r| r.extinction_time.is_none()).count(),
        }));
        records.extend(recs);
    }
    write_extinction_csv(&records, csv_file(&dir, "extinction.csv")?).map_err(out_err)?;
    let hit = hitting_bound_check(&dom, a.hit_replicates, a.seed)?;
    write_json(
        &dir.join("domination.json"),
        &json!({
            "simulation": cfg,
            "extinction": summary,
            "domination": hit,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

// ---------------------------------------------------------------------------
// reproduce-figure

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    #[value(name = "1a")]
    F1a,
    #[value(name = "1b")]
    F1b,
    #[value(name = "1c")]
    F1c,
    #[value(name = "2a")]
    F2a,
    #[value(name = "2b")]
    F2b,
    #[value(name = "2c")]
    F2c,
    #[value(name = "3")]
    F3,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long, value_enum)]
    pub id: FigureId,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n: u64,
    /// Simulated time (default 2 for a/b panels, 0.5 otherwise).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Panel kind: trait support, mass path, or an age (trait-age) snapshot.
#[derive(Clone, Copy, PartialEq)]
enum Panel {
    Support,
    Mass,
    Snapshot,
}

pub fn reproduce_figure(a: &FigureArgs) -> CliResult<()> {
    use FigureId::*;
    let (example, panel, name) = match a.id {
        F1a => (1, Panel::Support, "1a"),
        F1b => (1, Panel::Mass, "1b"),
        F1c => (1, Panel::Snapshot, "1c"),
        F2a => (2, Panel::Support, "2a"),
        F2b => (2, Panel::Mass, "2b"),
        F2c => (2, Panel::Snapshot, "2c"),
        F3 => (2, Panel::Snapshot, "3"),
    };
    // the two mutation scales shown side by side
    let sigmas: [f64; 2] = if example == 1 { [1.0, 0.8] } else { [1.0, 0.2] };
    let horizon = a.horizon.unwrap_or(if panel == Panel::Snapshot { 0.5 } else { 2.0 });
    let dir = output_dir(&a.out, &format!("figure_{name}"))?;

    let mut cfg = SimConfig::new(horizon, a.n, InitialCondition::at_trait(1000, &[1.5]), a.seed)?;
    match panel {
        Panel::Support => {
            cfg.snapshot_cadence = Some(0.01);
            cfg.mass_recording = MassRecording::None;
        }
        Panel::Mass => cfg.record_snapshots = false,
        Panel::Snapshot => {
            cfg.snapshot_cadence = Some(horizon);
            cfg.mass_recording = MassRecording::None;
        }
    }
    let mut files = Vec::new();
    for sigma in sigmas {
        let spec = build_example(example, &json!({ "sigma": sigma }))?;
        let sub = format!("sigma_{sigma}");
        let t = tapsim::simulate(&spec, &cfg)?;
        write_one(&dir.join(&sub), &spec, &cfg, None, &t)?;
        match panel {
            Panel::Support => files.push(format!("{sub}/snapshots")),
            Panel::Mass => files.push(format!("{sub}/mass.csv")),
            Panel::Snapshot => {
                let snap = t.snapshot_at(horizon).expect("horizon snapshot is always recorded");
                snap.write_csv(csv_file(&dir, &format!("{sub}/snapshot.csv"))?).map_err(out_err)?;
                files.push(format!("{sub}/snapshot.csv"));
            }
        }
    }
    if panel == Panel::Snapshot {
        let spec = build_example(example, &Value::Null)?;
        let table = EquilibriumTable::build(
            &spec,
            &TableOptions {
                trait_grid: Some(vec![0.5, 1.0, 1.5, 3.0]),
                ..TableOptions::default()
            },
        )?;
        table.write_csv(csv_file(&dir, "equilibrium.csv")?, 1).map_err(out_err)?;
        files.push("equilibrium.csv".into());
    }
    write_json(
        &dir.join("figure.json"),
        &json!({
            "id": name,
            "example": example,
            "sigmas": sigmas,
            "simulation": cfg,
            "files": files,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}
