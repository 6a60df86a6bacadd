//! On-disk trajectory layout:
//!
//! ```text
//! <dir>/mass.csv              t,mass
//! <dir>/snapshots/t_<k>.csv   t,trait_1..trait_d,age,weight (k-th snapshot)
//! <dir>/meta.json             TrajectoryMeta
//! ```
//!
//! `meta.json` echoes the model and the configuration, which is enough to
//! rerun the simulation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EventCounters, MassSeries, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::SimScale;
use crate::population::{fmt_f64, MeasureSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub command: String,
    /// Model document, when the model has one.
    pub model: serde_json::Value,
    /// Configuration with the base seed.
    pub config: SimConfig,
    /// Replicate index; the seed used is derived from the base seed.
    pub replicate: Option<u64>,
    pub seed: u64,
    pub n: u64,
    pub trait_dim: usize,
    pub horizon: f64,
    pub counters: EventCounters,
    pub extinction_time: Option<f64>,
    pub initial_count: u64,
    pub final_count: u64,
    pub snapshot_times: Vec<f64>,
    pub version: String,
}

impl TrajectoryMeta {
    pub fn new(
        command: &str,
        model: Option<&serde_json::Value>,
        config: &SimConfig,
        replicate: Option<u64>,
        traj: &Trajectory,
    ) -> Self {
        Self {
            command: command.to_string(),
            model: model.cloned().unwrap_or(serde_json::Value::Null),
            config: config.clone(),
            replicate,
            seed: traj.seed,
            n: traj.n.get(),
            trait_dim: traj.trait_dim,
            horizon: traj.horizon,
            counters: traj.counters,
            extinction_time: traj.extinction_time,
            initial_count: traj.initial_count,
            final_count: traj.final_count,
            snapshot_times: traj.snapshot_times.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_mass_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t", "mass"])?;
    for (t, m) in traj.mass.mass(traj.n) {
        w.write_record([fmt_f64(t), fmt_f64(m)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn snapshot_path(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join("snapshots").join(format!("t_{k}.csv"))
}

/// Writes `mass.csv`, `snapshots/` and `meta.json` under `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, meta: &TrajectoryMeta) -> Result<()> {
    fs::create_dir_all(dir.join("snapshots"))?;
    write_mass_csv(traj, &dir.join("mass.csv"))?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        s.write_csv(BufWriter::new(File::create(snapshot_path(dir, k))?))?;
    }
    let f = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<TrajectoryMeta> {
    let f = BufReader::new(File::open(dir.join("meta.json"))?);
    Ok(serde_json::from_reader(f)?)
}

/// Reads a trajectory written by [`write_trajectory`].
pub fn read_trajectory(dir: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
    let meta = read_meta(dir)?;
    let n = SimScale::new(meta.n)?;
    let weight = 1.0 / n.as_f64();

    let mut mass = MassSeries::default();
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(dir.join("mass.csv"))?));
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["t", "mass"] {
        return Err(Error::Config("mass.csv must have header t,mass".into()));
    }
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("mass.csv: {e}")))
        };
        mass.t.push(parse(0)?);
        mass.count.push((parse(1)? * n.as_f64()).round() as u64);
    }

    let mut snapshots = Vec::with_capacity(meta.snapshot_times.len());
    for (k, &t) in meta.snapshot_times.iter().enumerate() {
        let p = snapshot_path(dir, k);
        if !p.exists() {
            break;
        }
        let mut s = MeasureSample::read_csv(BufReader::new(File::open(p)?), t, weight)?;
        if s.is_empty() {
            s.trait_dim = meta.trait_dim;
        }
        snapshots.push(s);
    }
    let snapshot_times = meta.snapshot_times[..snapshots.len()].to_vec();
    let traj = Trajectory {
        seed: meta.seed,
        n,
        horizon: meta.horizon,
        trait_dim: meta.trait_dim,
        snapshot_times,
        snapshots,
        mass,
        counters: meta.counters,
        extinction_time: meta.extinction_time,
        initial_count: meta.initial_count,
        final_count: meta.final_count,
    };
    Ok((traj, meta))
}
