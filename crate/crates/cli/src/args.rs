use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::Value;
use tapsim::model::json::{model_from_value, resolve_model};
use tapsim::model::{GaussianScale, MutationKernel, TraitDomain};
use tapsim::simulate::{AgeLaw, InitialCondition, MassRecording, Scheme, SimConfig, TraitLaw};
use tapsim::ModelSpec;

use crate::error::{out_err, CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Built-in model name (example1, example2) or path to a JSON model.
    #[arg(long)]
    pub model: Option<String>,

    /// JSON object of parameter overrides for a built-in model, e.g.
    /// '{"sigma": 0.8}'.
    #[arg(long, value_name = "JSON")]
    pub model_overrides: Option<String>,
}

impl ModelArgs {
    /// Model from the flags, else from `fallback` (a model document echoed
    /// in a config file), else `example1`.
    pub fn resolve(&self, fallback: Option<&Value>) -> CliResult<ModelSpec> {
        let overrides = match &self.model_overrides {
            Some(s) => serde_json::from_str::<Value>(s)
                .map_err(|e| CliError::usage(format!("--model-overrides is not JSON: {e}")))?,
            None => Value::Null,
        };
        let spec = match (&self.model, fallback) {
            (Some(name), _) => {
                if overrides.is_null() {
                    resolve_model(name)?
                } else {
                    tapsim::examples::build_named(name, &overrides)?
                }
            }
            (None, Some(doc)) if !doc.is_null() => {
                if !overrides.is_null() {
                    return Err(CliError::usage("--model-overrides needs --model"));
                }
                model_from_value(doc)?
            }
            _ => tapsim::examples::build_named("example1", &overrides)?,
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Exact,
    Discretized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MassArg {
    EveryEvent,
    Grid,
    None,
}

/// Simulation flags. Each mirrors a key of the JSON configuration and
/// overrides it when given.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// JSON configuration, or a meta.json written by an earlier run.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub horizon: Option<f64>,

    /// Scale parameter n.
    #[arg(long)]
    pub n: Option<u64>,

    /// Initial number of individuals (default n).
    #[arg(long)]
    pub count: Option<u64>,

    /// Initial trait, comma separated for several dimensions.
    #[arg(long = "trait", value_delimiter = ',', value_name = "X")]
    pub trait_value: Option<Vec<f64>>,

    /// Common initial age (default 0).
    #[arg(long)]
    pub age: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub snapshot_cadence: Option<f64>,

    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,

    /// Step of the discretized scheme.
    #[arg(long)]
    pub dt: Option<f64>,

    #[arg(long, value_enum)]
    pub mass_recording: Option<MassArg>,

    /// Grid step for `--mass-recording grid`.
    #[arg(long)]
    pub mass_dt: Option<f64>,

    /// Do not record snapshots.
    #[arg(long)]
    pub no_snapshots: bool,

    #[arg(long)]
    pub envelope_window: Option<f64>,
}

/// Configuration file contents.
pub struct Loaded {
    pub config: Option<SimConfig>,
    pub model: Option<Value>,
}

pub fn load_config(path: &Path) -> CliResult<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{} is not JSON: {e}", path.display())))?;
    if let Some(cfg) = v.get("config") {
        // meta.json echo: rerun exactly the recorded replicate
        let mut config: SimConfig = serde_json::from_value(cfg.clone())
            .map_err(|e| CliError::usage(format!("bad config in {}: {e}", path.display())))?;
        if let Some(k) = v.get("replicate").and_then(Value::as_u64) {
            config = config.for_replicate(k);
        }
        Ok(Loaded {
            config: Some(config),
            model: v.get("model").cloned(),
        })
    } else {
        let config: SimConfig =
            serde_json::from_value(v).map_err(|e| CliError::usage(format!("bad config in {}: {e}", path.display())))?;
        Ok(Loaded {
            config: Some(config),
            model: None,
        })
    }
}

fn default_trait(spec: &ModelSpec) -> Vec<f64> {
    if spec.name == "example1" || spec.name == "example2" {
        return vec![1.5];
    }
    match &spec.trait_domain {
        TraitDomain::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
        TraitDomain::AllSpace => vec![0.0; spec.trait_dim],
    }
}

impl SimArgs {
    /// Resolves the model and the configuration: file values first, then
    /// flags, then defaults (horizon 2, n = 1000, count = n).
    pub fn resolve(&self, model: &ModelArgs) -> CliResult<(ModelSpec, SimConfig)> {
        let loaded = match &self.config {
            Some(p) => load_config(p)?,
            None => Loaded {
                config: None,
                model: None,
            },
        };
        let spec = model.resolve(loaded.model.as_ref())?;
        let mut cfg = match loaded.config {
            Some(c) => c,
            None => {
                let n = self.n.unwrap_or(1000);
                SimConfig::new(2.0, n, InitialCondition::at_trait(n, &default_trait(&spec)), 0)?
            }
        };
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(n) = self.n {
            cfg.n = tapsim::SimScale::new(n)?;
        }
        if let Some(c) = self.count {
            cfg.initial.count = c;
        } else if self.config.is_none() {
            cfg.initial.count = cfg.n.get();
        }
        if let Some(x) = &self.trait_value {
            cfg.initial.traits = TraitLaw::Point { value: x.clone() };
        }
        if let Some(a) = self.age {
            cfg.initial.ages = AgeLaw::Point { age: a };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.snapshot_cadence {
            cfg.snapshot_cadence = Some(c);
        }
        match (self.scheme, self.dt) {
            (Some(SchemeArg::Exact), Some(_)) => return Err(CliError::usage("--dt needs --scheme discretized")),
            (Some(SchemeArg::Exact), None) => cfg.scheme = Scheme::Exact,
            (Some(SchemeArg::Discretized), dt) => {
                let dt = dt.ok_or_else(|| CliError::usage("--scheme discretized needs --dt"))?;
                cfg.scheme = Scheme::Discretized { dt };
            }
            (None, Some(dt)) => match cfg.scheme {
                Scheme::Discretized { .. } => cfg.scheme = Scheme::Discretized { dt },
                Scheme::Exact => return Err(CliError::usage("--dt needs --scheme discretized")),
            },
            (None, None) => {}
        }
        match (self.mass_recording, self.mass_dt) {
            (Some(MassArg::Grid), dt) => {
                let dt = dt.ok_or_else(|| CliError::usage("--mass-recording grid needs --mass-dt"))?;
                cfg.mass_recording = MassRecording::Grid { dt };
            }
            (Some(_), Some(_)) => return Err(CliError::usage("--mass-dt needs --mass-recording grid")),
            (Some(MassArg::EveryEvent), None) => cfg.mass_recording = MassRecording::EveryEvent,
            (Some(MassArg::None), None) => cfg.mass_recording = MassRecording::None,
            (None, Some(dt)) => cfg.mass_recording = MassRecording::Grid { dt },
            (None, None) => {}
        }
        if self.no_snapshots {
            cfg.record_snapshots = false;
        }
        if let Some(w) = self.envelope_window {
            cfg.envelope_window = w;
        }
        cfg.validate()?;
        Ok((spec, cfg))
    }
}

/// Isotropic mutation standard deviation of the model, if it has one.
pub fn model_sigma(spec: &ModelSpec) -> Option<f64> {
    match &spec.mutation {
        MutationKernel::GaussianConditioned(GaussianScale::Isotropic(s)) => Some(*s),
        _ => None,
    }
}

/// `dir` under `$TAPSIM_OUT` (default `tapsim-out`) unless `--out` was
/// given; created and probed for writability.
pub fn output_dir(out: &Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    let dir = match out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os("TAPSIM_OUT").map_or_else(|| PathBuf::from("tapsim-out"), PathBuf::from);
            root.join(command)
        }
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::output(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::output(format!("{} is not writable: {e}", dir.display())))?;
    fs::remove_file(&probe).map_err(out_err)?;
    Ok(dir)
}

pub fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    let f = fs::File::create(path).map_err(out_err)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), v).map_err(out_err)
}

pub fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::usage(format!("`{p}` in `{s}`: {e}")))
        })
        .collect()
}
