//! Checks of the large-population limit against simulated trajectories.
//!
//! * [`averaging_ks`]: the age profile of the surviving population against
//!   the stable age density, by weighted Kolmogorov–Smirnov statistics.
//! * [`martingale_check`]: mean and variance of the limiting martingale
//!   `M^f` built from the averaged coefficients.
//! * [`occupation_measure`]: `Γ(dt, dx, da) = X_t(dx, da) dt` aggregated
//!   over snapshots.
//! * [`cumulant_solve`] and [`laplace_crosscheck`]: the cumulant equation
//!   `∂ₜu = Au - r̂u²` and the Laplace functional
//!   `E[exp(-⟨X̄_t, f⟩)] = E[exp(-⟨X̄₀, u_t⟩)]` of the interaction-free limit.
//!
//! Time integrals over a trajectory use the trapezoid rule on its snapshot
//! grid. Every per-replicate statistic has a `*_sample` form so that long
//! runs can reduce each trajectory as soon as it is produced.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Coefficient, EquilibriumTable};
use crate::error::{Error, Result};
use crate::examples::mean_var;
use crate::expr::Expr;
use crate::model::ModelSpec;
use crate::population::{fmt_f64, MeasureSample};
use crate::quad::trapezoid;
use crate::simulate::Trajectory;

/// A bounded function of the trait.
#[derive(Clone)]
pub struct TraitFunction {
    label: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TraitFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TraitFunction({})", self.label)
    }
}

impl TraitFunction {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(fmt_f64(c), move |_| c)
    }

    /// Expression in `x` (one trait) or `x1..xd`.
    pub fn parse(src: &str, trait_dim: usize) -> Result<Self> {
        let names: Vec<String> = if trait_dim == 1 {
            vec!["x".into()]
        } else {
            (1..=trait_dim).map(|k| format!("x{k}")).collect()
        };
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let e = Expr::compile(src, &vars)?;
        Ok(Self::new(src, move |x| e.eval(x)))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

// ---------------------------------------------------------------------------
// averaging

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsStat {
    /// `sup_a |F_emp(a) - F_ref(a)|`.
    pub statistic: f64,
    pub points: usize,
    pub mass: f64,
    /// `(Σw)² / Σw²`; the sample size for equal weights.
    pub effective_size: f64,
}

/// Weighted KS statistic of `(age, weight)` atoms against a continuous CDF.
/// Tied ages are merged. Returns `None` for an empty or massless sample.
pub fn weighted_ks(points: &mut [(f64, f64)], cdf: impl Fn(f64) -> f64) -> Option<KsStat> {
    let total: f64 = points.iter().map(|p| p.1).sum();
    if points.is_empty() || !(total > 0.0) {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sq: f64 = points.iter().map(|p| p.1 * p.1).sum();
    let mut d: f64 = 0.0;
    let mut acc = 0.0;
    let mut i = 0;
    while i < points.len() {
        let a = points[i].0;
        let f = cdf(a);
        let below = acc / total;
        while i < points.len() && points[i].0 == a {
            acc += points[i].1;
            i += 1;
        }
        let above = acc / total;
        d = d.max((below - f).abs()).max((above - f).abs());
    }
    Some(KsStat {
        statistic: d,
        points: points.len(),
        mass: total,
        effective_size: total * total / sq,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsBin {
    pub lo: f64,
    pub hi: f64,
    /// `None` when the bin is empty.
    pub ks: Option<KsStat>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    pub t: f64,
    /// Replicates alive at `t` and pooled.
    pub replicates: usize,
    /// Replicates extinct by `t`, not pooled.
    pub extinct: usize,
    pub pooled: KsStat,
    pub bins: Vec<KsBin>,
}

/// Mixture of tabulated age CDFs, weighted by the trait mass carried by
/// each grid point (linear split between neighbours).
struct MixtureCdf<'a> {
    table: &'a EquilibriumTable,
    weights: Vec<(usize, f64)>,
    total: f64,
}

impl<'a> MixtureCdf<'a> {
    fn new(table: &'a EquilibriumTable, atoms: &[(f64, f64, f64)]) -> Self {
        let mut w = vec![0.0; table.traits.len()];
        for &(x, _, wt) in atoms {
            let (j, lam) = table.bracket(x);
            w[j] += wt * (1.0 - lam);
            if lam > 0.0 {
                w[j + 1] += wt * lam;
            }
        }
        let weights: Vec<(usize, f64)> = w.into_iter().enumerate().filter(|p| p.1 > 0.0).collect();
        let total = weights.iter().map(|p| p.1).sum();
        Self { table, weights, total }
    }

    fn cdf(&self, a: f64) -> f64 {
        self.weights
            .iter()
            .map(|&(j, w)| w * self.table.rows[j].cdf_at(a))
            .sum::<f64>()
            / self.total
    }
}

fn ks_against_mixture(table: &EquilibriumTable, atoms: &[(f64, f64, f64)]) -> Option<KsStat> {
    let mix = MixtureCdf::new(table, atoms);
    let mut pts: Vec<(f64, f64)> = atoms.iter().map(|&(_, a, w)| (a, w)).collect();
    weighted_ks(&mut pts, |a| mix.cdf(a))
}

/// `(trait, age, weight)` atoms of a one-dimensional sample.
fn atoms(s: &MeasureSample) -> Result<Vec<(f64, f64, f64)>> {
    if s.trait_dim != 1 && !s.is_empty() {
        return Err(Error::Precondition("averaging diagnostics need a one-dimensional trait".into()));
    }
    Ok(s.iter().map(|(x, a, w)| (x[0], a, w)).collect())
}

/// KS of one sample against the trait-mixture of `m̂`.
pub fn sample_ks(table: &EquilibriumTable, sample: &MeasureSample) -> Result<Option<KsStat>> {
    Ok(ks_against_mixture(table, &atoms(sample)?))
}

/// Pools the snapshot nearest to `t` across surviving replicates and
/// compares its age profile with `m̂`, overall and per trait bin.
/// `bin_edges` is increasing; each bin is `[lo, hi)` except the last,
/// which is closed.
pub fn averaging_ks(
    trajs: &[Trajectory],
    table: &EquilibriumTable,
    t: f64,
    bin_edges: &[f64],
) -> Result<AveragingReport> {
    let samples: Vec<&MeasureSample> = trajs
        .iter()
        .map(|tr| {
            tr.snapshot_at(t)
                .ok_or_else(|| Error::Precondition(format!("replicate {} has no snapshots", tr.seed)))
        })
        .collect::<Result<_>>()?;
    averaging_ks_samples(&samples, table, t, bin_edges)
}

/// [`averaging_ks`] on snapshots already extracted; empty samples count as
/// extinct.
pub fn averaging_ks_samples(
    samples: &[&MeasureSample],
    table: &EquilibriumTable,
    t: f64,
    bin_edges: &[f64],
) -> Result<AveragingReport> {
    if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("trait bin edges must be increasing".into()));
    }
    let mut pooled = Vec::new();
    let mut extinct = 0;
    for s in samples {
        if s.is_empty() {
            extinct += 1;
        } else {
            pooled.extend(atoms(s)?);
        }
    }
    let stat = ks_against_mixture(table, &pooled)
        .ok_or_else(|| Error::Precondition(format!("no surviving replicate at t = {t}")))?;
    let nbins = bin_edges.len().saturating_sub(1);
    let bins = (0..nbins)
        .map(|k| {
            let (lo, hi) = (bin_edges[k], bin_edges[k + 1]);
            let last = k + 1 == nbins;
            let inside: Vec<_> = pooled
                .iter()
                .copied()
                .filter(|&(x, _, _)| x >= lo && (x < hi || (last && x == hi)))
                .collect();
            let ks = ks_against_mixture(table, &inside);
            KsBin {
                lo,
                hi,
                skipped: ks.is_none(),
                ks,
            }
        })
        .collect();
    Ok(AveragingReport {
        t,
        replicates: samples.len() - extinct,
        extinct,
        pooled: stat,
        bins,
    })
}

// ---------------------------------------------------------------------------
// martingale problem

/// Motion generator `A` of the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    None,
    /// `A f = σ²/2 · f''`, Neumann boundary.
    Laplacian { sigma: f64 },
}

impl Generator {
    fn half_var(self) -> f64 {
        match self {
            Generator::None => 0.0,
            Generator::Laplacian { sigma } => 0.5 * sigma * sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleOptions {
    /// Snapshot times at which `M^f` is evaluated.
    pub times: Vec<f64>,
    pub generator: Generator,
    /// Negative control: leave the drift out of `M^f`.
    pub drop_drift: bool,
    /// Step of the second difference for `f''`.
    pub fd_step: f64,
}

impl MartingaleOptions {
    pub fn new(times: Vec<f64>, generator: Generator) -> Self {
        Self {
            times,
            generator,
            drop_drift: false,
            fd_step: 1e-4,
        }
    }
}

/// One replicate's contribution at each requested time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSample {
    /// `M^f_t`.
    pub m: Vec<f64>,
    /// `∫₀ᵗ ⟨X̄ₛ, 2r̂f²⟩ ds`.
    pub bracket: Vec<f64>,
    /// Trapezoid-bias estimate `(I_fine - I_coarse)/3` of the drift
    /// integral, when the coarse grid (every other snapshot) reaches `t`.
    pub richardson: Vec<Option<f64>>,
}

/// Averaged coefficients at a trait, interpolated from the table.
struct Hatted<'a> {
    table: &'a EquilibriumTable,
}

impl Hatted<'_> {
    fn get(&self, c: Coefficient, x: f64) -> f64 {
        self.table.coefficient(c, x).unwrap_or(0.0)
    }
}

fn snapshot_index(traj: &Trajectory, t: f64) -> Result<usize> {
    let i = traj
        .nearest_snapshot(t)
        .ok_or_else(|| Error::Precondition("trajectory has no snapshots".into()))?;
    if (traj.snapshot_times[i] - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Config(format!(
            "no snapshot at t = {t}; nearest is {}",
            traj.snapshot_times[i]
        )));
    }
    Ok(i)
}

/// `M^f` and its predicted bracket for one trajectory.
pub fn martingale_sample(
    traj: &Trajectory,
    table: &EquilibriumTable,
    f: &TraitFunction,
    opts: &MartingaleOptions,
) -> Result<MartingaleSample> {
    if table.rows.iter().any(|r| r.u_hat.is_none()) {
        return Err(Error::Precondition(
            "the martingale check needs a focal-only or zero interaction".into(),
        ));
    }
    if traj.trait_dim != 1 {
        return Err(Error::Precondition("the martingale check needs a one-dimensional trait".into()));
    }
    let hat = Hatted { table };
    let h = opts.fd_step;
    let half_var = opts.generator.half_var();
    let fx = |x: f64| f.eval(&[x]);

    let k = traj.snapshots.len();
    let mut pair_f = Vec::with_capacity(k);
    let mut drift = Vec::with_capacity(k);
    let mut quad = Vec::with_capacity(k);
    for s in &traj.snapshots {
        let mass = s.total_mass;
        let (mut pf, mut dr, mut q) = (0.0, 0.0, 0.0);
        for (x, _, _) in s.iter() {
            let x = x[0];
            let v = fx(x);
            pf += v;
            if !opts.drop_drift {
                let growth = hat.get(Coefficient::B, x) - hat.get(Coefficient::D, x) - mass * hat.get(Coefficient::U, x);
                let mut term = growth * v;
                if half_var != 0.0 {
                    let lap = (fx(x + h) - 2.0 * v + fx(x - h)) / (h * h);
                    term += hat.get(Coefficient::Pr, x) * half_var * lap;
                }
                dr += term;
            }
            q += 2.0 * hat.get(Coefficient::R, x) * v * v;
        }
        pair_f.push(pf * s.weight);
        drift.push(dr * s.weight);
        quad.push(q * s.weight);
    }

    let times = &traj.snapshot_times;
    let mut out = MartingaleSample {
        m: Vec::new(),
        bracket: Vec::new(),
        richardson: Vec::new(),
    };
    for &t in &opts.times {
        let i = snapshot_index(traj, t)?;
        let fine = trapezoid(&times[..=i], &drift[..=i]);
        out.m.push(pair_f[i] - pair_f[0] - fine);
        out.bracket.push(trapezoid(&times[..=i], &quad[..=i]));
        out.richardson.push(if i >= 2 && i % 2 == 0 {
            let ct: Vec<f64> = times[..=i].iter().step_by(2).copied().collect();
            let cd: Vec<f64> = drift[..=i].iter().step_by(2).copied().collect();
            Some((fine - trapezoid(&ct, &cd)) / 3.0)
        } else {
            None
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `mean / std_error`; zero when both vanish.
    pub z: f64,
    pub empirical_variance: f64,
    /// Replicate mean of `∫₀ᵗ ⟨X̄ₛ, 2r̂f²⟩ ds`.
    pub predicted_variance: f64,
    pub variance_ratio: f64,
    /// 95% interval for the ratio (delta method on the ratio of the means
    /// of `(M - M̄)²` and the bracket).
    pub ratio_ci: [f64; 2],
    /// Mean trapezoid-bias estimate of the drift integral.
    pub richardson_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub function: String,
    pub generator: Generator,
    pub drop_drift: bool,
    pub replicates: usize,
    pub points: Vec<MartingalePoint>,
    pub warnings: Vec<String>,
}

/// Summarizes per-replicate samples taken with the same options.
pub fn martingale_summary(
    samples: &[MartingaleSample],
    f: &TraitFunction,
    opts: &MartingaleOptions,
) -> Result<MartingaleReport> {
    let r = samples.len();
    if r < 2 {
        return Err(Error::Precondition("the martingale check needs at least two replicates".into()));
    }
    let mut warnings = Vec::new();
    if r < 30 {
        warnings.push(format!("only {r} replicates; confidence intervals are unreliable"));
    }
    let rf = r as f64;
    let points = opts
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let m: Vec<f64> = samples.iter().map(|s| s.m[j]).collect();
            let b: Vec<f64> = samples.iter().map(|s| s.bracket[j]).collect();
            let (mean, var) = mean_var(&m);
            let pred = mean_var(&b).0;
            let se = (var / rf).sqrt();
            let z = if se > 0.0 {
                mean / se
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(mean)
            };
            let ratio = if pred > 0.0 { var / pred } else { f64::NAN };
            // delta method for a ratio of means, aᵢ = (Mᵢ - M̄)², bᵢ = bracketᵢ
            let resid: Vec<f64> = m
                .iter()
                .zip(&b)
                .map(|(mi, bi)| (mi - mean).powi(2) * rf / (rf - 1.0) - ratio * bi)
                .collect();
            let rel = if var > 0.0 && pred > 0.0 {
                (mean_var(&resid).1 / rf).sqrt() / pred / ratio
            } else {
                0.0
            };
            let bias: Vec<f64> = samples.iter().filter_map(|s| s.richardson[j]).collect();
            MartingalePoint {
                t,
                mean,
                std_error: se,
                z,
                empirical_variance: var,
                predicted_variance: pred,
                variance_ratio: ratio,
                ratio_ci: [ratio * (1.0 - 1.96 * rel), ratio * (1.0 + 1.96 * rel)],
                richardson_bias: (bias.len() == r).then(|| mean_var(&bias).0),
            }
        })
        .collect();
    Ok(MartingaleReport {
        function: f.label().to_string(),
        generator: opts.generator,
        drop_drift: opts.drop_drift,
        replicates: r,
        points,
        warnings,
    })
}

/// `M^f_t` across replicates: z-score of its mean and the ratio of its
/// variance to the predicted bracket. Needs a focal-only or zero
/// interaction and a one-dimensional trait.
pub fn martingale_check(
    trajs: &[Trajectory],
    table: &EquilibriumTable,
    f: &TraitFunction,
    opts: &MartingaleOptions,
) -> Result<MartingaleReport> {
    let samples = trajs
        .iter()
        .map(|tr| martingale_sample(tr, table, f, opts))
        .collect::<Result<Vec<_>>>()?;
    martingale_summary(&samples, f, opts)
}

// ---------------------------------------------------------------------------
// occupation measure

/// `Γ` on the snapshot grid: snapshot `k` carries time weight `wₖ` from the
/// trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub times: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub samples: Vec<MeasureSample>,
}

impl OccupationMeasure {
    /// `∫∫∫ φ(s, x, a) Γ(ds, dx, da)`.
    pub fn pair(&self, phi: impl Fn(f64, &[f64], f64) -> f64) -> f64 {
        self.samples
            .iter()
            .zip(&self.time_weights)
            .map(|(s, w)| w * s.pair(|x, a| phi(s.t, x, a)))
            .sum()
    }

    /// `Γ` of everything, `∫ ⟨X_s, 1⟩ ds`.
    pub fn total_mass(&self) -> f64 {
        self.samples
            .iter()
            .zip(&self.time_weights)
            .map(|(s, w)| w * s.total_mass)
            .sum()
    }
}

pub fn occupation_measure(traj: &Trajectory) -> Result<OccupationMeasure> {
    let t = &traj.snapshot_times;
    if t.len() < 2 {
        return Err(Error::Precondition("the occupation measure needs two snapshots".into()));
    }
    let k = t.len();
    let w = (0..k)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < k { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    Ok(OccupationMeasure {
        times: t.clone(),
        time_weights: w,
        samples: traj.snapshots.clone(),
    })
}

// ---------------------------------------------------------------------------
// cumulant equation

/// Coefficients of `∂ₜu = c(x)u'' - r̂(x)u²` on a trait grid, with
/// `c = (p·r)^ σ²/2` for the Laplacian generator and `c = 0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantProblem {
    pub traits: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub generator: Generator,
}

impl CumulantProblem {
    pub fn from_table(table: &EquilibriumTable, generator: Generator) -> Self {
        let hv = generator.half_var();
        Self {
            traits: table.traits.clone(),
            r_hat: table.rows.iter().map(|r| r.r_hat).collect(),
            diffusion: table.rows.iter().map(|r| r.pr_hat * hv).collect(),
            generator,
        }
    }

    /// Constant coefficients, for checks against closed forms.
    pub fn constant(traits: Vec<f64>, r_hat: f64, diffusion: f64) -> Self {
        let k = traits.len();
        Self {
            traits,
            r_hat: vec![r_hat; k],
            diffusion: vec![diffusion; k],
            generator: if diffusion == 0.0 {
                Generator::None
            } else {
                Generator::Laplacian {
                    sigma: (2.0 * diffusion).sqrt(),
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantGrid {
    pub horizon: f64,
    pub time_steps: usize,
    /// Store every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantSolution {
    pub traits: Vec<f64>,
    pub times: Vec<f64>,
    /// `u[k][j] = u(times[k], traits[j])`.
    pub u: Vec<Vec<f64>>,
    pub dt: f64,
    pub generator: Generator,
    pub boundary: String,
    pub scheme: String,
}

impl CumulantSolution {
    /// Index of the stored time equal to `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::Config(format!("cumulant solution has no time {t}")))
    }

    /// `u(times[k], x)`, linear in `x` between grid points and constant
    /// beyond them.
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        let g = &self.traits;
        let u = &self.u[k];
        if g.len() == 1 || x <= g[0] {
            return u[0];
        }
        if x >= g[g.len() - 1] {
            return u[g.len() - 1];
        }
        let j = g.partition_point(|&v| v <= x) - 1;
        let w = (x - g[j]) / (g[j + 1] - g[j]);
        (1.0 - w) * u[j] + w * u[j + 1]
    }

    /// `cumulant.csv`: header `t,x,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x", "u"])?;
        for (t, row) in self.times.iter().zip(&self.u) {
            for (x, u) in self.traits.iter().zip(row) {
                out.write_record([fmt_f64(*t), fmt_f64(*x), fmt_f64(*u)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `c(x)u'' - r̂(x)u²` with Neumann ghost nodes; the second difference uses
/// the local (possibly uneven) spacing.
fn cumulant_rhs(p: &CumulantProblem, u: &[f64], out: &mut [f64]) {
    let g = &p.traits;
    let k = g.len();
    for j in 0..k {
        let mut v = -p.r_hat[j] * u[j] * u[j];
        if k > 1 && p.diffusion[j] != 0.0 {
            let lap = if j == 0 {
                let h = g[1] - g[0];
                2.0 * (u[1] - u[0]) / (h * h)
            } else if j == k - 1 {
                let h = g[k - 1] - g[k - 2];
                2.0 * (u[k - 2] - u[k - 1]) / (h * h)
            } else {
                let (hm, hp) = (g[j] - g[j - 1], g[j + 1] - g[j]);
                2.0 * ((u[j + 1] - u[j]) / hp - (u[j] - u[j - 1]) / hm) / (hm + hp)
            };
            v += p.diffusion[j] * lap;
        }
        out[j] = v;
    }
}

/// Solves the cumulant equation from `u(0, ·) = f0` with the three-stage
/// strong-stability-preserving Runge–Kutta scheme. The step must satisfy
/// `dt ≤ 1/(2·max c/h_min² + max r̂ · max f0)`.
pub fn cumulant_solve(problem: &CumulantProblem, f0: &TraitFunction, grid: &CumulantGrid) -> Result<CumulantSolution> {
    let g = &problem.traits;
    let k = g.len();
    if k == 0 || problem.r_hat.len() != k || problem.diffusion.len() != k {
        return Err(Error::Config("cumulant grid and coefficients disagree in length".into()));
    }
    if g.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("cumulant trait grid must be increasing".into()));
    }
    if !(grid.horizon >= 0.0) || grid.time_steps == 0 || grid.record_every == 0 {
        return Err(Error::Config(format!("invalid cumulant grid {grid:?}")));
    }
    let u0: Vec<f64> = g.iter().map(|&x| f0.eval(&[x])).collect();
    if u0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Precondition("f0 must be finite and nonnegative on the grid".into()));
    }
    let dt = grid.horizon / grid.time_steps as f64;
    let h_min = g.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let c_max = problem.diffusion.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let r_max = problem.r_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let u_max = u0.iter().fold(0.0f64, |m, v| m.max(*v));
    let diff_part = if k > 1 { 2.0 * c_max / (h_min * h_min) } else { 0.0 };
    let rate = diff_part + r_max * u_max;
    if rate * dt > 1.0 {
        return Err(Error::StepSize(format!(
            "cumulant step {dt:.3e} exceeds the stability limit {:.3e}; use at least {} steps",
            1.0 / rate,
            (grid.horizon * rate).ceil() as u64
        )));
    }

    let mut times = vec![0.0];
    let mut out = vec![u0.clone()];
    let mut u = u0;
    let (mut k1, mut u1, mut u2) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for step in 1..=grid.time_steps {
        cumulant_rhs(problem, &u, &mut k1);
        for j in 0..k {
            u1[j] = u[j] + dt * k1[j];
        }
        cumulant_rhs(problem, &u1, &mut k1);
        for j in 0..k {
            u2[j] = 0.75 * u[j] + 0.25 * (u1[j] + dt * k1[j]);
        }
        cumulant_rhs(problem, &u2, &mut k1);
        for j in 0..k {
            u[j] = u[j] / 3.0 + 2.0 / 3.0 * (u2[j] + dt * k1[j]);
        }
        if step % grid.record_every == 0 || step == grid.time_steps {
            times.push(if step == grid.time_steps { grid.horizon } else { step as f64 * dt });
            out.push(u.clone());
        }
    }
    Ok(CumulantSolution {
        traits: g.clone(),
        times,
        u: out,
        dt,
        generator: problem.generator,
        boundary: "neumann".into(),
        scheme: "ssprk3".into(),
    })
}

/// `(⟨X̄₀, u_t⟩, ⟨X̄_t, f0⟩)` for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSample {
    pub initial_u: f64,
    pub final_f: f64,
}

pub fn laplace_sample(traj: &Trajectory, sol: &CumulantSolution, f0: &TraitFunction, t: f64) -> Result<LaplaceSample> {
    let k = sol.time_index(t)?;
    let i0 = snapshot_index(traj, 0.0)?;
    let it = snapshot_index(traj, t)?;
    let s0 = &traj.snapshots[i0];
    let st = &traj.snapshots[it];
    if s0.trait_dim != 1 && !s0.is_empty() {
        return Err(Error::Precondition("the Laplace cross-check needs a one-dimensional trait".into()));
    }
    Ok(LaplaceSample {
        initial_u: s0.pair(|x, _| sol.eval(k, x[0])),
        final_f: st.pair(|x, _| f0.eval(x)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceComparison {
    pub t: f64,
    pub function: String,
    pub replicates: usize,
    /// Monte-Carlo mean of `exp(-⟨X̄_t, f0⟩)`.
    pub estimate: f64,
    /// Mean of `exp(-⟨X̄₀, u_t⟩)`.
    pub prediction: f64,
    /// Standard error of `estimate - prediction`.
    pub std_error: f64,
    pub z: f64,
    /// `|estimate - prediction| ≤ 3·std_error`.
    pub within_3se: bool,
}

pub fn laplace_summary(samples: &[LaplaceSample], f0: &TraitFunction, t: f64) -> Result<LaplaceComparison> {
    let r = samples.len();
    if r < 2 {
        return Err(Error::Precondition("the Laplace cross-check needs at least two replicates".into()));
    }
    let est: Vec<f64> = samples.iter().map(|s| (-s.final_f).exp()).collect();
    let pred: Vec<f64> = samples.iter().map(|s| (-s.initial_u).exp()).collect();
    let (m_est, v_est) = mean_var(&est);
    let (m_pred, v_pred) = mean_var(&pred);
    let se = ((v_est + v_pred) / r as f64).sqrt();
    let diff = m_est - m_pred;
    Ok(LaplaceComparison {
        t,
        function: f0.label().to_string(),
        replicates: r,
        estimate: m_est,
        prediction: m_pred,
        std_error: se,
        z: if se > 0.0 { diff / se } else { 0.0 },
        within_3se: diff.abs() <= 3.0 * se,
    })
}

/// Checks that the model is interaction-free with `b̂ = d̂` on the table
/// grid, the setting in which the Laplace functional is given by the
/// cumulant equation.
pub fn laplace_precondition(spec: &ModelSpec, table: &EquilibriumTable) -> Result<()> {
    if !spec.interaction.is_zero() {
        return Err(Error::Precondition(
            "the Laplace cross-check needs a zero interaction kernel".into(),
        ));
    }
    for row in &table.rows {
        if (row.b_hat - row.d_hat).abs() > 1e-9 * row.b_hat.abs().max(row.d_hat.abs()).max(1.0) {
            return Err(Error::Precondition(format!(
                "the Laplace cross-check needs b̂ = d̂; at x = {} they are {} and {}",
                row.x, row.b_hat, row.d_hat
            )));
        }
    }
    Ok(())
}

/// Compares `E[exp(-⟨X̄ⁿ_t, f0⟩)]` over replicates with
/// `E[exp(-⟨X̄ⁿ₀, u_t⟩)]`.
pub fn laplace_crosscheck(
    spec: &ModelSpec,
    table: &EquilibriumTable,
    trajs: &[Trajectory],
    sol: &CumulantSolution,
    f0: &TraitFunction,
    t: f64,
) -> Result<LaplaceComparison> {
    laplace_precondition(spec, table)?;
    let samples = trajs
        .iter()
        .map(|tr| laplace_sample(tr, sol, f0, t))
        .collect::<Result<Vec<_>>>()?;
    laplace_summary(&samples, f0, t)
}

// ---------------------------------------------------------------------------
// report

/// Everything `diagnose` writes to `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub model: String,
    pub config: serde_json::Value,
    pub replicates: usize,
    pub averaging: Vec<AveragingReport>,
    pub martingale: Vec<MartingaleReport>,
    pub laplace: Option<LaplaceComparison>,
    pub warnings: Vec<String>,
    pub version: String,
}

impl DiagnosticsReport {
    pub fn new(model: &str, config: serde_json::Value, replicates: usize) -> Self {
        Self {
            model: model.to_string(),
            config,
            replicates,
            averaging: Vec::new(),
            martingale: Vec::new(),
            laplace: None,
            warnings: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_uniform_grid() {
        let mut pts: Vec<(f64, f64)> = (0..100).map(|i| ((i as f64 + 0.5) / 100.0, 0.01)).collect();
        let s = weighted_ks(&mut pts, |a| a.clamp(0.0, 1.0)).unwrap();
        assert!((s.statistic - 0.005).abs() < 1e-12);
        assert!((s.effective_size - 100.0).abs() < 1e-9);
        assert!(weighted_ks(&mut [], |a| a).is_none());
    }

    #[test]
    fn ks_ties_merge() {
        let mut pts = vec![(0.0, 1.0), (0.0, 1.0)];
        let s = weighted_ks(&mut pts, |a| 1.0 - (-a).exp()).unwrap();
        assert_eq!(s.statistic, 1.0);
    }

    #[test]
    fn riccati_closed_form() {
        let p = CumulantProblem::constant(vec![0.0, 0.5, 1.0], 1.0, 0.0);
        let grid = CumulantGrid {
            horizon: 1.0,
            time_steps: 10_000,
            record_every: 100,
        };
        let sol = cumulant_solve(&p, &TraitFunction::constant(2.0), &grid).unwrap();
        let k = sol.time_index(1.0).unwrap();
        assert!((sol.u[k][1] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn unstable_step_rejected() {
        let g: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let p = CumulantProblem::constant(g, 1.0, 0.5);
        let grid = CumulantGrid {
            horizon: 1.0,
            time_steps: 100,
            record_every: 1,
        };
        assert!(matches!(
            cumulant_solve(&p, &TraitFunction::constant(1.0), &grid),
            Err(Error::StepSize(_))
        ));
    }
}
