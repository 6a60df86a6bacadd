//! JSON model documents.
//!
//! A document is either a reference to a built-in model,
//!
//! ```json
//! { "builtin": "example2", "overrides": { "sigma": 0.2, "x1": 0.5 } }
//! ```
//!
//! or a full description whose rate functions are expression strings (see
//! [`crate::expr`]). In one dimension the trait is `x` and the age `a`; in
//! `d > 1` dimensions the coordinates are `x1 .. xd`. A pairwise kernel also
//! sees the other individual as `y` (or `y1 .. yd`) and `alpha`.
//!
//! ```json
//! {
//!   "name": "logistic",
//!   "trait_dim": 1,
//!   "trait_domain": { "box": { "lower": [0.0], "upper": [4.0] } },
//!   "birth": { "expr": "x*(4-x)*exp(-a)", "bound": 4.0 },
//!   "death": { "expr": "0.25", "bound": 0.25 },
//!   "allometric": { "expr": "1", "bound": 1.0, "lower": "1" },
//!   "interaction": { "expr": "1.7*(4-x)", "bound": 6.8, "focal_only": true },
//!   "mutation_prob": "1",
//!   "mutation": { "kind": "gaussian_conditioned", "sigma": 1.0 }
//! }
//! ```
//!
//! An allometric rate without a uniform bound gives `"envelope"`, an
//! expression in `(x, a)` nondecreasing in `a` that bounds `|r|` at all
//! younger ages. Unknown fields are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Allometric, AllometricBound, GaussianScale, Interaction, ModelSpec, MutationKernel,
    TraitDomain,
};
use crate::error::{Error, Result};
use crate::expr::Expr;

pub const BUILTIN_MODELS: [&str; 2] = ["example1", "example2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinDocument {
    pub builtin: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub overrides: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDoc {
    pub expr: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllometricDoc {
    pub expr: String,
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub envelope: Option<String>,
    pub lower: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionDoc {
    pub expr: String,
    pub bound: f64,
    #[serde(default)]
    pub focal_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MutationDoc {
    GaussianConditioned {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        sigmas: Option<Vec<f64>>,
        /// Row-major `d × d` expressions in the trait variables.
        #[serde(default)]
        covariance: Option<Vec<Vec<String>>>,
    },
    PointMassZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default = "default_name")]
    pub name: String,
    pub trait_dim: usize,
    pub trait_domain: TraitDomain,
    pub birth: RateDoc,
    pub death: RateDoc,
    pub allometric: AllometricDoc,
    #[serde(default)]
    pub interaction: Option<InteractionDoc>,
    #[serde(default = "default_p")]
    pub mutation_prob: String,
    pub mutation: MutationDoc,
    #[serde(default)]
    pub max_mutation_attempts: Option<u64>,
    #[serde(default)]
    pub a_max_search: Option<f64>,
}

fn default_name() -> String {
    "custom".into()
}

fn default_p() -> String {
    "1".into()
}

fn trait_vars(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|k| format!("{prefix}{k}")).collect()
    }
}

fn compile(src: &str, vars: &[String], what: &str) -> Result<Expr> {
    let v: Vec<&str> = vars.iter().map(String::as_str).collect();
    Expr::compile(src, &v).map_err(|e| Error::InvalidModel(format!("{what}: {e}")))
}

/// Compiles an expression in `(trait, age)` into a rate closure.
fn rate_expr(src: &str, d: usize, what: &str) -> Result<super::RateFn> {
    let mut vars = trait_vars("x", d);
    vars.push("a".into());
    let e = compile(src, &vars, what)?;
    Ok(match d {
        1 => Arc::new(move |x: &[f64], a: f64| e.eval(&[x[0], a])),
        2 => Arc::new(move |x: &[f64], a: f64| e.eval(&[x[0], x[1], a])),
        _ => Arc::new(move |x: &[f64], a: f64| {
            let mut v: smallvec::SmallVec<[f64; 8]> = x.iter().copied().collect();
            v.push(a);
            e.eval(&v)
        }),
    })
}

impl ModelDocument {
    pub fn build(&self) -> Result<ModelSpec> {
        let d = self.trait_dim;
        if d == 0 {
            return Err(Error::InvalidModel("trait_dim must be positive".into()));
        }
        let al = &self.allometric;
        let bound = match (al.bound, &al.envelope) {
            (Some(r), None) => AllometricBound::Uniform(r),
            (None, Some(env)) => AllometricBound::Envelope(rate_expr(env, d, "allometric.envelope")?),
            _ => {
                return Err(Error::InvalidModel(
                    "allometric needs exactly one of `bound` and `envelope`".into(),
                ))
            }
        };
        let lower = compile(&al.lower, &["a".to_string()], "allometric.lower")?;
        let allometric = Allometric {
            f: rate_expr(&al.expr, d, "allometric.expr")?,
            bound,
            lower: Arc::new(move |a| lower.eval(&[a])),
        };

        let interaction = match &self.interaction {
            None => Interaction::none(),
            Some(i) if i.focal_only => Interaction::FocalOnly {
                kernel: rate_expr(&i.expr, d, "interaction.expr")?,
                bound: i.bound,
            },
            Some(i) => {
                let mut vars = trait_vars("x", d);
                vars.push("a".into());
                vars.extend(trait_vars("y", d));
                vars.push("alpha".into());
                let e = compile(&i.expr, &vars, "interaction.expr")?;
                Interaction::Pairwise {
                    kernel: Arc::new(move |x: &[f64], a: f64, y: &[f64], alpha: f64| {
                        let mut v: smallvec::SmallVec<[f64; 8]> = x.iter().copied().collect();
                        v.push(a);
                        v.extend_from_slice(y);
                        v.push(alpha);
                        e.eval(&v)
                    }),
                    bound: i.bound,
                }
            }
        };

        let mutation = match &self.mutation {
            MutationDoc::PointMassZero => MutationKernel::PointMassZero,
            MutationDoc::GaussianConditioned {
                sigma,
                sigmas,
                covariance,
            } => {
                let scale = match (sigma, sigmas, covariance) {
                    (Some(s), None, None) => GaussianScale::Isotropic(*s),
                    (None, Some(v), None) => GaussianScale::PerCoordinate(v.clone()),
                    (None, None, Some(rows)) => {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::InvalidModel(format!(
                                "covariance must be {d}×{d}"
                            )));
                        }
                        let vars = trait_vars("x", d);
                        let cells = rows
                            .iter()
                            .flatten()
                            .map(|src| compile(src, &vars, "mutation.covariance"))
                            .collect::<Result<Vec<_>>>()?;
                        GaussianScale::Covariance(Arc::new(move |x: &[f64]| {
                            cells.iter().map(|c| c.eval(x)).collect()
                        }))
                    }
                    _ => {
                        return Err(Error::InvalidModel(
                            "gaussian_conditioned needs exactly one of `sigma`, `sigmas`, `covariance`"
                                .into(),
                        ))
                    }
                };
                MutationKernel::GaussianConditioned(scale)
            }
        };

        let mut b = ModelSpec::builder(self.name.clone(), self.trait_domain.clone(), d)
            .birth(rate_expr(&self.birth.expr, d, "birth.expr")?, self.birth.bound)
            .death(rate_expr(&self.death.expr, d, "death.expr")?, self.death.bound)
            .allometric(allometric)
            .interaction(interaction)
            .mutation_prob(rate_expr(&self.mutation_prob, d, "mutation_prob")?)
            .mutation(mutation)
            .descriptor(serde_json::to_value(self)?);
        if let Some(cap) = self.max_mutation_attempts {
            b = b.max_mutation_attempts(cap);
        }
        if let Some(a) = self.a_max_search {
            b = b.a_max_search(a);
        }
        b.build()
    }
}

/// Builds a model from a JSON value: a built-in reference or a full
/// document.
pub fn model_from_value(v: &serde_json::Value) -> Result<ModelSpec> {
    if v.get("builtin").is_some() {
        let doc: BuiltinDocument = serde_json::from_value(v.clone())?;
        crate::examples::build_named(&doc.builtin, &doc.overrides)
    } else {
        let doc: ModelDocument = serde_json::from_value(v.clone())?;
        doc.build()
    }
}

pub fn model_from_str(json: &str) -> Result<ModelSpec> {
    let v: serde_json::Value = serde_json::from_str(json)?;
    model_from_value(&v)
}

/// Resolves a built-in name or a path to a JSON document.
pub fn resolve_model(name_or_path: &str) -> Result<ModelSpec> {
    if BUILTIN_MODELS.contains(&name_or_path) {
        return crate::examples::build_named(name_or_path, &serde_json::Value::Null);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(Error::UnknownModel(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    model_from_str(&text)
}
