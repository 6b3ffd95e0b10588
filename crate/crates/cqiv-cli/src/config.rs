//! Run configuration: a JSON config file may supply every option, and
//! command-line flags override individual fields.

use std::path::{Path, PathBuf};

use cqiv::control::{ControlMethod, ControlTransform, FirstStageSpec};
use cqiv::estimator::CqivConfig;
use cqiv::inference::{RefitSelection, WeightDistribution, WeightScheme};
use cqiv::numkit::glm::Link;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Serializable option set for fit / bootstrap / diagnose / predict runs.
/// Every field is optional; later sources override earlier ones.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub y: Option<String>,
    pub d: Option<String>,
    pub w: Option<Vec<String>>,
    pub z: Option<Vec<String>>,
    pub c_col: Option<String>,
    pub c_value: Option<f64>,
    pub quantiles: Option<Vec<f64>>,
    /// ols | qr | dr | none
    pub control: Option<String>,
    /// identity | normal-quantile
    pub transform: Option<String>,
    pub d_squared: Option<bool>,
    /// probit | logit
    pub link: Option<String>,
    pub q0: Option<f64>,
    pub q1: Option<f64>,
    pub max_extra_iterations: Option<usize>,
    pub retain_best: Option<bool>,
    pub grid_resolution: Option<usize>,
    pub dr_full_grid: Option<bool>,
    pub censoring_correction: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    // Bootstrap options.
    pub b: Option<usize>,
    /// exponential | two-point:VARIANCE
    pub weights: Option<String>,
    pub normalize_weights: Option<bool>,
    /// refit | fixed
    pub refit_selection: Option<String>,
    pub level: Option<f64>,
    pub dump_draws: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("malformed config file {}: {e}", path.display()))
        })
    }

    /// Merge: fields set in `overlay` replace fields in `self`.
    pub fn overlaid(mut self, overlay: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if overlay.$field.is_some() { self.$field = overlay.$field; })*
            };
        }
        take!(
            data, y, d, w, z, c_col, c_value, quantiles, control, transform, d_squared, link,
            q0, q1, max_extra_iterations, retain_best, grid_resolution, dr_full_grid,
            censoring_correction, seed, out, b, weights, normalize_weights, refit_selection,
            level, dump_draws
        );
        self
    }
}

/// Column roles within the input CSV.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnRoles {
    pub y: String,
    pub d: String,
    pub w: Vec<String>,
    pub z: Vec<String>,
    pub c: CensoringSpec,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringSpec {
    Column(String),
    Constant(f64),
}

/// A fully validated estimation run.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub data_path: PathBuf,
    pub roles: ColumnRoles,
    pub quantiles: Vec<f64>,
    pub base: CqivConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bootstrap: BootstrapOptions,
    pub raw: RunConfig,
}

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub b: usize,
    pub scheme: WeightScheme,
    pub refit_selection: RefitSelection,
    pub level: f64,
    pub dump_draws: bool,
}

pub fn resolve_run(cfg: RunConfig) -> Result<ResolvedRun, CliError> {
    let data_path =
        cfg.data.clone().ok_or_else(|| CliError::config("missing required option: --data"))?;
    let out_dir =
        cfg.out.clone().ok_or_else(|| CliError::config("missing required option: --out"))?;
    let y = cfg.y.clone().ok_or_else(|| CliError::config("missing required option: --y"))?;
    let d = cfg.d.clone().ok_or_else(|| CliError::config("missing required option: --d"))?;
    let w = cfg.w.clone().unwrap_or_default();
    let z = cfg.z.clone().unwrap_or_default();

    let c = match (&cfg.c_col, cfg.c_value) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("--c-col and --c-value are mutually exclusive"))
        }
        (Some(col), None) => CensoringSpec::Column(col.clone()),
        (None, Some(v)) => {
            if !v.is_finite() {
                return Err(CliError::config("--c-value must be finite"));
            }
            CensoringSpec::Constant(v)
        }
        (None, None) => CensoringSpec::Constant(0.0),
    };

    // Column roles must be disjoint.
    let mut seen: Vec<&String> = Vec::new();
    let mut all_names: Vec<&String> = vec![&y, &d];
    all_names.extend(w.iter());
    all_names.extend(z.iter());
    if let CensoringSpec::Column(ref col) = c {
        all_names.push(col);
    }
    for name in &all_names {
        if seen.contains(name) {
            return Err(CliError::config(format!(
                "column {name} is assigned to more than one role"
            )));
        }
        seen.push(name);
    }

    let quantiles = cfg.quantiles.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
    if quantiles.is_empty() {
        return Err(CliError::config("at least one quantile is required"));
    }
    for &u in &quantiles {
        if !(u > 0.0 && u < 1.0) {
            return Err(CliError::config(format!(
                "quantile {u} is outside the open interval (0,1)"
            )));
        }
    }

    let control_method = match cfg.control.as_deref().unwrap_or("qr") {
        "ols" => Some(ControlMethod::OlsEcdf),
        "qr" => Some(ControlMethod::QrGrid),
        "dr" => Some(ControlMethod::DistReg),
        "none" => None,
        other => {
            return Err(CliError::config(format!(
                "unknown control method {other:?}; expected ols, qr, dr, or none"
            )))
        }
    };
    let transform = match cfg.transform.as_deref().unwrap_or("identity") {
        "identity" => ControlTransform::Identity,
        "normal-quantile" | "normal_quantile" => ControlTransform::NormalQuantile,
        other => {
            return Err(CliError::config(format!(
                "unknown transform {other:?}; expected identity or normal-quantile"
            )))
        }
    };
    let link = match cfg.link.as_deref().unwrap_or("probit") {
        "probit" => Link::Probit,
        "logit" => Link::Logit,
        other => {
            return Err(CliError::config(format!(
                "unknown link {other:?}; expected probit or logit"
            )))
        }
    };

    let mut base = CqivConfig::new(quantiles[0]).with_control(control_method);
    base.first_stage = FirstStageSpec {
        grid_resolution: cfg.grid_resolution.unwrap_or(match control_method {
            Some(ControlMethod::DistReg) => 200,
            _ => 99,
        }),
        link,
        dr_full_grid: cfg.dr_full_grid.unwrap_or(false),
        transform,
    };
    base.second_stage.d_squared = cfg.d_squared.unwrap_or(false);
    base.selector_link = link;
    base.censoring_correction = cfg.censoring_correction.unwrap_or(true);
    if let Some(q0) = cfg.q0 {
        base.q0 = q0;
    }
    if let Some(q1) = cfg.q1 {
        base.q1 = q1;
    }
    if let Some(extra) = cfg.max_extra_iterations {
        base.max_extra_iterations = extra;
    }
    base.retain_best_by_powell = cfg.retain_best.unwrap_or(true);
    base.validate().map_err(|e| CliError::config(e.to_string()))?;

    let scheme = match cfg.weights.as_deref().unwrap_or("exponential") {
        "exponential" => WeightScheme {
            distribution: WeightDistribution::StandardExponential,
            normalize: cfg.normalize_weights.unwrap_or(true),
        },
        other => {
            if let Some(var) = other.strip_prefix("two-point:") {
                let variance: f64 = var.parse().map_err(|_| {
                    CliError::config(format!("bad two-point variance in --weights {other:?}"))
                })?;
                if variance < 0.0 {
                    return Err(CliError::config("two-point variance must be nonnegative"));
                }
                WeightScheme {
                    distribution: WeightDistribution::TwoPoint { variance },
                    normalize: cfg.normalize_weights.unwrap_or(true),
                }
            } else {
                return Err(CliError::config(format!(
                    "unknown weight distribution {other:?}; expected exponential or two-point:VAR"
                )));
            }
        }
    };
    let refit_selection = match cfg.refit_selection.as_deref().unwrap_or("refit") {
        "refit" => RefitSelection::RefitJ1b,
        "fixed" => RefitSelection::FixedJ1,
        other => {
            return Err(CliError::config(format!(
                "unknown refit selection {other:?}; expected refit or fixed"
            )))
        }
    };
    let level = cfg.level.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::config(format!("confidence level {level} is outside (0,1)")));
    }

    Ok(ResolvedRun {
        data_path,
        roles: ColumnRoles { y, d, w, z, c },
        quantiles,
        base,
        seed: cfg.seed.unwrap_or(0),
        out_dir,
        bootstrap: BootstrapOptions {
            b: cfg.b.unwrap_or(200),
            scheme,
            refit_selection,
            level,
            dump_draws: cfg.dump_draws.unwrap_or(false),
        },
        raw: cfg,
    })
}
