//! First-stage estimation of the control variable V = F_D(D | W, Z).
//!
//! Three interchangeable estimators: the empirical CDF of least-squares
//! residuals, a quantile-regression grid, and distribution regression. Each
//! one is refittable under observation weights, and every evaluation is
//! clamped to [ε_v, 1−ε_v] with ε_v = 1/(2n) so that Φ⁻¹(V̂) stays finite.

use crate::data::{Dataset, DesignMatrix, WeightVector};
use crate::error::{Error, Result};
use crate::numkit::ecdf::{Ecdf, EcdfMode};
use crate::numkit::glm::{fit_binary_glm, Link};
use crate::numkit::normal::normal_quantile;
use crate::numkit::ols::solve_ols;
use crate::numkit::qr::solve_weighted_qr;
use crate::par::map_indexed;

/// First-stage estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMethod {
    /// OLS of D on R, then the empirical CDF of the residuals.
    OlsEcdf,
    /// Quantile regressions of D on R over a probability grid; V̂ is the
    /// fraction of grid fits whose prediction lies at or below D.
    QrGrid,
    /// Binary regressions of 1(D ≤ d) on R across a threshold grid.
    DistReg,
}

/// Transform applied to V̂ before it enters the second-stage design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlTransform {
    Identity,
    NormalQuantile,
}

impl ControlTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ControlTransform::Identity => v,
            ControlTransform::NormalQuantile => {
                normal_quantile(v).expect("clamped control value is strictly interior")
            }
        }
    }
}

/// Configuration of the first stage.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FirstStageSpec {
    /// Number of grid points: probability grid size for `QrGrid` (default
    /// 99, i.e. {0.01, …, 0.99}), threshold count for `DistReg` (default
    /// 200, thinned order statistics).
    pub grid_resolution: usize,
    /// Link for distribution regression.
    pub link: Link,
    /// Use every distinct value of D as a distribution-regression
    /// threshold instead of thinning (the full n-threshold scheme).
    pub dr_full_grid: bool,
    /// Transform applied to V̂ on evaluation.
    pub transform: ControlTransform,
}

impl Default for FirstStageSpec {
    fn default() -> Self {
        FirstStageSpec {
            grid_resolution: 99,
            link: Link::Probit,
            dr_full_grid: false,
            transform: ControlTransform::Identity,
        }
    }
}

impl FirstStageSpec {
    /// Method-appropriate default grid: a 99-point probability grid
    /// ({0.01, …, 0.99}) for quantile regression, 200 thinned order-statistic
    /// thresholds for distribution regression.
    pub fn default_for(method: ControlMethod) -> Self {
        let grid_resolution = match method {
            ControlMethod::DistReg => 200,
            _ => 99,
        };
        FirstStageSpec { grid_resolution, ..FirstStageSpec::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_resolution < 2 {
            return Err(Error::invalid("first-stage grid resolution must be at least 2"));
        }
        Ok(())
    }
}

/// Fraction of the quantile-regression grid that may fail before the fit
/// aborts instead of skipping points.
const QR_GRID_FAILURE_BUDGET: f64 = 0.05;

#[derive(Debug, Clone)]
enum FittedParams {
    OlsEcdf {
        pi: Vec<f64>,
        residual_ecdf: Ecdf,
    },
    QrGrid {
        /// (grid point, coefficients) for every grid fit that succeeded.
        fits: Vec<(f64, Vec<f64>)>,
    },
    DistReg {
        /// (threshold, coefficients) per retained threshold, ascending.
        fits: Vec<(f64, Vec<f64>)>,
        link: Link,
    },
}

/// A fitted first stage, mapping (d, w, z) to V̂ ∈ (0,1).
#[derive(Debug, Clone)]
pub struct ControlFunction {
    method: ControlMethod,
    params: FittedParams,
    transform: ControlTransform,
    eps_v: f64,
}

impl ControlFunction {
    pub fn method(&self) -> ControlMethod {
        self.method
    }

    pub fn transform(&self) -> ControlTransform {
        self.transform
    }

    /// Clamp bound ε_v = 1/(2n) from the training sample.
    pub fn eps_v(&self) -> f64 {
        self.eps_v
    }

    /// Number of retained grid fits behind this control function: grid
    /// points for the quantile-regression method, retained thresholds for
    /// distribution regression, 1 for the location-residual method.
    pub fn grid_size(&self) -> usize {
        match &self.params {
            FittedParams::OlsEcdf { .. } => 1,
            FittedParams::QrGrid { fits } => fits.len(),
            FittedParams::DistReg { fits, .. } => fits.len(),
        }
    }

    /// Raw V̂(d, r) before the transform, clamped to [ε_v, 1−ε_v].
    pub fn evaluate_raw(&self, d: f64, wz_row: &[f64]) -> f64 {
        let v = match &self.params {
            FittedParams::OlsEcdf { pi, residual_ecdf } => {
                let fitted: f64 =
                    pi[0] + wz_row.iter().zip(&pi[1..]).map(|(r, p)| r * p).sum::<f64>();
                residual_ecdf.rank(d - fitted, EcdfMode::Midpoint)
            }
            FittedParams::QrGrid { fits } => {
                let hits = fits
                    .iter()
                    .filter(|(_, pi)| {
                        let pred: f64 =
                            pi[0] + wz_row.iter().zip(&pi[1..]).map(|(r, p)| r * p).sum::<f64>();
                        pred <= d
                    })
                    .count();
                hits as f64 / fits.len() as f64
            }
            FittedParams::DistReg { fits, link } => {
                // Smallest retained threshold at or above d; the largest
                // retained one substitutes when d lies beyond the grid.
                let idx = fits.partition_point(|(thr, _)| *thr < d).min(fits.len() - 1);
                let pi = &fits[idx].1;
                let eta: f64 =
                    pi[0] + wz_row.iter().zip(&pi[1..]).map(|(r, p)| r * p).sum::<f64>();
                link.prob(eta)
            }
        };
        v.clamp(self.eps_v, 1.0 - self.eps_v)
    }

    /// V̂(d, r) with the configured transform applied.
    pub fn evaluate(&self, d: f64, wz_row: &[f64]) -> f64 {
        self.transform.apply(self.evaluate_raw(d, wz_row))
    }

    /// In-sample raw control values, one per observation.
    pub fn in_sample_raw(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.evaluate_raw(data.d()[i], &data.wz_row(i))).collect()
    }

    /// In-sample transformed control values.
    pub fn in_sample(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.evaluate(data.d()[i], &data.wz_row(i))).collect()
    }
}

/// Intercept plus the (W, Z) columns: the first-stage regressor list R.
fn first_stage_design(data: &Dataset) -> Result<DesignMatrix> {
    let n = data.n();
    let mut columns = Vec::with_capacity(1 + data.w_cols().len() + data.z_cols().len());
    columns.push(("const".to_string(), vec![1.0; n]));
    for (name, col) in data.w_names().iter().zip(data.w_cols()) {
        columns.push((name.clone(), col.clone()));
    }
    for (name, col) in data.z_names().iter().zip(data.z_cols()) {
        columns.push((name.clone(), col.clone()));
    }
    DesignMatrix::from_columns(columns)
}

/// Dispatch on the method enum.
pub fn fit_control(
    method: ControlMethod,
    data: &Dataset,
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFunction> {
    match method {
        ControlMethod::OlsEcdf => fit_control_ols(data, spec, w),
        ControlMethod::QrGrid => fit_control_qr(data, spec, w),
        ControlMethod::DistReg => fit_control_dr(data, spec, w),
    }
}

/// Weighted OLS of D on R; V̂ is the weighted midpoint-ECDF rank of the
/// residual.
pub fn fit_control_ols(
    data: &Dataset,
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFunction> {
    spec.validate()?;
    let r = first_stage_design(data)?;
    let pi = solve_ols(&r, data.d(), w)?;
    let residuals: Vec<f64> =
        (0..data.n()).map(|i| data.d()[i] - r.row_dot(i, &pi)).collect();
    let residual_ecdf = Ecdf::weighted(&residuals, Some(w.values()));
    Ok(ControlFunction {
        method: ControlMethod::OlsEcdf,
        params: FittedParams::OlsEcdf { pi, residual_ecdf },
        transform: spec.transform,
        eps_v: 0.5 / data.n() as f64,
    })
}

/// Quantile regressions of D on R at every grid point; evaluation averages
/// the indicators 1{r'π̂(v_g) ≤ d}, which is monotone in d by construction.
pub fn fit_control_qr(
    data: &Dataset,
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFunction> {
    spec.validate()?;
    let r = first_stage_design(data)?;
    let g = spec.grid_resolution;
    let grid: Vec<f64> = (1..=g).map(|k| k as f64 / (g + 1) as f64).collect();

    let results = map_indexed(g, |k| solve_weighted_qr(&r, data.d(), grid[k], w));
    let mut fits = Vec::with_capacity(g);
    let mut failed = 0usize;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(fit) => fits.push((grid[k], fit.beta)),
            Err(_) => failed += 1,
        }
    }
    if failed > 0 && (failed as f64) > QR_GRID_FAILURE_BUDGET * g as f64 {
        return Err(Error::FirstStageGridFailure { failed, total: g });
    }
    if fits.is_empty() {
        return Err(Error::FirstStageGridFailure { failed, total: g });
    }
    Ok(ControlFunction {
        method: ControlMethod::QrGrid,
        params: FittedParams::QrGrid { fits },
        transform: spec.transform,
        eps_v: 0.5 / data.n() as f64,
    })
}

/// Distribution regression: binary fits of 1(D ≤ d) on R across a threshold
/// grid. Thresholds whose indicator column is single-class or separated are
/// dropped; evaluation substitutes the nearest retained threshold.
pub fn fit_control_dr(
    data: &Dataset,
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFunction> {
    spec.validate()?;
    let r = first_stage_design(data)?;
    let n = data.n();

    let mut distinct: Vec<f64> = data.d().to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let thresholds: Vec<f64> = if spec.dr_full_grid || distinct.len() <= spec.grid_resolution {
        distinct
    } else {
        // Equally spaced order statistics, endpoints included.
        let m = spec.grid_resolution.min(n);
        (0..m)
            .map(|k| distinct[(k as f64 / (m - 1) as f64 * (distinct.len() - 1) as f64) as usize])
            .collect()
    };

    let results = map_indexed(thresholds.len(), |k| {
        let thr = thresholds[k];
        let t: Vec<bool> = data.d().iter().map(|&d| d <= thr).collect();
        fit_binary_glm(&r, &t, spec.link, w).map(|fit| (thr, fit.delta))
    });
    let mut fits = Vec::new();
    for res in results {
        match res {
            Ok(pair) => fits.push(pair),
            Err(Error::Separation) => {} // boundary threshold: drop the grid point
            Err(e) => return Err(e),
        }
    }
    if fits.is_empty() {
        return Err(Error::FirstStageGridFailure { failed: thresholds.len(), total: thresholds.len() });
    }
    fits.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ControlFunction {
        method: ControlMethod::DistReg,
        params: FittedParams::DistReg { fits, link: spec.link },
        transform: spec.transform,
        eps_v: 0.5 / n as f64,
    })
}
