//! Subcommand implementations: fit, bootstrap, diagnose, simulate, predict.

use std::path::{Path, PathBuf};

use cqiv::control::ControlTransform;
use cqiv::data::{Dataset, WeightVector};
use cqiv::estimator::{elasticity_of_beta, fit_cqiv_many, quantile_elasticity, CqivFit};
use cqiv::inference::{bootstrap_cqiv, percentile_ci_of, BootstrapDraws};
use cqiv::numkit::ecdf::quantile_type7;
use cqiv::sim::{run_monte_carlo, McDesign, McResult, McVariant, SimEstimator};
use serde::{Deserialize, Serialize};

use crate::config::{CensoringSpec, ResolvedRun, RunConfig};
use crate::io::{opt_cell, read_dataset, read_table, TableWriter};
use crate::CliError;

const RESULTS_SCHEMA: &str = "cqiv.results.v1";
const DIAGNOSTICS_SCHEMA: &str = "cqiv.diagnostics.v1";
const DRAWS_SCHEMA: &str = "cqiv.draws.v1";
const MC_SCHEMA: &str = "cqiv.mc.v1";
const PLOT_SCHEMA: &str = "cqiv.plot.v1";
const CURVES_SCHEMA: &str = "cqiv.curves.v1";
const META_SCHEMA: &str = "cqiv.run.v1";

/// Sidecar metadata written next to every output table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema: String,
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub column_names: Vec<String>,
    pub w_names: Vec<String>,
    pub d_squared: bool,
    pub has_control: bool,
    pub transform: Option<String>,
    pub quantiles: Vec<f64>,
    pub constant_censoring: Option<f64>,
    /// Quartiles of the in-sample control values (raw scale), for
    /// prediction at representative control levels.
    pub vhat_quartiles: Option<[f64; 3]>,
    /// Config echo.
    pub config: RunConfig,
}

fn write_metadata(path: &Path, meta: &RunMetadata) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::numerical(format!("cannot serialize run metadata: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create output directory {}: {e}", dir.display())))
}

struct Fitted {
    data: Dataset,
    fits: Vec<CqivFit>,
    meta: RunMetadata,
}

/// Shared fit pipeline behind fit / bootstrap / diagnose.
fn run_point_fits(run: &ResolvedRun, command: &str) -> Result<Fitted, CliError> {
    let data = read_dataset(&run.data_path, &run.roles)?;
    let ones = WeightVector::ones(data.n());
    let results = fit_cqiv_many(&data, &run.base, &run.quantiles, &ones)
        .map_err(CliError::from_lib)?;
    let mut fits = Vec::with_capacity(results.len());
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(fit) => fits.push(fit),
            Err(e) => {
                return Err(CliError::from_lib(e).with_context(format!(
                    "quantile {}",
                    run.quantiles[k]
                )))
            }
        }
    }

    let vhat_quartiles = fits[0].control.as_ref().map(|cf| {
        let raw = cf.in_sample_raw(&data);
        [
            quantile_type7(&raw, 0.25),
            quantile_type7(&raw, 0.50),
            quantile_type7(&raw, 0.75),
        ]
    });
    let constant_censoring = match run.roles.c {
        CensoringSpec::Constant(v) => Some(v),
        CensoringSpec::Column(_) => None,
    };
    let meta = RunMetadata {
        schema: META_SCHEMA.to_string(),
        command: command.to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: run.seed,
        column_names: fits[0].column_names.clone(),
        w_names: run.roles.w.clone(),
        d_squared: run.base.second_stage.d_squared,
        has_control: run.base.control_method.is_some(),
        transform: run.base.control_method.map(|_| {
            match run.base.first_stage.transform {
                ControlTransform::Identity => "identity".to_string(),
                ControlTransform::NormalQuantile => "normal-quantile".to_string(),
            }
        }),
        quantiles: run.quantiles.clone(),
        constant_censoring,
        vhat_quartiles,
        config: run.raw.clone(),
    };
    Ok(Fitted { data, fits, meta })
}

/// (item, lower, upper) interval rows for one quantile.
type IntervalRows = Vec<(String, f64, f64)>;

fn write_results_table(
    path: &Path,
    seed: u64,
    fits: &[CqivFit],
    data: &Dataset,
    cis: Option<&[IntervalRows]>,
    elasticities: &[Option<f64>],
) -> Result<(), CliError> {
    let mut table = TableWriter::new(
        RESULTS_SCHEMA,
        seed,
        &["quantile", "item", "estimate", "ci_lower", "ci_upper"],
    );
    for (k, fit) in fits.iter().enumerate() {
        let ci_for = |item: &str| -> (Option<f64>, Option<f64>) {
            match cis {
                Some(all) => all[k]
                    .iter()
                    .find(|(name, _, _)| name == item)
                    .map(|(_, lo, hi)| (Some(*lo), Some(*hi)))
                    .unwrap_or((None, None)),
                None => (None, None),
            }
        };
        for (j, name) in fit.column_names.iter().enumerate() {
            let (lo, hi) = ci_for(name);
            table.row(&[
                format!("{}", fit.u),
                name.clone(),
                format!("{}", fit.beta[j]),
                opt_cell(lo),
                opt_cell(hi),
            ]);
        }
        if let Some(avg) = elasticities[k] {
            let (lo, hi) = ci_for("avg_elasticity");
            table.row(&[
                format!("{}", fit.u),
                "avg_elasticity".to_string(),
                format!("{avg}"),
                opt_cell(lo),
                opt_cell(hi),
            ]);
        }
        let _ = data;
    }
    table.write_to(path)
}

fn write_diagnostics_table(path: &Path, seed: u64, fits: &[CqivFit]) -> Result<(), CliError> {
    let mut table = TableWriter::new(
        DIAGNOSTICS_SCHEMA,
        seed,
        &[
            "quantile",
            "step",
            "subset_size",
            "k0",
            "varsigma1",
            "pct_j0",
            "pct_j1",
            "pct_pred_above_c",
            "pct_j0_in_j1",
            "count_j1_not_in_j0",
            "powell_objective",
            "selected",
        ],
    );
    for fit in fits {
        for (idx, s) in fit.steps.iter().enumerate() {
            table.row(&[
                format!("{}", fit.u),
                format!("{}", s.step),
                format!("{}", s.subset_size),
                opt_cell(s.k0),
                opt_cell(s.varsigma1),
                opt_cell(s.pct_j0),
                opt_cell(s.pct_j1),
                opt_cell(s.pct_pred_above_c),
                opt_cell(s.pct_j0_in_j1),
                s.count_j1_not_in_j0.map(|c| c.to_string()).unwrap_or_default(),
                format!("{}", s.powell_objective),
                format!("{}", usize::from(idx == fit.selected_step)),
            ]);
        }
    }
    table.write_to(path)
}

fn compute_elasticities(fits: &[CqivFit], data: &Dataset) -> Vec<Option<f64>> {
    fits.iter()
        .map(|fit| {
            fit.config()
                .d_squared_index()
                .and_then(|_| quantile_elasticity(fit, data).ok().map(|(avg, _)| avg))
        })
        .collect()
}

pub fn cmd_fit(run: &ResolvedRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    let fitted = run_point_fits(run, "fit")?;
    let elasticities = compute_elasticities(&fitted.fits, &fitted.data);
    write_results_table(
        &run.out_dir.join("results.csv"),
        run.seed,
        &fitted.fits,
        &fitted.data,
        None,
        &elasticities,
    )?;
    write_diagnostics_table(&run.out_dir.join("diagnostics.csv"), run.seed, &fitted.fits)?;
    write_metadata(&run.out_dir.join("run.json"), &fitted.meta)?;
    for fit in &fitted.fits {
        println!(
            "fit u={}: retained step {}, objective {:.6e}",
            fit.u,
            fit.steps[fit.selected_step].step,
            fit.steps[fit.selected_step].powell_objective
        );
    }
    Ok(())
}

pub fn cmd_diagnose(run: &ResolvedRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    let fitted = run_point_fits(run, "diagnose")?;
    write_diagnostics_table(&run.out_dir.join("diagnostics.csv"), run.seed, &fitted.fits)?;
    write_metadata(&run.out_dir.join("run.json"), &fitted.meta)?;
    for fit in &fitted.fits {
        let s0 = &fit.steps[0];
        println!(
            "diagnose u={}: k0={} pct_j0={} steps={}",
            fit.u,
            opt_cell(s0.k0),
            opt_cell(s0.pct_j0),
            fit.steps.len()
        );
    }
    Ok(())
}

pub fn cmd_bootstrap(run: &ResolvedRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    let mut fitted = run_point_fits(run, "bootstrap")?;
    fitted.meta.command = "bootstrap".into();
    let elasticities = compute_elasticities(&fitted.fits, &fitted.data);

    if run.bootstrap.b == 0 {
        eprintln!("warning: B=0 requested; writing point estimates with empty intervals");
        write_results_table(
            &run.out_dir.join("results.csv"),
            run.seed,
            &fitted.fits,
            &fitted.data,
            None,
            &elasticities,
        )?;
        write_diagnostics_table(&run.out_dir.join("diagnostics.csv"), run.seed, &fitted.fits)?;
        write_metadata(&run.out_dir.join("run.json"), &fitted.meta)?;
        return Ok(());
    }

    let draws = bootstrap_cqiv(
        &fitted.data,
        &run.base,
        &fitted.fits,
        run.bootstrap.b,
        &run.bootstrap.scheme,
        run.bootstrap.refit_selection,
        run.seed,
    )
    .map_err(CliError::from_lib)?;

    // Percentile intervals per coefficient, plus the average elasticity
    // functional evaluated on the point-estimate design.
    let mut cis: Vec<IntervalRows> = Vec::with_capacity(fitted.fits.len());
    for (fit, dr) in fitted.fits.iter().zip(&draws) {
        let mut per_u = Vec::new();
        for (j, name) in fit.column_names.iter().enumerate() {
            let ci = percentile_ci_of(dr, run.bootstrap.level, name, |b| b[j])
                .map_err(CliError::from_lib)?;
            per_u.push((name.clone(), ci.lower, ci.upper));
        }
        if let Some(dsq) = fit.config().d_squared_index() {
            let d_idx = fit.config().d_index();
            let design = fit.design();
            let data = &fitted.data;
            let ci = percentile_ci_of(dr, run.bootstrap.level, "avg_elasticity", |b| {
                elasticity_of_beta(b, design, data, d_idx, dsq)
                    .map(|(avg, _)| avg)
                    .unwrap_or(f64::NAN)
            })
            .map_err(CliError::from_lib)?;
            per_u.push(("avg_elasticity".to_string(), ci.lower, ci.upper));
        }
        cis.push(per_u);
    }

    write_results_table(
        &run.out_dir.join("results.csv"),
        run.seed,
        &fitted.fits,
        &fitted.data,
        Some(&cis),
        &elasticities,
    )?;
    write_diagnostics_table(&run.out_dir.join("diagnostics.csv"), run.seed, &fitted.fits)?;
    if run.bootstrap.dump_draws {
        write_draws_table(&run.out_dir.join("draws.csv"), run.seed, &fitted.fits, &draws)?;
    }
    write_metadata(&run.out_dir.join("run.json"), &fitted.meta)?;
    for (fit, dr) in fitted.fits.iter().zip(&draws) {
        println!(
            "bootstrap u={}: {} of {} draws succeeded",
            fit.u,
            dr.betas.len(),
            dr.b_requested
        );
    }
    Ok(())
}

fn write_draws_table(
    path: &Path,
    seed: u64,
    fits: &[CqivFit],
    draws: &[BootstrapDraws],
) -> Result<(), CliError> {
    let mut table =
        TableWriter::new(DRAWS_SCHEMA, seed, &["quantile", "draw", "item", "value"]);
    for (fit, dr) in fits.iter().zip(draws) {
        let mut success_iter = dr.betas.iter();
        let failed: std::collections::BTreeSet<usize> =
            dr.failed_draws.iter().copied().collect();
        for draw in 0..dr.b_requested {
            if failed.contains(&draw) {
                continue;
            }
            let beta = success_iter.next().expect("draw bookkeeping is consistent");
            for (j, name) in fit.column_names.iter().enumerate() {
                table.row(&[
                    format!("{}", fit.u),
                    format!("{draw}"),
                    name.clone(),
                    format!("{}", beta[j]),
                ]);
            }
        }
    }
    table.write_to(path)
}

/// Options of the simulate subcommand after validation.
pub struct SimulateRun {
    pub design: McDesign,
    pub estimators: Vec<SimEstimator>,
    pub quantiles: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn cmd_simulate(run: &SimulateRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    let result = run_monte_carlo(
        &run.design,
        &run.estimators,
        &run.quantiles,
        run.replications,
        run.seed,
    );
    write_mc_tables(&run.out_dir, run.seed, &result)?;

    let meta = serde_json::json!({
        "schema": META_SCHEMA,
        "command": "simulate",
        "crate_version": env!("CARGO_PKG_VERSION"),
        "seed": run.seed,
        "design": run.design,
        "estimators": run.estimators,
        "quantiles": run.quantiles,
        "replications": run.replications,
    });
    std::fs::write(
        run.out_dir.join("run.json"),
        serde_json::to_string_pretty(&meta).expect("json-serializable metadata"),
    )
    .map_err(|e| CliError::data(format!("cannot write run.json: {e}")))?;

    for est in &run.estimators {
        let cells: Vec<String> = run
            .quantiles
            .iter()
            .map(|&u| {
                let cell = result.cell(*est, u).expect("cell exists for requested pair");
                format!("{:.4}", cell.rmse(result.true_d_coef))
            })
            .collect();
        println!("simulate {}: rmse by quantile: {}", est.label(), cells.join(" "));
    }
    Ok(())
}

fn write_mc_tables(dir: &Path, seed: u64, result: &McResult) -> Result<(), CliError> {
    let mut table = TableWriter::new(
        MC_SCHEMA,
        seed,
        &["estimator", "quantile", "mean_bias", "rmse", "replications", "failures"],
    );
    for cell in &result.cells {
        table.row(&[
            cell.estimator.label().to_string(),
            format!("{}", cell.u),
            opt_cell(Some(cell.mean_bias(result.true_d_coef))),
            opt_cell(Some(cell.rmse(result.true_d_coef))),
            format!("{}", cell.replication_count()),
            format!("{}", cell.failure_count),
        ]);
    }
    table.write_to(&dir.join("mc_results.csv"))?;

    // Plot-data files: one column per estimator, one row per quantile.
    for (name, value) in [
        ("plot_bias.csv", true),
        ("plot_rmse.csv", false),
    ] {
        let mut columns = vec!["quantile".to_string()];
        columns.extend(result.estimators.iter().map(|e| e.label().to_string()));
        let col_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut plot = TableWriter::new(PLOT_SCHEMA, seed, &col_refs);
        for &u in &result.quantiles {
            let mut row = vec![format!("{u}")];
            for est in &result.estimators {
                let cell = result.cell(*est, u).expect("cell exists");
                let v = if value {
                    cell.mean_bias(result.true_d_coef)
                } else {
                    cell.rmse(result.true_d_coef)
                };
                row.push(opt_cell(Some(v)));
            }
            plot.row(&row);
        }
        plot.write_to(&dir.join(name))?;
    }
    Ok(())
}

/// Options of the predict subcommand.
pub struct PredictRun {
    pub fit_dir: PathBuf,
    pub d_min: f64,
    pub d_max: f64,
    pub d_steps: usize,
    pub w_values: Vec<f64>,
    pub v_values: Option<Vec<f64>>,
    pub censoring: Option<f64>,
    pub out_dir: PathBuf,
}

pub fn cmd_predict(run: &PredictRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    let meta_path = run.fit_dir.join("run.json");
    let meta: RunMetadata = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| {
            CliError::config(format!("cannot read fit artifacts {}: {e}", meta_path.display()))
        })?,
    )
    .map_err(|e| CliError::config(format!("malformed {}: {e}", meta_path.display())))?;

    let betas = read_point_estimates(&run.fit_dir.join("results.csv"), &meta)?;
    if run.d_steps < 2 {
        return Err(CliError::config("--d-steps must be at least 2"));
    }
    if !meta.w_names.is_empty() && run.w_values.is_empty() {
        return Err(CliError::config(format!(
            "the fit uses covariate(s) {}; provide --w-values",
            meta.w_names.join(", ")
        )));
    }
    let v_values: Vec<f64> = if meta.has_control {
        match &run.v_values {
            Some(vs) => {
                for &v in vs {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(CliError::config(format!(
                            "control value {v} is outside (0,1)"
                        )));
                    }
                }
                vs.clone()
            }
            None => meta
                .vhat_quartiles
                .map(|q| q.to_vec())
                .ok_or_else(|| CliError::config("fit artifacts carry no control quartiles"))?,
        }
    } else {
        vec![f64::NAN] // placeholder: no control column
    };
    let c = run
        .censoring
        .or(meta.constant_censoring)
        .ok_or_else(|| CliError::config("per-row censoring fit: provide --c-value for prediction"))?;

    let transform = match meta.transform.as_deref() {
        Some("normal-quantile") => ControlTransform::NormalQuantile,
        _ => ControlTransform::Identity,
    };

    let w_rows: Vec<Vec<f64>> = if meta.w_names.is_empty() {
        vec![vec![]]
    } else if meta.w_names.len() == 1 {
        run.w_values.iter().map(|&v| vec![v]).collect()
    } else {
        // Multi-covariate fits take one profile, all values in column order.
        if run.w_values.len() != meta.w_names.len() {
            return Err(CliError::config(format!(
                "--w-values must supply {} value(s) for {}",
                meta.w_names.len(),
                meta.w_names.join(", ")
            )));
        }
        vec![run.w_values.clone()]
    };

    let mut table = TableWriter::new(
        CURVES_SCHEMA,
        meta.seed,
        &["quantile", "w", "v", "d", "prediction"],
    );
    for (u, beta) in &betas {
        for w_row in &w_rows {
            for &v in &v_values {
                for step in 0..run.d_steps {
                    let d = run.d_min
                        + (run.d_max - run.d_min) * step as f64 / (run.d_steps - 1) as f64;
                    let mut x = vec![1.0, d];
                    if meta.d_squared {
                        x.push(d * d);
                    }
                    x.extend_from_slice(w_row);
                    if meta.has_control {
                        x.push(transform.apply(v));
                    }
                    if x.len() != beta.len() {
                        return Err(CliError::config(
                            "fit artifacts and prediction grid disagree on the design layout",
                        ));
                    }
                    let lin: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                    table.row(&[
                        format!("{u}"),
                        w_row.first().map(|w| format!("{w}")).unwrap_or_default(),
                        if meta.has_control { format!("{v}") } else { String::new() },
                        format!("{d}"),
                        format!("{}", lin.max(c)),
                    ]);
                }
            }
        }
    }
    table.write_to(&run.out_dir.join("curves.csv"))?;
    println!(
        "predict: wrote {} quantile curve(s) over {} d-grid points",
        betas.len(),
        run.d_steps
    );
    Ok(())
}

type PointEstimates = Vec<(f64, Vec<f64>)>;

fn read_point_estimates(path: &Path, meta: &RunMetadata) -> Result<PointEstimates, CliError> {
    let (header, rows) = read_table(path)?;
    let col = |name: &str| -> Result<usize, CliError> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::config(format!("{} lacks required column {name}", path.display()))
        })
    };
    let (qi, ii, ei) = (col("quantile")?, col("item")?, col("estimate")?);
    let mut out: PointEstimates = Vec::new();
    for &u in &meta.quantiles {
        let mut beta = Vec::with_capacity(meta.column_names.len());
        for name in &meta.column_names {
            let value = rows
                .iter()
                .find(|r| r[qi] == format!("{u}") && &r[ii] == name)
                .ok_or_else(|| {
                    CliError::config(format!(
                        "fit artifacts lack coefficient {name} at quantile {u}"
                    ))
                })?[ei]
                .parse::<f64>()
                .map_err(|e| CliError::config(format!("bad estimate in results table: {e}")))?;
            beta.push(value);
        }
        out.push((u, beta));
    }
    Ok(out)
}

/// Parse simulate-specific options into a validated run.
#[allow(clippy::too_many_arguments)]
pub fn resolve_simulate(
    design: &str,
    n: usize,
    rho0: Option<f64>,
    censor_quantile: Option<f64>,
    w_cap_quantile: Option<f64>,
    estimators: Option<&[String]>,
    quantiles: Option<Vec<f64>>,
    replications: usize,
    seed: u64,
    out: PathBuf,
) -> Result<SimulateRun, CliError> {
    let variant = match design {
        "homoskedastic" => McVariant::Homoskedastic,
        "heteroskedastic" => McVariant::Heteroskedastic,
        other => {
            return Err(CliError::config(format!(
                "unknown design {other:?}; expected homoskedastic or heteroskedastic"
            )))
        }
    };
    let mut mc = match variant {
        McVariant::Homoskedastic => McDesign::homoskedastic(n, seed),
        McVariant::Heteroskedastic => McDesign::heteroskedastic(n, seed),
    };
    if let Some(r) = rho0 {
        if !(-1.0 < r && r < 1.0) {
            return Err(CliError::config("rho0 must lie in (−1, 1)"));
        }
        mc.rho0 = r;
    }
    if let Some(cq) = censor_quantile {
        if !(0.0 < cq && cq < 1.0) {
            return Err(CliError::config("censor quantile must lie in (0,1)"));
        }
        mc.censor_quantile = cq;
    }
    if let Some(wq) = w_cap_quantile {
        if !(0.0 < wq && wq <= 1.0) {
            return Err(CliError::config("w cap quantile must lie in (0,1]"));
        }
        mc.w_cap_quantile = wq;
    }
    let estimators: Vec<SimEstimator> = match estimators {
        None => SimEstimator::ALL.to_vec(),
        Some(labels) => labels
            .iter()
            .map(|l| {
                SimEstimator::parse(l).ok_or_else(|| {
                    CliError::config(format!(
                        "unknown estimator {l:?}; expected one of {}",
                        SimEstimator::ALL.map(|e| e.label()).join(", ")
                    ))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let quantiles =
        quantiles.unwrap_or_else(|| (1..=19).map(|k| k as f64 * 0.05).collect());
    for &u in &quantiles {
        if !(u > 0.0 && u < 1.0) {
            return Err(CliError::config(format!("quantile {u} is outside (0,1)")));
        }
    }
    Ok(SimulateRun { design: mc, estimators, quantiles, replications, seed, out_dir: out })
}
