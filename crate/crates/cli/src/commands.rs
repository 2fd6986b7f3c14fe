use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use detcgd::distributed::{run_distributed, DistRun};
use detcgd::optimizer::RunConfig;
use detcgd::report::{aggregate_traces, complexity_table, emit_comparison, emit_plot_data, write_table_csv, PlotAxis, TraceAggregate};
use detcgd::stepsize::{calibration_report, check_condition, check_dld_condition};
use detcgd::{Error, SketchSpec, StepsizeMatrix, Variant};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{sketch_spec, Experiment, ExperimentConfig, StepsizeMode};
use crate::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(Error::from)?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    std::io::Write::write_all(&mut w, b"\n").map_err(Error::from)?;
    Ok(())
}

/// Timestamps live here and nowhere else.
pub fn write_metadata(dir: &Path, command: &str, config: &Path) -> Result<(), CliError> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(dir, "metadata.json", &serde_json::json!({
        "command": command,
        "config": config.display().to_string(),
        "generated_at_unix": secs,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

pub fn calibrate(cfg: &ExperimentConfig, exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let (d, gammas) = exp.stepsize(cfg, &cfg.stepsize, cfg.variant, &exp.spec)?;
    let ctx = if exp.fed.n() > 1 { Some(exp.context(cfg)?) } else { None };
    let report = calibration_report(&d, exp.l(), &exp.spec, gammas, ctx.as_ref().map(|c| (c, cfg.variant)))?;
    write_json(out, "calibration.json", &report)?;
    if matches!(cfg.stepsize, StepsizeMode::Explicit { .. }) && !cfg.unsafe_stepsize {
        let ok = match &report.distributed {
            Some(v) => v.dld.holds,
            None => match cfg.variant {
                Variant::Cgd1 => report.condition_cgd1_ok,
                Variant::Cgd2 => report.condition_cgd2_ok,
            },
        };
        if !ok {
            return Err(Error::Infeasible("explicit stepsize violates its condition".into()).into());
        }
    }
    Ok(())
}

/// One run: the single-node condition for one client, `D L D <= D` otherwise.
fn run_once(exp: &Experiment, d: &StepsizeMatrix, spec: &SketchSpec, rc: &RunConfig) -> detcgd::Result<DistRun> {
    if !rc.unsafe_stepsize {
        let c = if exp.fed.n() == 1 {
            check_condition(rc.variant, d, exp.l(), spec)?
        } else {
            check_dld_condition(d, exp.l())?
        };
        if !c.holds {
            return Err(Error::Infeasible(format!(
                "{} stepsize condition fails with slack {:e}",
                rc.variant, c.slack
            )));
        }
    }
    let rc = RunConfig {
        unsafe_stepsize: true,
        ..rc.clone()
    };
    run_distributed(&exp.fed, d, spec, &exp.x0, &rc)
}

/// Runs every seed in parallel; results come back in seed order.
fn run_seeds(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    variant: Variant,
) -> detcgd::Result<Vec<DistRun>> {
    cfg.seeds
        .par_iter()
        .map(|&s| run_once(exp, d, spec, &cfg.run_config(s, variant)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn write_run(out: &Path, prefix: &str, seed: u64, run: &DistRun) -> Result<(), CliError> {
    run.trace.write_csv(create(out, &format!("{prefix}trace_seed{seed}.csv"))?)?;
    run.trace.write_summary_json(create(out, &format!("{prefix}summary_seed{seed}.json"))?)?;
    run.ledger.write_csv(create(out, &format!("{prefix}ledger_seed{seed}.csv"))?)?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let (d, _) = exp.stepsize(cfg, &cfg.stepsize, cfg.variant, &exp.spec)?;
    let runs = run_seeds(cfg, exp, &d, &exp.spec, cfg.variant)?;
    for (seed, r) in cfg.seeds.iter().zip(&runs) {
        write_run(out, "", *seed, r)?;
    }
    let agg = aggregate(&runs)?;
    emit_plot_data(&agg, PlotAxis::Iteration, create(out, "aggregate.csv")?)?;
    write_json(out, "aggregate_summary.json", &summary_only(&agg))?;
    Ok(())
}

fn aggregate(runs: &[DistRun]) -> detcgd::Result<TraceAggregate> {
    let traces: Vec<_> = runs.iter().map(|r| r.trace.clone()).collect();
    aggregate_traces(&traces)
}

#[derive(Serialize)]
struct AggregateSummary {
    runs: usize,
    g_kd_mean: f64,
    g_kd_stderr: f64,
    e_k_mean: f64,
    e_k_stderr: f64,
    min_grad_wnorm2_mean: f64,
    min_grad_wnorm2_stderr: f64,
    final_f_mean: f64,
    final_f_stderr: f64,
}

fn summary_only(a: &TraceAggregate) -> AggregateSummary {
    AggregateSummary {
        runs: a.runs,
        g_kd_mean: a.g_kd_mean,
        g_kd_stderr: a.g_kd_stderr,
        e_k_mean: a.e_k_mean,
        e_k_stderr: a.e_k_stderr,
        min_grad_wnorm2_mean: a.min_grad_wnorm2_mean,
        min_grad_wnorm2_stderr: a.min_grad_wnorm2_stderr,
        final_f_mean: a.final_f_mean,
        final_f_stderr: a.final_f_stderr,
    }
}

#[derive(Serialize)]
struct TableFile {
    dims: Vec<usize>,
    ks: Vec<usize>,
    qs: Vec<f64>,
    rows: Vec<detcgd::report::ComplexityRow>,
    /// Rand-1 with `diag^{-1}(L_i)` never loses to rand-1 with `L_i^{-1}`.
    diag_inverse_dominates: bool,
    all_printed_match: bool,
}

pub fn table(cfg: &ExperimentConfig, exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let l = exp.l();
    let dims = l.partition().dims().to_vec();
    let ks = cfg
        .table
        .ks
        .clone()
        .unwrap_or_else(|| dims.iter().map(|&d| (d / 2).max(1)).collect());
    let qs = cfg.table.qs.clone().unwrap_or_else(|| vec![0.5; dims.len()]);
    let rows = complexity_table(l, &ks, &qs)?;
    write_table_csv(&rows, create(out, "table.csv")?)?;
    let diag_inverse_dominates = rows[6].complexity <= rows[4].complexity * (1.0 + 1e-12);
    let all_printed_match = rows.iter().all(|r| r.printed_matches);
    write_json(out, "table.json", &TableFile {
        dims,
        ks,
        qs,
        rows,
        diag_inverse_dominates,
        all_printed_match,
    })
}

pub fn sweep(cfg: &ExperimentConfig, exp: &Experiment, out: &Path, axis: PlotAxis) -> Result<(), CliError> {
    let methods = &cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a \"sweep\" section with methods".into()))?
        .methods;
    let mut series = Vec::with_capacity(methods.len());
    for m in methods {
        let spec = match &m.sketch {
            Some(_) => sketch_spec(m.sketch.as_ref(), exp.l().partition())?,
            None => exp.spec.clone(),
        };
        let (d, _) = exp.stepsize(cfg, &m.stepsize, m.variant, &spec)?;
        let runs = run_seeds(cfg, exp, &d, &spec, m.variant)?;
        for (seed, r) in cfg.seeds.iter().zip(&runs) {
            write_run(out, &format!("{}_", m.name), *seed, r)?;
        }
        let agg = aggregate(&runs)?;
        emit_plot_data(&agg, axis, create(out, &format!("{}_plot.csv", m.name))?)?;
        series.push((m.name.clone(), agg));
    }
    emit_comparison(&series, axis, create(out, "comparison.csv")?)?;
    Ok(())
}
