//! One function per analysis track. Each computes in memory, then writes its
//! outputs from the calling thread.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use calmort_core::dataset::{ingest_reader, validate_reader, IngestOptions};
use calmort_core::dlm::{cumulative_effect, cumulative_slope};
use calmort_core::linalg::quantile_sorted;
use calmort_core::meta::{pool, pool_with, pooled_curve, EffectEstimate, Sigma2Mode};
use calmort_core::movmed::{complete_case_matrix, deviations, partial_correlations, spike_flags, WindowSpec};
use calmort_core::predgrid::{
    enumerate_grid, grid_counts, read_results, run_grid, summarize, AqLevel, CsvResultSink, GridProgress, GridRun,
    GridSpec, MetLevel,
};
use calmort_core::tsreg::{
    assemble, assemble_and_fit, combined_table, lag_sweep, met_significance_table, table_plan, AqParts, AqTerm,
    ModelSpec, TablePlan, TextTable,
};
use calmort_core::{BasinSeries, CurvePoint, Field, FitOptions, Outcome, Pollutant};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, Track};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, Outputs};

pub const GRID_RESULTS: &str = "grid_results.csv";

/// Hold-out year whose results are left out of grid summaries.
pub const EXCLUDED_YEAR: i32 = 2000;

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn data_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn read_data(cfg: &RunConfig, out: &mut Outputs) -> CliResult<Vec<u8>> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Usage("no dataset given".into()))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    out.input(&data_name(path), &bytes);
    Ok(bytes)
}

fn load(cfg: &RunConfig, out: &mut Outputs) -> CliResult<Vec<BasinSeries>> {
    let bytes = read_data(cfg, out)?;
    let panel = ingest_reader(&bytes[..], &IngestOptions::default())?;
    if cfg.basins.is_empty() {
        return Ok(panel.series);
    }
    cfg.basins
        .iter()
        .map(|&b| {
            panel
                .get(b)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("basin {b} not present in the data")))
        })
        .collect()
}

fn outcomes_or(cfg: &RunConfig, default: &[Outcome]) -> Vec<Outcome> {
    if cfg.outcomes.is_empty() {
        default.to_vec()
    } else {
        cfg.outcomes.clone()
    }
}

fn single_outcome(cfg: &RunConfig) -> CliResult<Outcome> {
    match cfg.outcomes.as_slice() {
        [] => Ok(Outcome::Ac65p),
        [o] => Ok(*o),
        _ => Err(CliError::Usage(format!("{} takes a single --outcome", cfg.track.name()))),
    }
}

/// Outcome of a track: files written plus a short summary for stdout.
#[derive(Debug, Default)]
pub struct TrackReport {
    pub lines: Vec<String>,
}

pub fn execute(cfg: &RunConfig, out: &mut Outputs) -> CliResult<TrackReport> {
    if cfg.dry_run && matches!(cfg.track, Track::Validate | Track::Movmed { .. }) {
        return Ok(TrackReport {
            lines: vec![format!("{}: 0 fits", cfg.track.name())],
        });
    }
    match &cfg.track {
        Track::Validate => validate(cfg, out),
        Track::Movmed {
            window,
            spike_threshold,
        } => movmed(cfg, out, *window, *spike_threshold),
        Track::Tsreg {
            table,
            dfs,
            dump_basis,
        } => tsreg(cfg, out, *table, *dfs, dump_basis.as_deref()),
        Track::DlnmCurves { pollutants, points } => dlnm_curves(cfg, out, pollutants, *points),
        Track::PredictGrid { hold_out, aq, met } => predict_grid(cfg, out, hold_out.as_deref(), aq, met),
        Track::Meta { estimates, sigma2 } => meta(cfg, out, estimates.as_deref(), *sigma2),
        Track::Report { results } => report(cfg, out, results.as_deref()),
    }
}

fn validate(cfg: &RunConfig, out: &mut Outputs) -> CliResult<TrackReport> {
    let bytes = read_data(cfg, out)?;
    let report = validate_reader(&bytes[..], &IngestOptions::default())?;
    out.write_json("validation.json", &report)?;
    let csv = csv_bytes(|w| {
        w.write_record(["basin", "field", "days", "missing"])?;
        for b in &report.basins {
            for f in Field::ALL {
                let m = b.missing.get(f.name()).copied().unwrap_or(0);
                w.write_record([b.basin.clone(), f.name().to_string(), b.days.to_string(), m.to_string()])?;
            }
        }
        Ok(())
    })?;
    out.write("missingness.csv", &csv)?;
    let mut lines = vec![format!("{} rows, {} basins", report.rows, report.basins.len())];
    lines.extend(report.errors.iter().cloned());
    if !report.ok {
        return Err(CliError::Data(format!(
            "validation failed with {} error(s); see {}",
            report.errors.len(),
            out.path("validation.json").display()
        )));
    }
    Ok(TrackReport { lines })
}

fn movmed(cfg: &RunConfig, out: &mut Outputs, window: WindowSpec, spike: f64) -> CliResult<TrackReport> {
    let series = load(cfg, out)?;
    let outcomes = outcomes_or(cfg, &[Outcome::Ac65p]);
    let measurements = [
        Pollutant::Ozone.field(cfg.ozone_metric),
        Field::Pm25,
        Field::Tmax,
        Field::Tmin,
        Field::RhMax,
    ];
    let mut lines = Vec::new();
    for s in &series {
        let mut names: Vec<String> = outcomes.iter().map(|o| o.key().to_string()).collect();
        let mut raw: Vec<Vec<Option<f64>>> =
            outcomes.iter().map(|&o| s.response(o).into_iter().map(Some).collect()).collect();
        for f in measurements {
            names.push(f.name().to_string());
            raw.push(s.values(f));
        }
        let devs = raw
            .par_iter()
            .zip(&names)
            .map(|(x, n)| deviations(x, window, n))
            .collect::<calmort_core::Result<Vec<_>>>()?;
        let tmax = &devs[names.iter().position(|n| n == Field::Tmax.name()).expect("tmax column")];
        let flags = spike_flags(tmax, spike);
        let dates = s.dates();
        let code = s.basin().code();
        let csv = csv_bytes(|w| {
            let mut header = vec!["date".to_string()];
            header.extend(names.iter().map(|n| format!("dev_{n}")));
            header.push("tmax_spike".into());
            w.write_record(&header)?;
            for t in 0..s.len() {
                let mut row = vec![dates[t].to_string()];
                row.extend(devs.iter().map(|d| fmt_opt(d.values[t])));
                row.push(u8::from(flags[t]).to_string());
                w.write_record(&row)?;
            }
            Ok(())
        })?;
        out.write(&format!("movmed_{code}.csv"), &csv)?;
        let cols: Vec<&[Option<f64>]> = devs.iter().map(|d| d.values.as_slice()).collect();
        let m = complete_case_matrix(&cols);
        let pc = partial_correlations(&m, &names)?;
        let csv = csv_bytes(|w| {
            let mut header = vec![String::new()];
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for (i, n) in names.iter().enumerate() {
                let mut row = vec![n.clone()];
                row.extend((0..names.len()).map(|j| fmt_f(pc[(i, j)])));
                w.write_record(&row)?;
            }
            Ok(())
        })?;
        out.write(&format!("partial_corr_{code}.csv"), &csv)?;
        lines.push(format!(
            "{code}: {} complete deviation rows, {} spike days",
            m.nrows(),
            flags.iter().filter(|&&f| f).count()
        ));
    }
    Ok(TrackReport { lines })
}

#[derive(Serialize)]
struct TableJson<'a, T: Serialize> {
    table: u8,
    basin: Option<&'a str>,
    outcome: Outcome,
    dfs: (usize, usize, usize),
    dispersion: Option<f64>,
    rows: &'a [T],
}

fn tsreg(
    cfg: &RunConfig,
    out: &mut Outputs,
    table: u8,
    dfs: (usize, usize, usize),
    dump: Option<&str>,
) -> CliResult<TrackReport> {
    let plan = table_plan(table)?;
    let outcome = single_outcome(cfg)?;
    let mut spec = ModelSpec::with_dfs(dfs.0, dfs.1, dfs.2);
    spec.outcome = outcome;
    spec.ozone_metric = cfg.ozone_metric;
    if cfg.dry_run {
        let fits = match &plan {
            TablePlan::Met { .. } => 1 + spec.met.len(),
            TablePlan::Sweep { cells, .. } => cells.len(),
            TablePlan::Combined { cells } => cells.len() * cfg.basins.len().max(8),
        };
        return Ok(TrackReport {
            lines: vec![format!("table {table}: {fits} fits")],
        });
    }
    let series = load(cfg, out)?;
    let pick_basin = |default| -> CliResult<&BasinSeries> {
        let want = cfg.basins.first().copied().unwrap_or(default);
        series
            .iter()
            .find(|s| s.basin() == want)
            .ok_or_else(|| CliError::Data(format!("basin {want} not present in the data")))
    };
    let opts = FitOptions::default();
    let (text, json, dump_series, dump_spec) = match &plan {
        TablePlan::Met { basin } => {
            let s = pick_basin(*basin)?;
            let (full, rows) = met_significance_table(s, &spec, &opts)?;
            let title = format!("Table {table}: meteorology drop tests, {}", s.basin());
            let j = serde_json::to_value(TableJson {
                table,
                basin: Some(s.basin().code()),
                outcome,
                dfs,
                dispersion: Some(full.dispersion),
                rows: &rows,
            })?;
            (TextTable::met(&title, &rows), j, s, spec.clone())
        }
        TablePlan::Sweep { basin, pollutant, cells } => {
            let s = pick_basin(*basin)?;
            let rows = lag_sweep(s, &spec, *pollutant, cells, &opts)?;
            let title = format!("Table {table}: {pollutant} lag sweep, {}", s.basin());
            let j = serde_json::to_value(TableJson {
                table,
                basin: Some(s.basin().code()),
                outcome,
                dfs,
                dispersion: None,
                rows: &rows,
            })?;
            let first = spec.clone().with_pollutant(*pollutant).with_aq(AqTerm::Dlm(cells[0].0.clone()));
            (TextTable::sweep(&title, &rows), j, s, first)
        }
        TablePlan::Combined { cells } => {
            let rows = combined_table(&series, &spec, cells, &opts)?;
            let title = format!("Table {table}: combined across {} basins", series.len());
            let j = serde_json::to_value(TableJson {
                table,
                basin: None,
                outcome,
                dfs,
                dispersion: None,
                rows: &rows,
            })?;
            let first = spec.clone().with_pollutant(cells[0].0).with_aq(AqTerm::Dlm(cells[0].1.clone()));
            (TextTable::combined(&title, &rows), j, &series[0], first)
        }
    };
    let mut csv = Vec::new();
    text.write_csv(&mut csv)?;
    out.write(&format!("table{table}.csv"), &csv)?;
    out.write(&format!("table{table}.txt"), text.to_text().as_bytes())?;
    out.write_json(&format!("table{table}.json"), &json)?;
    if let Some(term) = dump {
        let a = assemble(dump_series, &dump_spec)?;
        let span = a
            .design
            .term(term)
            .ok_or_else(|| {
                let names: Vec<&str> = a.design.terms().iter().map(|t| t.name.as_str()).collect();
                CliError::Usage(format!("no design term `{term}`; terms are {}", names.join(", ")))
            })?
            .clone();
        let dates = dump_series.dates();
        let bytes = csv_bytes(|w| {
            let mut header = vec!["date".to_string()];
            header.extend(a.design.labels()[span.start..span.start + span.len].iter().cloned());
            w.write_record(&header)?;
            for (i, &t) in a.design.rows().iter().enumerate() {
                let mut row = vec![dates[t].to_string()];
                row.extend((0..span.len).map(|j| fmt_f(a.design.x()[(i, span.start + j)])));
                w.write_record(&row)?;
            }
            Ok(())
        })?;
        out.write(&format!("basis_{}.csv", term.replace([':', '/'], "_")), &bytes)?;
    }
    Ok(TrackReport {
        lines: text.to_text().lines().map(String::from).collect(),
    })
}

/// Shared exposure grid: `points` values from 0 to the pooled 99th
/// percentile rounded up to a multiple of 10, plus the reference value.
fn exposure_grid(series: &[BasinSeries], field: Field, points: usize, reference: f64) -> Vec<f64> {
    let mut v: Vec<f64> = series.iter().flat_map(|s| s.values(field)).flatten().collect();
    v.sort_by(f64::total_cmp);
    let top = if v.is_empty() { 100.0 } else { quantile_sorted(&v, 0.99) };
    let hi = ((top / 10.0).ceil() * 10.0).max(reference + 10.0);
    let mut grid: Vec<f64> = (0..points).map(|i| hi * i as f64 / (points - 1) as f64).collect();
    if !grid.contains(&reference) {
        grid.push(reference);
        grid.sort_by(f64::total_cmp);
    }
    grid
}

#[derive(Serialize)]
struct DlnmBasin {
    basin: String,
    n: usize,
    dispersion: f64,
    converged: bool,
    cumulative_slope: f64,
    cumulative_slope_se: f64,
}

fn dlnm_curves(cfg: &RunConfig, out: &mut Outputs, pollutants: &[Pollutant], points: usize) -> CliResult<TrackReport> {
    let outcomes = outcomes_or(cfg, &[Outcome::Ac65p]);
    if cfg.dry_run {
        let basins = if cfg.basins.is_empty() { 8 } else { cfg.basins.len() };
        return Ok(TrackReport {
            lines: vec![format!("{} fits", basins * outcomes.len() * pollutants.len())],
        });
    }
    let series = load(cfg, out)?;
    let mut lines = Vec::new();
    for &outcome in &outcomes {
        for &p in pollutants {
            let mut spec = ModelSpec::dlnm(outcome, p);
            spec.ozone_metric = cfg.ozone_metric;
            let reference = spec.reference_value();
            let grid = exposure_grid(&series, p.field(cfg.ozone_metric), points, reference);
            let fitted = series
                .par_iter()
                .map(|s| {
                    let (a, f) = assemble_and_fit(s, &spec, &FitOptions::default())?;
                    let AqParts::CrossBasis(cb) = &a.aq else {
                        unreachable!("dlnm spec has a cross-basis term")
                    };
                    let curve = cumulative_effect(&f, cb, &grid, reference)?;
                    let (slope, var) = cumulative_slope(&f, cb)?;
                    let info = DlnmBasin {
                        basin: s.basin().code().to_string(),
                        n: f.n,
                        dispersion: f.dispersion,
                        converged: f.converged,
                        cumulative_slope: slope,
                        cumulative_slope_se: var.sqrt(),
                    };
                    Ok((info, curve, var))
                })
                .collect::<calmort_core::Result<Vec<_>>>()?;
            let curves: Vec<(String, Vec<CurvePoint>)> =
                fitted.iter().map(|(i, c, _)| (i.basin.clone(), c.clone())).collect();
            let pooled = if curves.len() >= 2 {
                Some(pooled_curve(&curves, Sigma2Mode::Reml)?)
            } else {
                None
            };
            let pooled_slope = if fitted.len() >= 2 {
                let est: Vec<EffectEstimate> = fitted
                    .iter()
                    .map(|(i, _, v)| EffectEstimate::new(i.basin.clone(), i.cumulative_slope, *v))
                    .collect();
                Some(pool(&est)?)
            } else {
                None
            };
            let stem = format!("dlnm_{}_{}", outcome.key(), p.key());
            let csv = csv_bytes(|w| {
                w.write_record(["basin", "exposure", "log_rr", "se", "rr", "lo95", "hi95"])?;
                let all = curves.iter().map(|(b, c)| (b.as_str(), c)).chain(pooled.iter().map(|pc| ("pooled", &pc.points)));
                for (b, c) in all {
                    for q in c {
                        w.write_record([
                            b.to_string(),
                            fmt_f(q.exposure),
                            fmt_f(q.log_rr),
                            fmt_f(q.se),
                            fmt_f(q.rr),
                            fmt_f(q.lo95),
                            fmt_f(q.hi95),
                        ])?;
                    }
                }
                Ok(())
            })?;
            out.write(&format!("{stem}.csv"), &csv)?;
            let infos: Vec<&DlnmBasin> = fitted.iter().map(|(i, _, _)| i).collect();
            out.write_json(
                &format!("{stem}.json"),
                &serde_json::json!({
                    "outcome": outcome,
                    "pollutant": p,
                    "reference": reference,
                    "basins": infos,
                    "pooled_slope": pooled_slope,
                    "pooled_curve_method": pooled.as_ref().map(|pc| pc.method.clone()),
                    "pooled_curve_sigma2": pooled.as_ref().map(|pc| pc.sigma2.clone()),
                }),
            )?;
            lines.push(format!("{stem}: {} basins, {} grid points", curves.len(), grid.len()));
        }
    }
    Ok(TrackReport { lines })
}

fn grid_spec(cfg: &RunConfig, aq: &[AqLevel], met: &[MetLevel]) -> GridSpec {
    GridSpec {
        aq: aq.to_vec(),
        rh: met.to_vec(),
        tmax: met.to_vec(),
        tmin: met.to_vec(),
        ozone_metric: cfg.ozone_metric,
        ..GridSpec::default()
    }
}

fn predict_grid(
    cfg: &RunConfig,
    out: &mut Outputs,
    hold_out: Option<&[i32]>,
    aq: &[AqLevel],
    met: &[MetLevel],
) -> CliResult<TrackReport> {
    let spec = grid_spec(cfg, aq, met);
    let models = enumerate_grid(&spec);
    let outcomes = outcomes_or(cfg, &Outcome::STUDY);
    if cfg.dry_run {
        let study_years = 13;
        let basins = if cfg.basins.is_empty() { 8 } else { cfg.basins.len() };
        let years = hold_out.map_or(study_years - 1, <[i32]>::len);
        let plan = grid_counts(models.len(), years, outcomes.len(), basins);
        let full = grid_counts(models.len(), study_years, outcomes.len(), basins);
        return Ok(TrackReport {
            lines: vec![
                format!("models per cell: {}", plan.per_cell),
                format!("models per basin over all {study_years} years: {}", full.per_basin),
                format!("models over {basins} basins: {}", full.total),
                format!("planned fits ({years} hold-out years): {} per basin, {} total", plan.per_basin, plan.total),
            ],
        });
    }
    let series = load(cfg, out)?;
    let years: Vec<i32> = match hold_out {
        Some(v) => v.to_vec(),
        None => series
            .iter()
            .flat_map(|s| s.years())
            .filter(|&y| y != EXCLUDED_YEAR)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let run = GridRun {
        outcomes,
        hold_out_years: years,
        fit: FitOptions::default(),
    };
    let mut sink = CsvResultSink::open(out.path(GRID_RESULTS))?;
    let resumed = sink.completed();
    let start = Instant::now();
    let mut last = Instant::now();
    let quiet = cfg.quiet;
    let mut progress = |p: GridProgress| {
        if quiet || (last.elapsed().as_secs_f64() < 1.0 && p.fits_done < p.fits_total) {
            return;
        }
        last = Instant::now();
        let rate = p.fits_done as f64 / start.elapsed().as_secs_f64().max(1e-9);
        eprintln!("fits {}/{} ({rate:.1} fits/sec)", p.fits_done, p.fits_total);
    };
    let written = run_grid(&series, &spec, &models, &run, &mut sink, &mut progress)?;
    drop(sink);
    out.record(GRID_RESULTS)?;
    let records = read_results(out.path(GRID_RESULTS))?;
    let summary = summarize(&records, &[EXCLUDED_YEAR]);
    out.write_json("grid_summary.json", &summary)?;
    Ok(TrackReport {
        lines: vec![
            format!("{written} new results ({resumed} resumed), {} total rows", records.len()),
            format!("{} rows not usable", summary.unusable),
        ],
    })
}

#[derive(serde::Deserialize)]
struct EstimateRow {
    label: String,
    theta: f64,
    variance: f64,
}

fn meta(cfg: &RunConfig, out: &mut Outputs, estimates: Option<&Path>, sigma2: Option<f64>) -> CliResult<TrackReport> {
    let mode = sigma2.map_or(Sigma2Mode::Reml, Sigma2Mode::Fixed);
    let Some(path) = estimates else {
        let TablePlan::Combined { cells } = table_plan(7)? else {
            unreachable!("table 7 is the combined table")
        };
        if cfg.dry_run {
            let basins = if cfg.basins.is_empty() { 8 } else { cfg.basins.len() };
            return Ok(TrackReport {
                lines: vec![format!("{} fits", cells.len() * basins)],
            });
        }
        if sigma2.is_some() {
            return Err(CliError::Usage("--sigma2 applies to --estimates input only".into()));
        }
        let series = load(cfg, out)?;
        let mut spec = ModelSpec::default();
        spec.outcome = single_outcome(cfg)?;
        spec.ozone_metric = cfg.ozone_metric;
        let rows = combined_table(&series, &spec, &cells, &FitOptions::default())?;
        let text = TextTable::combined(&format!("Combined across {} basins", series.len()), &rows);
        let mut csv = Vec::new();
        text.write_csv(&mut csv)?;
        out.write("meta_combined.csv", &csv)?;
        out.write("meta_combined.txt", text.to_text().as_bytes())?;
        out.write_json("meta_combined.json", &rows)?;
        return Ok(TrackReport {
            lines: text.to_text().lines().map(String::from).collect(),
        });
    };
    if cfg.dry_run {
        return Ok(TrackReport {
            lines: vec!["0 fits".into()],
        });
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    out.input(&data_name(path), &bytes);
    let est: Vec<EffectEstimate> = csv::Reader::from_reader(&bytes[..])
        .deserialize::<EstimateRow>()
        .map(|r| {
            r.map(|r| EffectEstimate::new(r.label, r.theta, r.variance))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect::<CliResult<_>>()?;
    let pooled = pool_with(&est, mode)?;
    out.write_json("meta.json", &pooled.to_json())?;
    let csv = csv_bytes(|w| {
        w.write_record(["label", "theta", "variance", "blup"])?;
        for b in &pooled.per_basin {
            w.write_record([b.label.clone(), fmt_f(b.theta), fmt_f(b.variance), fmt_f(b.blup)])?;
        }
        w.write_record(["pooled".into(), fmt_f(pooled.theta_hat), fmt_f(pooled.se * pooled.se), String::new()])?;
        Ok(())
    })?;
    out.write("meta.csv", &csv)?;
    Ok(TrackReport {
        lines: vec![format!(
            "theta = {:.6} (se {:.6}), sigma2 = {:.6e}, {} inputs",
            pooled.theta_hat,
            pooled.se,
            pooled.sigma2,
            est.len()
        )],
    })
}

fn report(cfg: &RunConfig, out: &mut Outputs, results: Option<&Path>) -> CliResult<TrackReport> {
    let path = results.map_or_else(|| out.path(GRID_RESULTS), Path::to_path_buf);
    if cfg.dry_run {
        return Ok(TrackReport {
            lines: vec![format!("would summarise {}", path.display())],
        });
    }
    let bytes = std::fs::read(&path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    if results.is_some() {
        out.input(&data_name(&path), &bytes);
    }
    let records = calmort_core::predgrid::read_records(&bytes[..])?;
    let summary = summarize(&records, &[EXCLUDED_YEAR]);
    out.write_json("report.json", &summary)?;
    let csv = csv_bytes(|w| {
        w.write_record([
            "basin", "outcome", "group", "year", "n", "min", "whisker_lo", "q1", "median", "q3", "whisker_hi", "max",
            "outliers",
        ])?;
        for b in &summary.boxplots {
            let s = &b.stats;
            w.write_record([
                b.basin.clone(),
                b.outcome.clone(),
                b.group.key().into(),
                b.year.to_string(),
                s.n.to_string(),
                fmt_f(s.min),
                fmt_f(s.whisker_lo),
                fmt_f(s.q1),
                fmt_f(s.median),
                fmt_f(s.q3),
                fmt_f(s.whisker_hi),
                fmt_f(s.max),
                s.outliers.to_string(),
            ])?;
        }
        Ok(())
    })?;
    out.write("report_boxplots.csv", &csv)?;
    let csv = csv_bytes(|w| {
        w.write_record(["basin", "outcome", "group", "year", "model_id", "ratio"])?;
        for b in &summary.best {
            w.write_record([
                b.basin.clone(),
                b.outcome.clone(),
                b.group.key().into(),
                b.year.to_string(),
                b.model_id.clone(),
                fmt_f(b.ratio),
            ])?;
        }
        Ok(())
    })?;
    out.write("report_best.csv", &csv)?;
    let csv = csv_bytes(|w| {
        w.write_record(["basin", "outcome", "group", "years", "distinct_best", "modal_best", "modal_count"])?;
        for c in &summary.consistency {
            w.write_record([
                c.basin.clone(),
                c.outcome.clone(),
                c.group.key().into(),
                c.years.to_string(),
                c.distinct_best.to_string(),
                c.modal_best.clone(),
                c.modal_count.to_string(),
            ])?;
        }
        Ok(())
    })?;
    out.write("report_consistency.csv", &csv)?;
    let below = summary.boxplots.iter().filter(|b| b.stats.median < 1.0).count();
    Ok(TrackReport {
        lines: vec![
            format!("{} records, {} unusable", records.len(), summary.unusable),
            format!("{below} of {} boxplot cells have median ratio below 1", summary.boxplots.len()),
        ],
    })
}
