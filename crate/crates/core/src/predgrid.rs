//! Leave-one-year-out prediction over a factorial grid of model forms.
//!
//! Every model is `intercept + air quality + RH + tmax + tmin + tprs(k) +
//! tprs(j)`, each factor at one of its levels. For a hold-out year the
//! smoother bases are fitted once on the training years and shared by all
//! models, so designs that coincide are identical bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dataset::{lag_mean, BasinSeries, Field, Outcome, OzoneMetric, Pollutant};
use crate::design::{build_design, defined_rows, model_matrix, smooth_term, TermColumns};
use crate::dlm::cross_basis;
use crate::error::{Error, Result};
use crate::glm::{fit, FitOptions, FitResult};
use crate::linalg::quantile_sorted;
use crate::tsreg::LagForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AqLevel {
    Null,
    OzoneDay0,
    OzoneMean01,
    OzoneDlnm,
    PmDay0,
    PmMean01,
    PmDlnm,
}

impl AqLevel {
    pub const ALL: [AqLevel; 7] = [
        AqLevel::Null,
        AqLevel::OzoneDay0,
        AqLevel::OzoneMean01,
        AqLevel::OzoneDlnm,
        AqLevel::PmDay0,
        AqLevel::PmMean01,
        AqLevel::PmDlnm,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn pollutant(self) -> Option<Pollutant> {
        match self {
            AqLevel::Null => None,
            AqLevel::OzoneDay0 | AqLevel::OzoneMean01 | AqLevel::OzoneDlnm => Some(Pollutant::Ozone),
            _ => Some(Pollutant::Pm25),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            AqLevel::Null => "null",
            AqLevel::OzoneDay0 => "o3_0",
            AqLevel::OzoneMean01 => "o3_01",
            AqLevel::OzoneDlnm => "o3_dlnm",
            AqLevel::PmDay0 => "pm25_0",
            AqLevel::PmMean01 => "pm25_01",
            AqLevel::PmDlnm => "pm25_dlnm",
        }
    }
}

impl FromStr for AqLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AqLevel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown air-quality level `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetLevel {
    Null,
    Current,
    CurrentAndMean,
}

impl MetLevel {
    pub const ALL: [MetLevel; 3] = [MetLevel::Null, MetLevel::Current, MetLevel::CurrentAndMean];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            MetLevel::Null => "null",
            MetLevel::Current => "tprs0",
            MetLevel::CurrentAndMean => "tprs0+m123",
        }
    }

    fn forms(self) -> &'static [LagForm] {
        match self {
            MetLevel::Null => &[],
            MetLevel::Current => &[LagForm::Current],
            MetLevel::CurrentAndMean => &[LagForm::Current, LagForm::Mean123],
        }
    }
}

impl FromStr for MetLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetLevel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown meteorology level `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridModel {
    pub aq: AqLevel,
    pub rh: MetLevel,
    pub tmax: MetLevel,
    pub tmin: MetLevel,
}

impl GridModel {
    pub const TIME_ONLY: GridModel = GridModel {
        aq: AqLevel::Null,
        rh: MetLevel::Null,
        tmax: MetLevel::Null,
        tmin: MetLevel::Null,
    };

    /// Radix encoding `aq·27 + rh·9 + tmax·3 + tmin`.
    pub fn number(&self) -> usize {
        self.aq.index() * 27 + self.rh.index() * 9 + self.tmax.index() * 3 + self.tmin.index()
    }

    pub fn from_number(n: usize) -> Option<Self> {
        if n >= 189 {
            return None;
        }
        Some(Self {
            aq: AqLevel::ALL[n / 27],
            rh: MetLevel::ALL[n / 9 % 3],
            tmax: MetLevel::ALL[n / 3 % 3],
            tmin: MetLevel::ALL[n % 3],
        })
    }

    pub fn id(&self) -> String {
        format!("m{:03}", self.number())
    }

    pub fn from_id(id: &str) -> Option<Self> {
        id.strip_prefix('m')?.parse().ok().and_then(Self::from_number)
    }

    pub fn is_time_only(&self) -> bool {
        *self == Self::TIME_ONLY
    }

    fn met(&self) -> [(Field, MetLevel); 3] {
        [(Field::RhMax, self.rh), (Field::Tmax, self.tmax), (Field::Tmin, self.tmin)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AqGroup {
    Ozone,
    Pm25,
}

impl AqGroup {
    pub const ALL: [AqGroup; 2] = [AqGroup::Ozone, AqGroup::Pm25];

    /// Null level plus the group's three pollutant levels.
    pub fn contains(self, aq: AqLevel) -> bool {
        match aq.pollutant() {
            None => true,
            Some(Pollutant::Ozone) => self == AqGroup::Ozone,
            Some(Pollutant::Pm25) => self == AqGroup::Pm25,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            AqGroup::Ozone => "ozone",
            AqGroup::Pm25 => "pm25",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub aq: Vec<AqLevel>,
    pub rh: Vec<MetLevel>,
    pub tmax: Vec<MetLevel>,
    pub tmin: Vec<MetLevel>,
    pub met_df: usize,
    pub day_df: usize,
    pub year_df: usize,
    pub max_lag: usize,
    pub lag_df: usize,
    pub ozone_metric: OzoneMetric,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            aq: AqLevel::ALL.to_vec(),
            rh: MetLevel::ALL.to_vec(),
            tmax: MetLevel::ALL.to_vec(),
            tmin: MetLevel::ALL.to_vec(),
            met_df: 6,
            day_df: 8,
            year_df: 4,
            max_lag: 6,
            lag_df: 4,
            ozone_metric: OzoneMetric::default(),
        }
    }
}

/// All level combinations in model-number order.
pub fn enumerate_grid(spec: &GridSpec) -> Vec<GridModel> {
    let mut out = Vec::new();
    for &aq in &spec.aq {
        for &rh in &spec.rh {
            for &tmax in &spec.tmax {
                for &tmin in &spec.tmin {
                    out.push(GridModel { aq, rh, tmax, tmin });
                }
            }
        }
    }
    out.sort_by_key(GridModel::number);
    out.dedup();
    out
}

pub fn partition(models: &[GridModel], group: AqGroup) -> Vec<GridModel> {
    models.iter().copied().filter(|m| group.contains(m.aq)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCounts {
    pub per_cell: usize,
    pub per_basin: usize,
    pub total: usize,
}

/// Fit counts: models per (basin, outcome, year), per basin across years and
/// outcomes, and overall.
pub fn grid_counts(models: usize, years: usize, outcomes: usize, basins: usize) -> GridCounts {
    GridCounts {
        per_cell: models,
        per_basin: models * years * outcomes,
        total: models * years * outcomes * basins,
    }
}

/// Pre-built term columns for one basin and hold-out year.
#[derive(Debug, Clone)]
pub struct TermLibrary {
    pub hold_out: i32,
    train_days: Vec<usize>,
    test_days: Vec<usize>,
    dates: Vec<NaiveDate>,
    doy: TermColumns,
    year: TermColumns,
    met: BTreeMap<(Field, LagForm), TermColumns>,
    aq: BTreeMap<AqLevel, TermColumns>,
}

impl TermLibrary {
    pub fn build(series: &BasinSeries, spec: &GridSpec, hold_out: i32) -> Result<Self> {
        let dates = series.dates();
        let (test_days, train_days): (Vec<usize>, Vec<usize>) = (0..dates.len()).partition(|&t| dates[t].year() == hold_out);
        if test_days.is_empty() {
            return Err(Error::InvalidArgument(format!("hold-out year {hold_out} is not in the series")));
        }
        if train_days.is_empty() {
            return Err(Error::InsufficientData("no training years".into()));
        }
        let k: Vec<Option<f64>> = series.day_of_year().iter().map(|&d| Some(d as f64)).collect();
        let j: Vec<Option<f64>> = series.year_index().iter().map(|&y| Some(y as f64)).collect();
        let (_, doy) = smooth_term("doy", &BasisSpec::tprs(spec.day_df), &k, &train_days)?;
        let (_, year) = smooth_term("year", &BasisSpec::tprs(spec.year_df), &j, &train_days)?;

        let mut wanted: BTreeSet<(Field, LagForm)> = BTreeSet::new();
        for (field, levels) in [(Field::RhMax, &spec.rh), (Field::Tmax, &spec.tmax), (Field::Tmin, &spec.tmin)] {
            for l in levels.iter() {
                wanted.extend(l.forms().iter().map(|&f| (field, f)));
            }
        }
        let met = wanted
            .into_iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(field, form)| {
                let input = form.input(&series.values(field));
                let name = format!("{}:{}", field.name(), form.key());
                let (_, cols) = smooth_term(&name, &BasisSpec::tprs(spec.met_df), &input, &train_days)?;
                Ok(((field, form), cols))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;

        let mut aq = BTreeMap::new();
        for &level in &spec.aq {
            let Some(p) = level.pollutant() else { continue };
            let x = series.values(p.field(spec.ozone_metric));
            let key = level.key();
            let cols = match level {
                AqLevel::OzoneDay0 | AqLevel::PmDay0 => TermColumns::from_columns(key, vec![key.into()], &[x]),
                AqLevel::OzoneMean01 | AqLevel::PmMean01 => {
                    TermColumns::from_columns(key, vec![key.into()], &[lag_mean(&x, &[0, 1])])
                }
                _ => cross_basis(key, &x, spec.max_lag, spec.lag_df, p.reference())?.term,
            };
            aq.insert(level, cols);
        }
        Ok(Self {
            hold_out,
            train_days,
            test_days,
            dates,
            doy,
            year,
            met,
            aq,
        })
    }

    fn terms(&self, m: &GridModel) -> Result<Vec<&TermColumns>> {
        let mut terms = Vec::new();
        if m.aq != AqLevel::Null {
            terms.push(
                self.aq
                    .get(&m.aq)
                    .ok_or_else(|| Error::InvalidArgument(format!("level {} not in the grid", m.aq.key())))?,
            );
        }
        for (field, level) in m.met() {
            for form in level.forms() {
                terms.push(self.met.get(&(field, *form)).ok_or_else(|| {
                    Error::InvalidArgument(format!("level {} of {} not in the grid", level.key(), field))
                })?);
            }
        }
        terms.push(&self.doy);
        terms.push(&self.year);
        Ok(terms)
    }

    /// Fit on the training days where the model is defined and predict the
    /// hold-out days where it is defined.
    pub fn fit_predict(&self, response: &[f64], m: &GridModel, opts: &FitOptions) -> Result<Prediction> {
        let terms = self.terms(m)?;
        let train = defined_rows(&terms, self.train_days.iter().copied());
        let test = defined_rows(&terms, self.test_days.iter().copied());
        let design = build_design(response, &terms, &train, &self.dates)?;
        let (f, converged) = match fit(&design, opts) {
            Ok(f) => (f, true),
            Err(Error::NonConvergence { last, .. }) => (*last, false),
            Err(e) => return Err(e),
        };
        let (x_test, _, _) = model_matrix(&terms, &test);
        let mu = f.predict(&x_test).iter().copied().collect();
        Ok(Prediction {
            model: *m,
            n_train: train.len(),
            test_rows: test,
            mu,
            converged,
            fit: f,
        })
    }

    pub fn test_days(&self) -> &[usize] {
        &self.test_days
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub model: GridModel,
    pub n_train: usize,
    pub test_rows: Vec<usize>,
    pub mu: Vec<f64>,
    pub converged: bool,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub date: NaiveDate,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub basin: String,
    pub outcome: Outcome,
    pub year: i32,
    pub model: GridModel,
    pub n_train: usize,
    pub n_test: usize,
    /// Hold-out days that could not be predicted for missing covariates.
    pub n_dropped: usize,
    pub mspe: f64,
    pub mspe_time: f64,
    pub ratio: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub predictions: Vec<DayPrediction>,
}

impl CvResult {
    fn failed(basin: &str, outcome: Outcome, year: i32, model: GridModel, err: &Error) -> Self {
        Self {
            basin: basin.into(),
            outcome,
            year,
            model,
            n_train: 0,
            n_test: 0,
            n_dropped: 0,
            mspe: f64::NAN,
            mspe_time: f64::NAN,
            ratio: f64::NAN,
            converged: false,
            error: Some(err.to_string()),
            predictions: Vec::new(),
        }
    }

    /// Usable in ratio summaries.
    pub fn usable(&self) -> bool {
        self.converged && self.ratio.is_finite()
    }

    pub fn record(&self) -> CvRecord {
        CvRecord {
            basin: self.basin.clone(),
            outcome: self.outcome.key().into(),
            year: self.year,
            model_id: self.model.id(),
            aq: self.model.aq.key().into(),
            rh: self.model.rh.key().into(),
            tmax: self.model.tmax.key().into(),
            tmin: self.model.tmin.key().into(),
            n_train: self.n_train,
            n_test: self.n_test,
            mspe: self.mspe,
            ratio: self.ratio,
            converged: self.converged,
        }
    }
}

fn mspe_on(response: &[f64], rows: &[usize], mu: impl Fn(usize) -> f64) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|&t| (response[t] - mu(t)).powi(2)).sum::<f64>() / rows.len() as f64
}

fn cv_result(
    basin: &str,
    outcome: Outcome,
    lib: &TermLibrary,
    response: &[f64],
    reference: &Prediction,
    pred: &Prediction,
    keep_predictions: bool,
) -> CvResult {
    let mut time_mu = vec![f64::NAN; response.len()];
    for (&t, &m) in reference.test_rows.iter().zip(&reference.mu) {
        time_mu[t] = m;
    }
    let mut model_mu = vec![f64::NAN; response.len()];
    for (&t, &m) in pred.test_rows.iter().zip(&pred.mu) {
        model_mu[t] = m;
    }
    let mspe = mspe_on(response, &pred.test_rows, |t| model_mu[t]);
    let mspe_time = mspe_on(response, &pred.test_rows, |t| time_mu[t]);
    let ratio = mspe / mspe_time;
    let predictions = if keep_predictions {
        pred.test_rows
            .iter()
            .zip(&pred.mu)
            .map(|(&t, &mu)| DayPrediction {
                date: lib.dates[t],
                observed: response[t],
                predicted: mu,
            })
            .collect()
    } else {
        Vec::new()
    };
    CvResult {
        basin: basin.into(),
        outcome,
        year: lib.hold_out,
        model: pred.model,
        n_train: pred.n_train,
        n_test: pred.test_rows.len(),
        n_dropped: lib.test_days.len() - pred.test_rows.len(),
        mspe,
        mspe_time,
        ratio,
        converged: pred.converged && reference.converged,
        error: None,
        predictions,
    }
}

/// Hold out one year, fit `model` on the rest, predict the hold-out year and
/// compare with the time-only model on the same days.
pub fn loyo_fit_predict(
    series: &BasinSeries,
    spec: &GridSpec,
    model: &GridModel,
    outcome: Outcome,
    hold_out: i32,
    opts: &FitOptions,
) -> Result<CvResult> {
    let lib = TermLibrary::build(series, spec, hold_out)?;
    let y = series.response(outcome);
    let reference = lib.fit_predict(&y, &GridModel::TIME_ONLY, opts)?;
    let pred = if model.is_time_only() {
        reference.clone()
    } else {
        lib.fit_predict(&y, model, opts)?
    };
    Ok(cv_result(series.basin().code(), outcome, &lib, &y, &reference, &pred, true))
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub basin: String,
    pub outcome: String,
    pub year: i32,
    pub model_id: String,
    pub aq: String,
    pub rh: String,
    pub tmax: String,
    pub tmin: String,
    pub n_train: usize,
    pub n_test: usize,
    pub mspe: f64,
    pub ratio: f64,
    pub converged: bool,
}

pub const RESULTS_HEADER: &str = "basin,outcome,year,model_id,aq,rh,tmax,tmin,n_train,n_test,mspe,ratio,converged";

pub type ResultKey = (String, String, i32, String);

impl CvRecord {
    pub fn key(&self) -> ResultKey {
        (self.basin.clone(), self.outcome.clone(), self.year, self.model_id.clone())
    }

    pub fn usable(&self) -> bool {
        self.converged && self.ratio.is_finite()
    }
}

/// Destination for grid results.
pub trait ResultSink {
    fn is_done(&self, key: &ResultKey) -> bool;
    fn write(&mut self, results: &[CvResult]) -> Result<()>;
}

impl ResultSink for Vec<CvResult> {
    fn is_done(&self, _key: &ResultKey) -> bool {
        false
    }

    fn write(&mut self, results: &[CvResult]) -> Result<()> {
        self.extend_from_slice(results);
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Append-only CSV results file. Rows already present are skipped on rerun,
/// so an interrupted run resumes where it stopped.
pub struct CsvResultSink {
    path: PathBuf,
    out: BufWriter<File>,
    done: HashSet<ResultKey>,
}

impl CsvResultSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut done = HashSet::new();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        if text.is_empty() {
            writeln!(file, "{RESULTS_HEADER}")?;
        } else {
            if !text.starts_with(RESULTS_HEADER) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("{} is not a grid results file", path.display()),
                });
            }
            // drop a partially written last line
            if !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                file.set_len(keep as u64)?;
                file.seek(SeekFrom::End(0))?;
                text.truncate(keep);
            }
            for r in read_records(text.as_bytes())? {
                done.insert(r.key());
            }
        }
        Ok(Self {
            path,
            out: BufWriter::new(file),
            done,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }
}

impl ResultSink for CsvResultSink {
    fn is_done(&self, key: &ResultKey) -> bool {
        self.done.contains(key)
    }

    fn write(&mut self, results: &[CvResult]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut self.out);
        for r in results {
            let rec = r.record();
            w.serialize(&rec).map_err(csv_err)?;
            self.done.insert(rec.key());
        }
        w.flush()?;
        drop(w);
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<CvRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                line: i as u64 + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<CvRecord>> {
    read_records(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub outcomes: Vec<Outcome>,
    pub hold_out_years: Vec<i32>,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridProgress {
    pub fits_done: usize,
    pub fits_total: usize,
    pub basin_year: (usize, usize),
}

/// Run every `(basin, hold-out year, outcome, model)` cell not already in
/// `sink`. Cells within a `(basin, year)` block run in parallel; blocks are
/// written in a fixed order so the output does not depend on thread count.
pub fn run_grid(
    series: &[BasinSeries],
    spec: &GridSpec,
    models: &[GridModel],
    run: &GridRun,
    sink: &mut dyn ResultSink,
    progress: &mut dyn FnMut(GridProgress),
) -> Result<usize> {
    let blocks: Vec<(usize, i32)> = series
        .iter()
        .enumerate()
        .flat_map(|(b, s)| {
            let present: BTreeSet<i32> = s.dates().iter().map(|d| d.year()).collect();
            run.hold_out_years
                .iter()
                .filter(move |y| present.contains(y))
                .map(move |&y| (b, y))
        })
        .collect();
    let total = blocks.len() * run.outcomes.len() * models.len();
    let mut done = 0;
    let mut written = 0;
    for (bi, &(b, year)) in blocks.iter().enumerate() {
        let s = &series[b];
        let code = s.basin().code();
        let pending: Vec<(Outcome, GridModel)> = run
            .outcomes
            .iter()
            .flat_map(|&o| models.iter().map(move |&m| (o, m)))
            .filter(|(o, m)| !sink.is_done(&(code.to_string(), o.key().to_string(), year, m.id())))
            .collect();
        if !pending.is_empty() {
            let results = run_block(s, spec, year, &run.outcomes, &pending, &run.fit);
            sink.write(&results)?;
            written += results.len();
        }
        done += run.outcomes.len() * models.len();
        progress(GridProgress {
            fits_done: done,
            fits_total: total,
            basin_year: (bi + 1, blocks.len()),
        });
    }
    Ok(written)
}

fn run_block(
    s: &BasinSeries,
    spec: &GridSpec,
    year: i32,
    outcomes: &[Outcome],
    pending: &[(Outcome, GridModel)],
    opts: &FitOptions,
) -> Vec<CvResult> {
    let code = s.basin().code();
    let lib = match TermLibrary::build(s, spec, year) {
        Ok(l) => l,
        Err(e) => return pending.iter().map(|&(o, m)| CvResult::failed(code, o, year, m, &e)).collect(),
    };
    let responses: BTreeMap<Outcome, Vec<f64>> = outcomes.iter().map(|&o| (o, s.response(o))).collect();
    let references: BTreeMap<Outcome, Result<Prediction>> = outcomes
        .par_iter()
        .map(|&o| (o, lib.fit_predict(&responses[&o], &GridModel::TIME_ONLY, opts)))
        .collect();
    pending
        .par_iter()
        .map(|&(o, m)| {
            let y = &responses[&o];
            let reference = match &references[&o] {
                Ok(r) => r,
                Err(e) => return CvResult::failed(code, o, year, m, e),
            };
            let pred = if m.is_time_only() {
                Ok(reference.clone())
            } else {
                lib.fit_predict(y, &m, opts)
            };
            match pred {
                Ok(p) => cv_result(code, o, &lib, y, reference, &p, false),
                Err(e) => CvResult::failed(code, o, year, m, &e),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boxplot {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: usize,
}

impl Boxplot {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Some(Self {
            n: v.len(),
            min: v[0],
            q1,
            median: quantile_sorted(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            whisker_lo: inside[0],
            whisker_hi: inside[inside.len() - 1],
            outliers: v.len() - inside.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub basin: String,
    pub outcome: String,
    pub group: AqGroup,
    pub year: i32,
    pub stats: Boxplot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub basin: String,
    pub outcome: String,
    pub group: AqGroup,
    pub year: i32,
    pub model_id: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub basin: String,
    pub outcome: String,
    pub group: AqGroup,
    pub years: usize,
    pub distinct_best: usize,
    pub modal_best: String,
    pub modal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub excluded_years: Vec<i32>,
    pub unusable: usize,
    pub boxplots: Vec<BoxplotRow>,
    pub best: Vec<BestRow>,
    pub consistency: Vec<ConsistencyRow>,
}

/// Ratio boxplots per `(basin, outcome, group, year)`, the best model per
/// year, and how often the same model is best across years.
pub fn summarize(records: &[CvRecord], exclude_years: &[i32]) -> GridSummary {
    type Cell = (String, String, AqGroup, i32);
    let mut cells: BTreeMap<Cell, Vec<(String, f64)>> = BTreeMap::new();
    let mut unusable = 0;
    for r in records {
        if exclude_years.contains(&r.year) {
            continue;
        }
        if !r.usable() {
            unusable += 1;
            continue;
        }
        let Ok(aq) = r.aq.parse::<AqLevel>() else { continue };
        for g in AqGroup::ALL {
            if g.contains(aq) {
                cells
                    .entry((r.basin.clone(), r.outcome.clone(), g, r.year))
                    .or_default()
                    .push((r.model_id.clone(), r.ratio));
            }
        }
    }
    let mut boxplots = Vec::new();
    let mut best = Vec::new();
    for ((basin, outcome, group, year), v) in &cells {
        let ratios: Vec<f64> = v.iter().map(|x| x.1).collect();
        if let Some(stats) = Boxplot::from_values(&ratios) {
            boxplots.push(BoxplotRow {
                basin: basin.clone(),
                outcome: outcome.clone(),
                group: *group,
                year: *year,
                stats,
            });
        }
        let b = v
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
            .expect("non-empty cell");
        best.push(BestRow {
            basin: basin.clone(),
            outcome: outcome.clone(),
            group: *group,
            year: *year,
            model_id: b.0.clone(),
            ratio: b.1,
        });
    }
    let mut by_series: BTreeMap<(String, String, AqGroup), BTreeMap<String, usize>> = BTreeMap::new();
    for b in &best {
        *by_series
            .entry((b.basin.clone(), b.outcome.clone(), b.group))
            .or_default()
            .entry(b.model_id.clone())
            .or_default() += 1;
    }
    let consistency = by_series
        .into_iter()
        .map(|((basin, outcome, group), counts)| {
            let (modal, count) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(k, v)| (k.clone(), *v))
                .expect("non-empty");
            ConsistencyRow {
                basin,
                outcome,
                group,
                years: counts.values().sum(),
                distinct_best: counts.len(),
                modal_best: modal,
                modal_count: count,
            }
        })
        .collect();
    GridSummary {
        excluded_years: exclude_years.to_vec(),
        unusable,
        boxplots,
        best,
        consistency,
    }
}
